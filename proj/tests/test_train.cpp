#include <doctest.h>

#include <cmath>

#include "graspfield/error.hpp"
#include "graspfield/hash.hpp"
#include "graspfield/train.hpp"
#include "test_util.hpp"

using namespace graspfield;
using namespace graspfield::test;

namespace {

NetworkConfig small_net() {
  NetworkConfig c;
  c.input_resolution = 8;
  c.conv_layers = {{4, 3, true, true}, {8, 2, true, true}};
  c.fc_layers = {8, 64};
  c.fc_batchnorm = {true};
  return c;
}

PoseVector random_target(const GripperModel& m) {
  PoseVector x(m.pose_dim());
  x.head<3>() = random_vec(-0.5, 0.5);
  const Eigen::Quaterniond q = random_quaternion();
  x.segment<4>(3) << q.w(), q.x(), q.y(), q.z();
  for (int k = 0; k < m.joint_count(); ++k) x[7 + k] = uniform(0.0, 1.2);
  return x;
}

// `objects` procedural shapes, `rotations` entries each, K random candidates
// per object shared across its rotations. The last `test_objects` are test.
GraspDataset toy_dataset(const GripperModel& m, int objects, int rotations, int k, int test_objects = 0) {
  GraspDataset d;
  d.k = k;
  const std::vector<ObjectSpec> specs = procedural_objects(objects, 11);
  const std::vector<RigidTransform> rots = augmentation_rotations();
  for (int o = 0; o < objects; ++o) {
    const TriMesh mesh = make_primitive(specs[o].shape);
    d.sdfs.push_back(build_sdf(mesh, 12));
    d.split.push_back(o < objects - test_objects ? Split::train : Split::test);
    std::vector<PoseVector> poses;
    for (int j = 0; j < k; ++j) poses.push_back(random_target(m));
    for (int r = 0; r < rotations; ++r) {
      DatasetEntry e;
      e.object_id = o;
      e.rotation_index = r * 5;
      e.t_r = rots[r * 5];
      e.grid = voxelize(transformed(mesh, e.t_r), 8);
      e.poses = poses;
      e.costs.assign(k, 0.0);
      d.entries.push_back(e);
    }
  }
  return d;
}

TrainConfig config(LossKind kind, int epochs, double lr, int batch) {
  TrainConfig c;
  c.network = small_net();
  c.loss.kind = kind;
  c.epochs = epochs;
  c.adam.learning_rate = lr;
  c.adam.batch_size = batch;
  c.seed = 9;
  return c;
}

double last_train(const TrainResult& r, const std::string& name) {
  for (auto it = r.log.rbegin(); it != r.log.rend(); ++it) {
    if (it->loss_name == name) return it->train;
  }
  return NAN;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("loss names") {
    CHECK(LossSpec::parse("l2").kind == LossKind::l2);
    CHECK(LossSpec::parse("consistency").kind == LossKind::consistency);
    CHECK(LossSpec::parse("combined", 0.5).beta == 0.5);
    CHECK(LossSpec::parse("combined").name() == "combined");
    CHECK_THROWS_WITH_AS(LossSpec::parse("huber"), doctest::Contains("huber"), InvalidParameter);
  }

  TEST_CASE("zero epochs returns the initialization") {
    const GripperModel m = builtin_gripper("simple9");
    const GraspDataset d = toy_dataset(m, 2, 2, 2);
    const TrainResult r = train(d, m, config(LossKind::l2, 0, 1e-3, 2));
    CHECK(r.log.empty());
    CHECK_FALSE(r.diverged);
    NetworkConfig nc = small_net();
    nc.output_dim = m.pose_dim();
    CHECK(r.network.parameters() == Network(nc, stage_seed(9, "init")).parameters());
    CHECK(residual_log_csv(r.log) == "epoch,loss_name,train,test\n");
  }

  TEST_CASE("same seed gives identical runs") {
    const GripperModel m = builtin_gripper("simple9");
    const GraspDataset d = toy_dataset(m, 3, 3, 3, 1);
    const TrainConfig c = config(LossKind::combined, 3, 1e-3, 4);
    const TrainResult a = train(d, m, c);
    const TrainResult b = train(d, m, c);
    CHECK(a.network.parameters() == b.network.parameters());
    CHECK(residual_log_csv(a.log) == residual_log_csv(b.log));
    REQUIRE(a.log.size() == 9);
    CHECK(a.log[0].test > 0.0);
    TrainConfig other = c;
    other.seed = 10;
    CHECK(train(d, m, other).network.parameters() != a.network.parameters());
  }

  TEST_CASE("l2 overfits a single object") {
    const GripperModel m = builtin_gripper("simple9");
    const GraspDataset d = toy_dataset(m, 1, 2, 1);
    const TrainResult r = train(d, m, config(LossKind::l2, 400, 1e-2, 2));
    REQUIRE_FALSE(r.diverged);
    CHECK(last_train(r, "l2") < 1e-3);
  }

  TEST_CASE("combined with beta one trains exactly like consistency") {
    const GripperModel m = builtin_gripper("simple9");
    const GraspDataset d = toy_dataset(m, 3, 2, 3);
    TrainConfig c = config(LossKind::consistency, 4, 1e-3, 3);
    const TrainResult a = train(d, m, c);
    c.loss.kind = LossKind::combined;
    c.loss.beta = 1.0;
    const TrainResult b = train(d, m, c);
    CHECK((a.network.parameters() - b.network.parameters()).lpNorm<Eigen::Infinity>() <= 1e-12);
  }

  TEST_CASE("consistency overfits four objects with four candidates") {
    const GripperModel m = builtin_gripper("simple9");
    const GraspDataset d = toy_dataset(m, 4, 2, 4);
    const std::vector<std::size_t> idx = d.indices(Split::train);
    TrainConfig c = config(LossKind::consistency, 500, 3e-3, 4);
    NetworkConfig nc = c.network;
    nc.output_dim = m.pose_dim();
    Network init(nc, stage_seed(c.seed, "init"));
    const double before = residuals(predict_entries(init, d, idx), d, idx, m, 0.75).consistency;
    const TrainResult r = train(d, m, c);
    REQUIRE_FALSE(r.diverged);
    Network net = r.network;
    const double after = residuals(predict_entries(net, d, idx), d, idx, m, 0.75).consistency;
    CHECK(after < 0.05 * before);
  }

  TEST_CASE("divergence keeps the best parameters") {
    const GripperModel m = builtin_gripper("simple9");
    const GraspDataset d = toy_dataset(m, 2, 2, 2);
    const TrainResult r = train(d, m, config(LossKind::l2, 20, 1e300, 2));
    CHECK(r.diverged);
    CHECK_FALSE(r.message.empty());
    CHECK(r.network.parameters().allFinite());
  }

  TEST_CASE("invalid configurations") {
    const GripperModel m = builtin_gripper("simple9");
    const GraspDataset d = toy_dataset(m, 2, 1, 1);
    CHECK_THROWS_AS(train(d, m, config(LossKind::l2, -1, 1e-3, 2)), InvalidParameter);
    CHECK_THROWS_AS(train(d, m, config(LossKind::l2, 1, 1e-3, 1)), InvalidParameter);
    TrainConfig c = config(LossKind::combined, 1, 1e-3, 2);
    c.loss.beta = 1.5;
    CHECK_THROWS_AS(train(d, m, c), InvalidParameter);
    GraspDataset all_test = d;
    all_test.split.assign(2, Split::test);
    CHECK_THROWS_AS(train(all_test, m, config(LossKind::l2, 1, 1e-3, 2)), InvalidParameter);
  }
}
