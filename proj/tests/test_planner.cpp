#include <doctest.h>

#include <filesystem>
#include <set>

#include "graspfield/dataset.hpp"
#include "graspfield/error.hpp"
#include "graspfield/planner.hpp"
#include "test_util.hpp"

using namespace graspfield;
using namespace graspfield::test;

namespace {

const SignedDistanceField& sphere_sdf() {
  static const SignedDistanceField f = build_sdf(make_sphere(0.05), 32);
  return f;
}

const SignedDistanceField& box_sdf() {
  static const SignedDistanceField f = build_sdf(make_box(0.04, 0.06, 0.10), 32);
  return f;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("graspfield_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_SUITE("planner") {
  TEST_CASE("cost terms") {
    const GripperModel m = builtin_gripper("simple9");
    PoseVector x = initial_pose(m, AnnealConfig{}, 3);
    const GraspCost far = grasp_cost(m, sphere_sdf(), RigidTransform::identity(), x);
    CHECK(far.penetration_term == 0.0);
    CHECK(far.surface_term > 0.0);
    CHECK(far.total == far.surface_term);
    // palm at the centre of the object: everything inside
    x.head<3>().setZero();
    const GraspCost inside = grasp_cost(m, sphere_sdf(), RigidTransform::identity(), x, 10.0);
    CHECK(inside.penetration_term > 0.0);
    CHECK(inside.total == doctest::Approx(inside.surface_term + 10.0 * inside.penetration_term).epsilon(1e-14));
    CHECK(inside.max_penetration > 0.0);
  }

  TEST_CASE("initial pose faces the centre") {
    const GripperModel m = builtin_gripper("wide24");
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const PoseVector x = initial_pose(m, AnnealConfig{}, seed);
      const Vec3 t = x.head<3>();
      CHECK(t.norm() == doctest::Approx(1.5).epsilon(1e-12));
      const Mat3 r = rotation_of(Eigen::Quaterniond(x[3], x[4], x[5], x[6]));
      CHECK((r * Vec3::UnitZ() + t.normalized()).norm() <= 1e-9);
      CHECK(x.tail(m.joint_count()).isZero(0.0));
    }
  }

  TEST_CASE("sphere grasp has contacts near the surface") {
    const GripperModel m = builtin_gripper("wide24");
    AnnealConfig cfg;
    cfg.rng_seed = 1;
    const PlanResult r = plan_grasp(m, sphere_sdf(), cfg);
    CHECK(r.cost.surface_term / m.contact_count() <= 2.0 * sphere_sdf().cell());
  }

  TEST_CASE("degenerate budget") {
    const GripperModel m = builtin_gripper("simple9");
    AnnealConfig cfg;
    cfg.iterations = 1;
    cfg.candidates_per_iter = 1;
    const PlanResult r = plan_grasp(m, sphere_sdf(), cfg);
    CHECK(std::isfinite(r.cost.total));
    CHECK(r.best_trace.size() == 1);
  }

  TEST_CASE("deterministic in seed") {
    const GripperModel m = builtin_gripper("simple9");
    AnnealConfig cfg;
    cfg.iterations = 300;
    cfg.rng_seed = 42;
    const PlanResult a = plan_grasp(m, box_sdf(), cfg);
    const PlanResult b = plan_grasp(m, box_sdf(), cfg);
    CHECK(a.pose == b.pose);
    CHECK(a.cost.total == b.cost.total);
    cfg.rng_seed = 43;
    CHECK(plan_grasp(m, box_sdf(), cfg).pose != a.pose);
  }

  TEST_CASE("returned poses are feasible and the record never worsens") {
    const GripperModel m = builtin_gripper("wide24");
    AnnealConfig cfg;
    cfg.iterations = 500;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      cfg.rng_seed = seed;
      const PlanResult r = plan_grasp(m, box_sdf(), cfg);
      CHECK(r.cost.max_penetration <= 0.5 * box_sdf().cell());
      const GraspCost again = grasp_cost(m, box_sdf(), RigidTransform::identity(), r.pose);
      CHECK(again.total == r.cost.total);
      for (std::size_t i = 1; i < r.best_trace.size(); ++i) CHECK(r.best_trace[i] <= r.best_trace[i - 1]);
      CHECK(r.best_trace.back() == r.cost.total);
    }
  }

  TEST_CASE("k restarts") {
    const GripperModel m = builtin_gripper("simple9");
    AnnealConfig cfg;
    cfg.rng_seed = 11;
    const auto plans = plan_k_grasps(m, box_sdf(), cfg, 8);
    REQUIRE(plans.size() == 8);
    for (std::size_t i = 1; i < plans.size(); ++i) CHECK(plans[i].cost.total >= plans[i - 1].cost.total);
    double widest = 0.0;
    for (const auto& a : plans) {
      for (const auto& b : plans) widest = std::max(widest, (a.pose.head<3>() - b.pose.head<3>()).norm());
    }
    CHECK(widest > 0.3);

    const auto single = plan_k_grasps(m, box_sdf(), cfg, 1);
    CHECK(single.front().pose == plan_grasp(m, box_sdf(), cfg).pose);
    CHECK_THROWS_AS(plan_k_grasps(m, box_sdf(), cfg, 0), InvalidParameter);
  }

  TEST_CASE("config validation") {
    const GripperModel m = builtin_gripper("simple9");
    AnnealConfig cfg;
    cfg.iterations = 0;
    CHECK_THROWS_AS(plan_grasp(m, box_sdf(), cfg), InvalidParameter);
    cfg = AnnealConfig{};
    cfg.cooling_rate = 1.0;
    CHECK_THROWS_AS(plan_grasp(m, box_sdf(), cfg), InvalidParameter);
    cfg = AnnealConfig{};
    cfg.initial_temperature = 0.0;
    CHECK_THROWS_AS(plan_grasp(m, box_sdf(), cfg), InvalidParameter);
  }
}

TEST_SUITE("dataset") {
  TEST_CASE("augmentation is equivariant") {
    const GripperModel m = builtin_gripper("wide24");
    const TriMesh mesh = make_box(0.04, 0.06, 0.10);
    AnnealConfig cfg;
    cfg.iterations = 400;
    const auto plans = plan_k_grasps(m, box_sdf(), cfg, 3);
    DatasetEntry base;
    base.grid.resolution = 32;
    base.sdf_path = "sdf/object_000.sdf";
    for (const auto& p : plans) {
      base.poses.push_back(p.pose);
      base.costs.push_back(p.cost.total);
    }
    const auto entries = augment(base, mesh);
    REQUIRE(entries.size() == 27);
    const auto rots = augmentation_rotations();
    for (std::size_t r = 0; r < entries.size(); ++r) {
      const DatasetEntry& e = entries[r];
      CHECK(e.rotation_index == static_cast<int>(r));
      CHECK(e.sdf_path == base.sdf_path);
      CHECK(e.costs == base.costs);
      CHECK(e.grid.occupied_count() > 0);
      const RigidTransform round = e.t_r.inverse() * e.t_r;
      CHECK(round.translation().norm() <= 1e-12);
      CHECK(std::abs(std::abs(round.rotation().w()) - 1.0) <= 1e-12);
      for (std::size_t k = 0; k < base.poses.size(); ++k) {
        CHECK(e.poses[k].tail(m.joint_count()) == base.poses[k].tail(m.joint_count()));
        double rotated = 0.0, original = 0.0;
        for (double v : contact_sdf(m, box_sdf(), e.t_r, e.poses[k])) rotated += v;
        for (double v : contact_sdf(m, box_sdf(), RigidTransform::identity(), base.poses[k])) original += v;
        CHECK(std::abs(rotated - original) <= box_sdf().cell());
      }
    }
    // the grid really is re-voxelized: a 60 degree turn changes the box's silhouette
    const OccupancyGrid straight = voxelize(mesh, 32);
    CHECK(entries[0].grid.cells != straight.cells);
  }

  TEST_CASE("split by object") {
    const auto s = split_dataset(20, 0.8, 5);
    CHECK(std::count(s.begin(), s.end(), Split::train) == 16);
    CHECK(std::count(s.begin(), s.end(), Split::test) == 4);
    CHECK(split_dataset(20, 0.8, 5) == s);
    CHECK(split_dataset(20, 0.8, 6) != s);
    const auto big = split_dataset(324, 0.8, 1);
    CHECK(std::count(big.begin(), big.end(), Split::train) == 259);
    CHECK(std::count(big.begin(), big.end(), Split::test) == 65);
    CHECK_THROWS_AS(split_dataset(20, 1.0, 5), InvalidParameter);
    CHECK_THROWS_AS(split_dataset(20, 0.0, 5), InvalidParameter);
  }

  TEST_CASE("procedural objects") {
    const auto objs = procedural_objects(20, 9);
    REQUIRE(objs.size() == 20);
    std::set<PrimitiveKind> kinds;
    for (const auto& o : objs) {
      kinds.insert(o.shape.kind);
      const TriMesh mesh = make_primitive(o.shape);
      CHECK(is_closed(mesh));
      CHECK(mesh_volume(mesh) > 0.0);
    }
    CHECK(kinds.size() == 6);
    CHECK(to_obj(make_primitive(procedural_objects(20, 9)[7].shape)) == to_obj(make_primitive(objs[7].shape)));
    CHECK_THROWS_WITH_AS(procedural_objects(0, 9), "empty object set", InvalidParameter);
  }

  TEST_CASE("rle round trip") {
    std::vector<std::uint8_t> cells(1000, 0);
    for (int i = 0; i < 1000; ++i) cells[i] = (i * 7919 % 13) < 4;
    CHECK(decode_rle(encode_rle(cells), cells.size()) == cells);
    const std::vector<std::uint8_t> ones(10, 1);
    CHECK(encode_rle(ones) == "0 10");
    CHECK(decode_rle("0 10", 10) == ones);
    CHECK_THROWS_AS(decode_rle("3 4", 10), ParseError);
    CHECK_THROWS_AS(decode_rle("3 x", 10), ParseError);
  }

  TEST_CASE("build, save and load") {
    const GripperModel m = builtin_gripper("simple9");
    DatasetConfig cfg;
    cfg.resolution = 16;
    cfg.k = 2;
    cfg.anneal.iterations = 50;
    const std::vector<TriMesh> meshes{make_sphere(0.04), make_box(0.05, 0.04, 0.08), make_cylinder(0.02, 0.06)};
    const GraspDataset data = build_dataset(meshes, m, cfg, 77);
    CHECK(data.entries.size() == 81);
    CHECK(data.k == 2);
    for (const auto& e : data.entries) {
      CHECK(e.poses.size() == 2);
      CHECK(e.costs[0] <= e.costs[1]);
    }
    const auto dir = scratch_dir("dataset");
    save_dataset(data, dir);
    const GraspDataset back = load_dataset(dir);
    REQUIRE(back.entries.size() == data.entries.size());
    CHECK(back.split == data.split);
    for (std::size_t i = 0; i < data.entries.size(); ++i) {
      const auto& a = data.entries[i];
      const auto& b = back.entries[i];
      CHECK(a.grid.cells == b.grid.cells);
      CHECK(a.grid.object_to_grid == b.grid.object_to_grid);
      CHECK(a.poses == b.poses);
      CHECK(a.costs == b.costs);
      CHECK(a.t_r.matrix() == b.t_r.matrix());
    }
    for (int i = 0; i < 3; ++i) CHECK(serialize_sdf(back.sdfs[i]) == serialize_sdf(data.sdfs[i]));

    const GraspDataset again = build_dataset(meshes, m, cfg, 77);
    for (std::size_t i = 0; i < data.entries.size(); ++i) CHECK(again.entries[i].poses == data.entries[i].poses);

    std::filesystem::remove(dir / "sdf/object_001.sdf");
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("object 1"), IoError);
    std::filesystem::remove_all(dir);
  }
}
