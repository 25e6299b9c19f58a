#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "graspfield/error.hpp"
#include "graspfield/losses.hpp"
#include "test_util.hpp"

using namespace graspfield;
using namespace graspfield::test;

namespace {

PoseVector random_pose_vector(int dim) {
  PoseVector x(dim);
  for (int i = 0; i < dim; ++i) x[i] = uniform(-1, 1);
  return x;
}

// Root-only gripper whose contacts sit at fixed hand-frame offsets.
GripperModel probe_gripper(const std::vector<Vec3>& offsets) {
  std::vector<Link> links{{"palm", -1, RigidTransform::identity(), -1}};
  std::vector<ContactPoint> contacts;
  for (const Vec3& o : offsets) contacts.push_back({0, o});
  return GripperModel("probe", links, {}, contacts);
}

// phi(p) = p.z - 0.5 on an 8^3 grid with scale s = 2; trilinear is exact.
SignedDistanceField plane_field() {
  const int n = 8;
  std::vector<float> v(n * n * n);
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) v[(k * n + j) * n + i] = static_cast<float>(k / 7.0 - 0.5);
    }
  }
  Mat4 t = Mat4::Identity();
  t.topLeftCorner<3, 3>() *= 2.0;
  t.topRightCorner<3, 1>().setConstant(0.5);
  return SignedDistanceField(n, v, t);
}

const SignedDistanceField& box_field() {
  static const SignedDistanceField f = build_sdf(make_box(0.05, 0.07, 0.09), 32);
  return f;
}

// Pose whose palm sits near the object so that several contacts collide.
PoseVector colliding_pose(const GripperModel& m) {
  PoseVector x(m.pose_dim());
  x.head<3>() = random_vec(-0.25, 0.25);
  const Eigen::Quaterniond q = random_quaternion();
  x.segment<4>(3) << q.w(), q.x(), q.y(), q.z();
  x.segment<4>(3) *= uniform(0.7, 1.4);
  for (int k = 0; k < m.joint_count(); ++k) x[7 + k] = uniform(m.joints()[k].lower, m.joints()[k].upper);
  return x;
}

// Every contact is clear of trilinear cell faces and of the zero level set.
bool smooth_at(const GripperModel& m, const SignedDistanceField& f, const RigidTransform& t_r, const PoseVector& x) {
  const SdfFrameMap map = grasp_to_sdf_map(f, t_r);
  for (const Vec3& p : forward_kinematics(m, x)) {
    const Vec3 q = map.apply(p);
    const double v = sample_sdf(f, q).value;
    if (std::abs(v) < 1e-4) return false;
    for (int a = 0; a < 3; ++a) {
      const double u = q[a] / f.cell();
      if (std::abs(u - std::round(u)) < 1e-3) return false;
    }
  }
  return true;
}

double max_fd_error(const std::function<LossReport(const PoseVector&)>& loss, const PoseVector& x, double h) {
  const LossReport r = loss(x);
  double worst = 0.0;
  for (int c = 0; c < x.size(); ++c) {
    PoseVector xp = x, xm = x;
    xp[c] += h;
    xm[c] -= h;
    const double fd = (loss(xp).value - loss(xm).value) / (2 * h);
    worst = std::max(worst, rel_error(fd, r.d_prediction[c], 1e-7));
  }
  return worst;
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("l2 basics") {
    const PoseVector t = random_pose_vector(16);
    const LossReport same = l2_loss(t, t);
    CHECK(same.value == 0.0);
    CHECK(same.d_prediction.isZero(0.0));

    PoseVector target = PoseVector::Zero(16);
    target[3] = 1.0;
    PoseVector pred = target;
    pred[9] += 1.0;
    const LossReport r = l2_loss(pred, target);
    CHECK(r.value == 1.0);
    CHECK(r.d_prediction[9] == 2.0);
    CHECK(r.d_prediction.cwiseAbs().sum() == 2.0);
    CHECK_THROWS_AS(l2_loss(PoseVector::Zero(8), PoseVector::Zero(9)), ShapeError);
  }

  TEST_CASE("l2 canonicalizes quaternions") {
    PoseVector a = random_pose_vector(10), b = a;
    a[3] = std::abs(a[3]);
    b.segment<4>(3) = -a.segment<4>(3);
    CHECK(l2_loss(a, b).value == 0.0);
    CHECK(l2_loss(b, a).value == 0.0);
  }

  TEST_CASE("l2 gradient matches finite differences") {
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const PoseVector t = random_pose_vector(16);
      const PoseVector x = random_pose_vector(16);
      worst = std::max(worst, max_fd_error([&](const PoseVector& p) { return l2_loss(p, t); }, x, 1e-6));
    }
    CHECK(worst <= 1e-8);
  }

  TEST_CASE("consistency selects the nearest candidate") {
    std::vector<PoseVector> cands;
    for (int j = 0; j < 5; ++j) cands.push_back(canonical_pose(random_pose_vector(12)));
    const LossReport hit = consistency_loss(cands[3], cands);
    CHECK(hit.value == 0.0);
    CHECK(hit.selected_j == 3);

    const PoseVector x = random_pose_vector(12);
    const LossReport one = consistency_loss(x, {cands[1]});
    const LossReport l2 = l2_loss(x, cands[1]);
    CHECK(one.value == l2.value);
    CHECK(one.d_prediction == l2.d_prediction);
    CHECK(one.selected_j == 0);

    std::vector<PoseVector> tied{cands[2], cands[0], cands[2]};
    CHECK(consistency_loss(cands[2], tied).selected_j == 0);
    CHECK_THROWS_AS(consistency_loss(x, {}), InvalidParameter);
  }

  TEST_CASE("consistency equals the brute-force minimum") {
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<PoseVector> cands;
      for (int j = 0; j < 8; ++j) cands.push_back(random_pose_vector(31));
      const PoseVector x = random_pose_vector(31);
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : cands) best = std::min(best, l2_loss(x, c).value);
      const LossReport r = consistency_loss(x, cands);
      if (r.value != best) ++mismatches;
      for (const auto& c : cands) CHECK(r.value <= l2_loss(x, c).value);
    }
    CHECK(mismatches == 0);
  }

  TEST_CASE("consistency gradient away from ties") {
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<PoseVector> cands;
      for (int j = 0; j < 6; ++j) cands.push_back(random_pose_vector(16));
      const PoseVector x = random_pose_vector(16);
      worst = std::max(worst, max_fd_error([&](const PoseVector& p) { return consistency_loss(p, cands); }, x, 1e-6));
    }
    CHECK(worst <= 1e-4);
  }

  TEST_CASE("selection is invariant to a common frame change of translations") {
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<PoseVector> cands;
      for (int j = 0; j < 8; ++j) cands.push_back(random_pose_vector(16));
      PoseVector x = random_pose_vector(16);
      const int before = consistency_loss(x, cands).selected_j;
      const RigidTransform g = random_transform(3.0);
      x.head<3>() = g.apply(x.head<3>());
      for (auto& c : cands) c.head<3>() = g.apply(c.head<3>());
      CHECK(consistency_loss(x, cands).selected_j == before);
    }
  }

  TEST_CASE("collision loss fixtures") {
    const SignedDistanceField f = plane_field();
    // hand frame maps to sdf frame as p + 0.5
    const GripperModel probe = probe_gripper({Vec3(0, 0, 0.2), Vec3(0.1, 0, 0.1), Vec3(0, 0, -0.1)});
    PoseVector x = PoseVector::Zero(7);
    x[3] = 1.0;
    const LossReport one = collision_loss(x, probe, f, RigidTransform::identity());
    CHECK(one.value == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(one.sdf_values[2] == doctest::Approx(-0.1).epsilon(1e-6));

    x[2] = 0.5;  // lift everything out
    const LossReport none = collision_loss(x, probe, f, RigidTransform::identity());
    CHECK(none.value == 0.0);
    CHECK(none.d_prediction.isZero(0.0));
    const PenetrationStats st = penetration_stats(x, probe, f, RigidTransform::identity());
    CHECK(st.count == 0);
    CHECK(st.max_depth == 0.0);
    CHECK(st.mean_depth == 0.0);
  }

  TEST_CASE("collision clearance shifts the penalty, not the reported values") {
    const SignedDistanceField f = plane_field();
    const GripperModel probe = probe_gripper({Vec3(0, 0, 0.2), Vec3(0.1, 0, 0.05), Vec3(0, 0, -0.1)});
    PoseVector x = PoseVector::Zero(7);
    x[3] = 1.0;
    const LossReport r = collision_loss(x, probe, f, RigidTransform::identity(), 0.1);
    CHECK(r.value == doctest::Approx(0.05 * 0.05 + 0.2 * 0.2).epsilon(1e-6));
    CHECK(r.sdf_values[1] == doctest::Approx(0.05).epsilon(1e-6));
    CHECK(r.d_prediction[2] == doctest::Approx(2 * (-0.05 - 0.2)).epsilon(1e-6));
    const double h = 1e-6;
    PoseVector up = x, down = x;
    up[2] += h;
    down[2] -= h;
    const double fd = (collision_loss(up, probe, f, RigidTransform::identity(), 0.1).value -
                       collision_loss(down, probe, f, RigidTransform::identity(), 0.1).value) /
                      (2 * h);
    CHECK(fd == doctest::Approx(r.d_prediction[2]).epsilon(1e-6));
  }

  TEST_CASE("penetration stats in meters") {
    const SignedDistanceField f = plane_field();
    const GripperModel probe =
        probe_gripper({Vec3(0, 0, -0.1), Vec3(0.1, 0.1, -0.3), Vec3(0, 0, 0.2), Vec3(-0.2, 0, 0.05)});
    PoseVector x = PoseVector::Zero(7);
    x[3] = 1.0;
    const PenetrationStats st = penetration_stats(x, probe, f, RigidTransform::identity());
    CHECK(st.count == 2);
    CHECK(st.max_depth == doctest::Approx(0.3 / f.scale()).epsilon(1e-6));
    CHECK(st.mean_depth == doctest::Approx(0.2 / f.scale()).epsilon(1e-6));
    CHECK(st.count <= probe.contact_count());
    const LossReport r = collision_loss(x, probe, f, RigidTransform::identity());
    CHECK(r.value == doctest::Approx(0.01 + 0.09).epsilon(1e-6));
  }

  TEST_CASE("collision gradient matches finite differences") {
    const GripperModel m = builtin_gripper("wide24");
    const auto rots = augmentation_rotations();
    int checked = 0;
    double worst = 0.0;
    for (int trial = 0; checked < 50 && trial < 500; ++trial) {
      const RigidTransform t_r = rots[trial % rots.size()];
      const PoseVector x = colliding_pose(m);
      if (!smooth_at(m, box_field(), t_r, x)) continue;
      const LossReport r = collision_loss(x, m, box_field(), t_r);
      if (r.value == 0.0) continue;
      ++checked;
      worst = std::max(worst, max_fd_error([&](const PoseVector& p) { return collision_loss(p, m, box_field(), t_r); },
                                           x, 1e-7));
    }
    CHECK(checked == 50);
    CHECK(worst <= 1e-4);
  }

  TEST_CASE("collision is zero iff nothing penetrates") {
    const GripperModel m = builtin_gripper("simple9");
    for (int trial = 0; trial < 200; ++trial) {
      PoseVector x = colliding_pose(m);
      x.head<3>() *= 3.0;
      const LossReport r = collision_loss(x, m, box_field(), RigidTransform::identity());
      const PenetrationStats st = penetration_stats(x, m, box_field(), RigidTransform::identity());
      CHECK((r.value == 0.0) == (st.count == 0));
    }
  }

  TEST_CASE("combined loss blends its parts") {
    const GripperModel m = builtin_gripper("simple9");
    const RigidTransform t_r = augmentation_rotations()[4];
    for (int trial = 0; trial < 20; ++trial) {
      const PoseVector x = colliding_pose(m);
      std::vector<PoseVector> cands;
      for (int j = 0; j < 4; ++j) cands.push_back(colliding_pose(m));
      const LossReport a = consistency_loss(x, cands);
      const LossReport b = collision_loss(x, m, box_field(), t_r);
      const LossReport c1 = combined_loss(x, cands, m, box_field(), t_r, 1.0);
      CHECK(c1.value == a.value);
      CHECK(c1.d_prediction == a.d_prediction);
      const LossReport c0 = combined_loss(x, cands, m, box_field(), t_r, 0.0);
      CHECK(c0.value == b.value);
      CHECK(c0.d_prediction == b.d_prediction);
      const LossReport c = combined_loss(x, cands, m, box_field(), t_r, 0.75);
      CHECK(c.value == 0.75 * a.value + 0.25 * b.value);
      CHECK(c.selected_j == a.selected_j);
      for (double beta : {0.1, 0.3, 0.75}) {
        const double sum = combined_loss(x, cands, m, box_field(), t_r, beta).value +
                           combined_loss(x, cands, m, box_field(), t_r, 1.0 - beta).value;
        CHECK(rel_error(sum, a.value + b.value, 0.0) <= 1e-14);
      }
    }
    CHECK_THROWS_AS(combined_loss(colliding_pose(m), {colliding_pose(m)}, m, box_field(), t_r, 1.5), InvalidParameter);
  }

  TEST_CASE("combined gradient matches finite differences") {
    const GripperModel m = builtin_gripper("wide24");
    int checked = 0;
    double worst = 0.0;
    for (int trial = 0; checked < 50 && trial < 500; ++trial) {
      const PoseVector x = colliding_pose(m);
      if (!smooth_at(m, box_field(), RigidTransform::identity(), x)) continue;
      std::vector<PoseVector> cands;
      for (int j = 0; j < 4; ++j) cands.push_back(colliding_pose(m));
      ++checked;
      worst = std::max(worst, max_fd_error(
                                  [&](const PoseVector& p) {
                                    return combined_loss(p, cands, m, box_field(), RigidTransform::identity(), 0.75);
                                  },
                                  x, 1e-7));
    }
    CHECK(checked == 50);
    CHECK(worst <= 1e-4);
  }
}
