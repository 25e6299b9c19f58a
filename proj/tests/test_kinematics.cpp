#include <doctest.h>

#include <cmath>
#include <numbers>

#include "graspfield/error.hpp"
#include "graspfield/kinematics.hpp"
#include "test_util.hpp"

using namespace graspfield;
using namespace graspfield::test;

namespace {

// Two unit links in the xy plane, both rotating about z. Tip on link 2.
GripperModel planar_two_link() {
  std::vector<Link> links{{"base", -1, RigidTransform::identity(), -1},
                          {"upper", 0, RigidTransform::identity(), -1},
                          {"lower", 1, RigidTransform(Vec3(1, 0, 0), Eigen::Quaterniond::Identity()), -1}};
  std::vector<Joint> joints{{1, Vec3::UnitZ(), -4.0, 4.0}, {2, Vec3::UnitZ(), -4.0, 4.0}};
  std::vector<ContactPoint> contacts{{2, Vec3(1, 0, 0)}, {1, Vec3(0.5, 0, 0)}};
  return GripperModel("planar", links, joints, contacts);
}

PoseVector random_pose(const GripperModel& m, double reach = 1.0) {
  PoseVector x(m.pose_dim());
  x.head<3>() = random_vec(-reach, reach);
  const Eigen::Quaterniond q = random_quaternion();
  // unnormalized on purpose
  const double scale = uniform(0.5, 2.0);
  x[3] = scale * q.w();
  x[4] = scale * q.x();
  x[5] = scale * q.y();
  x[6] = scale * q.z();
  for (int k = 0; k < m.joint_count(); ++k) {
    x[7 + k] = uniform(m.joints()[k].lower, m.joints()[k].upper);
  }
  return x;
}

std::string cycle_json() {
  return R"({"links": [
      {"name": "palm", "parent": null},
      {"name": "a", "parent": "b", "offset": {"t": [0, 0, 0.1], "q": [1, 0, 0, 0]}},
      {"name": "b", "parent": "a", "offset": {"t": [0, 0, 0.1], "q": [1, 0, 0, 0]}}],
    "joints": [{"link": "a", "axis": [1, 0, 0], "limits": [-1, 1]},
               {"link": "b", "axis": [1, 0, 0], "limits": [-1, 1]}],
    "contacts": [{"link": "b", "offset": [0, 0, 0.05]}]})";
}

}  // namespace

TEST_SUITE("kinematics") {
  TEST_CASE("built-in grippers") {
    const GripperModel w = load_gripper("wide24");
    CHECK(w.joint_count() == 24);
    CHECK(w.contact_count() == 45);
    const GripperModel s = load_gripper("simple9");
    CHECK(s.joint_count() == 9);
    CHECK(s.contact_count() == 12);
    CHECK_THROWS_AS(load_gripper("nope"), IoError);
  }

  TEST_CASE("identity chain gives the rest configuration") {
    for (const auto& name : builtin_gripper_names()) {
      const GripperModel m = builtin_gripper(name);
      const GraspPose pose(m, RigidTransform::identity(), Eigen::VectorXd::Zero(m.joint_count()));
      const auto pts = forward_kinematics(m, pose);
      REQUIRE(pts.size() == m.rest_points().size());
      for (std::size_t i = 0; i < pts.size(); ++i) CHECK((pts[i] - m.rest_points()[i]).norm() == 0.0);
    }
  }

  TEST_CASE("wrist translation shifts every point") {
    const GripperModel m = builtin_gripper("wide24");
    PoseVector x = random_pose(m);
    x.head<3>().setZero();
    const auto a = forward_kinematics(m, x);
    x[0] += 1.0;
    const auto b = forward_kinematics(m, x);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK((b[i] - a[i] - Vec3(1, 0, 0)).norm() <= 1e-15);
  }

  TEST_CASE("planar two-link fingertip") {
    const GripperModel m = planar_two_link();
    const double half_pi = std::numbers::pi / 2;
    const GraspPose bent(m, RigidTransform::identity(), Eigen::Vector2d(half_pi, 0.0));
    CHECK((forward_kinematics(m, bent)[0] - Vec3(0, 2, 0)).norm() <= 1e-12);
    const GraspPose folded(m, RigidTransform::identity(), Eigen::Vector2d(half_pi, half_pi));
    CHECK((forward_kinematics(m, folded)[0] - Vec3(-1, 1, 0)).norm() <= 1e-12);
    for (int trial = 0; trial < 20; ++trial) {
      const double a = uniform(-3, 3), b = uniform(-3, 3);
      const GraspPose p(m, RigidTransform::identity(), Eigen::Vector2d(a, b));
      const Vec3 expect(std::cos(a) + std::cos(a + b), std::sin(a) + std::sin(a + b), 0.0);
      CHECK((forward_kinematics(m, p)[0] - expect).norm() <= 1e-12);
    }
  }

  TEST_CASE("rigid motion equivariance") {
    const GripperModel m = builtin_gripper("wide24");
    for (int trial = 0; trial < 20; ++trial) {
      GraspPose pose = GraspPose::from_vector(m, random_pose(m));
      const RigidTransform g = random_transform(2.0);
      const auto base = forward_kinematics(m, pose);
      pose.wrist = g * pose.wrist;
      const auto moved = forward_kinematics(m, pose);
      for (std::size_t i = 0; i < base.size(); ++i) CHECK((moved[i] - g.apply(base[i])).norm() <= 1e-9);
    }
  }

  TEST_CASE("quaternion double cover is bit identical") {
    const GripperModel m = builtin_gripper("wide24");
    for (int trial = 0; trial < 20; ++trial) {
      PoseVector x = random_pose(m);
      const auto a = forward_kinematics(m, x);
      x.segment<4>(3) = -x.segment<4>(3);
      const auto b = forward_kinematics(m, x);
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
  }

  TEST_CASE("pose vector round trip") {
    const GripperModel m = builtin_gripper("simple9");
    for (int trial = 0; trial < 50; ++trial) {
      const GraspPose p = GraspPose::from_vector(m, random_pose(m));
      const PoseVector x = p.to_vector();
      CHECK(std::abs(x.segment<4>(3).norm() - 1.0) <= 1e-9);
      CHECK(x[3] >= 0.0);
      const GraspPose back = GraspPose::from_vector(m, x);
      CHECK(back.to_vector() == x);
      CHECK_FALSE(back.clamped);
    }
  }

  TEST_CASE("construction clamps joints") {
    const GripperModel m = builtin_gripper("simple9");
    Eigen::VectorXd j = Eigen::VectorXd::Zero(9);
    j[2] = 5.0;
    const GraspPose p(m, RigidTransform::identity(), j);
    CHECK(p.clamped);
    CHECK(p.joints[2] == m.joints()[2].upper);
    CHECK_THROWS_AS(GraspPose(m, RigidTransform::identity(), Eigen::VectorXd::Zero(3)), ShapeError);
  }

  TEST_CASE("jacobian structure") {
    const GripperModel m = builtin_gripper("simple9");
    const FkJacobian jac = fk_jacobian(m, random_pose(m));
    for (int i = 0; i < m.contact_count(); ++i) {
      CHECK(jac.blocks[i].leftCols<3>() == Mat3::Identity());
      const auto& chain = m.chain(i);
      for (int k = 0; k < m.joint_count(); ++k) {
        if (std::find(chain.begin(), chain.end(), k) == chain.end()) CHECK(jac.blocks[i].col(7 + k).isZero(0.0));
      }
    }
    // the first contact sits on the proximal link of finger 0: only joint 0 moves it
    CHECK(m.chain(0) == std::vector<int>{0});
  }

  TEST_CASE("jacobian matches central differences") {
    for (const auto& name : builtin_gripper_names()) {
      const GripperModel m = builtin_gripper(name);
      const double h = 1e-6;
      double worst = 0.0;
      for (int trial = 0; trial < 20; ++trial) {
        const PoseVector x = random_pose(m);
        const FkJacobian jac = fk_jacobian(m, x);
        for (int c = 0; c < m.pose_dim(); ++c) {
          PoseVector xp = x, xm = x;
          xp[c] += h;
          xm[c] -= h;
          const auto fp = forward_kinematics(m, xp), fm = forward_kinematics(m, xm);
          for (int i = 0; i < m.contact_count(); ++i) {
            const Vec3 fd = (fp[i] - fm[i]) / (2 * h);
            for (int a = 0; a < 3; ++a) worst = std::max(worst, rel_error(fd[a], jac.blocks[i](a, c), 1e-8));
          }
        }
      }
      CAPTURE(name);
      CHECK(worst <= 1e-5);
    }
  }

  TEST_CASE("directional derivatives") {
    const GripperModel m = builtin_gripper("wide24");
    const double h = 1e-6;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const PoseVector x = random_pose(m);
      PoseVector v(m.pose_dim());
      for (int c = 0; c < v.size(); ++c) v[c] = uniform(-1, 1);
      const FkJacobian jac = fk_jacobian(m, x);
      const auto fp = forward_kinematics(m, PoseVector(x + h * v));
      const auto fm = forward_kinematics(m, PoseVector(x - h * v));
      for (int i = 0; i < m.contact_count(); ++i) {
        const Vec3 fd = (fp[i] - fm[i]) / (2 * h);
        const Vec3 an = jac.blocks[i] * v;
        worst = std::max(worst, (fd - an).norm() / std::max(an.norm(), 1e-8));
      }
    }
    CHECK(worst <= 1e-5);
  }

  TEST_CASE("json round trip") {
    for (const auto& name : builtin_gripper_names()) {
      const GripperModel m = builtin_gripper(name);
      const GripperModel back = parse_gripper(gripper_to_json(m));
      CHECK(back.name() == name);
      CHECK(gripper_to_json(back) == gripper_to_json(m));
      CHECK(back.digest() == m.digest());
      const PoseVector x = random_pose(m);
      const auto a = forward_kinematics(m, x), b = forward_kinematics(back, x);
      for (std::size_t i = 0; i < a.size(); ++i) CHECK((a[i] - b[i]).norm() == 0.0);
    }
  }

  TEST_CASE("validation errors") {
    try {
      parse_gripper(cycle_json());
      FAIL("expected a cycle error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("kinematic cycle at link") != std::string::npos);
    }
    const std::string two_roots = R"({"links": [{"name": "a", "parent": null}, {"name": "b", "parent": null}],
      "joints": [], "contacts": [{"link": "a", "offset": [0, 0, 0]}]})";
    CHECK_THROWS_WITH_AS(parse_gripper(two_roots), doctest::Contains("disconnected"), ParseError);
    const std::string bad_axis = R"({"links": [{"name": "a", "parent": null}, {"name": "b", "parent": "a"}],
      "joints": [{"link": "b", "axis": [1, 1, 0], "limits": [-1, 1]}],
      "contacts": [{"link": "b", "offset": [0, 0, 0]}]})";
    CHECK_THROWS_WITH_AS(parse_gripper(bad_axis), doctest::Contains("unit"), ParseError);
    const std::string bad_limits = R"({"links": [{"name": "a", "parent": null}, {"name": "b", "parent": "a"}],
      "joints": [{"link": "b", "axis": [1, 0, 0], "limits": [1, -1]}],
      "contacts": [{"link": "b", "offset": [0, 0, 0]}]})";
    CHECK_THROWS_AS(parse_gripper(bad_limits), ParseError);
    const std::string unknown = R"({"links": [{"name": "a", "parent": "zz"}], "joints": [], "contacts": []})";
    CHECK_THROWS_WITH_AS(parse_gripper(unknown), doctest::Contains("zz"), ParseError);
    const std::string no_contacts = R"({"links": [{"name": "a", "parent": null}], "joints": [], "contacts": []})";
    CHECK_THROWS_AS(parse_gripper(no_contacts), ParseError);
    CHECK_THROWS_AS(parse_gripper("{ not json"), ParseError);
    CHECK_THROWS_AS(parse_gripper(R"({"links": 3})"), ParseError);
  }
}
