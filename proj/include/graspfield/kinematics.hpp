#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "graspfield/transform.hpp"

namespace graspfield {

/// Flat pose layout: (tx, ty, tz, qw, qx, qy, qz, theta_1 .. theta_J).
using PoseVector = Eigen::VectorXd;

struct Link {
  std::string name;
  int parent = -1;  // -1 for the root
  RigidTransform offset;
  int joint = -1;  // index into GripperModel::joints(), -1 for the root
};

/// Revolute joint. The link frame is parent * offset * Rot(axis, theta), so
/// the axis is expressed in the frame reached by the fixed offset (which
/// coincides with the parent frame whenever the offset has no rotation).
struct Joint {
  int link = -1;
  Vec3 axis = Vec3::UnitZ();
  double lower = 0.0;
  double upper = 0.0;
};

struct ContactPoint {
  int link = -1;
  Vec3 offset = Vec3::Zero();
};

/// Kinematic tree with one revolute joint per non-root link. Immutable after
/// construction; the constructor validates and throws ParseError with a
/// description of the first problem found.
class GripperModel {
 public:
  GripperModel() = default;
  GripperModel(std::string name, std::vector<Link> links, std::vector<Joint> joints,
               std::vector<ContactPoint> contacts);

  const std::string& name() const { return name_; }
  const std::vector<Link>& links() const { return links_; }
  const std::vector<Joint>& joints() const { return joints_; }
  const std::vector<ContactPoint>& contacts() const { return contacts_; }

  int joint_count() const { return static_cast<int>(joints_.size()); }
  int contact_count() const { return static_cast<int>(contacts_.size()); }
  int pose_dim() const { return 7 + joint_count(); }

  /// Links ordered so that every parent precedes its children.
  const std::vector<int>& topological_order() const { return order_; }
  /// Joints between contact i and the root, leaf first.
  const std::vector<int>& chain(int contact) const { return chains_[contact]; }
  /// Contact positions in the hand frame with all joints at zero.
  const std::vector<Vec3>& rest_points() const { return rest_; }

  /// Stable hash of the serialized model, for manifests.
  std::string digest() const;

 private:
  std::string name_;
  std::vector<Link> links_;
  std::vector<Joint> joints_;
  std::vector<ContactPoint> contacts_;
  std::vector<int> order_;
  std::vector<std::vector<int>> chains_;
  std::vector<Vec3> rest_;
};

/// Wrist transform plus joint angles. Construction clamps joints into their
/// limits and records whether anything was clamped.
struct GraspPose {
  RigidTransform wrist;
  Eigen::VectorXd joints;
  bool clamped = false;

  GraspPose() = default;
  GraspPose(const GripperModel& model, const RigidTransform& wrist, const Eigen::VectorXd& joints);

  /// Normalizes and canonicalizes the quaternion, clamps joints.
  static GraspPose from_vector(const GripperModel& model, const PoseVector& x);
  PoseVector to_vector() const;
};

/// Clamps joints in place; returns true if any value moved.
bool clamp_joints(const GripperModel& model, PoseVector& x);

/// Normalizes and canonicalizes the quaternion block in place.
void normalize_quaternion(PoseVector& x);

/// x with its wrist left-composed by t; joints unchanged.
PoseVector compose_wrist(const RigidTransform& t, const PoseVector& x);

/// Global contact positions. The PoseVector overload accepts an unnormalized
/// quaternion (it uses q / |q|) and does not clamp joints.
std::vector<Vec3> forward_kinematics(const GripperModel& model, const GraspPose& pose);
std::vector<Vec3> forward_kinematics(const GripperModel& model, const PoseVector& x);

/// Contact positions and d(point_i)/dx as 3 x (7 + J) blocks. Quaternion
/// columns differentiate the raw components through the normalization q/|q|.
struct FkJacobian {
  std::vector<Vec3> points;
  std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> blocks;
};

FkJacobian fk_jacobian(const GripperModel& model, const PoseVector& x);

/// "simple9" (3 fingers x 3 flexion joints, P = 12) or "wide24" (4 fingers x
/// abduction + 5 flexion joints, P = 45). Geometry is in cube units with the
/// palm at the origin and the fingers extending along +z.
GripperModel builtin_gripper(const std::string& name);
std::vector<std::string> builtin_gripper_names();

/// Accepts a built-in name or a path to a gripper JSON file.
GripperModel load_gripper(const std::string& name_or_path);
GripperModel parse_gripper(const std::string& json_text, const std::string& name = "gripper");
std::string gripper_to_json(const GripperModel& model);
void save_gripper(const GripperModel& model, const std::filesystem::path& path);

}  // namespace graspfield
