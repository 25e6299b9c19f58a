#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace graspfield {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Flips q to the w >= 0 hemisphere. For w == 0 the first nonzero of
/// (x, y, z) is made positive so that q and -q always map to the same value.
Eigen::Quaterniond canonicalize(const Eigen::Quaterniond& q);

/// Rotation matrix of q / |q|.
Mat3 rotation_of(const Eigen::Quaterniond& q);

/// Rigid motion p -> R p + t with R stored as a canonical unit quaternion.
class RigidTransform {
 public:
  RigidTransform() = default;
  RigidTransform(const Vec3& translation, const Eigen::Quaterniond& rotation);
  RigidTransform(const Vec3& translation, const Mat3& rotation);

  static RigidTransform identity() { return {}; }

  const Vec3& translation() const { return translation_; }
  const Eigen::Quaterniond& rotation() const { return rotation_; }
  Mat3 rotation_matrix() const { return rotation_.toRotationMatrix(); }
  Mat4 matrix() const;

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  RigidTransform inverse() const;

  /// (a * b).apply(p) == a.apply(b.apply(p))
  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b);

 private:
  Vec3 translation_ = Vec3::Zero();
  Eigen::Quaterniond rotation_ = Eigen::Quaterniond::Identity();
};

/// Rotation by `angle` radians about a unit axis.
Mat3 axis_angle(const Vec3& axis, double angle);

}  // namespace graspfield
