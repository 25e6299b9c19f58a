#include "graspfield/transform.hpp"

#include <cmath>
#include <limits>

#include "graspfield/error.hpp"

namespace graspfield {
namespace {
constexpr double kEps = std::numeric_limits<double>::epsilon();
}

Eigen::Quaterniond canonicalize(const Eigen::Quaterniond& q) {
  bool flip = q.w() < 0.0;
  if (q.w() == 0.0) {
    if (q.x() != 0.0) {
      flip = q.x() < 0.0;
    } else if (q.y() != 0.0) {
      flip = q.y() < 0.0;
    } else {
      flip = q.z() < 0.0;
    }
  }
  if (!flip) return q;
  return Eigen::Quaterniond(-q.w(), -q.x(), -q.y(), -q.z());
}

Mat3 rotation_of(const Eigen::Quaterniond& q) {
  return canonicalize(q).normalized().toRotationMatrix();
}

RigidTransform::RigidTransform(const Vec3& translation, const Eigen::Quaterniond& rotation)
    : translation_(translation) {
  const double n = rotation.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw InvalidParameter("rigid transform needs a nonzero finite quaternion");
  }
  // Unit inputs are kept as they are so that pose round trips stay exact.
  rotation_ = canonicalize(std::abs(n - 1.0) <= 4.0 * kEps ? rotation : rotation.normalized());
}

RigidTransform::RigidTransform(const Vec3& translation, const Mat3& rotation)
    : RigidTransform(translation, Eigen::Quaterniond(rotation)) {}

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

RigidTransform RigidTransform::inverse() const {
  const Eigen::Quaterniond inv = rotation_.conjugate();
  return RigidTransform(-(inv * translation_), inv);
}

RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
  return RigidTransform(a.rotation_ * b.translation_ + a.translation_, a.rotation_ * b.rotation_);
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

}  // namespace graspfield
