#include "graspfield/losses.hpp"

#include <limits>

#include "graspfield/error.hpp"

namespace graspfield {
namespace {

// +1 or -1: the factor canonical_pose applies to the quaternion block.
double quaternion_sign(const PoseVector& x) {
  const Eigen::Quaterniond q(x[3], x[4], x[5], x[6]);
  return canonicalize(q).coeffs() == q.coeffs() ? 1.0 : -1.0;
}

void require_same_size(const PoseVector& a, const PoseVector& b) {
  if (a.size() != b.size() || a.size() < 7) {
    throw ShapeError("pose vectors have lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
}

}  // namespace

PoseVector canonical_pose(const PoseVector& x) {
  PoseVector y = x;
  y.segment<4>(3) *= quaternion_sign(x);
  return y;
}

LossReport l2_loss(const PoseVector& prediction, const PoseVector& target) {
  require_same_size(prediction, target);
  const PoseVector diff = canonical_pose(prediction) - canonical_pose(target);
  LossReport r;
  r.value = diff.squaredNorm();
  r.d_prediction = 2.0 * diff;
  r.d_prediction.segment<4>(3) *= quaternion_sign(prediction);
  return r;
}

LossReport consistency_loss(const PoseVector& prediction, const std::vector<PoseVector>& candidates) {
  if (candidates.empty()) throw InvalidParameter("consistency loss needs at least one candidate");
  const PoseVector p = canonical_pose(prediction);
  double best = std::numeric_limits<double>::infinity();
  int pick = 0;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    require_same_size(prediction, candidates[j]);
    const double d = (p - canonical_pose(candidates[j])).squaredNorm();
    if (d < best) {
      best = d;
      pick = static_cast<int>(j);
    }
  }
  LossReport r = l2_loss(prediction, candidates[pick]);
  r.selected_j = pick;
  return r;
}

LossReport collision_loss(const PoseVector& prediction, const GripperModel& model, const SignedDistanceField& field,
                          const RigidTransform& t_r, double clearance) {
  const SdfFrameMap map = grasp_to_sdf_map(field, t_r);
  const FkJacobian jac = fk_jacobian(model, prediction);
  LossReport r;
  r.d_prediction = Eigen::VectorXd::Zero(prediction.size());
  r.sdf_values.resize(jac.points.size());
  for (std::size_t i = 0; i < jac.points.size(); ++i) {
    const SdfSample s = sample_sdf(field, map.apply(jac.points[i]));
    r.sdf_values[i] = s.value;
    const double v = s.value - clearance;
    if (v < 0.0) {
      r.value += v * v;
      const Eigen::RowVector3d dphi = (map.linear.transpose() * s.gradient).transpose();
      r.d_prediction += (2.0 * v * (dphi * jac.blocks[i])).transpose();
    }
  }
  return r;
}

LossReport combined_loss(const PoseVector& prediction, const std::vector<PoseVector>& candidates,
                         const GripperModel& model, const SignedDistanceField& field, const RigidTransform& t_r,
                         double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidParameter("combined loss needs 0 <= beta <= 1");
  const LossReport a = consistency_loss(prediction, candidates);
  const LossReport b = collision_loss(prediction, model, field, t_r);
  LossReport r;
  r.value = beta * a.value + (1.0 - beta) * b.value;
  r.d_prediction = beta * a.d_prediction + (1.0 - beta) * b.d_prediction;
  r.selected_j = a.selected_j;
  r.sdf_values = b.sdf_values;
  return r;
}

PenetrationStats penetration_stats(const PoseVector& prediction, const GripperModel& model,
                                   const SignedDistanceField& field, const RigidTransform& t_r) {
  const SdfFrameMap map = grasp_to_sdf_map(field, t_r);
  PenetrationStats st;
  double sum = 0.0;
  for (const Vec3& p : forward_kinematics(model, prediction)) {
    const double v = sample_sdf(field, map.apply(p)).value;
    if (v < 0.0) {
      ++st.count;
      const double depth = -v / field.scale();
      sum += depth;
      st.max_depth = std::max(st.max_depth, depth);
    }
  }
  if (st.count > 0) st.mean_depth = sum / st.count;
  return st;
}

}  // namespace graspfield
