#pragma once

#include <vector>

#include "graspfield/kinematics.hpp"
#include "graspfield/sdf.hpp"

namespace graspfield {

/// Per-item loss value and gradient with respect to the raw prediction.
/// Batch losses average these over the N items.
struct LossReport {
  double value = 0.0;
  Eigen::VectorXd d_prediction;
  int selected_j = -1;             // consistency and combined
  std::vector<double> sdf_values;  // collision and combined
};

/// Copy of x with the quaternion block flipped to w >= 0.
PoseVector canonical_pose(const PoseVector& x);

/// ||canon(pred) - canon(target)||^2, gradient 2 (pred - target) mapped back
/// through the sign flip.
LossReport l2_loss(const PoseVector& prediction, const PoseVector& target);

/// min_j ||pred - x_j||^2; ties go to the lowest j.
LossReport consistency_loss(const PoseVector& prediction, const std::vector<PoseVector>& candidates);

/// sum_i min(phi_i - clearance, 0)^2 with phi_i the SDF at contact i seen
/// through t_r. Training uses clearance 0; sdf_values are the raw phi_i.
LossReport collision_loss(const PoseVector& prediction, const GripperModel& model, const SignedDistanceField& field,
                          const RigidTransform& t_r, double clearance = 0.0);

/// beta * consistency + (1 - beta) * collision.
LossReport combined_loss(const PoseVector& prediction, const std::vector<PoseVector>& candidates,
                         const GripperModel& model, const SignedDistanceField& field, const RigidTransform& t_r,
                         double beta);

struct PenetrationStats {
  int count = 0;
  double max_depth = 0.0;   // meters
  double mean_depth = 0.0;  // meters, over penetrating points
};

PenetrationStats penetration_stats(const PoseVector& prediction, const GripperModel& model,
                                   const SignedDistanceField& field, const RigidTransform& t_r);

}  // namespace graspfield
