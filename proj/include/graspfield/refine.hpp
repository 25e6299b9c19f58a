#pragma once

#include <vector>

#include "graspfield/kinematics.hpp"
#include "graspfield/sdf.hpp"

namespace graspfield {

struct RefineConfig {
  double step = 0.1;      // length of the first trial step along the unit descent direction
  int max_iters = 500;
  int max_halvings = 5;   // backtracking halvings per iterate
  bool joints_only = true;
  double clearance = 0.5;  // cells; the descent targets phi >= clearance, convergence still means phi >= 0
  void validate() const;
};

struct RefineResult {
  PoseVector pose;
  bool converged = false;  // no contact point penetrates
  int iterations = 0;      // accepted iterates
  int penetrations = 0;    // at the returned pose
  std::vector<double> objective_trace;  // start value, then one per accepted iterate
};

/// Number of contact points with a negative SDF value.
int penetration_count(const PoseVector& x, const GripperModel& model, const SignedDistanceField& field,
                      const RigidTransform& t_r);

/// Descends the collision loss (with clearance) until no contact point
/// penetrates. Every iterate renormalizes the quaternion and clamps the
/// joints; a trial step is accepted when it lowers the objective and has no
/// more penetrating points than the input, otherwise it is halved. Stops unconverged after max_iters or when no trial
/// step is accepted. Penetration-free input is returned unchanged.
RefineResult runtime_adjust(const PoseVector& pose, const GripperModel& model, const SignedDistanceField& field,
                            const RigidTransform& t_r, const RefineConfig& cfg = {});

/// Same descent on beta * ||x - nominal||^2 + (1 - beta) * collision(x),
/// starting from the nominal pose. beta = 0 reproduces runtime_adjust.
RefineResult pose_refine(const PoseVector& nominal, const GripperModel& model, const SignedDistanceField& field,
                         const RigidTransform& t_r, double beta, const RefineConfig& cfg = {});

}  // namespace graspfield
