#pragma once

#include <cstdint>
#include <vector>

#include "graspfield/kinematics.hpp"
#include "graspfield/sdf.hpp"

namespace graspfield {

struct AnnealConfig {
  int iterations = 2000;
  int candidates_per_iter = 10;
  double initial_temperature = 1.0;
  double cooling_rate = 0.995;
  std::uint64_t rng_seed = 1;
  double step_translation = 0.05;  // cube units
  double step_rotation = 0.05;     // radians, tangent space
  double step_joint = 0.1;         // radians
  double penetration_weight = 10.0;
  double start_radius = 1.5;  // cube units from the cube centre

  void validate() const;
};

struct GraspCost {
  double total = 0.0;
  double surface_term = 0.0;      // sum of max(phi, 0)
  double penetration_term = 0.0;  // sum of max(-phi, 0)^2
  double weight = 10.0;
  double max_penetration = 0.0;   // max(-phi, 0), cube units
};

/// SDF values at the contact points of pose x (grasp frame) seen through t_r.
std::vector<double> contact_sdf(const GripperModel& model, const SignedDistanceField& field, const RigidTransform& t_r,
                                const PoseVector& x);

GraspCost grasp_cost(const GripperModel& model, const SignedDistanceField& field, const RigidTransform& t_r,
                     const PoseVector& x, double penetration_weight = 10.0);

struct PlanResult {
  PoseVector pose;
  GraspCost cost;
  std::vector<double> best_trace;  // best feasible total after each iteration
};

/// Wrist on the sphere of radius cfg.start_radius around the cube centre,
/// approach axis (+z of the hand) pointing at the centre, random roll, joints
/// at zero.
PoseVector initial_pose(const GripperModel& model, const AnnealConfig& cfg, std::uint64_t seed);

/// Simulated annealing from initial_pose(seed = cfg.rng_seed). Each iteration
/// draws candidates_per_iter Gaussian perturbations of the incumbent, takes
/// the cheapest, and accepts it by the Metropolis rule; the temperature then
/// cools geometrically. Returns the cheapest pose seen whose deepest
/// penetration is at most half a cell.
PlanResult plan_grasp(const GripperModel& model, const SignedDistanceField& field, const AnnealConfig& cfg);

/// k restarts with seeds rng_seed + i, sorted by ascending total cost (stable).
std::vector<PlanResult> plan_k_grasps(const GripperModel& model, const SignedDistanceField& field,
                                      const AnnealConfig& cfg, int k);

}  // namespace graspfield
