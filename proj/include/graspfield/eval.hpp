#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "graspfield/dataset.hpp"
#include "graspfield/network.hpp"
#include "graspfield/refine.hpp"
#include "graspfield/train.hpp"

namespace graspfield {

/// Rows: model trained with l2, consistency, combined. Columns: the same three
/// metrics on the test split (l2 against the lowest-cost candidate).
struct ResidualMatrix {
  std::array<std::array<double, 3>, 3> cell{};
  std::string to_csv() const;
};

/// Needs checkpoints named "l2", "consistency" and "combined".
ResidualMatrix residual_matrix(std::map<std::string, Network>& nets, const GraspDataset& data,
                               const GripperModel& model, double beta);

struct PenetrationSummary {
  int predictions = 0;
  double mean_count = 0.0;   // penetrating contact points per prediction
  double mean_depth = 0.0;   // meters, over all penetrating points
  double max_depth = 0.0;    // meters
};

struct PenetrationReport {
  PenetrationSummary before;
  PenetrationSummary after;       // only with refinement
  bool refined = false;
  int converged = 0;              // predictions whose refinement reached zero penetrations
  int unconverged_flagged = 0;    // non-converged results that carry the flag
  double mean_iterations = 0.0;
  double mean_relative_change = 0.0;  // mean ||x_after - x_before|| / ||x_before||
  double forward_seconds = 0.0;
  double adjust_seconds = 0.0;
  std::string to_csv() const;
};

/// Penetration statistics of the test-split predictions, before and
/// optionally after runtime_adjust.
PenetrationReport penetration_report(Network& net, const GraspDataset& data, const GripperModel& model,
                                     bool with_refinement, const RefineConfig& refine = {});

/// Quasi-uniform unit vectors in R^6 from a Halton sequence (bases 2..13)
/// through Box-Muller; every prefix of a longer list is the shorter list.
std::vector<Eigen::Matrix<double, 6, 1>> wrench_directions(int count);

/// Support-function estimate of the largest origin-centred ball inside the
/// convex hull of the primitive contact wrenches. Contacts are the sampled
/// points within one cell of the surface; each gets eight friction-cone edges
/// n + mu * t_k (n the inward normal), with torques about the object centre
/// divided by the object radius. The result is min over directions u of max
/// over wrenches w of <w, u>, clamped at 0; the direction set is the negated
/// mean wrench followed by `directions` Halton directions.
double epsilon_quality(const PoseVector& pose, const GripperModel& model, const SignedDistanceField& field,
                       const RigidTransform& t_r, double mu, int directions);

/// The same estimate for explicit contacts (grasp frame, unit inward normals).
double epsilon_from_contacts(const std::vector<Vec3>& points, const std::vector<Vec3>& normals, double radius,
                             double mu, int directions);

struct ResampleConfig {
  int max_rotations = 5;
  double beta = 0.75;  // pose refinement weight
  bool refine = true;
  RefineConfig refine_cfg;
  double mu = 0.5;
  int directions = 256;
  std::uint64_t seed = 1;
};

struct ResampleResult {
  PoseVector pose;           // object frame
  int rotations_tried = 0;
  bool passed = false;       // zero penetrations and epsilon > 0
  double epsilon = 0.0;
  int penetrations = 0;
  std::vector<double> attempt_epsilons;
  double forward_seconds = 0.0;
  double adjust_seconds = 0.0;
};

/// Tries the identity and then a seeded shuffle of the augmentation
/// rotations: voxelize the rotated mesh, predict, project onto valid poses
/// (unit quaternion, joints within limits), refine, and map the pose
/// back to the object frame. Returns the first pose passing the quality gate,
/// else the attempt with the largest epsilon. `field` is the SDF of `mesh`.
ResampleResult predict_with_resampling(Network& net, const TriMesh& mesh, const SignedDistanceField& field,
                                       const GripperModel& model, const ResampleConfig& cfg);

}  // namespace graspfield
