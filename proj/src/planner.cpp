#include "graspfield/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "graspfield/error.hpp"
#include "graspfield/parallel.hpp"

namespace graspfield {
namespace {

PoseVector draw_initial(const GripperModel& model, double radius, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> roll(0.0, 2.0 * std::numbers::pi);
  Vec3 d;
  do {
    d = Vec3(normal(rng), normal(rng), normal(rng));
  } while (d.norm() < 1e-9);
  d.normalize();
  const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), -d) *
                               Eigen::Quaterniond(Eigen::AngleAxisd(roll(rng), Vec3::UnitZ()));
  PoseVector x = PoseVector::Zero(model.pose_dim());
  x.head<3>() = radius * d;
  x[3] = q.w();
  x[4] = q.x();
  x[5] = q.y();
  x[6] = q.z();
  normalize_quaternion(x);
  clamp_joints(model, x);
  return x;
}

PoseVector perturb(const GripperModel& model, const PoseVector& x, const AnnealConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  PoseVector y = x;
  for (int a = 0; a < 3; ++a) y[a] += cfg.step_translation * normal(rng);
  Vec3 delta;
  for (int a = 0; a < 3; ++a) delta[a] = cfg.step_rotation * normal(rng);
  const double angle = delta.norm();
  Eigen::Quaterniond q(x[3], x[4], x[5], x[6]);
  if (angle > 0.0) q = q * Eigen::Quaterniond(Eigen::AngleAxisd(angle, delta / angle));
  y[3] = q.w();
  y[4] = q.x();
  y[5] = q.y();
  y[6] = q.z();
  normalize_quaternion(y);
  for (int k = 0; k < model.joint_count(); ++k) y[7 + k] += cfg.step_joint * normal(rng);
  clamp_joints(model, y);
  return y;
}

}  // namespace

void AnnealConfig::validate() const {
  if (iterations < 1) throw InvalidParameter("anneal iterations must be >= 1");
  if (candidates_per_iter < 1) throw InvalidParameter("anneal candidates_per_iter must be >= 1");
  if (!(cooling_rate > 0.0 && cooling_rate < 1.0)) throw InvalidParameter("anneal cooling_rate must be in (0, 1)");
  if (!(initial_temperature > 0.0)) throw InvalidParameter("anneal initial_temperature must be > 0");
  if (step_translation < 0.0 || step_rotation < 0.0 || step_joint < 0.0) {
    throw InvalidParameter("anneal step scales must be >= 0");
  }
  if (!(penetration_weight >= 0.0)) throw InvalidParameter("penetration weight must be >= 0");
}

std::vector<double> contact_sdf(const GripperModel& model, const SignedDistanceField& field, const RigidTransform& t_r,
                                const PoseVector& x) {
  const SdfFrameMap map = grasp_to_sdf_map(field, t_r);
  const auto pts = forward_kinematics(model, x);
  std::vector<double> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) out[i] = sample_sdf(field, map.apply(pts[i])).value;
  return out;
}

GraspCost grasp_cost(const GripperModel& model, const SignedDistanceField& field, const RigidTransform& t_r,
                     const PoseVector& x, double penetration_weight) {
  GraspCost c;
  c.weight = penetration_weight;
  for (double v : contact_sdf(model, field, t_r, x)) {
    if (v >= 0.0) {
      c.surface_term += v;
    } else {
      c.penetration_term += v * v;
      c.max_penetration = std::max(c.max_penetration, -v);
    }
  }
  c.total = c.surface_term + c.weight * c.penetration_term;
  return c;
}

PoseVector initial_pose(const GripperModel& model, const AnnealConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return draw_initial(model, cfg.start_radius, rng);
}

PlanResult plan_grasp(const GripperModel& model, const SignedDistanceField& field, const AnnealConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const RigidTransform id = RigidTransform::identity();
  const double feasible_depth = 0.5 * field.cell();
  auto cost_of = [&](const PoseVector& x) { return grasp_cost(model, field, id, x, cfg.penetration_weight); };

  const PoseVector start = draw_initial(model, cfg.start_radius, rng);
  const GraspCost start_cost = cost_of(start);
  PoseVector current = start;
  GraspCost current_cost = start_cost;
  PlanResult best;
  best.cost.total = std::numeric_limits<double>::infinity();
  auto record = [&](const PoseVector& x, const GraspCost& c) {
    if (c.max_penetration <= feasible_depth && c.total < best.cost.total) {
      best.pose = x;
      best.cost = c;
    }
  };
  record(current, current_cost);

  double temperature = cfg.initial_temperature;
  best.best_trace.reserve(cfg.iterations);
  for (int it = 0; it < cfg.iterations; ++it) {
    PoseVector pick;
    GraspCost pick_cost;
    pick_cost.total = std::numeric_limits<double>::infinity();
    for (int c = 0; c < cfg.candidates_per_iter; ++c) {
      PoseVector cand = perturb(model, current, cfg, rng);
      const GraspCost cc = cost_of(cand);
      record(cand, cc);
      if (cc.total < pick_cost.total) {
        pick = std::move(cand);
        pick_cost = cc;
      }
    }
    const double delta = pick_cost.total - current_cost.total;
    const double u = unit(rng);
    if (delta <= 0.0 || u < std::exp(-delta / temperature)) {
      current = std::move(pick);
      current_cost = pick_cost;
    }
    temperature *= cfg.cooling_rate;
    best.best_trace.push_back(best.cost.total);
  }
  if (best.pose.size() == 0) {
    // Only reachable if the start pose already penetrates; keep it anyway.
    best.pose = start;
    best.cost = start_cost;
  }
  return best;
}

std::vector<PlanResult> plan_k_grasps(const GripperModel& model, const SignedDistanceField& field,
                                      const AnnealConfig& cfg, int k) {
  if (k < 1) throw InvalidParameter("plan_k_grasps needs k >= 1");
  cfg.validate();
  std::vector<PlanResult> out(k);
  parallel_for(static_cast<std::size_t>(k), [&](std::size_t i) {
    AnnealConfig c = cfg;
    c.rng_seed = cfg.rng_seed + i;
    out[i] = plan_grasp(model, field, c);
  });
  std::stable_sort(out.begin(), out.end(),
                   [](const PlanResult& a, const PlanResult& b) { return a.cost.total < b.cost.total; });
  return out;
}

}  // namespace graspfield
