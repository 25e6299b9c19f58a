#include "graspfield/refine.hpp"

#include <algorithm>
#include <cmath>

#include "graspfield/error.hpp"
#include "graspfield/losses.hpp"
#include "graspfield/planner.hpp"

namespace graspfield {
namespace {

PoseVector project(const GripperModel& model, PoseVector x) {
  const double n = x.segment<4>(3).norm();
  if (n > 0.0) x.segment<4>(3) /= n;
  for (int j = 0; j < model.joint_count(); ++j) {
    const Joint& jt = model.joints()[j];
    x[7 + j] = std::clamp(x[7 + j], jt.lower, jt.upper);
  }
  return x;
}

struct Eval {
  double objective = 0.0;
  int count = 0;
  Eigen::VectorXd gradient;
};

RefineResult descend(const PoseVector& start, const PoseVector& nominal, const GripperModel& model,
                     const SignedDistanceField& field, const RigidTransform& t_r, double beta,
                     const RefineConfig& cfg) {
  cfg.validate();
  if (start.size() != model.pose_dim()) {
    throw ShapeError("pose has " + std::to_string(start.size()) + " entries, gripper needs " +
                     std::to_string(model.pose_dim()));
  }
  RefineResult r;
  r.pose = start;
  r.penetrations = penetration_count(start, model, field, t_r);
  if (r.penetrations == 0) {
    r.converged = true;
    return r;
  }
  auto evaluate = [&](const PoseVector& x) {
    Eval e;
    const LossReport c = collision_loss(x, model, field, t_r, cfg.clearance * field.cell());
    const Eigen::VectorXd d = x - nominal;
    e.objective = beta * d.squaredNorm() + (1.0 - beta) * c.value;
    e.gradient = 2.0 * beta * d + (1.0 - beta) * c.d_prediction;
    for (double v : c.sdf_values) e.count += v < 0.0 ? 1 : 0;
    return e;
  };

  PoseVector x = project(model, start);
  Eval cur = evaluate(x);
  const int start_count = r.penetrations;
  r.objective_trace.push_back(cur.objective);
  for (int it = 0; it < cfg.max_iters && cur.count > 0; ++it) {
    Eigen::VectorXd g = cur.gradient;
    if (cfg.joints_only) g.head<7>().setZero();
    // drop components that would push a joint further past its limit
    for (int j = 0; j < model.joint_count(); ++j) {
      const Joint& jt = model.joints()[j];
      if ((x[7 + j] >= jt.upper && g[7 + j] < 0.0) || (x[7 + j] <= jt.lower && g[7 + j] > 0.0)) g[7 + j] = 0.0;
    }
    const double norm = g.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) break;
    const Eigen::VectorXd dir = g / norm;
    double step = cfg.step;
    bool accepted = false;
    for (int h = 0; h <= cfg.max_halvings; ++h, step *= 0.5) {
      const PoseVector trial = project(model, x - step * dir);
      const Eval e = evaluate(trial);
      if (e.objective < cur.objective && e.count <= start_count) {
        x = trial;
        cur = e;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    ++r.iterations;
    r.objective_trace.push_back(cur.objective);
  }
  if (r.iterations > 0) r.pose = x;
  r.penetrations = r.iterations > 0 ? cur.count : penetration_count(start, model, field, t_r);
  r.converged = r.penetrations == 0;
  return r;
}

}  // namespace

void RefineConfig::validate() const {
  if (!(step > 0.0)) throw InvalidParameter("refine step must be > 0");
  if (!(clearance >= 0.0)) throw InvalidParameter("refine clearance must be >= 0");
  if (max_iters < 0) throw InvalidParameter("max_iters must be >= 0");
  if (max_halvings < 0) throw InvalidParameter("max_halvings must be >= 0");
}

int penetration_count(const PoseVector& x, const GripperModel& model, const SignedDistanceField& field,
                      const RigidTransform& t_r) {
  int n = 0;
  for (double v : contact_sdf(model, field, t_r, x)) n += v < 0.0 ? 1 : 0;
  return n;
}

RefineResult runtime_adjust(const PoseVector& pose, const GripperModel& model, const SignedDistanceField& field,
                            const RigidTransform& t_r, const RefineConfig& cfg) {
  return descend(pose, pose, model, field, t_r, 0.0, cfg);
}

RefineResult pose_refine(const PoseVector& nominal, const GripperModel& model, const SignedDistanceField& field,
                         const RigidTransform& t_r, double beta, const RefineConfig& cfg) {
  if (!(beta >= 0.0 && beta < 1.0)) throw InvalidParameter("pose refinement needs 0 <= beta < 1");
  return descend(nominal, project(model, nominal), model, field, t_r, beta, cfg);
}

}  // namespace graspfield
