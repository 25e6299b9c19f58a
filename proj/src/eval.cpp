#include "graspfield/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

#include "graspfield/error.hpp"
#include "graspfield/parallel.hpp"
#include "graspfield/planner.hpp"

namespace graspfield {
namespace {

using Wrench = Eigen::Matrix<double, 6, 1>;

const char* const kLossNames[3] = {"l2", "consistency", "combined"};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double radical_inverse(std::uint64_t i, int base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= base;
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

// Unit vectors t1, t2 spanning the plane orthogonal to n.
std::pair<Vec3, Vec3> tangent_basis(const Vec3& n) {
  Vec3 a = Vec3::UnitX();
  if (std::abs(n.x()) > std::abs(n.y()) || std::abs(n.x()) > std::abs(n.z())) {
    a = std::abs(n.y()) < std::abs(n.z()) ? Vec3::UnitY() : Vec3::UnitZ();
  }
  const Vec3 t1 = n.cross(a).normalized();
  return {t1, n.cross(t1)};
}

PenetrationSummary summarize(const std::vector<PenetrationStats>& stats) {
  PenetrationSummary s;
  s.predictions = static_cast<int>(stats.size());
  if (stats.empty()) return s;
  long points = 0;
  double depth = 0.0;
  for (const PenetrationStats& p : stats) {
    points += p.count;
    depth += p.mean_depth * p.count;
    s.max_depth = std::max(s.max_depth, p.max_depth);
  }
  s.mean_count = static_cast<double>(points) / static_cast<double>(stats.size());
  s.mean_depth = points > 0 ? depth / static_cast<double>(points) : 0.0;
  return s;
}

}  // namespace

std::string ResidualMatrix::to_csv() const {
  std::string out = "model,l2,consistency,combined\n";
  for (int r = 0; r < 3; ++r) {
    out += kLossNames[r];
    for (int c = 0; c < 3; ++c) out += "," + fmt(cell[r][c]);
    out += "\n";
  }
  return out;
}

ResidualMatrix residual_matrix(std::map<std::string, Network>& nets, const GraspDataset& data,
                               const GripperModel& model, double beta) {
  const std::vector<std::size_t> test = data.indices(Split::test);
  if (test.empty()) throw InvalidParameter("dataset has no test entries");
  ResidualMatrix m;
  for (int r = 0; r < 3; ++r) {
    auto it = nets.find(kLossNames[r]);
    if (it == nets.end()) throw InvalidParameter(std::string("missing checkpoint for loss ") + kLossNames[r]);
    const Residuals res = residuals(predict_entries(it->second, data, test), data, test, model, beta);
    m.cell[r] = {res.l2, res.consistency, res.combined};
  }
  return m;
}

std::string PenetrationReport::to_csv() const {
  std::string out = "stage,predictions,mean_count,mean_depth_m,max_depth_m\n";
  auto row = [&](const char* name, const PenetrationSummary& s) {
    out += std::string(name) + "," + std::to_string(s.predictions) + "," + fmt(s.mean_count) + "," +
           fmt(s.mean_depth) + "," + fmt(s.max_depth) + "\n";
  };
  row("before", before);
  if (refined) row("after", after);
  return out;
}

PenetrationReport penetration_report(Network& net, const GraspDataset& data, const GripperModel& model,
                                     bool with_refinement, const RefineConfig& refine) {
  const std::vector<std::size_t> test = data.indices(Split::test);
  PenetrationReport rep;
  const auto t0 = std::chrono::steady_clock::now();
  const Eigen::MatrixXd pred = test.empty() ? Eigen::MatrixXd() : predict_entries(net, data, test);
  rep.forward_seconds = seconds_since(t0);
  const std::size_t n = test.size();
  std::vector<PenetrationStats> before(n), after(n);
  std::vector<RefineResult> refined(n);
  parallel_for(n, [&](std::size_t i) {
    const DatasetEntry& e = data.entries[test[i]];
    before[i] = penetration_stats(pred.col(static_cast<Eigen::Index>(i)), model, data.sdfs[e.object_id], e.t_r);
  });
  rep.before = summarize(before);
  if (!with_refinement) return rep;
  rep.refined = true;
  const auto t1 = std::chrono::steady_clock::now();
  parallel_for(n, [&](std::size_t i) {
    const DatasetEntry& e = data.entries[test[i]];
    const SignedDistanceField& field = data.sdfs[e.object_id];
    refined[i] = runtime_adjust(pred.col(static_cast<Eigen::Index>(i)), model, field, e.t_r, refine);
    after[i] = penetration_stats(refined[i].pose, model, field, e.t_r);
  });
  rep.adjust_seconds = seconds_since(t1);
  rep.after = summarize(after);
  double iters = 0.0, change = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const RefineResult& r = refined[i];
    if (r.converged) {
      ++rep.converged;
    } else if (r.penetrations > 0) {
      ++rep.unconverged_flagged;
    }
    iters += r.iterations;
    const Eigen::VectorXd x = pred.col(static_cast<Eigen::Index>(i));
    change += (r.pose - x).norm() / std::max(x.norm(), 1e-12);
  }
  if (n > 0) {
    rep.mean_iterations = iters / static_cast<double>(n);
    rep.mean_relative_change = change / static_cast<double>(n);
  }
  return rep;
}

std::vector<Wrench> wrench_directions(int count) {
  static const int bases[6] = {2, 3, 5, 7, 11, 13};
  std::vector<Wrench> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 1; i <= count; ++i) {
    Wrench u;
    for (int pair = 0; pair < 3; ++pair) {
      const double a = radical_inverse(static_cast<std::uint64_t>(i), bases[2 * pair]);
      const double b = radical_inverse(static_cast<std::uint64_t>(i), bases[2 * pair + 1]);
      const double r = std::sqrt(-2.0 * std::log(a));
      u[2 * pair] = r * std::cos(2.0 * M_PI * b);
      u[2 * pair + 1] = r * std::sin(2.0 * M_PI * b);
    }
    out.push_back(u.normalized());
  }
  return out;
}

double epsilon_from_contacts(const std::vector<Vec3>& points, const std::vector<Vec3>& normals, double radius,
                             double mu, int directions) {
  if (!(mu > 0.0)) throw InvalidParameter("friction coefficient must be > 0");
  if (directions < 64) throw InvalidParameter("epsilon metric needs at least 64 directions");
  if (!(radius > 0.0)) throw InvalidParameter("object radius must be > 0");
  if (points.size() != normals.size()) throw ShapeError("one normal per contact expected");
  if (points.empty()) return 0.0;
  std::vector<Wrench> wrenches;
  for (std::size_t c = 0; c < points.size(); ++c) {
    const Vec3 n = normals[c].normalized();
    const auto [t1, t2] = tangent_basis(n);
    for (int k = 0; k < 8; ++k) {
      const double a = 2.0 * M_PI * k / 8.0;
      const Vec3 f = n + mu * (std::cos(a) * t1 + std::sin(a) * t2);
      Wrench w;
      w.head<3>() = f;
      w.tail<3>() = points[c].cross(f) / radius;
      wrenches.push_back(w);
    }
  }
  std::vector<Wrench> dirs;
  Wrench mean = Wrench::Zero();
  for (const Wrench& w : wrenches) mean += w;
  if (mean.norm() > 1e-12) dirs.push_back(-mean.normalized());
  for (const Wrench& u : wrench_directions(directions)) dirs.push_back(u);
  double eps = std::numeric_limits<double>::infinity();
  for (const Wrench& u : dirs) {
    double h = -std::numeric_limits<double>::infinity();
    for (const Wrench& w : wrenches) h = std::max(h, w.dot(u));
    eps = std::min(eps, h);
  }
  return std::max(eps, 0.0);
}

double epsilon_quality(const PoseVector& pose, const GripperModel& model, const SignedDistanceField& field,
                       const RigidTransform& t_r, double mu, int directions) {
  const SdfFrameMap map = grasp_to_sdf_map(field, t_r);
  const Vec3 centre = map.linear.inverse() * (Vec3::Constant(0.5) - map.offset);
  std::vector<Vec3> points, normals;
  for (const Vec3& p : forward_kinematics(model, pose)) {
    const SdfSample s = sample_sdf(field, map.apply(p));
    if (std::abs(s.value) > field.cell()) continue;
    const Vec3 outward = map.linear.transpose() * s.gradient;
    if (outward.norm() < 1e-12) continue;
    points.push_back(p - centre);
    normals.push_back(-outward.normalized());
  }
  return epsilon_from_contacts(points, normals, field.object_radius(), mu, directions);
}

ResampleResult predict_with_resampling(Network& net, const TriMesh& mesh, const SignedDistanceField& field,
                                       const GripperModel& model, const ResampleConfig& cfg) {
  if (cfg.max_rotations < 1) throw InvalidParameter("max_rotations must be >= 1");
  if (net.config().output_dim != model.pose_dim()) throw ShapeError("network output does not match the gripper");
  std::vector<RigidTransform> order = augmentation_rotations();
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.insert(order.begin(), RigidTransform::identity());

  ResampleResult best;
  best.epsilon = -1.0;
  const int attempts = std::min<int>(cfg.max_rotations, static_cast<int>(order.size()));
  for (int a = 0; a < attempts; ++a) {
    const RigidTransform& t_r = order[a];
    const auto t0 = std::chrono::steady_clock::now();
    const OccupancyGrid grid = voxelize(transformed(mesh, t_r), net.config().input_resolution);
    PoseVector x = GraspPose::from_vector(model, net.forward(grid_input(grid), Mode::eval).col(0)).to_vector();
    const double fwd = seconds_since(t0);
    const auto t1 = std::chrono::steady_clock::now();
    if (cfg.refine) x = pose_refine(x, model, field, t_r, cfg.beta, cfg.refine_cfg).pose;
    const double adj = seconds_since(t1);
    const int pen = penetration_count(x, model, field, t_r);
    const double eps = epsilon_quality(x, model, field, t_r, cfg.mu, cfg.directions);
    const bool pass = pen == 0 && eps > 0.0;
    best.rotations_tried = a + 1;
    best.attempt_epsilons.push_back(eps);
    best.forward_seconds += fwd;
    best.adjust_seconds += adj;
    if (pass || eps > best.epsilon) {
      best.pose = compose_wrist(t_r.inverse(), x);
      best.epsilon = eps;
      best.penetrations = pen;
      best.passed = pass;
    }
    if (pass) break;
  }
  return best;
}

}  // namespace graspfield
