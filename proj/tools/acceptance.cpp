#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "graspfield/error.hpp"
#include "graspfield/losses.hpp"
#include "graspfield/parallel.hpp"
#include "graspfield/pipeline.hpp"
#include "graspfield/planner.hpp"

using namespace graspfield;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kFdTolerance = 1e-4;
constexpr double kFdStep = 1e-6;
constexpr int kFdCases = 50;
constexpr double kFdBudgetSeconds = 60.0;
constexpr double kSdfDiagonals = 2.0;
constexpr double kEikonalLo = 0.9;
constexpr double kEikonalHi = 1.1;
constexpr double kConsistencyRatio = 0.2;
constexpr int kBruteForceCases = 1000;
constexpr int kMinTrainObjects = 16;
constexpr int kDeskK = 8;
constexpr double kCollisionReduction = 0.5;
constexpr double kConvergedFraction = 0.95;
constexpr int kRefineIters = 500;
constexpr double kMonotoneSlack = 1e-12;
constexpr double kBudgetSeconds = 30 * 60;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::mt19937_64 rng(20261018);

double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Vec3 random_vec(double lo, double hi) { return Vec3(uniform(lo, hi), uniform(lo, hi), uniform(lo, hi)); }

Eigen::Quaterniond random_quaternion() {
  std::normal_distribution<double> n(0.0, 1.0);
  return Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized();
}

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = uniform(-1, 1);
  }
  return m;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

struct Outcome {
  enum State { pass, fail, skip } state = skip;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Outcome::pass : Outcome::fail, std::move(detail)}; }

// Worst componentwise mismatch relative to the largest analytic component.
double fd_rel_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  const double scale = std::max(analytic.lpNorm<Eigen::Infinity>(), 1e-8);
  return (analytic - numeric).lpNorm<Eigen::Infinity>() / scale;
}

// ---- criterion 1 ------------------------------------------------------------

enum class Layer { conv3d, batchnorm, relu, maxpool, fc };

struct LayerCase {
  NetworkConfig cfg;
  Mode mode = Mode::train;
  int batch = 2;
};

LayerCase layer_case(Layer layer, int index) {
  LayerCase c;
  NetworkConfig& n = c.cfg;
  n.output_dim = uniform_int(2, 4);
  c.batch = uniform_int(2, 4);
  switch (layer) {
    case Layer::conv3d:
      n.input_resolution = uniform_int(4, 6);
      n.conv_layers = {{uniform_int(1, 3), uniform_int(2, 3), false, false}};
      if (index % 2) n.conv_layers.push_back({uniform_int(1, 2), 2, false, false});
      break;
    case Layer::batchnorm:
      n.input_resolution = uniform_int(4, 5);
      n.conv_layers = {{uniform_int(2, 3), uniform_int(2, 3), false, true}};
      n.fc_layers = {0, uniform_int(3, 5)};
      n.fc_batchnorm = {true};
      c.mode = index % 2 ? Mode::eval : Mode::train;
      c.batch = uniform_int(3, 5);
      break;
    case Layer::relu:
      n.input_resolution = uniform_int(3, 4);
      n.conv_layers = {{uniform_int(1, 2), 2, false, false}};
      n.fc_layers = {0, uniform_int(3, 6)};
      n.fc_batchnorm = {false};
      break;
    case Layer::maxpool:
      n.input_resolution = uniform_int(5, 7);
      n.conv_layers = {{uniform_int(1, 3), 2, true, false}};
      break;
    case Layer::fc:
      n.input_resolution = uniform_int(2, 3);
      n.fc_layers = {0, uniform_int(2, 6), uniform_int(2, 6)};
      n.fc_batchnorm = {false, false};
      break;
  }
  if (n.fc_layers.empty()) n.fc_layers = {0};
  n.fc_layers[0] = n.flatten_length();
  n.validate();
  return c;
}

double weighted_output(Network& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w, Mode mode) {
  return (net.forward(x, mode).array() * w.array()).sum();
}

// Parameter and input gradients of sum(w .* f(x)) against central differences.
double layer_fd_error(const LayerCase& c, std::uint64_t seed) {
  Network net(c.cfg, seed);
  net.parameters() += 0.1 * random_matrix(net.parameters().size(), 1);
  for (const ParamBlock& b : net.blocks()) {
    if (b.name.find("running_var") != std::string::npos) {
      net.parameters().segment(b.offset, b.size).array() += 1.5;
    }
  }
  const int r = c.cfg.input_resolution;
  const Eigen::MatrixXd x = random_matrix(static_cast<Eigen::Index>(r) * r * r, c.batch);
  const Eigen::MatrixXd w = random_matrix(c.cfg.output_dim, c.batch);
  const Eigen::VectorXd theta = net.parameters();
  Network::Tape tape;
  net.forward(x, c.mode, &tape);
  net.parameters() = theta;
  Eigen::MatrixXd dx;
  const Eigen::VectorXd g = net.backward(tape, w, &dx);

  const Eigen::VectorXd mask = net.trainable_mask();
  Eigen::VectorXd g_fd = Eigen::VectorXd::Zero(theta.size());
  Eigen::VectorXd g_an = Eigen::VectorXd::Zero(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (mask[i] == 0.0) continue;
    net.parameters() = theta;
    net.parameters()[i] += kFdStep;
    const double up = weighted_output(net, x, w, c.mode);
    net.parameters() = theta;
    net.parameters()[i] -= kFdStep;
    const double down = weighted_output(net, x, w, c.mode);
    g_fd[i] = (up - down) / (2 * kFdStep);
    g_an[i] = g[i];
  }
  net.parameters() = theta;

  const Eigen::VectorXd dx_an = Eigen::Map<const Eigen::VectorXd>(dx.data(), dx.size());
  Eigen::VectorXd dx_fd(dx.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::MatrixXd xp = x, xm = x;
    xp.data()[i] += kFdStep;
    xm.data()[i] -= kFdStep;
    dx_fd[i] = (weighted_output(net, xp, w, c.mode) - weighted_output(net, xm, w, c.mode)) / (2 * kFdStep);
    net.parameters() = theta;
  }
  return std::max(fd_rel_error(g_an, g_fd), fd_rel_error(dx_an, dx_fd));
}

double loss_fd_error(const std::function<LossReport(const PoseVector&)>& loss, const PoseVector& x) {
  const Eigen::VectorXd g = loss(x).d_prediction;
  Eigen::VectorXd fd(x.size());
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    PoseVector xp = x, xm = x;
    xp[c] += kFdStep;
    xm[c] -= kFdStep;
    fd[c] = (loss(xp).value - loss(xm).value) / (2 * kFdStep);
  }
  return fd_rel_error(g, fd);
}

PoseVector random_pose(const GripperModel& m, double reach) {
  PoseVector x(m.pose_dim());
  x.head<3>() = random_vec(-reach, reach);
  const Eigen::Quaterniond q = random_quaternion();
  x.segment<4>(3) << q.w(), q.x(), q.y(), q.z();
  x.segment<4>(3) *= uniform(0.7, 1.4);
  for (int k = 0; k < m.joint_count(); ++k) x[7 + k] = uniform(m.joints()[k].lower, m.joints()[k].upper);
  return x;
}

// Contacts clear of trilinear cell faces and of the zero level set, at least
// one of them penetrating.
bool smooth_and_colliding(const GripperModel& m, const SignedDistanceField& f, const RigidTransform& t_r,
                          const PoseVector& x) {
  const SdfFrameMap map = grasp_to_sdf_map(f, t_r);
  bool inside = false;
  for (const Vec3& p : forward_kinematics(m, x)) {
    const Vec3 q = map.apply(p);
    const double v = sample_sdf(f, q).value;
    if (std::abs(v) < 1e-4) return false;
    inside = inside || v < 0.0;
    for (int a = 0; a < 3; ++a) {
      const double u = q[a] / f.cell();
      if (std::abs(u - std::round(u)) < 1e-3) return false;
    }
  }
  return inside;
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  std::map<std::string, double> worst;
  std::map<std::string, int> cases;
  const std::vector<std::pair<std::string, Layer>> layers{{"conv3d", Layer::conv3d},
                                                          {"batchnorm", Layer::batchnorm},
                                                          {"relu", Layer::relu},
                                                          {"maxpool", Layer::maxpool},
                                                          {"fc", Layer::fc}};
  for (const auto& [name, layer] : layers) {
    for (int i = 0; i < kFdCases; ++i) {
      worst[name] = std::max(worst[name], layer_fd_error(layer_case(layer, i), 1000 + i));
      ++cases[name];
    }
  }

  const GripperModel m = builtin_gripper("simple9");
  const SignedDistanceField box = build_sdf(make_box(0.05, 0.07, 0.09), 32);
  for (int i = 0; i < kFdCases; ++i) {
    const PoseVector x = random_pose(m, 1.0);
    const PoseVector t = random_pose(m, 1.0);
    worst["l2"] = std::max(worst["l2"], loss_fd_error([&](const PoseVector& p) { return l2_loss(p, t); }, x));
    ++cases["l2"];
    std::vector<PoseVector> cands;
    for (int j = 0, k = uniform_int(1, 8); j < k; ++j) cands.push_back(random_pose(m, 1.0));
    worst["consistency"] = std::max(
        worst["consistency"], loss_fd_error([&](const PoseVector& p) { return consistency_loss(p, cands); }, x));
    ++cases["consistency"];
  }
  for (const std::string name : {"collision", "combined"}) {
    while (cases[name] < kFdCases) {
      const RigidTransform t_r = augmentation_rotations()[uniform_int(0, 26)];
      const PoseVector x = random_pose(m, 0.25);
      if (!smooth_and_colliding(m, box, t_r, x)) continue;
      double e = 0.0;
      if (name == "collision") {
        e = loss_fd_error([&](const PoseVector& p) { return collision_loss(p, m, box, t_r); }, x);
      } else {
        std::vector<PoseVector> cands{random_pose(m, 1.0), random_pose(m, 1.0), random_pose(m, 1.0)};
        const double beta = uniform(0.0, 1.0);
        e = loss_fd_error([&](const PoseVector& p) { return combined_loss(p, cands, m, box, t_r, beta); }, x);
      }
      worst[name] = std::max(worst[name], e);
      ++cases[name];
    }
  }

  const double secs = seconds_since(t0);
  bool ok = secs < kFdBudgetSeconds;
  std::string detail;
  for (const auto& [name, e] : worst) {
    ok = ok && e <= kFdTolerance && cases[name] >= kFdCases;
    detail += name + " " + fmt("%.1e", e) + " (" + std::to_string(cases[name]) + "), ";
  }
  detail += "tolerance " + fmt("%.0e", kFdTolerance) + ", " + fmt("%.1f s", secs);
  return verdict(ok, detail);
}

// ---- criterion 2 ------------------------------------------------------------

bool near_kink(const SignedDistanceField& f, int i, int j, int k) {
  const int n = f.resolution();
  for (int di = -1; di <= 1; ++di) {
    for (int dj = -1; dj <= 1; ++dj) {
      for (int dk = -1; dk <= 1; ++dk) {
        const int a = i + di, b = j + dj, c = k + dk;
        if (a < 1 || b < 1 || c < 1 || a > n - 2 || b > n - 2 || c > n - 2) continue;
        const double v = f.at(a, b, c);
        const double dx = f.at(a + 1, b, c) - 2 * v + f.at(a - 1, b, c);
        const double dy = f.at(a, b + 1, c) - 2 * v + f.at(a, b - 1, c);
        const double dz = f.at(a, b, c + 1) - 2 * v + f.at(a, b, c - 1);
        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) > 0.5 * f.cell()) return true;
      }
    }
  }
  return false;
}

struct FieldCheck {
  double worst = 0.0;  // cell diagonals, within 3 cells of the surface
  std::size_t eikonal_checked = 0;
  std::size_t eikonal_violations = 0;
  std::size_t medial_skipped = 0;
};

FieldCheck check_field(const SignedDistanceField& f, const std::function<double(const Vec3&)>& exact) {
  FieldCheck c;
  const int n = f.resolution();
  const double h = f.cell();
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        const double e = exact(f.node(i, j, k));
        if (std::abs(e) <= 3 * h) c.worst = std::max(c.worst, std::abs(f.at(i, j, k) - e) / f.cell_diagonal());
        if (i == 0 || j == 0 || k == 0 || i == n - 1 || j == n - 1 || k == n - 1) continue;
        if (std::abs(f.at(i, j, k)) <= 2 * h) continue;
        if (near_kink(f, i, j, k)) {
          ++c.medial_skipped;
          continue;
        }
        const Vec3 g((f.at(i + 1, j, k) - f.at(i - 1, j, k)) / (2 * h), (f.at(i, j + 1, k) - f.at(i, j - 1, k)) / (2 * h),
                     (f.at(i, j, k + 1) - f.at(i, j, k - 1)) / (2 * h));
        ++c.eikonal_checked;
        if (g.norm() < kEikonalLo || g.norm() > kEikonalHi) ++c.eikonal_violations;
      }
    }
  }
  return c;
}

Outcome criterion_sdf() {
  const Vec3 centre(0.5, 0.5, 0.5);
  const double r = 0.05;
  const SignedDistanceField sphere = build_sdf(make_sphere(r, 64, 32), 32);
  const double rc = r * sphere.scale();
  const FieldCheck a = check_field(sphere, [&](const Vec3& p) { return (p - centre).norm() - rc; });
  const SignedDistanceField box = build_sdf(make_box(0.04, 0.06, 0.10), 32);
  const Vec3 half = Vec3(0.02, 0.03, 0.05) * box.scale();
  const FieldCheck b = check_field(box, [&](const Vec3& p) {
    const Vec3 q = (p - centre).cwiseAbs() - half;
    return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
  });
  const bool ok = a.worst <= kSdfDiagonals && b.worst <= kSdfDiagonals && a.eikonal_violations == 0 &&
                  b.eikonal_violations == 0 && a.eikonal_checked > 0 && b.eikonal_checked > 0;
  std::ostringstream s;
  s << "max error sphere " << fmt("%.2f", a.worst) << ", box " << fmt("%.2f", b.worst) << " cell diagonals (limit "
    << kSdfDiagonals << "); |grad| outside [" << kEikonalLo << ", " << kEikonalHi << "] at " << a.eikonal_violations
    << "/" << a.eikonal_checked << " sphere and " << b.eikonal_violations << "/" << b.eikonal_checked
    << " box nodes (" << a.medial_skipped + b.medial_skipped << " medial-axis nodes skipped)";
  return verdict(ok, s.str());
}

// ---- criterion 3 ------------------------------------------------------------

std::string brute_force_consistency(int& mismatches) {
  mismatches = 0;
  for (int i = 0; i < kBruteForceCases; ++i) {
    const int dim = uniform_int(8, 31);
    const int k = uniform_int(1, 8);
    PoseVector x(dim);
    for (int d = 0; d < dim; ++d) x[d] = uniform(-2, 2);
    std::vector<PoseVector> cands(k, PoseVector(dim));
    for (auto& c : cands) {
      for (int d = 0; d < dim; ++d) c[d] = uniform(-2, 2);
    }
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : cands) best = std::min(best, l2_loss(x, c).value);
    if (consistency_loss(x, cands).value != best) ++mismatches;
  }
  return std::to_string(kBruteForceCases - mismatches) + "/" + std::to_string(kBruteForceCases) +
         " brute-force cases exact";
}

// ---- criterion 7 ------------------------------------------------------------

Outcome criterion_equivariance(const GraspDataset& data, const GripperModel& model, double penetration_weight) {
  std::size_t checked = 0, bad_entries = 0;
  double worst = 0.0, worst_cells = 0.0;
  std::map<int, int> rotations;
  for (const DatasetEntry& e : data.entries) {
    const SignedDistanceField& f = data.sdfs[e.object_id];
    bool ok = true;
    for (std::size_t k = 0; k < e.poses.size(); ++k) {
      const double c = grasp_cost(model, f, e.t_r, e.poses[k], penetration_weight).total;
      const double d = std::abs(c - e.costs[k]);
      worst = std::max(worst, d);
      worst_cells = std::max(worst_cells, d / f.cell());
      ok = ok && d <= f.cell();
      ++checked;
    }
    ++rotations[e.rotation_index];
    if (!ok) ++bad_entries;
  }
  const bool all_rotations = rotations.size() == 27;
  std::ostringstream s;
  s << data.entries.size() - bad_entries << "/" << data.entries.size() << " entries within one cell ("
    << checked << " poses, " << rotations.size() << " rotations, worst |dcost| " << fmt("%.2e", worst) << " = "
    << fmt("%.2e", worst_cells) << " cells)";
  return verdict(bad_entries == 0 && all_rotations && checked > 0, s.str());
}

// ---- criterion 8 ------------------------------------------------------------

// Three-point patch around a point on the unit sphere, normals inward.
void add_patch(std::vector<Vec3>& pts, std::vector<Vec3>& normals, const Vec3& dir, double radius) {
  const Vec3 n = dir.normalized();
  const Vec3 a = n.unitOrthogonal();
  const Vec3 b = n.cross(a);
  for (int i = 0; i < 3; ++i) {
    const double t = 2 * M_PI * i / 3;
    const Vec3 p = (n + 0.15 * (std::cos(t) * a + std::sin(t) * b)).normalized() * radius;
    pts.push_back(p);
    normals.push_back(-p.normalized());
  }
}

Outcome criterion_epsilon() {
  const double radius = 0.45;
  std::vector<std::string> failures;

  const double single = epsilon_from_contacts({Vec3(radius, 0, 0)}, {Vec3(-1, 0, 0)}, radius, 0.5, 256);
  if (single != 0.0) failures.push_back("single contact " + fmt("%.3g", single));

  std::vector<Vec3> pts, normals;
  add_patch(pts, normals, Vec3(1, 0, 0), radius);
  add_patch(pts, normals, Vec3(-1, 0, 0), radius);
  const double antipodal = epsilon_from_contacts(pts, normals, radius, 0.5, 256);
  if (!(antipodal > 0.0)) failures.push_back("antipodal " + fmt("%.3g", antipodal));

  int mu_breaks = 0, dir_breaks = 0;
  for (int g = 0; g < 20; ++g) {
    std::vector<Vec3> p, n;
    for (int c = 0, count = uniform_int(2, 6); c < count; ++c) {
      const Vec3 d = random_vec(-1, 1).normalized();
      p.push_back(d * radius);
      n.push_back(-d);
    }
    double prev = -1.0;
    for (double mu = 0.1; mu <= 1.0 + 1e-9; mu += 0.1) {
      const double e = epsilon_from_contacts(p, n, radius, mu, 256);
      if (e < prev - kMonotoneSlack) ++mu_breaks;
      prev = e;
    }
    prev = std::numeric_limits<double>::infinity();
    for (int dirs = 64; dirs <= 4096; dirs *= 2) {
      const double e = epsilon_from_contacts(p, n, radius, 0.5, dirs);
      if (e > prev + kMonotoneSlack) ++dir_breaks;
      prev = e;
    }
  }
  if (mu_breaks) failures.push_back(std::to_string(mu_breaks) + " mu monotonicity breaks");
  if (dir_breaks) failures.push_back(std::to_string(dir_breaks) + " direction-count breaks");

  std::ostringstream s;
  s << "single contact " << single << ", antipodal patches mu 0.5 " << fmt("%.4f", antipodal)
    << ", monotone in mu (20 grasps x 10 values), non-increasing over 64..4096 directions";
  for (const auto& f : failures) s << "; FAILED " << f;
  return verdict(failures.empty(), s.str());
}

// ---- pipeline ---------------------------------------------------------------

struct PipelineRun {
  DatasetBundle bundle;
  EvalReport report;
  double build_seconds = 0.0;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
  std::vector<std::string> diverged;
};

PipelineRun run_pipeline(PipelineConfig cfg, const fs::path& dir) {
  fs::remove_all(dir);
  const GripperModel model = load_gripper(cfg.gripper);
  cfg.network.output_dim = model.pose_dim();
  PipelineRun run;
  auto t0 = Clock::now();
  generate_objects(cfg, dir / "objects");
  build_dataset_dir(cfg, dir / "objects", dir / "dataset");
  run.build_seconds = seconds_since(t0);
  run.bundle = load_dataset_dir(dir / "dataset");
  t0 = Clock::now();
  const auto results = train_losses(cfg, run.bundle.data, {"l2", "consistency", "combined"}, dir / "checkpoints");
  run.train_seconds = seconds_since(t0);
  for (const auto& [name, r] : results) {
    if (r.diverged) run.diverged.push_back(name);
  }
  auto nets = load_checkpoints(dir / "checkpoints");
  t0 = Clock::now();
  run.report = evaluate(cfg, run.bundle, nets, dir / "report");
  run.eval_seconds = seconds_since(t0);
  return run;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Relative path -> bytes of every file except timing.json.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == "timing.json") continue;
    files[fs::relative(e.path(), dir).generic_string()] = read_bytes(e.path());
  }
  return files;
}

Outcome criterion_determinism(const PipelineConfig& cfg, const fs::path& work, PipelineRun& first) {
  const char* old = std::getenv("GRASPFIELD_THREADS");
  const std::string restore = old ? old : "";
  setenv("GRASPFIELD_THREADS", "1", 1);
  first = run_pipeline(cfg, work / "run_a");
  setenv("GRASPFIELD_THREADS", "3", 1);
  run_pipeline(cfg, work / "run_b");
  if (old) {
    setenv("GRASPFIELD_THREADS", restore.c_str(), 1);
  } else {
    unsetenv("GRASPFIELD_THREADS");
  }
  const auto a = snapshot(work / "run_a");
  const auto b = snapshot(work / "run_b");
  std::vector<std::string> differ;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != bytes) differ.push_back(name);
  }
  for (const auto& [name, bytes] : b) {
    if (!a.count(name)) differ.push_back(name);
  }
  std::ostringstream s;
  s << a.size() << " files compared across two runs (1 and 3 threads), " << differ.size() << " differ";
  for (std::size_t i = 0; i < differ.size() && i < 5; ++i) s << (i ? ", " : ": ") << differ[i];
  const bool has_all = a.count("dataset/manifest.json") && a.count("checkpoints/combined.gfn") &&
                       a.count("report/residual_matrix.csv") && a.count("report/penetration.csv");
  return verdict(differ.empty() && has_all && !a.empty(), s.str());
}

const char* kTinyConfig = R"({
  "seed": 3,
  "objects": {"count": 4},
  "gripper": "simple9",
  "dataset": {"resolution": 16, "k": 3, "train_fraction": 0.75, "anneal": {"iterations": 150}},
  "network": {
    "input_resolution": 16,
    "conv_layers": [
      {"out_channels": 4, "kernel_size": 3},
      {"out_channels": 8, "kernel_size": 2},
      {"out_channels": 8, "kernel_size": 2}
    ],
    "fc_layers": [8, 32, 32],
    "fc_batchnorm": [true, true]
  },
  "train": {"epochs": 3, "batch_size": 8},
  "refine": {"max_iters": 100},
  "eval": {"max_rotations": 2},
  "compare": {"objects": 3, "epochs": 2, "seeds": [1]}
})";

int train_object_count(const GraspDataset& d) {
  int n = 0;
  for (Split s : d.split) n += s == Split::train;
  return n;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks, one PASS/FAIL line per criterion"};
  bool fast = false;
  std::string workdir = "acceptance_work";
  std::string config_path;
  app.add_flag("--fast", fast, "skip the criteria that need the desk pipeline");
  app.add_option("--workdir", workdir, "scratch directory (wiped per run)");
  app.add_option("--config", config_path, "desk pipeline config (default: built-in desk settings)")
      ->check(CLI::ExistingFile);
  CLI11_PARSE(app, argc, argv);

  std::map<int, Outcome> out;
  auto report = [&](int id, const Outcome& o) {
    out[id] = o;
    const char* tag = o.state == Outcome::pass ? "PASS" : o.state == Outcome::fail ? "FAIL" : "SKIP";
    std::printf("criterion %2d: %s  %s\n", id, tag, o.detail.c_str());
    std::fflush(stdout);
  };
  auto guarded = [&](int id, const std::function<Outcome()>& fn) {
    try {
      report(id, fn());
    } catch (const std::exception& e) {
      report(id, verdict(false, std::string("error: ") + e.what()));
    }
  };

  std::printf("threads: %zu\n", thread_count());
  const fs::path work(workdir);
  fs::create_directories(work);

  guarded(1, criterion_gradients);
  guarded(2, criterion_sdf);
  guarded(8, criterion_epsilon);

  PipelineRun tiny;
  guarded(9, [&] { return criterion_determinism(pipeline_config_from_json(kTinyConfig), work / "tiny", tiny); });

  int mismatches = 0;
  const std::string brute = brute_force_consistency(mismatches);

  if (fast) {
    report(3, {mismatches == 0 ? Outcome::skip : Outcome::fail,
               brute + "; residual ratio needs the desk pipeline (run without --fast)"});
    for (int id : {4, 5, 6, 10}) report(id, {Outcome::skip, "needs the desk pipeline (run without --fast)"});
    if (!tiny.bundle.data.entries.empty()) {
      const PipelineConfig cfg = pipeline_config_from_json(kTinyConfig);
      guarded(7, [&] {
        Outcome o = criterion_equivariance(tiny.bundle.data, load_gripper(cfg.gripper),
                                           cfg.dataset.anneal.penetration_weight);
        o.detail = "tiny dataset: " + o.detail;
        return o;
      });
    } else {
      report(7, verdict(false, "tiny pipeline did not produce a dataset"));
    }
  } else {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_pipeline_config(config_path);
    const GripperModel model = load_gripper(cfg.gripper);
    PipelineRun desk;
    bool have_desk = false;
    try {
      std::fprintf(stderr, "running the desk pipeline in %s\n", (work / "desk").string().c_str());
      desk = run_pipeline(cfg, work / "desk");
      have_desk = true;
    } catch (const std::exception& e) {
      for (int id : {3, 5, 6, 7, 10}) report(id, verdict(false, std::string("desk pipeline error: ") + e.what()));
    }
    if (have_desk) {
      const GraspDataset& d = desk.bundle.data;
      const auto& m = desk.report.residuals.cell;
      guarded(3, [&] {
        const double ratio = m[1][1] / m[0][0];
        const int train_objects = train_object_count(d);
        std::ostringstream s;
        s << "consistency model consistency residual " << fmt("%.4f", m[1][1]) << " / l2 model l2 residual "
          << fmt("%.4f", m[0][0]) << " = " << fmt("%.3f", ratio) << " (limit " << kConsistencyRatio << "); "
          << train_objects << " train objects, K=" << d.k << ", " << cfg.epochs << " epochs; " << brute;
        return verdict(ratio <= kConsistencyRatio && train_objects >= kMinTrainObjects && d.k == kDeskK &&
                           mismatches == 0,
                       s.str());
      });
      guarded(5, [&] {
        const PenetrationSummary& c = desk.report.penetration.at("consistency").before;
        const PenetrationSummary& b = desk.report.penetration.at("combined").before;
        std::ostringstream s;
        s << "mean penetrating points combined " << fmt("%.3f", b.mean_count) << " vs consistency "
          << fmt("%.3f", c.mean_count) << " (limit " << kCollisionReduction << "x); mean depth "
          << fmt("%.2e", b.mean_depth) << " vs " << fmt("%.2e", c.mean_depth) << " m; beta " << cfg.beta;
        return verdict(b.mean_count <= kCollisionReduction * c.mean_count && b.mean_depth < c.mean_depth &&
                           cfg.beta == 0.75,
                       s.str());
      });
      guarded(6, [&] {
        int predictions = 0, converged = 0, flagged = 0;
        std::ostringstream s;
        for (const auto& [name, r] : desk.report.penetration) {
          predictions += r.before.predictions;
          converged += r.converged;
          flagged += r.unconverged_flagged;
          s << name << " " << r.converged << "/" << r.before.predictions << ", ";
        }
        const double frac = predictions ? double(converged) / predictions : 0.0;
        s << "total " << fmt("%.1f%%", 100 * frac) << " reach zero penetrations (limit "
          << fmt("%.0f%%", 100 * kConvergedFraction) << ", " << cfg.refine.max_iters << " iterations); "
          << flagged << "/" << predictions - converged << " failures flagged";
        return verdict(frac >= kConvergedFraction && flagged == predictions - converged &&
                           cfg.refine.max_iters <= kRefineIters && predictions > 0,
                       s.str());
      });
      guarded(7, [&] {
        Outcome o = criterion_equivariance(d, model, cfg.dataset.anneal.penetration_weight);
        o.detail = "desk dataset: " + o.detail;
        return o;
      });
      guarded(10, [&] {
        const double total = desk.build_seconds + desk.train_seconds + desk.eval_seconds;
        std::ostringstream s;
        s << "build " << fmt("%.0f s", desk.build_seconds) << " + train " << fmt("%.0f s", desk.train_seconds)
          << " + eval " << fmt("%.0f s", desk.eval_seconds) << " = " << fmt("%.1f min", total / 60) << " (limit "
          << kBudgetSeconds / 60 << " min) on " << thread_count() << " thread(s)";
        if (!desk.diverged.empty()) s << "; diverged: " << desk.diverged.front();
        return verdict(total < kBudgetSeconds && desk.diverged.empty() && cfg.epochs == 200, s.str());
      });
    }
    guarded(4, [&] {
      const auto t0 = Clock::now();
      const std::vector<CompareRow> rows = compare_low_dof(cfg);
      write_text(work / "compare_low_dof.csv", compare_csv(rows));
      std::map<std::uint64_t, std::map<std::string, CompareRow>> by_seed;
      for (const CompareRow& r : rows) by_seed[r.seed][r.gripper] = r;
      int wins = 0;
      std::ostringstream s;
      for (const auto& [seed, g] : by_seed) {
        const CompareRow& w = g.at("wide24");
        const CompareRow& n = g.at("simple9");
        wins += w.test_l2 > n.test_l2;
        s << "seed " << seed << ": wide24 " << fmt("%.3f", w.test_l2) << " vs simple9 " << fmt("%.3f", n.test_l2)
          << " (per dim " << fmt("%.3f", w.test_l2 / w.pose_dim) << " vs " << fmt("%.3f", n.test_l2 / n.pose_dim)
          << "); ";
      }
      const int seeds = static_cast<int>(by_seed.size());
      s << wins << "/" << seeds << " seeds ordered, " << fmt("%.0f s", seconds_since(t0));
      return verdict(seeds >= 3 && 2 * wins > seeds, s.str());
    });
  }

  int failed = 0;
  std::printf("summary:");
  for (const auto& [id, o] : out) {
    failed += o.state == Outcome::fail;
    std::printf(" %d=%s", id, o.state == Outcome::pass ? "PASS" : o.state == Outcome::fail ? "FAIL" : "SKIP");
  }
  std::printf("\n");
  std::printf("%s: %d of %zu criteria failed\n", failed ? "FAIL" : "PASS", failed, out.size());
  return failed ? 1 : 0;
}
