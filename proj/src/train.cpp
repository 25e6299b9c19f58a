#include "graspfield/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "binary_io.hpp"
#include "graspfield/error.hpp"
#include "graspfield/hash.hpp"
#include "graspfield/parallel.hpp"

namespace graspfield {
namespace {

constexpr int kEvalChunk = 32;

Eigen::MatrixXd batch_inputs(const GraspDataset& data, const std::vector<std::size_t>& entries, std::size_t begin,
                             std::size_t end) {
  const std::size_t cells = data.entries[entries[begin]].grid.cells.size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(cells), static_cast<Eigen::Index>(end - begin));
  for (std::size_t b = begin; b < end; ++b) {
    const OccupancyGrid& g = data.entries[entries[b]].grid;
    if (g.cells.size() != cells) throw ShapeError("dataset grids differ in resolution");
    x.col(static_cast<Eigen::Index>(b - begin)) = grid_input(g);
  }
  return x;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string LossSpec::name() const {
  switch (kind) {
    case LossKind::l2:
      return "l2";
    case LossKind::consistency:
      return "consistency";
    case LossKind::combined:
      return "combined";
  }
  return "?";
}

LossSpec LossSpec::parse(const std::string& name, double beta) {
  LossSpec s;
  s.beta = beta;
  if (name == "l2") {
    s.kind = LossKind::l2;
  } else if (name == "consistency") {
    s.kind = LossKind::consistency;
  } else if (name == "combined") {
    s.kind = LossKind::combined;
  } else {
    throw InvalidParameter("unknown loss '" + name + "' (expected l2, consistency or combined)");
  }
  return s;
}

LossReport entry_loss(const LossSpec& spec, const PoseVector& prediction, const DatasetEntry& entry,
                      const GripperModel& model, const SignedDistanceField& field) {
  switch (spec.kind) {
    case LossKind::l2:
      return l2_loss(prediction, entry.poses.front());
    case LossKind::consistency:
      return consistency_loss(prediction, entry.poses);
    case LossKind::combined:
      return combined_loss(prediction, entry.poses, model, field, entry.t_r, spec.beta);
  }
  throw InvalidParameter("unknown loss kind");
}

Eigen::MatrixXd predict_entries(Network& net, const GraspDataset& data, const std::vector<std::size_t>& entries) {
  Eigen::MatrixXd out(net.config().output_dim, static_cast<Eigen::Index>(entries.size()));
  for (std::size_t b = 0; b < entries.size(); b += kEvalChunk) {
    const std::size_t e = std::min(entries.size(), b + kEvalChunk);
    out.middleCols(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) =
        net.forward(batch_inputs(data, entries, b, e), Mode::eval);
  }
  return out;
}

Residuals residuals(const Eigen::MatrixXd& predictions, const GraspDataset& data,
                    const std::vector<std::size_t>& entries, const GripperModel& model, double beta) {
  const std::size_t n = entries.size();
  if (static_cast<std::size_t>(predictions.cols()) != n) throw ShapeError("one prediction per entry expected");
  Residuals r;
  if (n == 0) return r;
  std::vector<Residuals> per(n);
  parallel_for(n, [&](std::size_t i) {
    const DatasetEntry& e = data.entries[entries[i]];
    const PoseVector x = predictions.col(static_cast<Eigen::Index>(i));
    per[i].l2 = l2_loss(x, e.poses.front()).value;
    const double c = consistency_loss(x, e.poses).value;
    per[i].consistency = c;
    per[i].combined = beta * c + (1.0 - beta) * collision_loss(x, model, data.sdfs[e.object_id], e.t_r).value;
  });
  for (const Residuals& p : per) {
    r.l2 += p.l2;
    r.consistency += p.consistency;
    r.combined += p.combined;
  }
  r.l2 /= static_cast<double>(n);
  r.consistency /= static_cast<double>(n);
  r.combined /= static_cast<double>(n);
  return r;
}

TrainResult train(const GraspDataset& data, const GripperModel& model, const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw InvalidParameter("epochs must be >= 0");
  if (cfg.adam.batch_size < 2) throw InvalidParameter("batch size must be >= 2");
  if (!(cfg.loss.beta >= 0.0 && cfg.loss.beta <= 1.0)) throw InvalidParameter("combined loss needs 0 <= beta <= 1");
  const std::vector<std::size_t> train_idx = data.indices(Split::train);
  const std::vector<std::size_t> test_idx = data.indices(Split::test);
  if (train_idx.empty()) throw InvalidParameter("dataset has no training entries");

  NetworkConfig ncfg = cfg.network;
  ncfg.output_dim = model.pose_dim();
  TrainResult result;
  result.network = Network(ncfg, stage_seed(cfg.seed, "init"));
  Network& net = result.network;
  AdamState adam = make_adam(net, cfg.adam);
  std::mt19937_64 rng(stage_seed(cfg.seed, "shuffle"));

  Eigen::VectorXd best = net.parameters();
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order = train_idx;
  const std::size_t bs = static_cast<std::size_t>(cfg.adam.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    Residuals train_sum;
    double objective = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t e = std::min(order.size(), b + bs);
      if (e - b < 2) break;
      const std::size_t m = e - b;
      Network::Tape tape;
      const Eigen::MatrixXd pred = net.forward(batch_inputs(data, order, b, e), Mode::train, &tape);
      Eigen::MatrixXd d_out(pred.rows(), pred.cols());
      std::vector<Residuals> per(m);
      std::vector<double> obj(m);
      parallel_for(m, [&](std::size_t i) {
        const DatasetEntry& entry = data.entries[order[b + i]];
        const SignedDistanceField& field = data.sdfs[entry.object_id];
        const PoseVector x = pred.col(static_cast<Eigen::Index>(i));
        const LossReport l2 = l2_loss(x, entry.poses.front());
        const LossReport co = consistency_loss(x, entry.poses);
        const LossReport cl = collision_loss(x, model, field, entry.t_r);
        per[i] = {l2.value, co.value, cfg.loss.beta * co.value + (1.0 - cfg.loss.beta) * cl.value};
        Eigen::VectorXd g;
        double v = 0.0;
        switch (cfg.loss.kind) {
          case LossKind::l2:
            g = l2.d_prediction;
            v = l2.value;
            break;
          case LossKind::consistency:
            g = co.d_prediction;
            v = co.value;
            break;
          case LossKind::combined:
            g = cfg.loss.beta * co.d_prediction + (1.0 - cfg.loss.beta) * cl.d_prediction;
            v = per[i].combined;
            break;
        }
        obj[i] = v;
        d_out.col(static_cast<Eigen::Index>(i)) = g / static_cast<double>(m);
      });
      double batch_obj = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        train_sum.l2 += per[i].l2;
        train_sum.consistency += per[i].consistency;
        train_sum.combined += per[i].combined;
        batch_obj += obj[i];
      }
      objective += batch_obj;
      seen += m;
      if (!std::isfinite(batch_obj)) {
        result.diverged = true;
        result.message = "non-finite " + cfg.loss.name() + " loss at epoch " + std::to_string(epoch);
        break;
      }
      try {
        adam_step(net, net.backward(tape, d_out), adam);
      } catch (const NumericError& err) {
        result.diverged = true;
        result.message = std::string(err.what()) + " at epoch " + std::to_string(epoch);
        break;
      }
    }
    if (result.diverged) break;
    if (seen == 0) throw InvalidParameter("training split needs at least two entries");

    const double denom = static_cast<double>(seen);
    objective /= denom;
    if (objective < best_loss) {
      best_loss = objective;
      best = net.parameters();
    }
    Residuals test;
    if (!test_idx.empty()) test = residuals(predict_entries(net, data, test_idx), data, test_idx, model, cfg.loss.beta);
    result.log.push_back({epoch, "l2", train_sum.l2 / denom, test.l2});
    result.log.push_back({epoch, "consistency", train_sum.consistency / denom, test.consistency});
    result.log.push_back({epoch, "combined", train_sum.combined / denom, test.combined});
  }
  if (result.diverged) net.parameters() = best;
  return result;
}

std::string residual_log_csv(const std::vector<ResidualRow>& log) {
  std::string out = "epoch,loss_name,train,test\n";
  for (const ResidualRow& r : log) {
    out += std::to_string(r.epoch) + "," + r.loss_name + "," + format_double(r.train) + "," + format_double(r.test) +
           "\n";
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) { detail::write_file(path, text); }
std::string read_text(const std::filesystem::path& path) { return detail::read_file(path); }

}  // namespace graspfield
