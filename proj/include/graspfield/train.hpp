#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "graspfield/dataset.hpp"
#include "graspfield/losses.hpp"
#include "graspfield/network.hpp"

namespace graspfield {

enum class LossKind { l2, consistency, combined };

struct LossSpec {
  LossKind kind = LossKind::consistency;
  double beta = 0.75;  // combined only

  std::string name() const;
  /// "l2", "consistency" or "combined"; anything else is InvalidParameter.
  static LossSpec parse(const std::string& name, double beta = 0.75);
};

/// Per-item loss of one prediction against a dataset entry. The l2 loss
/// targets the entry's lowest-cost candidate.
LossReport entry_loss(const LossSpec& spec, const PoseVector& prediction, const DatasetEntry& entry,
                      const GripperModel& model, const SignedDistanceField& field);

/// Mean loss of each of the three metrics, l2 / consistency / combined.
struct Residuals {
  double l2 = 0.0;
  double consistency = 0.0;
  double combined = 0.0;
};

/// Eval-mode predictions (pose_dim x n) for the given entries.
Eigen::MatrixXd predict_entries(Network& net, const GraspDataset& data, const std::vector<std::size_t>& entries);

/// Residuals of predictions (columns) against the given entries.
Residuals residuals(const Eigen::MatrixXd& predictions, const GraspDataset& data,
                    const std::vector<std::size_t>& entries, const GripperModel& model, double beta);

struct TrainConfig {
  NetworkConfig network;  // output_dim is overwritten with the gripper's pose_dim
  AdamConfig adam;
  LossSpec loss;
  int epochs = 200;
  std::uint64_t seed = 1;
};

struct ResidualRow {
  int epoch = 0;
  std::string loss_name;
  double train = 0.0;  // running mean over the epoch's batches (train mode)
  double test = 0.0;   // eval mode after the epoch
};

struct TrainResult {
  Network network;
  std::vector<ResidualRow> log;
  bool diverged = false;
  std::string message;  // divergence diagnostics
};

/// Mini-batch ADAM on the train split; batches are reshuffled every epoch
/// and a trailing batch of one item is dropped (batchnorm needs two). On a
/// non-finite loss or gradient training stops and the parameters from the
/// epoch with the lowest train loss are returned.
TrainResult train(const GraspDataset& data, const GripperModel& model, const TrainConfig& cfg);

/// "epoch,loss_name,train,test" rows.
std::string residual_log_csv(const std::vector<ResidualRow>& log);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace graspfield
