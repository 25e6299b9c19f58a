#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "graspfield/sdf.hpp"

namespace graspfield {

struct ConvLayerConfig {
  int out_channels = 16;
  int kernel_size = 4;
  bool pool = true;
  bool batchnorm = true;
};

/// f = NN_x o NN_o. Conv blocks are conv (valid, stride 1) -> batchnorm ->
/// ReLU -> optional 2x max-pool (floor). fc_layers[0] is the flatten length
/// omega and must match the conv stack; every later entry is a hidden width
/// with ReLU, batchnorm where fc_batchnorm says so. A linear head maps the
/// last width to output_dim.
struct NetworkConfig {
  int input_resolution = 32;
  std::vector<ConvLayerConfig> conv_layers;
  std::vector<int> fc_layers;
  std::vector<bool> fc_batchnorm;  // one flag per hidden fc layer
  int output_dim = 0;
  double bn_momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double bn_eps = 1e-5;

  /// Spatial size after each conv block, starting with the input.
  std::vector<int> spatial_sizes() const;
  int flatten_length() const;
  /// Throws ShapeError when the shapes do not close.
  void validate() const;

  /// Input 32, three conv blocks with kernel 4 and pooling, two hidden fc
  /// layers with batchnorm.
  static NetworkConfig desk(int output_dim);
  /// 64 kernels of size 4 in three blocks, hidden widths 21952, 4096, 1024,
  /// at an input resolution (80) for which the flatten length is 64 * 7^3.
  static NetworkConfig full_size(int output_dim);
};

std::string network_config_to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const std::string& text);

enum class Mode { train, eval };

/// Contiguous slice of the flat parameter vector.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool trainable = true;  // false for batchnorm running statistics
};

/// One column per batch item: R^3 values with x fastest.
Eigen::VectorXd grid_input(const OccupancyGrid& grid);

class Network {
 public:
  struct Tape;

  Network() = default;
  /// He-uniform weights, zero biases, batchnorm scale 1 / shift 0, running
  /// mean 0 / variance 1.
  Network(const NetworkConfig& cfg, std::uint64_t seed);
  Network(const NetworkConfig& cfg, Eigen::VectorXd params);

  const NetworkConfig& config() const { return cfg_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& parameters() { return params_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& block(const std::string& name) const;
  /// 1 for trainable entries, 0 for running statistics.
  Eigen::VectorXd trainable_mask() const;

  /// Predictions as an output_dim x N matrix. Train mode normalizes with batch
  /// statistics and updates the running statistics; eval mode uses them.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs, Mode mode, Tape* tape = nullptr);
  /// Gradient of sum(d_output .* output) with respect to the flat parameters
  /// (zero on running statistics) and, if requested, the inputs.
  Eigen::VectorXd backward(const Tape& tape, const Eigen::MatrixXd& d_output, Eigen::MatrixXd* d_input = nullptr) const;

  /// The flattened encoder output omega for each item (flatten_length x N).
  Eigen::MatrixXd features(const Tape& tape) const;

 private:
  NetworkConfig cfg_;
  Eigen::VectorXd params_;
  std::vector<ParamBlock> blocks_;
  void layout();
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-item activations are channels x voxels, voxels x fastest.
/// The ReLU input is scale * xhat + shift per channel: the batchnorm affine,
/// or 1 and the bias without batchnorm.
struct ConvTape {
  std::vector<RowMatrix> input;           // block input
  std::vector<RowMatrix> xhat;            // normalized conv output, or raw without batchnorm
  std::vector<std::vector<int>> argmax;   // pooled voxel -> source voxel, per channel
  Eigen::VectorXd inv_std;
  Eigen::VectorXd scale;
  Eigen::VectorXd shift;
};

/// Batch activations are width x N.
struct FcTape {
  Eigen::MatrixXd input;
  Eigen::MatrixXd xhat;
  Eigen::MatrixXd pre;
  Eigen::VectorXd inv_std;
};

struct Network::Tape {
  Mode mode = Mode::eval;
  int batch = 0;
  std::vector<ConvTape> conv;
  std::vector<FcTape> fc;
  Eigen::MatrixXd head_input;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 16;
};

struct AdamState {
  AdamConfig cfg;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
};

AdamState make_adam(const Network& net, const AdamConfig& cfg = {});

/// Bias-corrected ADAM on the trainable entries. Throws NumericError naming
/// the first block with a non-finite gradient and its largest |g|.
void adam_step(Network& net, const Eigen::VectorXd& grads, AdamState& state);

/// "GFLDNET1", u32 length + config JSON, u64 count + f64 parameters.
std::string serialize_network(const Network& net);
Network deserialize_network(const std::string& bytes);
void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace graspfield
