#include "graspfield/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include <json.hpp>

#include "binary_io.hpp"
#include "graspfield/error.hpp"
#include "graspfield/parallel.hpp"

namespace graspfield {
namespace {

using json = nlohmann::json;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

constexpr char kNetMagic[8] = {'G', 'F', 'L', 'D', 'N', 'E', 'T', '1'};

long cube(long d) { return d * d * d; }

// Patch matrix (channels * k^3) x (d - k + 1)^2 of output slice z.
void im2col_slice(const RowMatrix& in, int d, int k, int z, RowMatrix& cols) {
  const int channels = static_cast<int>(in.rows());
  const int o = d - k + 1;
  cols.resize(static_cast<Eigen::Index>(channels) * k * k * k, static_cast<Eigen::Index>(o) * o);
  for (int c = 0; c < channels; ++c) {
    const double* src = in.row(c).data();
    for (int dz = 0; dz < k; ++dz) {
      for (int dy = 0; dy < k; ++dy) {
        for (int dx = 0; dx < k; ++dx) {
          double* dst = cols.row(((c * k + dz) * k + dy) * k + dx).data();
          for (int y = 0; y < o; ++y) {
            const double* from = src + ((z + dz) * d + (y + dy)) * d + dx;
            double* to = dst + y * o;
            for (int x = 0; x < o; ++x) to[x] = from[x];
          }
        }
      }
    }
  }
}

// Adjoint of im2col_slice: scatter-add patch gradients onto the volume.
void col2im_slice(const RowMatrix& cols, int d, int k, int z, RowMatrix& out) {
  const int channels = static_cast<int>(out.rows());
  const int o = d - k + 1;
  for (int c = 0; c < channels; ++c) {
    double* dst = out.row(c).data();
    for (int dz = 0; dz < k; ++dz) {
      for (int dy = 0; dy < k; ++dy) {
        for (int dx = 0; dx < k; ++dx) {
          const double* src = cols.row(((c * k + dz) * k + dy) * k + dx).data();
          for (int y = 0; y < o; ++y) {
            double* row = dst + ((z + dz) * d + (y + dy)) * d + dx;
            const double* g = src + y * o;
            for (int x = 0; x < o; ++x) row[x] += g[x];
          }
        }
      }
    }
  }
}

// Valid convolution, one output z-slice at a time so patches stay in cache.
void conv_forward(const RowMatrix& in, int d, int k, const ConstRowMap& w, RowMatrix& out) {
  const int o = d - k + 1;
  const Eigen::Index plane = static_cast<Eigen::Index>(o) * o;
  out.resize(w.rows(), plane * o);
  RowMatrix cols;
  for (int z = 0; z < o; ++z) {
    im2col_slice(in, d, k, z, cols);
    out.middleCols(z * plane, plane).noalias() = w * cols;
  }
}

// Accumulates the weight gradient into dw and, if gin is given, writes the
// input gradient.
void conv_backward(const RowMatrix& in, const RowMatrix& gz, int d, int k, const ConstRowMap& w, RowMatrix& dw,
                   RowMatrix* gin) {
  const int o = d - k + 1;
  const Eigen::Index plane = static_cast<Eigen::Index>(o) * o;
  dw.setZero(w.rows(), w.cols());
  if (gin) gin->setZero(in.rows(), in.cols());
  RowMatrix cols, dcols;
  for (int z = 0; z < o; ++z) {
    im2col_slice(in, d, k, z, cols);
    const auto g = gz.middleCols(z * plane, plane);
    dw.noalias() += g * cols.transpose();
    if (gin) {
      dcols.noalias() = w.transpose() * g;
      col2im_slice(dcols, d, k, z, *gin);
    }
  }
}

// ReLU(scale * x + shift) per channel followed by a 2x max-pool with floor;
// records the source voxel of every output. Ties keep the first voxel.
void relu_pool(const RowMatrix& in, int d, const Eigen::VectorXd& scale, const Eigen::VectorXd& shift,
               RowMatrix& out, std::vector<int>& argmax) {
  const int channels = static_cast<int>(in.rows());
  const int p = d / 2;
  out.resize(channels, cube(p));
  argmax.resize(static_cast<std::size_t>(channels) * cube(p));
  Eigen::ArrayXd y(in.cols());
  for (int c = 0; c < channels; ++c) {
    y = (in.row(c).transpose().array() * scale[c] + shift[c]).max(0.0);
    double* dst = out.row(c).data();
    int* arg = argmax.data() + static_cast<std::size_t>(c) * cube(p);
    for (int z = 0; z < p; ++z) {
      for (int yy = 0; yy < p; ++yy) {
        const int base = ((2 * z) * d + 2 * yy) * d;
        const int rows[4] = {base, base + d, base + d * d, base + d * d + d};
        for (int x = 0; x < p; ++x) {
          int best = rows[0] + 2 * x;
          double top = y[best];
          for (int r = 0; r < 4; ++r) {
            for (int dx = 0; dx < 2; ++dx) {
              const int s = rows[r] + 2 * x + dx;
              const bool up = y[s] > top;
              top = up ? y[s] : top;
              best = up ? s : best;
            }
          }
          const int o = (z * p + yy) * p + x;
          dst[o] = top;
          arg[o] = best;
        }
      }
    }
  }
}

double he_bound(long fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

}  // namespace

std::vector<int> NetworkConfig::spatial_sizes() const {
  std::vector<int> sizes{input_resolution};
  int d = input_resolution;
  for (const ConvLayerConfig& c : conv_layers) {
    d = d - c.kernel_size + 1;
    if (c.pool) d /= 2;
    sizes.push_back(d);
  }
  return sizes;
}

int NetworkConfig::flatten_length() const {
  const int d = spatial_sizes().back();
  const int channels = conv_layers.empty() ? 1 : conv_layers.back().out_channels;
  return channels * d * d * d;
}

void NetworkConfig::validate() const {
  if (input_resolution < 1) throw ShapeError("input resolution must be positive");
  int d = input_resolution;
  for (std::size_t i = 0; i < conv_layers.size(); ++i) {
    const ConvLayerConfig& c = conv_layers[i];
    if (c.out_channels < 1 || c.kernel_size < 1) throw ShapeError("conv layer " + std::to_string(i) + " is empty");
    d = d - c.kernel_size + 1;
    if (d < 1) throw ShapeError("conv layer " + std::to_string(i) + " kernel exceeds its input");
    if (c.pool) {
      d /= 2;
      if (d < 1) throw ShapeError("conv layer " + std::to_string(i) + " pools below one voxel");
    }
  }
  if (fc_layers.empty()) throw ShapeError("fc_layers must start with the flatten length");
  if (fc_layers[0] != flatten_length()) {
    throw ShapeError("fc_layers[0] = " + std::to_string(fc_layers[0]) + " but the conv stack flattens to " +
                     std::to_string(flatten_length()));
  }
  for (int w : fc_layers) {
    if (w < 1) throw ShapeError("fc widths must be positive");
  }
  if (fc_batchnorm.size() != fc_layers.size() - 1) throw ShapeError("need one batchnorm flag per hidden fc layer");
  if (output_dim < 1) throw ShapeError("output_dim must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0) || !(bn_eps > 0.0)) {
    throw InvalidParameter("batchnorm momentum must be in [0, 1) and eps > 0");
  }
}

NetworkConfig NetworkConfig::desk(int output_dim) {
  NetworkConfig c;
  c.input_resolution = 32;
  c.conv_layers = {{4, 4, true, true}, {8, 4, true, true}, {32, 4, true, true}};
  c.fc_layers = {c.flatten_length(), 256, 128};
  c.fc_batchnorm = {true, true};
  c.output_dim = output_dim;
  return c;
}

NetworkConfig NetworkConfig::full_size(int output_dim) {
  NetworkConfig c;
  c.input_resolution = 80;
  c.conv_layers = {{64, 4, true, true}, {64, 4, true, true}, {64, 4, true, true}};
  c.fc_layers = {c.flatten_length(), 4096, 1024};
  c.fc_batchnorm = {true, true};
  c.output_dim = output_dim;
  return c;
}

std::string network_config_to_json(const NetworkConfig& cfg) {
  json conv = json::array();
  for (const auto& c : cfg.conv_layers) {
    conv.push_back({{"out_channels", c.out_channels},
                    {"kernel_size", c.kernel_size},
                    {"pool", c.pool},
                    {"batchnorm", c.batchnorm}});
  }
  json j{{"input_resolution", cfg.input_resolution},
         {"conv_layers", conv},
         {"fc_layers", cfg.fc_layers},
         {"fc_batchnorm", cfg.fc_batchnorm},
         {"output_dim", cfg.output_dim},
         {"bn_momentum", cfg.bn_momentum},
         {"bn_eps", cfg.bn_eps}};
  return j.dump();
}

NetworkConfig network_config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    NetworkConfig c;
    c.input_resolution = j.at("input_resolution");
    for (const auto& l : j.at("conv_layers")) {
      c.conv_layers.push_back({l.at("out_channels"), l.at("kernel_size"), l.value("pool", true),
                               l.value("batchnorm", true)});
    }
    c.fc_layers = j.at("fc_layers").get<std::vector<int>>();
    if (j.contains("fc_batchnorm")) {
      c.fc_batchnorm = j["fc_batchnorm"].get<std::vector<bool>>();
    } else {
      for (std::size_t i = 1; i < c.fc_layers.size(); ++i) c.fc_batchnorm.push_back(i <= 2);
    }
    c.output_dim = j.at("output_dim");
    c.bn_momentum = j.value("bn_momentum", 0.9);
    c.bn_eps = j.value("bn_eps", 1e-5);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ParseError(std::string("network config: ") + e.what());
  }
}

Eigen::VectorXd grid_input(const OccupancyGrid& grid) {
  Eigen::VectorXd v(grid.cells.size());
  for (std::size_t i = 0; i < grid.cells.size(); ++i) v[i] = grid.cells[i] ? 1.0 : 0.0;
  return v;
}

void Network::layout() {
  blocks_.clear();
  std::size_t offset = 0;
  auto add = [&](const std::string& name, std::size_t size, bool trainable = true) {
    blocks_.push_back({name, offset, size, trainable});
    offset += size;
  };
  int cin = 1;
  for (std::size_t l = 0; l < cfg_.conv_layers.size(); ++l) {
    const ConvLayerConfig& c = cfg_.conv_layers[l];
    const std::string p = "conv" + std::to_string(l);
    add(p + ".weight", static_cast<std::size_t>(c.out_channels) * cin * cube(c.kernel_size));
    if (c.batchnorm) {
      add(p + ".bn_scale", c.out_channels);
      add(p + ".bn_shift", c.out_channels);
      add(p + ".running_mean", c.out_channels, false);
      add(p + ".running_var", c.out_channels, false);
    } else {
      add(p + ".bias", c.out_channels);
    }
    cin = c.out_channels;
  }
  for (std::size_t l = 1; l < cfg_.fc_layers.size(); ++l) {
    const std::string p = "fc" + std::to_string(l - 1);
    const int in = cfg_.fc_layers[l - 1], out = cfg_.fc_layers[l];
    add(p + ".weight", static_cast<std::size_t>(out) * in);
    if (cfg_.fc_batchnorm[l - 1]) {
      add(p + ".bn_scale", out);
      add(p + ".bn_shift", out);
      add(p + ".running_mean", out, false);
      add(p + ".running_var", out, false);
    } else {
      add(p + ".bias", out);
    }
  }
  add("head.weight", static_cast<std::size_t>(cfg_.output_dim) * cfg_.fc_layers.back());
  add("head.bias", cfg_.output_dim);
  params_.resize(static_cast<Eigen::Index>(offset));
}

Network::Network(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  layout();
  params_.setZero();
  std::mt19937_64 rng(seed);
  for (const ParamBlock& b : blocks_) {
    VecMap v(params_.data() + b.offset, static_cast<Eigen::Index>(b.size));
    const auto ends_with = [&](const char* s) {
      const std::size_t n = std::strlen(s);
      return b.name.size() >= n && b.name.compare(b.name.size() - n, n, s) == 0;
    };
    if (ends_with(".weight")) {
      long fan_in = 0;
      if (b.name.rfind("conv", 0) == 0) {
        const int l = std::stoi(b.name.substr(4));
        const int cin = l == 0 ? 1 : cfg_.conv_layers[l - 1].out_channels;
        fan_in = cin * cube(cfg_.conv_layers[l].kernel_size);
      } else if (b.name.rfind("fc", 0) == 0) {
        fan_in = cfg_.fc_layers[std::stoi(b.name.substr(2))];
      } else {
        fan_in = cfg_.fc_layers.back();
      }
      std::uniform_real_distribution<double> u(-he_bound(fan_in), he_bound(fan_in));
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = u(rng);
    } else if (ends_with(".bn_scale") || ends_with(".running_var")) {
      v.setOnes();
    }
  }
}

Network::Network(const NetworkConfig& cfg, Eigen::VectorXd params) : cfg_(cfg) {
  cfg_.validate();
  layout();
  if (params.size() != params_.size()) {
    throw ShapeError("parameter vector has " + std::to_string(params.size()) + " entries, config needs " +
                     std::to_string(params_.size()));
  }
  params_ = std::move(params);
}

const ParamBlock& Network::block(const std::string& name) const {
  for (const ParamBlock& b : blocks_) {
    if (b.name == name) return b;
  }
  throw InvalidParameter("no parameter block named " + name);
}

Eigen::VectorXd Network::trainable_mask() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(params_.size());
  for (const ParamBlock& b : blocks_) {
    if (b.trainable) m.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size)).setOnes();
  }
  return m;
}

Eigen::MatrixXd Network::forward(const Eigen::MatrixXd& inputs, Mode mode, Tape* tape) {
  const long r = cfg_.input_resolution;
  if (inputs.rows() != cube(r)) {
    throw ShapeError("network expects " + std::to_string(cube(r)) + " input voxels, got " +
                     std::to_string(inputs.rows()));
  }
  const int n = static_cast<int>(inputs.cols());
  if (n < 1) throw ShapeError("empty batch");
  Tape local;
  Tape& t = tape ? *tape : local;
  t = Tape{};
  t.mode = mode;
  t.batch = n;
  const bool train = mode == Mode::train;
  const double mom = cfg_.bn_momentum, eps = cfg_.bn_eps;
  auto blk = [&](const std::string& name) { return params_.data() + block(name).offset; };

  std::vector<RowMatrix> act(n);
  for (int i = 0; i < n; ++i) act[i] = ConstRowMap(inputs.col(i).data(), 1, cube(r));
  int d = static_cast<int>(r), cin = 1;

  for (std::size_t l = 0; l < cfg_.conv_layers.size(); ++l) {
    const ConvLayerConfig& c = cfg_.conv_layers[l];
    const std::string p = "conv" + std::to_string(l);
    const int k = c.kernel_size, o = d - k + 1;
    const long s = cube(o);
    ConvTape ct;
    const ConstRowMap w(blk(p + ".weight"), c.out_channels, static_cast<Eigen::Index>(cin) * cube(k));
    std::vector<RowMatrix> z(n);
    parallel_for(n, [&](std::size_t i) { conv_forward(act[i], d, k, w, z[i]); });
    ct.input = std::move(act);
    act.assign(n, RowMatrix());
    const int channels = c.out_channels;
    if (c.batchnorm) {
      ct.scale = ConstVecMap(blk(p + ".bn_scale"), channels);
      ct.shift = ConstVecMap(blk(p + ".bn_shift"), channels);
      VecMap rmean(blk(p + ".running_mean"), channels), rvar(blk(p + ".running_var"), channels);
      Eigen::VectorXd mean = rmean, var = rvar;
      if (train) {
        const double m = static_cast<double>(n) * s;
        std::vector<Eigen::VectorXd> part(n, Eigen::VectorXd::Zero(channels));
        parallel_for(n, [&](std::size_t i) {
          for (int ch = 0; ch < channels; ++ch) part[i][ch] = z[i].row(ch).sum();
        });
        mean.setZero();
        for (int i = 0; i < n; ++i) mean += part[i];
        mean /= m;
        parallel_for(n, [&](std::size_t i) {
          for (int ch = 0; ch < channels; ++ch) part[i][ch] = (z[i].row(ch).array() - mean[ch]).square().sum();
        });
        var.setZero();
        for (int i = 0; i < n; ++i) var += part[i];
        var /= m;
        rmean = mom * rmean + (1.0 - mom) * mean;
        rvar = mom * rvar + (1.0 - mom) * var;
      }
      ct.inv_std = (var.array() + eps).rsqrt().matrix();
      parallel_for(n, [&](std::size_t i) {
        for (int ch = 0; ch < channels; ++ch) z[i].row(ch) = (z[i].row(ch).array() - mean[ch]) * ct.inv_std[ch];
      });
    } else {
      ct.scale = Eigen::VectorXd::Ones(channels);
      ct.shift = ConstVecMap(blk(p + ".bias"), channels);
    }
    ct.argmax.resize(n);
    parallel_for(n, [&](std::size_t i) {
      if (c.pool) {
        relu_pool(z[i], o, ct.scale, ct.shift, act[i], ct.argmax[i]);
      } else {
        act[i].resize(channels, s);
        for (int ch = 0; ch < channels; ++ch) {
          act[i].row(ch) = (z[i].row(ch).array() * ct.scale[ch] + ct.shift[ch]).max(0.0);
        }
      }
    });
    ct.xhat = std::move(z);
    d = c.pool ? o / 2 : o;
    cin = c.out_channels;
    t.conv.push_back(std::move(ct));
  }

  Eigen::MatrixXd h(cfg_.fc_layers[0], n);
  for (int i = 0; i < n; ++i) h.col(i) = ConstVecMap(act[i].data(), act[i].size());

  for (std::size_t l = 1; l < cfg_.fc_layers.size(); ++l) {
    const std::string p = "fc" + std::to_string(l - 1);
    const int in = cfg_.fc_layers[l - 1], out = cfg_.fc_layers[l];
    FcTape ft;
    ft.input = h;
    const ConstRowMap w(blk(p + ".weight"), out, in);
    Eigen::MatrixXd z = w * h;
    if (cfg_.fc_batchnorm[l - 1]) {
      VecMap gamma(blk(p + ".bn_scale"), out), beta(blk(p + ".bn_shift"), out);
      VecMap rmean(blk(p + ".running_mean"), out), rvar(blk(p + ".running_var"), out);
      Eigen::VectorXd mean = rmean, var = rvar;
      if (train) {
        mean = z.rowwise().mean();
        var = (z.colwise() - mean).rowwise().squaredNorm() / static_cast<double>(n);
        rmean = mom * rmean + (1.0 - mom) * mean;
        rvar = mom * rvar + (1.0 - mom) * var;
      }
      ft.inv_std = (var.array() + eps).rsqrt().matrix();
      ft.xhat = (z.colwise() - mean).array().colwise() * ft.inv_std.array();
      z = (ft.xhat.array().colwise() * gamma.array()).colwise() + beta.array();
    } else {
      z.colwise() += ConstVecMap(blk(p + ".bias"), out);
    }
    ft.pre = z;
    h = z.cwiseMax(0.0);
    t.fc.push_back(std::move(ft));
  }

  t.head_input = h;
  const ConstRowMap w(blk("head.weight"), cfg_.output_dim, cfg_.fc_layers.back());
  Eigen::MatrixXd out = w * h;
  out.colwise() += ConstVecMap(blk("head.bias"), cfg_.output_dim);
  return out;
}

Eigen::MatrixXd Network::features(const Tape& tape) const {
  if (!tape.fc.empty()) return tape.fc.front().input;
  return tape.head_input;
}

Eigen::VectorXd Network::backward(const Tape& t, const Eigen::MatrixXd& d_output, Eigen::MatrixXd* d_input) const {
  const int n = t.batch;
  if (d_output.rows() != cfg_.output_dim || d_output.cols() != n || t.conv.size() != cfg_.conv_layers.size() ||
      t.fc.size() + 1 != cfg_.fc_layers.size()) {
    throw ShapeError("tape or output gradient does not match the network");
  }
  const bool train = t.mode == Mode::train;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
  auto pblk = [&](const std::string& name) { return params_.data() + block(name).offset; };
  auto gblk = [&](const std::string& name) { return grad.data() + block(name).offset; };

  // head
  {
    const int in = cfg_.fc_layers.back();
    RowMap(gblk("head.weight"), cfg_.output_dim, in).noalias() = d_output * t.head_input.transpose();
    VecMap(gblk("head.bias"), cfg_.output_dim) = d_output.rowwise().sum();
  }
  Eigen::MatrixXd g = ConstRowMap(pblk("head.weight"), cfg_.output_dim, cfg_.fc_layers.back()).transpose() * d_output;

  for (std::size_t l = cfg_.fc_layers.size() - 1; l >= 1; --l) {
    const std::string p = "fc" + std::to_string(l - 1);
    const int in = cfg_.fc_layers[l - 1], out = cfg_.fc_layers[l];
    const FcTape& ft = t.fc[l - 1];
    Eigen::MatrixXd gz = (ft.pre.array() > 0.0).select(g, 0.0);
    if (cfg_.fc_batchnorm[l - 1]) {
      const ConstVecMap gamma(pblk(p + ".bn_scale"), out);
      VecMap(gblk(p + ".bn_scale"), out) = (gz.array() * ft.xhat.array()).rowwise().sum().matrix();
      VecMap(gblk(p + ".bn_shift"), out) = gz.rowwise().sum();
      const Eigen::MatrixXd gx = gz.array().colwise() * gamma.array();
      if (train) {
        const Eigen::VectorXd s1 = gx.rowwise().sum();
        const Eigen::VectorXd s2 = (gx.array() * ft.xhat.array()).rowwise().sum();
        const double m = n;
        gz = ((gx * m).colwise() - s1 - (ft.xhat.array().colwise() * s2.array()).matrix()).array().colwise() *
             (ft.inv_std.array() / m);
      } else {
        gz = gx.array().colwise() * ft.inv_std.array();
      }
    } else {
      VecMap(gblk(p + ".bias"), out) = gz.rowwise().sum();
    }
    RowMap(gblk(p + ".weight"), out, in).noalias() = gz * ft.input.transpose();
    g = ConstRowMap(pblk(p + ".weight"), out, in).transpose() * gz;
    if (l == 1) break;
  }

  // g is now d(omega), flatten_length x N
  const std::vector<int> sizes = cfg_.spatial_sizes();
  std::vector<RowMatrix> gact(n);
  {
    const int c = cfg_.conv_layers.empty() ? 1 : cfg_.conv_layers.back().out_channels;
    const long v = cube(sizes.back());
    for (int i = 0; i < n; ++i) gact[i] = ConstRowMap(g.col(i).data(), c, v);
  }

  for (int l = static_cast<int>(cfg_.conv_layers.size()) - 1; l >= 0; --l) {
    const ConvLayerConfig& c = cfg_.conv_layers[l];
    const ConvTape& ct = t.conv[l];
    const std::string p = "conv" + std::to_string(l);
    const int d = sizes[l], k = c.kernel_size, o = d - k + 1;
    const int cin = l == 0 ? 1 : cfg_.conv_layers[l - 1].out_channels;
    const long s = cube(o);

    // gradient at the ReLU output, routed through the pool and the ReLU mask;
    // the batchnorm sums only see the routed entries
    const int channels = c.out_channels;
    std::vector<RowMatrix> gz(n);
    std::vector<Eigen::VectorXd> pg(n, Eigen::VectorXd::Zero(channels)), pb(n, Eigen::VectorXd::Zero(channels));
    parallel_for(n, [&](std::size_t i) {
      const RowMatrix& xh = ct.xhat[i];
      gz[i].setZero(channels, s);
      for (int ch = 0; ch < channels; ++ch) {
        const double a = ct.scale[ch], b = ct.shift[ch];
        double sg = 0.0, sb = 0.0;
        auto route = [&](long v, double g) {
          if (a * xh(ch, v) + b > 0.0) {
            gz[i](ch, v) += g;
            sg += g * xh(ch, v);
            sb += g;
          }
        };
        if (c.pool) {
          const long pv = cube(o / 2);
          const int* src = ct.argmax[i].data() + ch * pv;
          for (long q = 0; q < pv; ++q) route(src[q], gact[i](ch, q));
        } else {
          for (long v = 0; v < s; ++v) route(v, gact[i](ch, v));
        }
        pg[i][ch] = sg;
        pb[i][ch] = sb;
      }
    });

    Eigen::VectorXd dgamma = Eigen::VectorXd::Zero(channels), dbeta = dgamma;
    for (int i = 0; i < n; ++i) {
      dgamma += pg[i];
      dbeta += pb[i];
    }
    if (c.batchnorm) {
      VecMap(gblk(p + ".bn_scale"), channels) = dgamma;
      VecMap(gblk(p + ".bn_shift"), channels) = dbeta;
      // g_z = inv_std / M * (M * gamma * g - gamma * dbeta - xhat * gamma * dgamma)
      const double m = static_cast<double>(n) * s;
      parallel_for(n, [&](std::size_t i) {
        for (int ch = 0; ch < channels; ++ch) {
          const double a = ct.scale[ch] * ct.inv_std[ch];
          const double b1 = train ? a * dbeta[ch] / m : 0.0;
          const double b2 = train ? a * dgamma[ch] / m : 0.0;
          gz[i].row(ch) = gz[i].row(ch).array() * a - b1 - ct.xhat[i].row(ch).array() * b2;
        }
      });
    } else {
      VecMap(gblk(p + ".bias"), channels) = dbeta;
    }

    const ConstRowMap w(pblk(p + ".weight"), c.out_channels, static_cast<Eigen::Index>(cin) * cube(k));
    const bool need_input = l > 0 || d_input != nullptr;
    std::vector<RowMatrix> dw(n);
    std::vector<RowMatrix> gin(n);
    parallel_for(n, [&](std::size_t i) {
      conv_backward(ct.input[i], gz[i], d, k, w, dw[i], need_input ? &gin[i] : nullptr);
    });
    RowMap gw(gblk(p + ".weight"), c.out_channels, static_cast<Eigen::Index>(cin) * cube(k));
    for (int i = 0; i < n; ++i) gw += dw[i];
    gact = std::move(gin);
  }

  if (d_input) {
    d_input->resize(cube(cfg_.input_resolution), n);
    for (int i = 0; i < n; ++i) {
      if (cfg_.conv_layers.empty()) {
        d_input->col(i) = g.col(i);
      } else {
        d_input->col(i) = ConstVecMap(gact[i].data(), gact[i].size());
      }
    }
  }
  return grad;
}

AdamState make_adam(const Network& net, const AdamConfig& cfg) {
  AdamState s;
  s.cfg = cfg;
  s.m = Eigen::VectorXd::Zero(net.parameters().size());
  s.v = Eigen::VectorXd::Zero(net.parameters().size());
  return s;
}

void adam_step(Network& net, const Eigen::VectorXd& grads, AdamState& state) {
  Eigen::VectorXd& theta = net.parameters();
  if (grads.size() != theta.size() || state.m.size() != theta.size()) {
    throw ShapeError("adam: gradient, moments and parameters differ in size");
  }
  for (const ParamBlock& b : net.blocks()) {
    const auto seg = grads.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size));
    if (!seg.allFinite()) {
      double worst = 0.0;
      for (Eigen::Index i = 0; i < seg.size(); ++i) {
        if (std::isfinite(seg[i])) worst = std::max(worst, std::abs(seg[i]));
      }
      throw NumericError("non-finite gradient in " + b.name + " (max finite |g| = " + std::to_string(worst) + ")");
    }
  }
  const AdamConfig& c = state.cfg;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (const ParamBlock& b : net.blocks()) {
    if (!b.trainable) continue;
    for (std::size_t i = b.offset; i < b.offset + b.size; ++i) {
      const double g = grads[i];
      state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
      state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
      theta[i] -= c.learning_rate * (state.m[i] / bc1) / (std::sqrt(state.v[i] / bc2) + c.epsilon);
    }
  }
}

std::string serialize_network(const Network& net) {
  std::string out(kNetMagic, sizeof kNetMagic);
  const std::string cfg = network_config_to_json(net.config());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(net.parameters().size()));
  for (Eigen::Index i = 0; i < net.parameters().size(); ++i) detail::put_le<double>(out, net.parameters()[i]);
  return out;
}

Network deserialize_network(const std::string& bytes) {
  detail::Reader in(bytes, "network checkpoint");
  if (in.take(sizeof kNetMagic) != std::string(kNetMagic, sizeof kNetMagic)) {
    throw ParseError("network checkpoint: bad magic");
  }
  const auto len = in.get<std::uint32_t>();
  const NetworkConfig cfg = network_config_from_json(in.take(len));
  const auto count = in.get<std::uint64_t>();
  if (count > bytes.size() / sizeof(double)) throw ParseError("network checkpoint: truncated data");
  Eigen::VectorXd p(static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = in.get<double>();
  if (!in.done()) throw ParseError("network checkpoint: trailing bytes");
  return Network(cfg, std::move(p));
}

void save_network(const Network& net, const std::filesystem::path& path) {
  detail::write_file(path, serialize_network(net));
}

Network load_network(const std::filesystem::path& path) { return deserialize_network(detail::read_file(path)); }

}  // namespace graspfield
