#pragma once

// Convolutional regressor from an image to anchored DMP weights W' (dims x K).
// Activations use a channel-major batch layout: a C x (B*H*W) matrix whose
// column b*H*W + y*W + x holds pixel (y, x) of sample b.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vinedmp/dmp.hpp"
#include "vinedmp/errors.hpp"
#include "vinedmp/rng.hpp"

namespace vinedmp {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Parameter and gradient storage. 64-byte aligned so that vectorized
/// reductions over slices do not depend on where the heap placed the buffer.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

struct NetworkSpec {
  int input_size = 64;
  int image_channels = 3;
  /// Append normalized x/y coordinate planes to the input.
  bool coord_channels = false;
  std::vector<int> channels{8, 16, 32, 64};
  /// Adds a second conv per block with an identity skip.
  bool residual = false;
  /// Side of the adaptive average pool grid; 1 is global average pooling.
  int pool_grid = 1;
  int num_kernels = 10;
  double kernel_overlap = GaussianBasis::kDefaultOverlap;
  int dims = 2;

  int input_channels() const { return image_channels + (coord_channels ? 2 : 0); }
  int final_size() const { return input_size >> channels.size(); }
  int feature_dim() const { return channels.back() * pool_grid * pool_grid; }
  int output_dim() const { return dims * num_kernels; }

  void validate() const {
    if (channels.empty()) throw InvalidArgument("backbone needs at least one block");
    for (int c : channels)
      if (c <= 0) throw InvalidArgument("channel widths must be positive");
    if (input_size <= 0 || input_size % (1 << channels.size()) != 0)
      throw InvalidArgument("input size must be divisible by 2^blocks");
    if (pool_grid <= 0 || final_size() % pool_grid != 0)
      throw InvalidArgument("pool grid must divide the final feature map");
    if (num_kernels < 2 || dims <= 0 || image_channels <= 0) throw InvalidArgument("invalid head configuration");
  }
};

inline nlohmann::json to_json(const NetworkSpec& s) {
  return {{"input_size", s.input_size},     {"image_channels", s.image_channels}, {"coord_channels", s.coord_channels},
          {"channels", s.channels},         {"residual", s.residual},             {"pool_grid", s.pool_grid},
          {"num_kernels", s.num_kernels},   {"kernel_overlap", s.kernel_overlap}, {"dims", s.dims}};
}

inline NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.input_size = j.at("input_size").get<int>();
  s.image_channels = j.at("image_channels").get<int>();
  s.coord_channels = j.at("coord_channels").get<bool>();
  s.channels = j.at("channels").get<std::vector<int>>();
  s.residual = j.at("residual").get<bool>();
  s.pool_grid = j.at("pool_grid").get<int>();
  s.num_kernels = j.at("num_kernels").get<int>();
  s.kernel_overlap = j.at("kernel_overlap").get<double>();
  s.dims = j.at("dims").get<int>();
  s.validate();
  return s;
}

/// A named slice of the flat parameter array.
struct ParamView {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

namespace nn {

/// Activations: one row per channel, each row holding B contiguous H x W planes.
using Act = RowMatrix;

struct Shape {
  int channels, batch, height, width;
  Eigen::Index pixels() const { return static_cast<Eigen::Index>(batch) * height * width; }
};

/// (Cin*9) x (B*H*W) patch matrix for a 3x3 kernel with zero padding 1,
/// written into `cols` (reused across calls when the shape is unchanged).
inline void im2col(const Act& in, const Shape& s, Act& cols) {
  cols.resize(static_cast<Eigen::Index>(s.channels) * 9, s.pixels());
  const Eigen::Index hw = static_cast<Eigen::Index>(s.height) * s.width;
  for (int c = 0; c < s.channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = cols.row(c * 9 + ky * 3 + kx).data();
        const double* src = in.row(c).data();
        const int x0 = std::max(0, 1 - kx), x1 = std::min(s.width, s.width + 1 - kx);
        for (int b = 0; b < s.batch; ++b)
          for (int y = 0; y < s.height; ++y) {
            const int sy = y + ky - 1;
            double* d = dst + b * hw + static_cast<Eigen::Index>(y) * s.width;
            if (sy < 0 || sy >= s.height) {
              std::fill(d, d + s.width, 0.0);
              continue;
            }
            const double* q = src + b * hw + static_cast<Eigen::Index>(sy) * s.width + kx - 1;
            std::fill(d, d + x0, 0.0);
            std::copy(q + x0, q + x1, d + x0);
            std::fill(d + x1, d + s.width, 0.0);
          }
      }
}

inline Act im2col(const Act& in, const Shape& s) {
  Act cols;
  im2col(in, s, cols);
  return cols;
}

/// Adjoint of im2col, written into `out`.
inline void col2im(const Act& cols, const Shape& s, Act& out) {
  out.setZero(s.channels, s.pixels());
  const Eigen::Index hw = static_cast<Eigen::Index>(s.height) * s.width;
  for (int c = 0; c < s.channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = cols.row(c * 9 + ky * 3 + kx).data();
        double* dst = out.row(c).data();
        const int x0 = std::max(0, 1 - kx), x1 = std::min(s.width, s.width + 1 - kx);
        for (int b = 0; b < s.batch; ++b)
          for (int y = 0; y < s.height; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= s.height) continue;
            const double* q = src + b * hw + static_cast<Eigen::Index>(y) * s.width;
            double* d = dst + b * hw + static_cast<Eigen::Index>(sy) * s.width + kx - 1;
            for (int x = x0; x < x1; ++x) d[x] += q[x];
          }
      }
}

inline Act col2im(const Act& cols, const Shape& s) {
  Act out;
  col2im(cols, s, out);
  return out;
}

/// 2x2 max pool; `argmax` receives, per output element, the flat input
/// column of the selected maximum.
inline void maxpool2(const Act& in, const Shape& s, Act& out, std::vector<std::int32_t>& argmax) {
  const int oh = s.height / 2, ow = s.width / 2;
  const Eigen::Index ihw = static_cast<Eigen::Index>(s.height) * s.width;
  const Eigen::Index ohw = static_cast<Eigen::Index>(oh) * ow;
  out.resize(s.channels, s.batch * ohw);
  argmax.resize(static_cast<std::size_t>(out.size()));
  for (int c = 0; c < s.channels; ++c) {
    const double* src = in.row(c).data();
    double* dst = out.row(c).data();
    std::int32_t* arg = argmax.data() + static_cast<std::size_t>(c) * static_cast<std::size_t>(out.cols());
    for (int b = 0; b < s.batch; ++b)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          const Eigen::Index i0 = b * ihw + static_cast<Eigen::Index>(2 * y) * s.width + 2 * x;
          const Eigen::Index i1 = i0 + s.width;
          Eigen::Index best = i0;
          if (src[i0 + 1] > src[best]) best = i0 + 1;
          if (src[i1] > src[best]) best = i1;
          if (src[i1 + 1] > src[best]) best = i1 + 1;
          const Eigen::Index o = b * ohw + static_cast<Eigen::Index>(y) * ow + x;
          dst[o] = src[best];
          arg[o] = static_cast<std::int32_t>(best);
        }
  }
}

inline void maxpool2_backward(const Act& grad_out, const std::vector<std::int32_t>& argmax, const Shape& in_shape,
                              Act& g) {
  g.setZero(in_shape.channels, in_shape.pixels());
  const Eigen::Index n = grad_out.cols();
  for (Eigen::Index c = 0; c < grad_out.rows(); ++c) {
    const double* src = grad_out.row(c).data();
    double* dst = g.row(c).data();
    const std::int32_t* arg = argmax.data() + c * n;
    for (Eigen::Index o = 0; o < n; ++o) dst[arg[o]] += src[o];
  }
}

/// Average over cells of a grid x grid partition; output is (C*grid*grid) x B
/// with row index c*grid*grid + gy*grid + gx.
inline Eigen::MatrixXd grid_pool(const Act& in, const Shape& s, int grid) {
  const int cell_h = s.height / grid, cell_w = s.width / grid;
  const double inv = 1.0 / (cell_h * cell_w);
  const Eigen::Index hw = static_cast<Eigen::Index>(s.height) * s.width;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s.channels) * grid * grid, s.batch);
  for (int c = 0; c < s.channels; ++c)
    for (int b = 0; b < s.batch; ++b)
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
          const Eigen::Index row = static_cast<Eigen::Index>(c) * grid * grid + (y / cell_h) * grid + x / cell_w;
          out(row, b) += in(c, b * hw + static_cast<Eigen::Index>(y) * s.width + x) * inv;
        }
  return out;
}

inline Act grid_pool_backward(const Eigen::MatrixXd& grad_out, const Shape& s, int grid) {
  const int cell_h = s.height / grid, cell_w = s.width / grid;
  const double inv = 1.0 / (cell_h * cell_w);
  const Eigen::Index hw = static_cast<Eigen::Index>(s.height) * s.width;
  Act g(s.channels, s.pixels());
  for (int c = 0; c < s.channels; ++c)
    for (int b = 0; b < s.batch; ++b)
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
          const Eigen::Index row = static_cast<Eigen::Index>(c) * grid * grid + (y / cell_h) * grid + x / cell_w;
          g(c, b * hw + static_cast<Eigen::Index>(y) * s.width + x) = grad_out(row, b) * inv;
        }
  return g;
}

}  // namespace nn

/// Activations of one forward pass plus scratch buffers for the backward
/// pass. Reusing one cache across batches avoids reallocating large buffers.
struct ForwardCache {
  struct Conv {
    nn::Shape in_shape{};
    nn::Act cols;
    nn::Act out;  // post-activation
  };
  struct Block {
    Conv first;
    Conv second;  // residual blocks only
    nn::Shape pool_in{};
    nn::Act pooled;
    std::vector<std::int32_t> argmax;
  };
  int batch = 0;
  nn::Act input;
  std::vector<Block> blocks;
  nn::Shape last_shape{};
  Eigen::MatrixXd features;  // F x B
  Eigen::MatrixXd outputs;   // (dims*K) x B
  // Backward scratch.
  nn::Act grad_a, grad_b, dcols;
};

class VisionDmpNetwork {
 public:
  explicit VisionDmpNetwork(NetworkSpec spec) : spec_(std::move(spec)), basis_(2, spec_.kernel_overlap) {
    spec_.validate();
    basis_ = GaussianBasis(spec_.num_kernels, spec_.kernel_overlap);
    int cin = spec_.input_channels();
    for (std::size_t i = 0; i < spec_.channels.size(); ++i) {
      const int cout = spec_.channels[i];
      const std::string p = "block" + std::to_string(i);
      add_view(p + ".conv.weight", {cout, cin, 3, 3});
      add_view(p + ".conv.bias", {cout});
      if (spec_.residual) {
        add_view(p + ".conv2.weight", {cout, cout, 3, 3});
        add_view(p + ".conv2.bias", {cout});
      }
      cin = cout;
    }
    add_view("head.weight", {spec_.output_dim(), spec_.feature_dim()});
    add_view("head.bias", {spec_.output_dim()});
    params_.assign(total_, 0.0);
  }

  const NetworkSpec& spec() const noexcept { return spec_; }
  const GaussianBasis& basis() const noexcept { return basis_; }
  const std::vector<ParamView>& views() const noexcept { return views_; }
  ParamVector& parameters() noexcept { return params_; }
  const ParamVector& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return total_; }

  const ParamView& view(const std::string& name) const {
    for (const auto& v : views_)
      if (v.name == name) return v;
    throw InvalidArgument("no parameter named " + name);
  }
  std::span<double> slice(const std::string& name) {
    const auto& v = view(name);
    return {params_.data() + v.offset, v.size};
  }

  /// Fan-in scaled uniform initialization; biases start at zero.
  void initialize(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x1417));
    std::fill(params_.begin(), params_.end(), 0.0);
    for (const auto& v : views_) {
      if (v.shape.size() < 2) continue;
      std::size_t fan_in = 1;
      for (std::size_t i = 1; i < v.shape.size(); ++i) fan_in *= static_cast<std::size_t>(v.shape[i]);
      const bool head = v.name.rfind("head", 0) == 0;
      const double bound = head ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : std::sqrt(6.0 / fan_in);
      for (std::size_t i = 0; i < v.size; ++i) params_[v.offset + i] = rng.uniform(-bound, bound);
    }
  }

  /// Channel-major batch input from per-sample C x S x S buffers (without
  /// coordinate planes; those are appended here).
  void pack(const std::vector<const std::vector<double>*>& samples, nn::Act& x) const {
    const int s = spec_.input_size;
    const Eigen::Index hw = static_cast<Eigen::Index>(s) * s;
    const auto b = static_cast<Eigen::Index>(samples.size());
    x.resize(spec_.input_channels(), b * hw);
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto& src = *samples[static_cast<std::size_t>(i)];
      if (src.size() != static_cast<std::size_t>(spec_.image_channels * hw))
        throw InvalidArgument("input tensor does not match the network input size");
      for (int c = 0; c < spec_.image_channels; ++c)
        std::copy(src.begin() + c * hw, src.begin() + (c + 1) * hw, x.row(c).data() + i * hw);
      if (spec_.coord_channels) {
        for (Eigen::Index p = 0; p < hw; ++p) {
          x(spec_.image_channels, i * hw + p) = (static_cast<double>(p % s) + 0.5) / s;
          x(spec_.image_channels + 1, i * hw + p) = (static_cast<double>(p / s) + 0.5) / s;
        }
      }
    }
  }

  /// Packs `samples` into the cache and runs the forward pass; returns
  /// (dims*K) x B raw head outputs.
  const Eigen::MatrixXd& forward(const std::vector<const std::vector<double>*>& samples, ForwardCache& c) const {
    pack(samples, c.input);
    return forward(static_cast<int>(samples.size()), c);
  }

  /// Forward pass over the batch already packed in `c.input`.
  const Eigen::MatrixXd& forward(int batch, ForwardCache& c) const {
    nn::Shape shape{spec_.input_channels(), batch, spec_.input_size, spec_.input_size};
    if (c.input.rows() != shape.channels || c.input.cols() != shape.pixels())
      throw InvalidArgument("input batch has the wrong shape");
    c.batch = batch;
    c.blocks.resize(spec_.channels.size());

    const nn::Act* x = &c.input;
    for (std::size_t i = 0; i < spec_.channels.size(); ++i) {
      const int cout = spec_.channels[i];
      const std::string p = "block" + std::to_string(i);
      auto& blk = c.blocks[i];
      blk.first.in_shape = shape;
      nn::im2col(*x, shape, blk.first.cols);
      conv_apply(p + ".conv", cout, blk.first.cols, blk.first.out);
      blk.first.out = blk.first.out.cwiseMax(0.0);
      shape.channels = cout;
      const nn::Act* h = &blk.first.out;
      if (spec_.residual) {
        blk.second.in_shape = shape;
        nn::im2col(*h, shape, blk.second.cols);
        conv_apply(p + ".conv2", cout, blk.second.cols, blk.second.out);
        blk.second.out = (blk.second.out + *h).cwiseMax(0.0);
        h = &blk.second.out;
      }
      blk.pool_in = shape;
      nn::maxpool2(*h, shape, blk.pooled, blk.argmax);
      x = &blk.pooled;
      shape.height /= 2;
      shape.width /= 2;
    }
    c.last_shape = shape;
    c.features = nn::grid_pool(*x, shape, spec_.pool_grid);
    const auto& hw = view("head.weight");
    const auto& hb = view("head.bias");
    Eigen::Map<const RowMatrix> W(params_.data() + hw.offset, spec_.output_dim(), spec_.feature_dim());
    Eigen::Map<const Eigen::VectorXd> bias(params_.data() + hb.offset, spec_.output_dim());
    c.outputs = W * c.features;
    c.outputs.colwise() += bias;
    if (!c.outputs.allFinite()) throw NonFiniteActivation("network produced non-finite outputs");
    return c.outputs;
  }

  /// Writes d(loss)/d(params) into `grad` given d(loss)/d(outputs).
  void backward(ForwardCache& c, const Eigen::MatrixXd& grad_out, ParamVector& grad) const {
    grad.assign(total_, 0.0);
    const auto& hw = view("head.weight");
    const auto& hb = view("head.bias");
    Eigen::Map<const RowMatrix> W(params_.data() + hw.offset, spec_.output_dim(), spec_.feature_dim());
    Eigen::Map<RowMatrix>(grad.data() + hw.offset, spec_.output_dim(), spec_.feature_dim()) =
        grad_out * c.features.transpose();
    Eigen::Map<Eigen::VectorXd>(grad.data() + hb.offset, spec_.output_dim()) = grad_out.rowwise().sum();

    nn::Act& g = c.grad_a;
    nn::Act& tmp = c.grad_b;
    g = nn::grid_pool_backward(W.transpose() * grad_out, c.last_shape, spec_.pool_grid);
    for (std::size_t ii = spec_.channels.size(); ii-- > 0;) {
      auto& blk = c.blocks[ii];
      const int cout = spec_.channels[ii];
      const std::string p = "block" + std::to_string(ii);
      nn::maxpool2_backward(g, blk.argmax, blk.pool_in, tmp);
      g.swap(tmp);
      if (spec_.residual) {
        g.array() *= (blk.second.out.array() > 0.0).cast<double>();
        conv_backward(p + ".conv2", cout, blk.second, g, grad, &tmp, c.dcols);
        g += tmp;
      }
      g.array() *= (blk.first.out.array() > 0.0).cast<double>();
      conv_backward(p + ".conv", cout, blk.first, g, grad, ii > 0 ? &tmp : nullptr, c.dcols);
      if (ii > 0) g.swap(tmp);
    }
    for (double v : grad)
      if (!std::isfinite(v)) throw NonFiniteGradient("non-finite parameter gradient");
  }

 private:
  void add_view(std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    views_.push_back({std::move(name), std::move(shape), total_, n});
    total_ += n;
  }

  void conv_apply(const std::string& name, int cout, const nn::Act& cols, nn::Act& out) const {
    const auto& wv = view(name + ".weight");
    const auto& bv = view(name + ".bias");
    Eigen::Map<const RowMatrix> W(params_.data() + wv.offset, cout, cols.rows());
    Eigen::Map<const Eigen::VectorXd> b(params_.data() + bv.offset, cout);
    out.resize(cout, cols.cols());
    out.noalias() = W * cols;
    out.colwise() += b;
  }

  /// Writes weight/bias gradients; the input gradient goes to `input_grad` when given.
  void conv_backward(const std::string& name, int cout, const ForwardCache::Conv& conv, const nn::Act& g,
                     ParamVector& grad, nn::Act* input_grad, nn::Act& dcols) const {
    const auto& wv = view(name + ".weight");
    const auto& bv = view(name + ".bias");
    const auto k = conv.cols.rows();
    Eigen::Map<RowMatrix>(grad.data() + wv.offset, cout, k).noalias() = g * conv.cols.transpose();
    Eigen::Map<Eigen::VectorXd>(grad.data() + bv.offset, cout) = g.rowwise().sum();
    if (!input_grad) return;
    Eigen::Map<const RowMatrix> W(params_.data() + wv.offset, cout, k);
    dcols.resize(k, g.cols());
    dcols.noalias() = W.transpose() * g;
    nn::col2im(dcols, conv.in_shape, *input_grad);
  }

  NetworkSpec spec_;
  GaussianBasis basis_;
  std::vector<ParamView> views_;
  ParamVector params_;
  std::size_t total_ = 0;
};

}  // namespace vinedmp
