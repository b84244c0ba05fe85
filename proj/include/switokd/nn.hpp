#pragma once

// Small feed-forward network engine: dense and valid-padding 2D convolution
// layers with optional ReLU, batch forward to logits, and backward from a
// logit gradient. All math in double precision.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "switokd/error.hpp"

namespace switokd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class LayerKind { dense, conv2d };
enum class Activation { identity, relu };

/// Channel-major image layout (c, y, x) flattened into one feature row.
struct ImageShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return channels * height * width; }
  bool empty() const { return size() == 0; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  Activation activation = Activation::relu;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  // conv2d only
  ImageShape input{};
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;

  static LayerSpec dense(std::size_t in, std::size_t out, Activation act) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.activation = act;
    s.in_dim = in;
    s.out_dim = out;
    return s;
  }

  static LayerSpec conv(ImageShape in, std::size_t out_channels, std::size_t kernel,
                        std::size_t stride, Activation act) {
    if (kernel == 0 || stride == 0 || out_channels == 0)
      throw ShapeError("conv2d: kernel, stride and channel count must be positive");
    if (kernel > in.height || kernel > in.width)
      throw ShapeError("conv2d: kernel larger than input image");
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.activation = act;
    s.input = in;
    s.out_channels = out_channels;
    s.kernel = kernel;
    s.stride = stride;
    s.in_dim = in.size();
    s.out_dim = s.output_image().size();
    return s;
  }

  ImageShape output_image() const {
    return {out_channels, (input.height - kernel) / stride + 1,
            (input.width - kernel) / stride + 1};
  }

  std::size_t fan_in() const {
    return kind == LayerKind::dense ? in_dim : input.channels * kernel * kernel;
  }
  std::size_t fan_out() const {
    return kind == LayerKind::dense ? out_dim : out_channels * kernel * kernel;
  }
  std::size_t weight_rows() const { return kind == LayerKind::dense ? out_dim : out_channels; }
  std::size_t weight_cols() const { return fan_in(); }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline std::string describe(const LayerSpec& s) {
  if (s.kind == LayerKind::dense)
    return "dense " + std::to_string(s.in_dim) + "->" + std::to_string(s.out_dim);
  return "conv2d " + std::to_string(s.input.channels) + "x" + std::to_string(s.input.height) +
         "x" + std::to_string(s.input.width) + " k" + std::to_string(s.kernel) + " s" +
         std::to_string(s.stride) + " ->" + std::to_string(s.out_channels) + "ch";
}

struct LayerParams {
  Matrix weight;
  Vector bias;
};

/// Per-layer gradients (or optimizer accumulators); mirrors the parameter layout.
using Gradients = std::vector<LayerParams>;

class Network {
public:
  Network() = default;

  /// Zero-initialized parameters. Throws ShapeError if adjacent layers disagree.
  explicit Network(std::vector<LayerSpec> specs) : specs_(std::move(specs)) {
    if (specs_.empty()) throw ShapeError("network needs at least one layer");
    for (std::size_t i = 1; i < specs_.size(); ++i) {
      if (specs_[i - 1].out_dim != specs_[i].in_dim)
        throw ShapeError("layer " + std::to_string(i) + " (" + describe(specs_[i]) +
                         "): expects " + std::to_string(specs_[i].in_dim) +
                         " inputs but layer " + std::to_string(i - 1) + " produces " +
                         std::to_string(specs_[i - 1].out_dim));
    }
    params_ = zeros_like();
  }

  /// Dense ReLU stack followed by a linear logit layer.
  static Network mlp(std::size_t inputs, std::span<const std::size_t> hidden,
                     std::size_t classes) {
    return build({}, inputs, {}, hidden, classes);
  }

  struct ConvLayer {
    std::size_t channels;
    std::size_t kernel;
    std::size_t stride;
  };

  /// Optional conv stack on `image` (when non-empty), then dense hidden layers, then logits.
  static Network build(ImageShape image, std::size_t inputs, std::span<const ConvLayer> convs,
                       std::span<const std::size_t> hidden, std::size_t classes) {
    std::vector<LayerSpec> specs;
    std::size_t width = inputs;
    if (!convs.empty()) {
      if (image.empty() || image.size() != inputs)
        throw ShapeError("conv layers need an image-shaped input");
      ImageShape cur = image;
      for (const auto& c : convs) {
        specs.push_back(LayerSpec::conv(cur, c.channels, c.kernel, c.stride, Activation::relu));
        cur = specs.back().output_image();
      }
      width = cur.size();
    }
    for (std::size_t h : hidden) {
      specs.push_back(LayerSpec::dense(width, h, Activation::relu));
      width = h;
    }
    specs.push_back(LayerSpec::dense(width, classes, Activation::identity));
    return Network(std::move(specs));
  }

  const std::vector<LayerSpec>& specs() const { return specs_; }
  std::vector<LayerParams>& params() { return params_; }
  const std::vector<LayerParams>& params() const { return params_; }
  std::size_t layer_count() const { return specs_.size(); }
  std::size_t input_dim() const { return specs_.front().in_dim; }
  std::size_t output_dim() const { return specs_.back().out_dim; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.weight.size() + p.bias.size();
    return n;
  }

  Gradients zeros_like() const {
    Gradients g;
    g.reserve(specs_.size());
    for (const auto& s : specs_) {
      g.push_back({Matrix::Zero(static_cast<Eigen::Index>(s.weight_rows()),
                                static_cast<Eigen::Index>(s.weight_cols())),
                   Vector::Zero(static_cast<Eigen::Index>(s.weight_rows()))});
    }
    return g;
  }

  /// Uniform(-b, b) weights with b = sqrt(6 / (fan_in + fan_out)); zero biases.
  void init_uniform(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < specs_.size(); ++l) {
      const double bound =
          std::sqrt(6.0 / static_cast<double>(specs_[l].fan_in() + specs_[l].fan_out()));
      std::uniform_real_distribution<double> dist(-bound, bound);
      auto& w = params_[l].weight;
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = dist(rng);
      params_[l].bias.setZero();
    }
  }

  bool all_finite() const {
    for (const auto& p : params_)
      if (!p.weight.allFinite() || !p.bias.allFinite()) return false;
    return true;
  }

  friend bool operator==(const Network& a, const Network& b) {
    if (a.specs_ != b.specs_) return false;
    for (std::size_t l = 0; l < a.params_.size(); ++l) {
      if (a.params_[l].weight != b.params_[l].weight || a.params_[l].bias != b.params_[l].bias)
        return false;
    }
    return true;
  }

private:
  std::vector<LayerSpec> specs_;
  std::vector<LayerParams> params_;
};

/// Activations kept from a forward pass so backward does not recompute them.
struct ForwardCache {
  std::vector<Matrix> inputs;       // input to each layer
  std::vector<Matrix> preactivation; // layer output before its activation
};

namespace detail {

// (C*k*k) x (oh*ow) patch matrix for one sample.
inline Matrix im2col(const LayerSpec& s, const double* x) {
  const ImageShape out = s.output_image();
  const auto k = s.kernel;
  Matrix cols(static_cast<Eigen::Index>(s.input.channels * k * k),
              static_cast<Eigen::Index>(out.height * out.width));
  for (std::size_t c = 0; c < s.input.channels; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        const auto row = static_cast<Eigen::Index>((c * k + ki) * k + kj);
        for (std::size_t oy = 0; oy < out.height; ++oy)
          for (std::size_t ox = 0; ox < out.width; ++ox) {
            const std::size_t iy = oy * s.stride + ki;
            const std::size_t ix = ox * s.stride + kj;
            cols(row, static_cast<Eigen::Index>(oy * out.width + ox)) =
                x[(c * s.input.height + iy) * s.input.width + ix];
          }
      }
  return cols;
}

inline void col2im_add(const LayerSpec& s, const Matrix& cols, double* dx) {
  const ImageShape out = s.output_image();
  const auto k = s.kernel;
  for (std::size_t c = 0; c < s.input.channels; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        const auto row = static_cast<Eigen::Index>((c * k + ki) * k + kj);
        for (std::size_t oy = 0; oy < out.height; ++oy)
          for (std::size_t ox = 0; ox < out.width; ++ox) {
            const std::size_t iy = oy * s.stride + ki;
            const std::size_t ix = ox * s.stride + kj;
            dx[(c * s.input.height + iy) * s.input.width + ix] +=
                cols(row, static_cast<Eigen::Index>(oy * out.width + ox));
          }
      }
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Matrix layer_forward(const LayerSpec& s, const LayerParams& p, const Matrix& x) {
  if (s.kind == LayerKind::dense) {
    Matrix z = x * p.weight.transpose();
    z.rowwise() += p.bias.transpose();
    return z;
  }
  const RowMatrix xr = x;
  const ImageShape out = s.output_image();
  const auto positions = static_cast<Eigen::Index>(out.height * out.width);
  RowMatrix z(x.rows(), static_cast<Eigen::Index>(s.out_dim));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Matrix o = p.weight * im2col(s, xr.row(i).data());
    o.colwise() += p.bias;
    // row-major map puts channel-major (oc, position) into the output row
    Eigen::Map<RowMatrix>(z.row(i).data(), o.rows(), positions) = o;
  }
  return z;
}

// Accumulates parameter gradients from dz and returns d(input).
inline Matrix layer_backward(const LayerSpec& s, const LayerParams& p, const Matrix& x,
                             const Matrix& dz, LayerParams& grad, bool need_input_grad) {
  if (s.kind == LayerKind::dense) {
    grad.weight.noalias() += dz.transpose() * x;
    grad.bias += dz.colwise().sum().transpose();
    if (!need_input_grad) return {};
    return dz * p.weight;
  }
  const RowMatrix xr = x;
  const RowMatrix dzr = dz;
  const ImageShape out = s.output_image();
  const auto positions = static_cast<Eigen::Index>(out.height * out.width);
  RowMatrix dx = RowMatrix::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Matrix cols = im2col(s, xr.row(i).data());
    const Matrix dout = Eigen::Map<const RowMatrix>(dzr.row(i).data(), p.weight.rows(), positions);
    grad.weight.noalias() += dout * cols.transpose();
    grad.bias += dout.rowwise().sum();
    if (need_input_grad) {
      const Matrix dcols = p.weight.transpose() * dout;
      col2im_add(s, dcols, dx.row(i).data());
    }
  }
  return dx;
}

} // namespace detail

/// Logits (samples x classes) for a batch (samples x features).
inline Matrix forward(const Network& net, const Matrix& batch, ForwardCache* cache = nullptr) {
  if (static_cast<std::size_t>(batch.cols()) != net.input_dim())
    throw ShapeError("layer 0 (" + describe(net.specs().front()) + "): batch has " +
                     std::to_string(batch.cols()) + " features, expected " +
                     std::to_string(net.input_dim()));
  if (cache) {
    cache->inputs.clear();
    cache->preactivation.clear();
  }
  Matrix a = batch;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto& spec = net.specs()[l];
    Matrix z = detail::layer_forward(spec, net.params()[l], a);
    if (cache) cache->inputs.push_back(std::move(a));
    a = spec.activation == Activation::relu ? Matrix(z.cwiseMax(0.0)) : z;
    if (cache) cache->preactivation.push_back(std::move(z));
  }
  return a;
}

/// Gradient of (1/n) sum_i <logit_grads_i, logits_i> w.r.t. every parameter.
inline Gradients backward(const Network& net, const ForwardCache& cache, const Matrix& logit_grads) {
  if (cache.inputs.size() != net.layer_count())
    throw ShapeError("backward: forward cache does not match network depth");
  const Eigen::Index n = cache.inputs.front().rows();
  if (logit_grads.rows() != n || static_cast<std::size_t>(logit_grads.cols()) != net.output_dim())
    throw ShapeError("backward: logit gradients are " + std::to_string(logit_grads.rows()) + "x" +
                     std::to_string(logit_grads.cols()) + ", expected " + std::to_string(n) +
                     "x" + std::to_string(net.output_dim()));
  Gradients grads = net.zeros_like();
  Matrix delta = logit_grads / static_cast<double>(n);
  for (std::size_t l = net.layer_count(); l-- > 0;) {
    const auto& spec = net.specs()[l];
    if (spec.activation == Activation::relu)
      delta = delta.cwiseProduct((cache.preactivation[l].array() > 0.0).cast<double>().matrix());
    delta = detail::layer_backward(spec, net.params()[l], cache.inputs[l], delta, grads[l], l > 0);
  }
  return grads;
}

inline Gradients backward(const Network& net, const Matrix& batch, const Matrix& logit_grads) {
  ForwardCache cache;
  forward(net, batch, &cache);
  return backward(net, cache, logit_grads);
}

} // namespace switokd
