#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "idpf/rng.hpp"

namespace idpf::nn {

/// Planar C×H×W activation buffer.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0)
      : c(channels), h(height), w(width),
        data(static_cast<std::size_t>(channels) * height * width, fill) {}

  std::size_t size() const { return data.size(); }
  double& at(int ch, int y, int x) { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
};

/// 2-D convolution with square kernel and zero padding.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int stride, int kernel = 3, int pad = 1);

  void init_he(Rng& rng);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int out_size(int in_size) const { return (in_size + 2 * pad_ - kernel_) / stride_ + 1; }

  /// `cols` receives the im2col buffer needed by backward().
  Tensor forward(const Tensor& x, std::vector<double>* cols) const;

  /// Accumulates weight/bias gradients when `dweight`/`dbias` are non-null and
  /// returns dL/dx when `dx` is non-null.
  void backward(const Tensor& x, const std::vector<double>& cols, const Tensor& dy,
                std::vector<double>* dweight, std::vector<double>* dbias, Tensor* dx) const;

  std::vector<double> weight;  // out × (in·k·k), row-major
  std::vector<double> bias;    // out

 private:
  int in_ = 0, out_ = 0, stride_ = 1, kernel_ = 3, pad_ = 1;
};

/// Affine map y = W·x + b.
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features);

  void init_he(Rng& rng);
  void init_uniform(Rng& rng, double bound);

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  std::vector<double> forward(std::span<const double> x) const;
  void backward(std::span<const double> x, std::span<const double> dy, std::vector<double>* dweight,
                std::vector<double>* dbias, std::vector<double>* dx) const;

  std::vector<double> weight;  // out × in, row-major
  std::vector<double> bias;

 private:
  int in_ = 0, out_ = 0;
};

void relu_inplace(std::vector<double>& v);
/// Zero the upstream gradient wherever the post-activation value is not positive.
void relu_backward_inplace(std::span<const double> activated, std::vector<double>& grad);

double l2_norm(std::span<const double> v);
/// Returns v/‖v‖; the caller guarantees ‖v‖ > 0.
std::vector<double> l2_normalize(std::span<const double> v);
/// Gradient through v ↦ v/‖v‖ given the normalized output and its upstream gradient.
std::vector<double> l2_normalize_backward(std::span<const double> normalized, double norm,
                                          std::span<const double> dout);

std::vector<double> softmax(std::span<const double> logits);
/// Cross-entropy against a target distribution; writes dL/dlogits = p − y.
double soft_cross_entropy(std::span<const double> logits, std::span<const double> target,
                          std::vector<double>* dlogits);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed list of parameter buffers.
class Adam {
 public:
  explicit Adam(std::vector<std::vector<double>*> params, AdamOptions opts = {});

  /// One update with gradients aligned to the parameter list.
  void step(const std::vector<std::vector<double>>& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  std::vector<std::vector<double>*> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamOptions opts_;
  std::size_t t_ = 0;
};

}  // namespace idpf::nn
