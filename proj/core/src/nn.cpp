#include "idpf/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "idpf/error.hpp"

namespace idpf::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;
using CVec = Eigen::Map<const Eigen::VectorXd>;
using Vec = Eigen::Map<Eigen::VectorXd>;

}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int stride, int kernel, int pad)
    : weight(static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel, 0.0),
      bias(out_channels, 0.0),
      in_(in_channels), out_(out_channels), stride_(stride), kernel_(kernel), pad_(pad) {}

void Conv2d::init_he(Rng& rng) {
  const double fan_in = static_cast<double>(in_) * kernel_ * kernel_;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (double& w : weight) w = dist(rng);
  std::fill(bias.begin(), bias.end(), 0.0);
}

Tensor Conv2d::forward(const Tensor& x, std::vector<double>* cols_out) const {
  if (x.c != in_) fail(ErrorCode::ShapeMismatch, "conv input channels");
  const int ho = out_size(x.h), wo = out_size(x.w);
  const int k = kernel_;
  const int rows = in_ * k * k;
  const int p = ho * wo;
  std::vector<double> local;
  std::vector<double>& cols = cols_out ? *cols_out : local;
  cols.assign(static_cast<std::size_t>(rows) * p, 0.0);
  for (int ci = 0; ci < in_; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride_ + ky - pad_;
          if (iy < 0 || iy >= x.h) continue;
          const double* src = x.data.data() + (static_cast<std::size_t>(ci) * x.h + iy) * x.w;
          double* dst = row + oy * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride_ + kx - pad_;
            if (ix >= 0 && ix < x.w) dst[ox] = src[ix];
          }
        }
      }
    }
  }
  Tensor y(out_, ho, wo);
  MapRow ym(y.data.data(), out_, p);
  ym.noalias() = CMapRow(weight.data(), out_, rows) * CMapRow(cols.data(), rows, p);
  for (int o = 0; o < out_; ++o) ym.row(o).array() += bias[o];
  return y;
}

void Conv2d::backward(const Tensor& x, const std::vector<double>& cols, const Tensor& dy,
                      std::vector<double>* dweight, std::vector<double>* dbias, Tensor* dx) const {
  const int k = kernel_;
  const int rows = in_ * k * k;
  const int ho = dy.h, wo = dy.w;
  const int p = ho * wo;
  CMapRow dym(dy.data.data(), out_, p);
  if (dweight) {
    MapRow(dweight->data(), out_, rows).noalias() += dym * CMapRow(cols.data(), rows, p).transpose();
  }
  if (dbias) {
    for (int o = 0; o < out_; ++o) (*dbias)[o] += dym.row(o).sum();
  }
  if (!dx) return;
  std::vector<double> dcols(static_cast<std::size_t>(rows) * p);
  MapRow(dcols.data(), rows, p).noalias() = CMapRow(weight.data(), out_, rows).transpose() * dym;
  *dx = Tensor(x.c, x.h, x.w);
  for (int ci = 0; ci < in_; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = dcols.data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride_ + ky - pad_;
          if (iy < 0 || iy >= x.h) continue;
          double* dst = dx->data.data() + (static_cast<std::size_t>(ci) * x.h + iy) * x.w;
          const double* src = row + oy * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride_ + kx - pad_;
            if (ix >= 0 && ix < x.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

Linear::Linear(int in_features, int out_features)
    : weight(static_cast<std::size_t>(in_features) * out_features, 0.0),
      bias(out_features, 0.0), in_(in_features), out_(out_features) {}

void Linear::init_he(Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / in_));
  for (double& w : weight) w = dist(rng);
  std::fill(bias.begin(), bias.end(), 0.0);
}

void Linear::init_uniform(Rng& rng, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& w : weight) w = dist(rng);
  std::fill(bias.begin(), bias.end(), 0.0);
}

std::vector<double> Linear::forward(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != in_) fail(ErrorCode::ShapeMismatch, "linear input size");
  std::vector<double> y(bias);
  Vec(y.data(), out_).noalias() += CMapRow(weight.data(), out_, in_) * CVec(x.data(), in_);
  return y;
}

void Linear::backward(std::span<const double> x, std::span<const double> dy,
                      std::vector<double>* dweight, std::vector<double>* dbias,
                      std::vector<double>* dx) const {
  CVec dyv(dy.data(), out_);
  if (dweight) MapRow(dweight->data(), out_, in_).noalias() += dyv * CVec(x.data(), in_).transpose();
  if (dbias) {
    for (int o = 0; o < out_; ++o) (*dbias)[o] += dy[o];
  }
  if (dx) {
    dx->assign(in_, 0.0);
    Vec(dx->data(), in_).noalias() = CMapRow(weight.data(), out_, in_).transpose() * dyv;
  }
}

void relu_inplace(std::vector<double>& v) {
  for (double& x : v) x = x > 0.0 ? x : 0.0;
}

void relu_backward_inplace(std::span<const double> activated, std::vector<double>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(activated[i] > 0.0)) grad[i] = 0.0;
  }
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

std::vector<double> l2_normalize_backward(std::span<const double> normalized, double norm,
                                          std::span<const double> dout) {
  double dot = 0.0;
  for (std::size_t i = 0; i < normalized.size(); ++i) dot += normalized[i] * dout[i];
  std::vector<double> dv(normalized.size());
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    dv[i] = (dout[i] - normalized[i] * dot) / norm;
  }
  return dv;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double m = *std::max_element(p.begin(), p.end());
  double s = 0.0;
  for (double& x : p) {
    x = std::exp(x - m);
    s += x;
  }
  for (double& x : p) x /= s;
  return p;
}

double soft_cross_entropy(std::span<const double> logits, std::span<const double> target,
                          std::vector<double>* dlogits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double z : logits) s += std::exp(z - m);
  const double log_z = m + std::log(s);
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (target[i] != 0.0) loss -= target[i] * (logits[i] - log_z);
  }
  if (dlogits) {
    dlogits->resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      (*dlogits)[i] = std::exp(logits[i] - log_z) - target[i];
    }
  }
  return loss;
}

Adam::Adam(std::vector<std::vector<double>*> params, AdamOptions opts)
    : params_(std::move(params)), opts_(opts) {
  for (auto* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void Adam::step(const std::vector<std::vector<double>>& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k];
    const auto& g = grads[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opts_.eps);
    }
  }
}

}  // namespace idpf::nn
