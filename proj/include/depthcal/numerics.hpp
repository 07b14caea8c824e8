#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "depthcal/error.hpp"

namespace depthcal {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Vector& data() noexcept { return data_; }
  const Vector& data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

/// Affine map y = W x + b with W of shape (out, in).
struct LinearParams {
  Matrix weight;
  Vector bias;

  LinearParams() = default;
  LinearParams(std::size_t in, std::size_t out) : weight(out, in), bias(out, 0.0) {}

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }

  template <typename F>
  void for_each_tensor(F&& fn) {
    fn(weight.data());
    fn(bias);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    fn(weight.data());
    fn(bias);
  }
};

struct LayerNormParams {
  Vector gain;
  Vector shift;
  double epsilon = 1e-5;

  LayerNormParams() = default;
  explicit LayerNormParams(std::size_t dim, double eps = 1e-5)
      : gain(dim, 1.0), shift(dim, 0.0), epsilon(eps) {}

  template <typename F>
  void for_each_tensor(F&& fn) {
    fn(gain);
    fn(shift);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    fn(gain);
    fn(shift);
  }
};

inline void require_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw Error(Errc::dim_mismatch, std::string(what) + " expected " + std::to_string(want) +
                                        ", got " + std::to_string(got));
  }
}

inline void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(Errc::non_finite, what);
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_dim(b.size(), a.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_dim(y.size(), x.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

// ---------------------------------------------------------------------------
// Layer primitives

inline Vector softmax(std::span<const double> v) {
  if (v.empty()) throw Error(Errc::empty_vector, "softmax");
  require_finite(v, "softmax input");
  const double peak = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - peak);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

/// Given y = softmax(z) and dL/dy, returns dL/dz.
inline Vector softmax_backward(std::span<const double> y, std::span<const double> grad_y) {
  require_dim(grad_y.size(), y.size(), "softmax_backward");
  const double inner = dot(y, grad_y);
  Vector grad_z(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) grad_z[i] = y[i] * (grad_y[i] - inner);
  return grad_z;
}

inline Vector relu(std::span<const double> v) {
  Vector out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return x > 0.0 ? x : 0.0; });
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Vector linear(const LinearParams& p, std::span<const double> v) {
  require_dim(v.size(), p.in_dim(), "linear input");
  require_dim(p.bias.size(), p.out_dim(), "linear bias");
  Vector out(p.bias);
  for (std::size_t r = 0; r < p.out_dim(); ++r) out[r] += dot(p.weight.row(r), v);
  return out;
}

/// Accumulates parameter gradients into `grad` and returns dL/dv.
inline Vector linear_backward(const LinearParams& p, std::span<const double> v,
                              std::span<const double> grad_out, LinearParams& grad) {
  require_dim(grad_out.size(), p.out_dim(), "linear_backward");
  Vector grad_in(p.in_dim(), 0.0);
  for (std::size_t r = 0; r < p.out_dim(); ++r) {
    const double g = grad_out[r];
    grad.bias[r] += g;
    axpy(g, v, grad.weight.row(r));
    axpy(g, p.weight.row(r), grad_in);
  }
  return grad_in;
}

namespace detail {

struct NormStats {
  double mean;
  double inv_std;
};

inline NormStats norm_stats(std::span<const double> v, double epsilon) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= n;
  return {mean, 1.0 / std::sqrt(var + epsilon)};
}

}  // namespace detail

/// Normalizes across the vector (population variance), then applies the
/// elementwise gain and shift.
inline Vector layer_norm(const LayerNormParams& p, std::span<const double> v) {
  if (v.empty()) throw Error(Errc::empty_vector, "layer_norm");
  require_dim(p.gain.size(), v.size(), "layer_norm gain");
  require_dim(p.shift.size(), v.size(), "layer_norm shift");
  const auto stats = detail::norm_stats(v, p.epsilon);
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = p.gain[i] * (v[i] - stats.mean) * stats.inv_std + p.shift[i];
  }
  return out;
}

inline Vector layer_norm_backward(const LayerNormParams& p, std::span<const double> v,
                                  std::span<const double> grad_out, LayerNormParams& grad) {
  require_dim(grad_out.size(), v.size(), "layer_norm_backward");
  const auto stats = detail::norm_stats(v, p.epsilon);
  const std::size_t n = v.size();
  Vector xhat(n), grad_xhat(n);
  double mean_g = 0.0, mean_gx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    xhat[i] = (v[i] - stats.mean) * stats.inv_std;
    grad.gain[i] += grad_out[i] * xhat[i];
    grad.shift[i] += grad_out[i];
    grad_xhat[i] = grad_out[i] * p.gain[i];
    mean_g += grad_xhat[i];
    mean_gx += grad_xhat[i] * xhat[i];
  }
  mean_g /= static_cast<double>(n);
  mean_gx /= static_cast<double>(n);
  Vector grad_in(n);
  for (std::size_t i = 0; i < n; ++i) {
    grad_in[i] = stats.inv_std * (grad_xhat[i] - mean_g - xhat[i] * mean_gx);
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Losses

inline constexpr double kBceEps = 1e-7;

inline double bce_term(double pred, double target) {
  const double p = std::clamp(pred, kBceEps, 1.0 - kBceEps);
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

/// Mean binary cross-entropy with predictions clamped to [eps, 1 - eps].
inline double bce(std::span<const double> pred, std::span<const double> target) {
  require_dim(target.size(), pred.size(), "bce");
  if (pred.empty()) throw Error(Errc::empty_vector, "bce");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += bce_term(pred[i], target[i]);
  return total / static_cast<double>(pred.size());
}

/// d bce / d pred. Zero where the clamp is active.
inline Vector bce_backward(std::span<const double> pred, std::span<const double> target) {
  require_dim(target.size(), pred.size(), "bce_backward");
  const double n = static_cast<double>(pred.size());
  Vector grad(pred.size(), 0.0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i];
    if (p <= kBceEps || p >= 1.0 - kBceEps) continue;
    grad[i] = (p - target[i]) / (p * (1.0 - p)) / n;
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Central-difference gradient of `f` at `x`.
template <typename F>
Vector finite_diff_grad(F&& f, std::span<const double> x, double h = 1e-5) {
  if (!(h > 0.0)) throw Error(Errc::non_finite, "finite_diff_grad step must be positive");
  Vector probe(x.begin(), x.end());
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(std::span<const double>(probe));
    probe[i] = orig - h;
    const double down = f(std::span<const double>(probe));
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(Errc::non_finite, "finite_diff_grad evaluation at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// ||a - b|| / max(||a||, ||b||); zero when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  require_dim(b.size(), a.size(), "relative_error");
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
  const double scale = std::max(norm2(a), norm2(b));
  if (scale < 1e-12) return std::sqrt(diff);
  return std::sqrt(diff) / scale;
}

// ---------------------------------------------------------------------------
// Flattening of parameter records (anything exposing for_each_tensor)

template <typename P>
Vector flatten(const P& params) {
  Vector out;
  params.for_each_tensor([&](const Vector& t) { out.insert(out.end(), t.begin(), t.end()); });
  return out;
}

template <typename P>
void unflatten(P& params, std::span<const double> flat) {
  std::size_t offset = 0;
  params.for_each_tensor([&](Vector& t) {
    if (offset + t.size() > flat.size()) throw Error(Errc::dim_mismatch, "unflatten");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.begin());
    offset += t.size();
  });
  require_dim(flat.size(), offset, "unflatten");
}

/// A zero-filled record with the same shapes as `params`.
template <typename P>
P zeros_like(const P& params) {
  P out = params;
  out.for_each_tensor([](Vector& t) { std::fill(t.begin(), t.end(), 0.0); });
  return out;
}

}  // namespace depthcal
