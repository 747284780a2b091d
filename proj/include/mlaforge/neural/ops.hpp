#pragma once

// Differentiable primitives on (N, C, H, W) tensors. Convolutions lower to
// im2col plus an Eigen GEMM; every forward has a matching explicit backward.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlaforge/neural/tensor.hpp"

namespace mlaforge::neural {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
  std::size_t channels, height, width, kernel, stride, pad, out_h, out_w;

  static ConvGeom make(std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t s, std::size_t p) {
    if (k == 0 || s == 0) throw std::invalid_argument("conv2d: kernel and stride must be positive");
    if (h + 2 * p < k || w + 2 * p < k) throw std::invalid_argument("conv2d: kernel larger than padded input");
    return {c, h, w, k, s, p, (h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1};
  }
  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t col_cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::size_t n_out = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = x + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        T* row = col + ((c * g.kernel + ki) * g.kernel + kj) * n_out;
        for (std::size_t ho = 0; ho < g.out_h; ++ho) {
          T* dst = row + ho * g.out_w;
          const auto hi = static_cast<std::ptrdiff_t>(ho * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, T{});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(hi) * g.width;
          for (std::size_t wo = 0; wo < g.out_w; ++wo) {
            const auto wi = static_cast<std::ptrdiff_t>(wo * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            dst[wo] = (wi < 0 || wi >= static_cast<std::ptrdiff_t>(g.width)) ? T{} : src[wi];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back onto the input plane.
template <typename T>
void col2im(const T* col, const ConvGeom& g, T* x) {
  const std::size_t n_out = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = x + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = col + ((c * g.kernel + ki) * g.kernel + kj) * n_out;
        for (std::size_t ho = 0; ho < g.out_h; ++ho) {
          const auto hi = static_cast<std::ptrdiff_t>(ho * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = plane + static_cast<std::size_t>(hi) * g.width;
          const T* src = row + ho * g.out_w;
          for (std::size_t wo = 0; wo < g.out_w; ++wo) {
            const auto wi = static_cast<std::ptrdiff_t>(wo * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (wi >= 0 && wi < static_cast<std::ptrdiff_t>(g.width)) dst[wi] += src[wo];
          }
        }
      }
    }
  }
}

inline void require_rank4(const Shape& s, const char* where) {
  if (s.size() != 4) throw std::invalid_argument(std::string(where) + ": expected an (N, C, H, W) tensor");
}

template <typename T>
void add_bias(T* y, const Tensor<T>& b, std::size_t channels, std::size_t plane) {
  if (b.size() == 0) return;
  for (std::size_t c = 0; c < channels; ++c) {
    const T v = b[c];
    for (std::size_t k = 0; k < plane; ++k) y[c * plane + k] += v;
  }
}

template <typename T>
void accumulate_bias_grad(const T* dy, std::size_t channels, std::size_t plane, Tensor<T>& db) {
  for (std::size_t c = 0; c < channels; ++c) {
    T s{};
    for (std::size_t k = 0; k < plane; ++k) s += dy[c * plane + k];
    db[c] += s;
  }
}

inline void check_bias(std::size_t bias_size, std::size_t channels, const char* where) {
  if (bias_size != 0 && bias_size != channels) throw std::invalid_argument(std::string(where) + ": bias length mismatch");
}

}  // namespace detail

template <typename T>
struct ParamGrads {
  Tensor<T> dx, dw, db;
};

/// Cross-correlation. x: (N, C, H, W); w: (Co, C, k, k); b: (Co) or empty.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride, std::size_t pad) {
  detail::require_rank4(x.shape(), "conv2d");
  if (w.rank() != 4 || w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3)) {
    throw std::invalid_argument("conv2d: kernel shape " + shape_string(w.shape()) + " incompatible with input " +
                                shape_string(x.shape()));
  }
  const std::size_t co = w.dim(0);
  detail::check_bias(b.size(), co, "conv2d");
  const auto g = detail::ConvGeom::make(x.dim(1), x.dim(2), x.dim(3), w.dim(2), stride, pad);
  Tensor<T> y({x.dim(0), co, g.out_h, g.out_w});
  std::vector<T> col(g.col_rows() * g.col_cols());
  const detail::ConstMatMap<T> W(w.data(), co, g.col_rows());
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    detail::im2col(x.data() + n * g.channels * g.height * g.width, g, col.data());
    T* yn = y.data() + n * co * g.col_cols();
    detail::MatMap<T> Y(yn, co, g.col_cols());
    Y.noalias() = W * detail::ConstMatMap<T>(col.data(), g.col_rows(), g.col_cols());
    detail::add_bias(yn, b, co, g.col_cols());
  }
  return y;
}

template <typename T>
ParamGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, std::size_t stride,
                              std::size_t pad, bool need_dx = true) {
  detail::require_rank4(x.shape(), "conv2d_backward");
  const std::size_t co = w.dim(0);
  const auto g = detail::ConvGeom::make(x.dim(1), x.dim(2), x.dim(3), w.dim(2), stride, pad);
  if (dy.shape() != Shape{x.dim(0), co, g.out_h, g.out_w}) throw std::invalid_argument("conv2d_backward: dy shape mismatch");
  ParamGrads<T> out{need_dx ? Tensor<T>(x.shape()) : Tensor<T>{}, Tensor<T>(w.shape()), Tensor<T>({co})};
  std::vector<T> col(g.col_rows() * g.col_cols());
  const detail::ConstMatMap<T> W(w.data(), co, g.col_rows());
  detail::MatMap<T> dW(out.dw.data(), co, g.col_rows());
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    const T* dyn = dy.data() + n * co * g.col_cols();
    const detail::ConstMatMap<T> dY(dyn, co, g.col_cols());
    detail::im2col(x.data() + n * g.channels * g.height * g.width, g, col.data());
    dW.noalias() += dY * detail::ConstMatMap<T>(col.data(), g.col_rows(), g.col_cols()).transpose();
    detail::accumulate_bias_grad(dyn, co, g.col_cols(), out.db);
    if (need_dx) {
      detail::MatMap<T>(col.data(), g.col_rows(), g.col_cols()).noalias() = W.transpose() * dY;
      detail::col2im(col.data(), g, out.dx.data() + n * g.channels * g.height * g.width);
    }
  }
  return out;
}

/// Stride-2 transposed convolution, the exact adjoint of conv2d(stride 2,
/// pad k/2) with the same kernel. x: (N, Ci, H, W); w: (Ci, Co, k, k) with k
/// odd; output (N, Co, 2H, 2W).
template <typename T>
Tensor<T> up_conv2(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank4(x.shape(), "up_conv2");
  if (w.rank() != 4 || w.dim(0) != x.dim(1) || w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0) {
    throw std::invalid_argument("up_conv2: kernel shape " + shape_string(w.shape()) + " incompatible with input " +
                                shape_string(x.shape()));
  }
  const std::size_t ci = x.dim(1), co = w.dim(1), k = w.dim(2);
  detail::check_bias(b.size(), co, "up_conv2");
  const auto g = detail::ConvGeom::make(co, 2 * x.dim(2), 2 * x.dim(3), k, 2, k / 2);
  Tensor<T> y({x.dim(0), co, g.height, g.width});
  std::vector<T> col(g.col_rows() * g.col_cols());
  const detail::ConstMatMap<T> W(w.data(), ci, g.col_rows());
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    const detail::ConstMatMap<T> X(x.data() + n * ci * g.col_cols(), ci, g.col_cols());
    detail::MatMap<T>(col.data(), g.col_rows(), g.col_cols()).noalias() = W.transpose() * X;
    T* yn = y.data() + n * co * g.height * g.width;
    detail::col2im(col.data(), g, yn);
    detail::add_bias(yn, b, co, g.height * g.width);
  }
  return y;
}

template <typename T>
ParamGrads<T> up_conv2_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, bool need_dx = true) {
  detail::require_rank4(x.shape(), "up_conv2_backward");
  const std::size_t ci = x.dim(1), co = w.dim(1), k = w.dim(2);
  const auto g = detail::ConvGeom::make(co, 2 * x.dim(2), 2 * x.dim(3), k, 2, k / 2);
  if (dy.shape() != Shape{x.dim(0), co, g.height, g.width}) throw std::invalid_argument("up_conv2_backward: dy shape mismatch");
  ParamGrads<T> out{need_dx ? Tensor<T>(x.shape()) : Tensor<T>{}, Tensor<T>(w.shape()), Tensor<T>({co})};
  std::vector<T> col(g.col_rows() * g.col_cols());
  const detail::ConstMatMap<T> W(w.data(), ci, g.col_rows());
  detail::MatMap<T> dW(out.dw.data(), ci, g.col_rows());
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    const T* dyn = dy.data() + n * co * g.height * g.width;
    detail::im2col(dyn, g, col.data());
    const detail::ConstMatMap<T> C(col.data(), g.col_rows(), g.col_cols());
    const detail::ConstMatMap<T> X(x.data() + n * ci * g.col_cols(), ci, g.col_cols());
    dW.noalias() += X * C.transpose();
    detail::accumulate_bias_grad(dyn, co, g.height * g.width, out.db);
    if (need_dx) detail::MatMap<T>(out.dx.data() + n * ci * g.col_cols(), ci, g.col_cols()).noalias() = W * C;
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{} ? x[i] : T{};
  return y;
}

/// Gradient through relu given its pre-activation input; 0 at the kink.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& pre, const Tensor<T>& dy) {
  pre.require_same_shape(dy, "relu_backward");
  Tensor<T> dx(pre.shape());
  for (std::size_t i = 0; i < pre.size(); ++i) dx[i] = pre[i] > T{} ? dy[i] : T{};
  return dx;
}

/// 2x2 mean pooling. An odd trailing row or column is paired with itself.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  detail::require_rank4(x.shape(), "avg_pool2");
  const std::size_t h = x.dim(2), w = x.dim(3), ho = (h + 1) / 2, wo = (w + 1) / 2;
  Tensor<T> y({x.dim(0), x.dim(1), ho, wo});
  const std::size_t planes = x.dim(0) * x.dim(1);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = y.data() + p * ho * wo;
    for (std::size_t i = 0; i < ho; ++i) {
      const std::size_t r0 = 2 * i, r1 = std::min(2 * i + 1, h - 1);
      for (std::size_t j = 0; j < wo; ++j) {
        const std::size_t c0 = 2 * j, c1 = std::min(2 * j + 1, w - 1);
        dst[i * wo + j] = T(0.25) * (src[r0 * w + c0] + src[r0 * w + c1] + src[r1 * w + c0] + src[r1 * w + c1]);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> avg_pool2_backward(const Shape& input_shape, const Tensor<T>& dy) {
  detail::require_rank4(input_shape, "avg_pool2_backward");
  const std::size_t h = input_shape[2], w = input_shape[3], ho = (h + 1) / 2, wo = (w + 1) / 2;
  if (dy.shape() != Shape{input_shape[0], input_shape[1], ho, wo}) throw std::invalid_argument("avg_pool2_backward: dy shape mismatch");
  Tensor<T> dx(input_shape);
  const std::size_t planes = input_shape[0] * input_shape[1];
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = dy.data() + p * ho * wo;
    T* dst = dx.data() + p * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      const std::size_t r0 = 2 * i, r1 = std::min(2 * i + 1, h - 1);
      for (std::size_t j = 0; j < wo; ++j) {
        const std::size_t c0 = 2 * j, c1 = std::min(2 * j + 1, w - 1);
        const T g = T(0.25) * src[i * wo + j];
        dst[r0 * w + c0] += g;
        dst[r0 * w + c1] += g;
        dst[r1 * w + c0] += g;
        dst[r1 * w + c1] += g;
      }
    }
  }
  return dx;
}

namespace detail {
inline std::size_t mirror_index(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  const std::size_t r = i % period;
  return r < n ? r : period - r;
}
}  // namespace detail

/// Reflective padding on the bottom and right edges up to (h, w).
template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, std::size_t h, std::size_t w) {
  detail::require_rank4(x.shape(), "reflect_pad");
  const std::size_t h0 = x.dim(2), w0 = x.dim(3);
  if (h < h0 || w < w0) throw std::invalid_argument("reflect_pad: target smaller than input");
  Tensor<T> y({x.dim(0), x.dim(1), h, w});
  const std::size_t planes = x.dim(0) * x.dim(1);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < h; ++i) {
      const T* src = x.data() + (p * h0 + detail::mirror_index(i, h0)) * w0;
      T* dst = y.data() + (p * h + i) * w;
      for (std::size_t j = 0; j < w; ++j) dst[j] = src[detail::mirror_index(j, w0)];
    }
  }
  return y;
}

/// Keeps the top-left (h, w) window.
template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::size_t h, std::size_t w) {
  detail::require_rank4(x.shape(), "crop");
  const std::size_t h0 = x.dim(2), w0 = x.dim(3);
  if (h > h0 || w > w0) throw std::invalid_argument("crop: window larger than input");
  Tensor<T> y({x.dim(0), x.dim(1), h, w});
  const std::size_t planes = x.dim(0) * x.dim(1);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(x.data() + (p * h0 + i) * w0, w, y.data() + (p * h + i) * w);
  return y;
}

template <typename T>
Tensor<T> crop_backward(const Shape& input_shape, const Tensor<T>& dy) {
  Tensor<T> dx(input_shape);
  const std::size_t h0 = input_shape[2], w0 = input_shape[3], h = dy.dim(2), w = dy.dim(3);
  const std::size_t planes = input_shape[0] * input_shape[1];
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(dy.data() + (p * h + i) * w, w, dx.data() + (p * h0 + i) * w0);
  return dx;
}

/// Per-element 1x1 weighting shared by I and Q. x: (N, 2E, H, W) with channel
/// 2e holding I and 2e+1 holding Q of element e; w: (E); b: (1).
template <typename T>
Tensor<T> apodization_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank4(x.shape(), "apodization_forward");
  const std::size_t e_count = w.size();
  if (x.dim(1) != 2 * e_count || b.size() != 1) {
    throw std::invalid_argument("apodization_forward: expected " + std::to_string(2 * e_count) + " channels and scalar bias, got " +
                                shape_string(x.shape()));
  }
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor<T> y({x.dim(0), 2, x.dim(2), x.dim(3)}, b[0]);
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    for (std::size_t e = 0; e < e_count; ++e) {
      for (std::size_t q = 0; q < 2; ++q) {
        const T* src = x.data() + (n * 2 * e_count + 2 * e + q) * plane;
        T* dst = y.data() + (n * 2 + q) * plane;
        const T we = w[e];
        for (std::size_t k = 0; k < plane; ++k) dst[k] += we * src[k];
      }
    }
  }
  return y;
}

template <typename T>
ParamGrads<T> apodization_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, bool need_dx = true) {
  const std::size_t e_count = w.size();
  if (dy.shape() != Shape{x.dim(0), 2, x.dim(2), x.dim(3)}) throw std::invalid_argument("apodization_backward: dy shape mismatch");
  const std::size_t plane = x.dim(2) * x.dim(3);
  ParamGrads<T> out{need_dx ? Tensor<T>(x.shape()) : Tensor<T>{}, Tensor<T>(w.shape()), Tensor<T>({1})};
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    for (std::size_t q = 0; q < 2; ++q) {
      const T* g = dy.data() + (n * 2 + q) * plane;
      for (std::size_t k = 0; k < plane; ++k) out.db[0] += g[k];
      for (std::size_t e = 0; e < e_count; ++e) {
        const T* src = x.data() + (n * 2 * e_count + 2 * e + q) * plane;
        T s{};
        for (std::size_t k = 0; k < plane; ++k) s += g[k] * src[k];
        out.dw[e] += s;
        if (need_dx) {
          T* dst = out.dx.data() + (n * 2 * e_count + 2 * e + q) * plane;
          for (std::size_t k = 0; k < plane; ++k) dst[k] = w[e] * g[k];
        }
      }
    }
  }
  return out;
}

template <typename T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad;
};

/// Mean absolute error; the subgradient at exact ties is 0.
template <typename T>
LossResult<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  pred.require_same_shape(target, "l1_loss");
  if (pred.size() == 0) throw std::invalid_argument("l1_loss: empty tensors");
  LossResult<T> r{0.0, Tensor<T>(pred.shape())};
  const T inv = T(1) / static_cast<T>(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    sum += std::abs(static_cast<double>(d));
    r.grad[i] = d > T{} ? inv : (d < T{} ? -inv : T{});
  }
  r.value = sum / static_cast<double>(pred.size());
  return r;
}

}  // namespace mlaforge::neural
