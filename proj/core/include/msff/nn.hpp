#pragma once

// Minimal reverse-mode differentiation over Volume-valued nodes.
//
// Every op computes its forward value immediately. When the tape is
// recording, the op also pushes a closure that, run in reverse order by
// Tape::backward(), reads the output gradient and accumulates into the input
// gradients and the parameter-gradient map.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "msff/error.hpp"
#include "msff/volume.hpp"

namespace msff::nn {

enum class Activation { Rectifier, Smooth };

template <typename T>
struct Parameter {
  std::vector<int> shape;
  std::vector<T> values;

  std::size_t size() const noexcept { return values.size(); }
};

template <typename T>
using ParameterMap = std::map<std::string, Parameter<T>>;

template <typename T>
struct Node {
  Volume<T> value;
  Volume<T> grad;

  explicit Node(Volume<T> v) : value(std::move(v)) {}

  Volume<T>& grad_buffer() {
    if (grad.empty()) grad = Volume<T>(value.channels(), value.height(), value.width());
    return grad;
  }
  bool has_grad() const noexcept { return !grad.empty(); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_var(Volume<T> v) {
  return std::make_shared<Node<T>>(std::move(v));
}

template <typename T>
class Tape {
 public:
  /// Forward-only tape: nothing is recorded, intermediates are released as
  /// soon as they go out of scope.
  Tape() = default;
  /// Recording tape; parameter gradients accumulate into `grads`, which must
  /// hold a zero-initialized entry for every parameter used.
  explicit Tape(ParameterMap<T>* grads) : grads_(grads) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return grads_ != nullptr; }

  void record(std::function<void()> fn) {
    if (recording()) ops_.push_back(std::move(fn));
  }

  Parameter<T>& grad(const std::string& name) {
    auto it = grads_->find(name);
    if (it == grads_->end()) throw ContractViolation("no gradient slot for " + name);
    return it->second;
  }

  void backward() {
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
  }

 private:
  ParameterMap<T>* grads_ = nullptr;
  std::vector<std::function<void()>> ops_;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

inline int conv_output_size(int in, int kernel, int stride) {
  const int pad = kernel / 2;
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace kernels {

// col has (channels*k*k) rows and (out_h*out_w) columns.
template <typename T>
void im2col(const Volume<T>& x, int k, int stride, int out_h, int out_w, T* col) {
  const int pad = k / 2;
  const int h = x.height();
  const int w = x.width();
  const std::size_t cols = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < x.channels(); ++c) {
    const T* src = x.data() + c * x.plane();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* line = src + static_cast<std::size_t>(iy) * w;
          if (stride == 1) {
            const int shift = kx - pad;
            const int lo = std::max(0, -shift);
            const int hi = std::min(out_w, w - shift);
            std::fill(dst, dst + std::max(lo, 0), T(0));
            if (hi > lo) std::copy(line + lo + shift, line + hi + shift, dst + lo);
            std::fill(dst + std::max(hi, lo), dst + out_w, T(0));
          } else {
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride - pad + kx;
              dst[ox] = (ix >= 0 && ix < w) ? line[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int k, int stride, int out_h, int out_w, Volume<T>& gx) {
  const int pad = k / 2;
  const int h = gx.height();
  const int w = gx.width();
  const std::size_t cols = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < gx.channels(); ++c) {
    T* dst = gx.data() + c * gx.plane();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* line = dst + static_cast<std::size_t>(iy) * w;
          const T* src = row + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) line[ix] += src[ox];
          }
        }
      }
    }
  }
}

/// Plain convolution, zero padding of kernel/2. weight is cout x cin x k x k.
template <typename T>
Volume<T> conv2d(const Volume<T>& x, const Parameter<T>& weight, const Parameter<T>& bias,
                 int stride) {
  const int cout = weight.shape[0];
  const int cin = weight.shape[1];
  const int k = weight.shape[2];
  if (x.channels() != cin) {
    throw ContractViolation("conv2d: expected " + std::to_string(cin) + " input channels, got " +
                            x.shape_string());
  }
  const int oh = conv_output_size(x.height(), k, stride);
  const int ow = conv_output_size(x.width(), k, stride);
  const Eigen::Index patch = static_cast<Eigen::Index>(cin) * k * k;
  const Eigen::Index positions = static_cast<Eigen::Index>(oh) * ow;

  Volume<T> y(cout, oh, ow);
  MatrixMap<T> out(y.data(), cout, positions);
  ConstMatrixMap<T> wmat(weight.values.data(), cout, patch);
  if (k == 1 && stride == 1) {
    out.noalias() = wmat * ConstMatrixMap<T>(x.data(), patch, positions);
  } else {
    std::vector<T> col(static_cast<std::size_t>(patch * positions));
    im2col(x, k, stride, oh, ow, col.data());
    out.noalias() = wmat * ConstMatrixMap<T>(col.data(), patch, positions);
  }
  out.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.values.data(), cout);
  return y;
}

template <typename T>
void conv2d_backward(const Volume<T>& x, const Parameter<T>& weight, int stride,
                     const Volume<T>& gy, Volume<T>* gx, Parameter<T>* gweight,
                     Parameter<T>* gbias) {
  const int cout = weight.shape[0];
  const int cin = weight.shape[1];
  const int k = weight.shape[2];
  const int oh = gy.height();
  const int ow = gy.width();
  const Eigen::Index patch = static_cast<Eigen::Index>(cin) * k * k;
  const Eigen::Index positions = static_cast<Eigen::Index>(oh) * ow;
  ConstMatrixMap<T> g(gy.data(), cout, positions);

  const bool direct = (k == 1 && stride == 1);
  std::vector<T> col;
  if (!direct) {
    col.resize(static_cast<std::size_t>(patch * positions));
    im2col(x, k, stride, oh, ow, col.data());
  }
  ConstMatrixMap<T> cols(direct ? x.data() : col.data(), patch, positions);

  if (gweight != nullptr) {
    MatrixMap<T>(gweight->values.data(), cout, patch).noalias() += g * cols.transpose();
  }
  if (gbias != nullptr) {
    // Eigen's vectorised row sums peel by pointer alignment, which makes the
    // result depend on where the buffer landed; a plain loop keeps runs bitwise
    // reproducible.
    for (int o = 0; o < cout; ++o) {
      const T* row = gy.data() + static_cast<Eigen::Index>(o) * positions;
      T acc = T(0);
      for (Eigen::Index p = 0; p < positions; ++p) acc += row[p];
      gbias->values[static_cast<std::size_t>(o)] += acc;
    }
  }
  if (gx != nullptr) {
    ConstMatrixMap<T> wmat(weight.values.data(), cout, patch);
    if (direct) {
      MatrixMap<T>(gx->data(), patch, positions).noalias() += wmat.transpose() * g;
    } else {
      RowMatrix<T> gcol = wmat.transpose() * g;
      col2im_add(gcol.data(), k, stride, oh, ow, *gx);
    }
  }
}

/// Half-pixel-centred linear interpolation taps along one axis.
struct LinearTaps {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> frac;
};

inline LinearTaps linear_taps(int in, int out) {
  LinearTaps taps;
  taps.lo.resize(out);
  taps.hi.resize(out);
  taps.frac.resize(out);
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 >= in - 1) {
      taps.lo[o] = taps.hi[o] = in - 1;
      taps.frac[o] = 0.0;
      continue;
    }
    taps.lo[o] = i0;
    taps.hi[o] = i0 + 1;
    taps.frac[o] = src - i0;
  }
  return taps;
}

template <typename T>
Volume<T> resize_bilinear(const Volume<T>& x, int out_h, int out_w) {
  const LinearTaps ty = linear_taps(x.height(), out_h);
  const LinearTaps tx = linear_taps(x.width(), out_w);
  Volume<T> y(x.channels(), out_h, out_w);
  for (int c = 0; c < x.channels(); ++c) {
    for (int oy = 0; oy < out_h; ++oy) {
      const T fy = static_cast<T>(ty.frac[oy]);
      for (int ox = 0; ox < out_w; ++ox) {
        const T fx = static_cast<T>(tx.frac[ox]);
        const T top = x.at(c, ty.lo[oy], tx.lo[ox]) * (T(1) - fx) + x.at(c, ty.lo[oy], tx.hi[ox]) * fx;
        const T bot = x.at(c, ty.hi[oy], tx.lo[ox]) * (T(1) - fx) + x.at(c, ty.hi[oy], tx.hi[ox]) * fx;
        y.at(c, oy, ox) = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  return y;
}

template <typename T>
void resize_bilinear_backward(const Volume<T>& gy, Volume<T>& gx) {
  const LinearTaps ty = linear_taps(gx.height(), gy.height());
  const LinearTaps tx = linear_taps(gx.width(), gy.width());
  for (int c = 0; c < gy.channels(); ++c) {
    for (int oy = 0; oy < gy.height(); ++oy) {
      const T fy = static_cast<T>(ty.frac[oy]);
      for (int ox = 0; ox < gy.width(); ++ox) {
        const T fx = static_cast<T>(tx.frac[ox]);
        const T g = gy.at(c, oy, ox);
        gx.at(c, ty.lo[oy], tx.lo[ox]) += g * (T(1) - fy) * (T(1) - fx);
        gx.at(c, ty.lo[oy], tx.hi[ox]) += g * (T(1) - fy) * fx;
        gx.at(c, ty.hi[oy], tx.lo[ox]) += g * fy * (T(1) - fx);
        gx.at(c, ty.hi[oy], tx.hi[ox]) += g * fy * fx;
      }
    }
  }
}

template <typename T>
T activate(Activation a, T v) {
  if (a == Activation::Rectifier) return v > T(0) ? v : T(0);
  // softplus shifted so that f(0) = 0
  const T sp = v > T(20) ? v : std::log1p(std::exp(v));
  return sp - static_cast<T>(std::log(2.0));
}

template <typename T>
T activate_derivative(Activation a, T v) {
  if (a == Activation::Rectifier) return v > T(0) ? T(1) : T(0);
  return T(1) / (T(1) + std::exp(-v));
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Differentiable ops

template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, const ParameterMap<T>& params,
              const std::string& name, int stride) {
  const Parameter<T>& w = params.at(name + ".weight");
  const Parameter<T>& b = params.at(name + ".bias");
  Var<T> y = make_var(kernels::conv2d(x->value, w, b, stride));
  if (tape.recording()) {
    Parameter<T>* gw = &tape.grad(name + ".weight");
    Parameter<T>* gb = &tape.grad(name + ".bias");
    tape.record([x, y, &w, gw, gb, stride] {
      if (!y->has_grad()) return;
      kernels::conv2d_backward(x->value, w, stride, y->grad, &x->grad_buffer(), gw, gb);
    });
  }
  return y;
}

template <typename T>
Var<T> activation(Tape<T>& tape, const Var<T>& x, Activation a) {
  Volume<T> out(x->value.channels(), x->value.height(), x->value.width());
  const T* in = x->value.data();
  T* o = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = kernels::activate(a, in[i]);
  Var<T> y = make_var(std::move(out));
  tape.record([x, y, a] {
    if (!y->has_grad()) return;
    T* gx = x->grad_buffer().data();
    const T* gy = y->grad.data();
    const T* in = x->value.data();
    for (std::size_t i = 0; i < y->grad.size(); ++i) {
      gx[i] += gy[i] * kernels::activate_derivative(a, in[i]);
    }
  });
  return y;
}

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value)) throw ContractViolation("add: shape mismatch");
  Volume<T> out = a->value;
  const T* pb = b->value.data();
  T* o = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] += pb[i];
  Var<T> y = make_var(std::move(out));
  tape.record([a, b, y] {
    if (!y->has_grad()) return;
    for (const Var<T>& in : {a, b}) {
      T* g = in->grad_buffer().data();
      const T* gy = y->grad.data();
      for (std::size_t i = 0; i < y->grad.size(); ++i) g[i] += gy[i];
    }
  });
  return y;
}

template <typename T>
Var<T> concat_channels(Tape<T>& tape, const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ContractViolation("concat_channels: no inputs");
  const int h = parts.front()->value.height();
  const int w = parts.front()->value.width();
  int channels = 0;
  for (const auto& p : parts) {
    if (p->value.height() != h || p->value.width() != w) {
      throw ContractViolation("concat_channels: spatial size mismatch");
    }
    channels += p->value.channels();
  }
  Volume<T> out(channels, h, w);
  T* dst = out.data();
  for (const auto& p : parts) dst = std::copy(p->value.data(), p->value.data() + p->value.size(), dst);
  Var<T> y = make_var(std::move(out));
  tape.record([parts, y] {
    if (!y->has_grad()) return;
    const T* src = y->grad.data();
    for (const auto& p : parts) {
      T* g = p->grad_buffer().data();
      for (std::size_t i = 0; i < p->value.size(); ++i) g[i] += src[i];
      src += p->value.size();
    }
  });
  return y;
}

/// Output channel t is input channel order[t].
template <typename T>
Var<T> select_channels(Tape<T>& tape, const Var<T>& x, std::vector<int> order) {
  const std::size_t plane = x->value.plane();
  Volume<T> out(static_cast<int>(order.size()), x->value.height(), x->value.width());
  for (std::size_t t = 0; t < order.size(); ++t) {
    const auto src = x->value.channel(order[t]);
    std::copy(src.begin(), src.end(), out.data() + t * plane);
  }
  Var<T> y = make_var(std::move(out));
  tape.record([x, y, order = std::move(order), plane] {
    if (!y->has_grad()) return;
    Volume<T>& gx = x->grad_buffer();
    for (std::size_t t = 0; t < order.size(); ++t) {
      T* g = gx.data() + order[t] * plane;
      const T* gy = y->grad.data() + t * plane;
      for (std::size_t i = 0; i < plane; ++i) g[i] += gy[i];
    }
  });
  return y;
}

template <typename T>
Var<T> resize_bilinear(Tape<T>& tape, const Var<T>& x, int out_h, int out_w) {
  if (x->value.height() == out_h && x->value.width() == out_w) return x;
  Var<T> y = make_var(kernels::resize_bilinear(x->value, out_h, out_w));
  tape.record([x, y] {
    if (!y->has_grad()) return;
    kernels::resize_bilinear_backward(y->grad, x->grad_buffer());
  });
  return y;
}

/// y_c = x_c * (max(x_c) + mean(x_c)), statistics taken over the spatial plane.
template <typename T>
Var<T> max_mean_attention(Tape<T>& tape, const Var<T>& x) {
  const Volume<T>& in = x->value;
  const std::size_t plane = in.plane();
  std::vector<std::size_t> argmax(in.channels());
  std::vector<T> scale(in.channels());
  Volume<T> out(in.channels(), in.height(), in.width());
  for (int c = 0; c < in.channels(); ++c) {
    const auto ch = in.channel(c);
    const auto it = std::max_element(ch.begin(), ch.end());
    argmax[c] = static_cast<std::size_t>(it - ch.begin());
    const T mean = std::accumulate(ch.begin(), ch.end(), T(0)) / static_cast<T>(plane);
    scale[c] = *it + mean;
    T* o = out.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) o[i] = ch[i] * scale[c];
  }
  Var<T> y = make_var(std::move(out));
  tape.record([x, y, argmax = std::move(argmax), scale = std::move(scale), plane] {
    if (!y->has_grad()) return;
    Volume<T>& gx = x->grad_buffer();
    for (int c = 0; c < gx.channels(); ++c) {
      const T* gy = y->grad.data() + c * plane;
      const T* xv = x->value.data() + c * plane;
      T* g = gx.data() + c * plane;
      T through_scale = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        g[i] += gy[i] * scale[c];
        through_scale += gy[i] * xv[i];
      }
      const T per_cell = through_scale / static_cast<T>(plane);
      for (std::size_t i = 0; i < plane; ++i) g[i] += per_cell;
      g[argmax[c]] += through_scale;
    }
  });
  return y;
}

/// Per-channel (x - min) / (max - min); constant channels map to zero.
template <typename T>
Var<T> minmax_normalize(Tape<T>& tape, const Var<T>& x) {
  const Volume<T>& in = x->value;
  const std::size_t plane = in.plane();
  const int channels = in.channels();
  std::vector<std::size_t> imin(channels), imax(channels);
  Volume<T> out(channels, in.height(), in.width());
  for (int c = 0; c < channels; ++c) {
    const auto ch = in.channel(c);
    const auto [lo, hi] = std::minmax_element(ch.begin(), ch.end());
    imin[c] = static_cast<std::size_t>(lo - ch.begin());
    // minmax_element returns the last maximum; the first one is wanted.
    imax[c] = static_cast<std::size_t>(std::max_element(ch.begin(), ch.end()) - ch.begin());
    const T range = *hi - *lo;
    if (!(range > T(0))) continue;
    T* o = out.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) o[i] = (ch[i] - *lo) / range;
  }
  Var<T> y = make_var(std::move(out));
  tape.record([x, y, imin = std::move(imin), imax = std::move(imax), plane] {
    if (!y->has_grad()) return;
    Volume<T>& gx = x->grad_buffer();
    for (int c = 0; c < gx.channels(); ++c) {
      const T* xv = x->value.data() + c * plane;
      const T lo = xv[imin[c]];
      const T range = xv[imax[c]] - lo;
      if (!(range > T(0))) continue;
      const T* gy = y->grad.data() + c * plane;
      T* g = gx.data() + c * plane;
      T g_hi = 0;
      T g_lo = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        const T rel = (xv[i] - lo) / (range * range);
        g[i] += gy[i] / range;
        g_hi -= gy[i] * rel;
        g_lo += gy[i] * (rel - T(1) / range);
      }
      g[imax[c]] += g_hi;
      g[imin[c]] += g_lo;
    }
  });
  return y;
}

/// y_k = sum_q mix[k][q] * x_q for a square row-major channel-mixing matrix.
template <typename T>
Var<T> mix_channels(Tape<T>& tape, const Var<T>& x, std::vector<double> mix) {
  const int channels = x->value.channels();
  if (mix.size() != static_cast<std::size_t>(channels) * channels) {
    throw ContractViolation("mix_channels: matrix does not match channel count");
  }
  const Eigen::Index plane = static_cast<Eigen::Index>(x->value.plane());
  RowMatrix<T> m(channels, channels);
  for (int k = 0; k < channels; ++k) {
    for (int q = 0; q < channels; ++q) m(k, q) = static_cast<T>(mix[k * channels + q]);
  }
  Volume<T> out(channels, x->value.height(), x->value.width());
  MatrixMap<T>(out.data(), channels, plane).noalias() =
      m * ConstMatrixMap<T>(x->value.data(), channels, plane);
  Var<T> y = make_var(std::move(out));
  tape.record([x, y, m, channels, plane] {
    if (!y->has_grad()) return;
    MatrixMap<T>(x->grad_buffer().data(), channels, plane).noalias() +=
        m.transpose() * ConstMatrixMap<T>(y->grad.data(), channels, plane);
  });
  return y;
}

/// Multiplies channel c by the constant factors[c].
template <typename T>
Var<T> scale_channels(Tape<T>& tape, const Var<T>& x, std::vector<double> factors) {
  if (factors.size() != static_cast<std::size_t>(x->value.channels())) {
    throw ContractViolation("scale_channels: factor count mismatch");
  }
  const std::size_t plane = x->value.plane();
  Volume<T> out = x->value;
  for (std::size_t c = 0; c < factors.size(); ++c) {
    T* o = out.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) o[i] *= static_cast<T>(factors[c]);
  }
  Var<T> y = make_var(std::move(out));
  tape.record([x, y, factors = std::move(factors), plane] {
    if (!y->has_grad()) return;
    T* g = x->grad_buffer().data();
    for (std::size_t c = 0; c < factors.size(); ++c) {
      const T* gy = y->grad.data() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) g[c * plane + i] += gy[i] * static_cast<T>(factors[c]);
    }
  });
  return y;
}

}  // namespace msff::nn
