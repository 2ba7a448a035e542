#include "stgan/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gemm.hpp"
#include "stgan/errors.hpp"

namespace stgan {

using detail::grad_buffer;
using detail::TensorImpl;

namespace {

thread_local detail::KinkObserver* g_kink_observer = nullptr;

void notify_kink(const Tensor& x) {
  if (g_kink_observer) g_kink_observer->observe(x.data());
}

int normalize_axis(int axis, int rank, const char* op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " invalid for rank " + std::to_string(rank));
  }
  return a;
}

struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t len = 1;
  std::int64_t inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.len = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
    s.inner *= shape[i];
  return s;
}

// Elementwise unary op; `deriv(x, y)` is dy/dx at input x with output y.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [deriv](TensorImpl& self) {
        TensorImpl& src = *self.inputs[0];
        auto& g = grad_buffer(src);
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += self.grad[i] * deriv(src.value[i], self.value[i]);
      },
      name);
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  const bool a_scalar = a.rank() == 0;
  const bool b_scalar = b.rank() == 0;
  if (a.shape() != b.shape() && !a_scalar && !b_scalar) {
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const Shape& out_shape = (a_scalar && !b_scalar) ? b.shape() : a.shape();
  const auto n = static_cast<std::size_t>(shape_numel(out_shape));
  const auto av = a.data();
  const auto bv = b.data();
  const std::size_t sa = a_scalar ? 0 : 1;
  const std::size_t sb = b_scalar ? 0 : 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i * sa];
    const double y = bv[i * sb];
    switch (kind) {
      case BinaryKind::kAdd: out[i] = x + y; break;
      case BinaryKind::kSub: out[i] = x - y; break;
      case BinaryKind::kMul: out[i] = x * y; break;
      case BinaryKind::kDiv: out[i] = x / y; break;
    }
  }
  return Tensor::make_result(
      out_shape, std::move(out), {a, b},
      [kind, sa, sb](TensorImpl& self) {
        TensorImpl& ia = *self.inputs[0];
        TensorImpl& ib = *self.inputs[1];
        const auto& g = self.grad;
        if (ia.requires_grad) {
          auto& ga = grad_buffer(ia);
          for (std::size_t i = 0; i < g.size(); ++i) {
            double d = g[i];
            if (kind == BinaryKind::kMul) d *= ib.value[i * sb];
            if (kind == BinaryKind::kDiv) d /= ib.value[i * sb];
            ga[i * sa] += d;
          }
        }
        if (ib.requires_grad) {
          auto& gb = grad_buffer(ib);
          for (std::size_t i = 0; i < g.size(); ++i) {
            double d = g[i];
            switch (kind) {
              case BinaryKind::kAdd: break;
              case BinaryKind::kSub: d = -d; break;
              case BinaryKind::kMul: d *= ia.value[i * sa]; break;
              case BinaryKind::kDiv: {
                const double y = ib.value[i * sb];
                d *= -ia.value[i * sa] / (y * y);
                break;
              }
            }
            gb[i * sb] += d;
          }
        }
      },
      name);
}

}  // namespace

namespace detail {

void set_kink_observer(KinkObserver* observer) { g_kink_observer = observer; }
KinkObserver* kink_observer() { return g_kink_observer; }

}  // namespace detail

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kDiv, "div"); }

Tensor add(const Tensor& a, double b) {
  return unary(a, "add_scalar", [b](double x) { return x + b; },
               [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double b) {
  return unary(a, "mul_scalar", [b](double x) { return x * b; },
               [b](double, double) { return b; });
}

Tensor rsub(double a, const Tensor& b) {
  return unary(b, "rsub_scalar", [a](double x) { return a - x; },
               [](double, double) { return -1.0; });
}

Tensor neg(const Tensor& x) {
  return unary(x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(std::min(v, kExpCeiling)); },
      [](double v, double y) { return v < kExpCeiling ? y : 0.0; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](double v) { return std::log(std::max(v, kLogFloor)); },
      [](double v, double) { return v > kLogFloor ? 1.0 / v : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  notify_kink(x);
  return unary(x, "relu", [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  notify_kink(x);
  return unary(x, "leaky_relu", [slope](double v) { return v > 0 ? v : slope * v; },
               [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor power(const Tensor& x, double p) {
  return unary(x, "power", [p](double v) { return std::pow(v, p); },
               [p](double v, double) { return p * std::pow(v, p - 1.0); });
}

Tensor abs(const Tensor& x) {
  notify_kink(x);
  return unary(x, "abs", [](double v) { return std::fabs(v); },
               [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: rank-2 operands required, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const auto m = static_cast<std::size_t>(a.dim(0));
  const auto k = static_cast<std::size_t>(a.dim(1));
  const auto n = static_cast<std::size_t>(b.dim(1));
  if (static_cast<std::size_t>(b.dim(0)) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  detail::gemm(false, false, m, n, k, a.data().data(), k, b.data().data(), n,
               out.data(), n, false);
  return Tensor::make_result(
      {static_cast<std::int64_t>(m), static_cast<std::int64_t>(n)}, std::move(out),
      {a, b},
      [m, n, k](TensorImpl& self) {
        TensorImpl& ia = *self.inputs[0];
        TensorImpl& ib = *self.inputs[1];
        if (ia.requires_grad) {  // dA = dC * B^T
          detail::gemm(false, true, m, k, n, self.grad.data(), n, ib.value.data(), n,
                       grad_buffer(ia).data(), k, true);
        }
        if (ib.requires_grad) {  // dB = A^T * dC
          detail::gemm(true, false, k, n, m, ia.value.data(), k, self.grad.data(), n,
                       grad_buffer(ib).data(), n, true);
        }
      },
      "matmul");
}

Tensor softmax(const Tensor& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit s = split_at(x.shape(), ax);
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t r = 0; r < s.inner; ++r) {
      const std::int64_t base = o * s.len * s.inner + r;
      double mx = in[static_cast<std::size_t>(base)];
      for (std::int64_t i = 1; i < s.len; ++i)
        mx = std::max(mx, in[static_cast<std::size_t>(base + i * s.inner)]);
      double total = 0.0;
      for (std::int64_t i = 0; i < s.len; ++i) {
        const auto idx = static_cast<std::size_t>(base + i * s.inner);
        out[idx] = std::exp(in[idx] - mx);
        total += out[idx];
      }
      for (std::int64_t i = 0; i < s.len; ++i)
        out[static_cast<std::size_t>(base + i * s.inner)] /= total;
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [s](TensorImpl& self) {
        auto& g = grad_buffer(*self.inputs[0]);
        for (std::int64_t o = 0; o < s.outer; ++o) {
          for (std::int64_t r = 0; r < s.inner; ++r) {
            const std::int64_t base = o * s.len * s.inner + r;
            double dot = 0.0;
            for (std::int64_t i = 0; i < s.len; ++i) {
              const auto idx = static_cast<std::size_t>(base + i * s.inner);
              dot += self.grad[idx] * self.value[idx];
            }
            for (std::int64_t i = 0; i < s.len; ++i) {
              const auto idx = static_cast<std::size_t>(base + i * s.inner);
              g[idx] += self.value[idx] * (self.grad[idx] - dot);
            }
          }
        }
      },
      "softmax");
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
  std::int64_t channels = 0;  // channels of the (conv) input image
  std::int64_t in_h = 0, in_w = 0;
  std::int64_t out_h = 0, out_w = 0;
  std::int64_t kh = 0, kw = 0;
  std::int64_t stride = 1, pad = 0;

  std::int64_t col_rows() const { return channels * kh * kw; }
  std::int64_t col_cols() const { return out_h * out_w; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// image [C,H,W] -> col [C*kh*kw, out_h*out_w]
void im2col(const ConvGeometry& g, const double* image, double* col) {
  const std::int64_t cols = g.col_cols();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const double* plane = image + c * g.in_h * g.in_w;
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + ki;
          double* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.in_h) {
            std::fill_n(dst, g.out_w, 0.0);
            continue;
          }
          const double* src = plane + ih * g.in_w;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + kj;
            dst[ow] = (iw >= 0 && iw < g.in_w) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates col entries back into image [C,H,W].
void col2im(const ConvGeometry& g, const double* col, double* image) {
  const std::int64_t cols = g.col_cols();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    double* plane = image + c * g.in_h * g.in_w;
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.in_h) continue;
          double* dst = plane + ih * g.in_w;
          const double* src = row + oh * g.out_w;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.in_w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// Direct stride-1 convolution for layers with very few output channels,
// where im2col would materialize a Cin*kh*kw x H*W buffer for little work.
// Each (co, ci, ki, kj) term is a shifted row-wise axpy.
template <class RowFn>
void for_each_shifted_row(const ConvGeometry& g, std::int64_t ki, std::int64_t kj,
                          RowFn fn) {
  const std::int64_t lo = std::max<std::int64_t>(0, g.pad - kj);
  const std::int64_t hi = std::min(g.out_w, g.in_w + g.pad - kj);
  if (hi <= lo) return;
  for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
    const std::int64_t ih = oh - g.pad + ki;
    if (ih < 0 || ih >= g.in_h) continue;
    fn(oh * g.out_w + lo, ih * g.in_w + lo - g.pad + kj, hi - lo);
  }
}

void direct_conv_forward(const ConvGeometry& g, std::int64_t c_out, const double* w,
                         const double* image, double* out) {
  const std::int64_t in_plane = g.in_h * g.in_w;
  const std::int64_t out_plane = g.out_h * g.out_w;
  for (std::int64_t co = 0; co < c_out; ++co)
    for (std::int64_t ci = 0; ci < g.channels; ++ci)
      for (std::int64_t ki = 0; ki < g.kh; ++ki)
        for (std::int64_t kj = 0; kj < g.kw; ++kj) {
          const double wv = w[((co * g.channels + ci) * g.kh + ki) * g.kw + kj];
          double* dst = out + co * out_plane;
          const double* src = image + ci * in_plane;
          for_each_shifted_row(g, ki, kj, [&](std::int64_t o, std::int64_t i, std::int64_t len) {
            for (std::int64_t t = 0; t < len; ++t) dst[o + t] += wv * src[i + t];
          });
        }
}

void direct_conv_backward_input(const ConvGeometry& g, std::int64_t c_out, const double* w,
                                const double* dy, double* dx) {
  const std::int64_t in_plane = g.in_h * g.in_w;
  const std::int64_t out_plane = g.out_h * g.out_w;
  for (std::int64_t ci = 0; ci < g.channels; ++ci)
    for (std::int64_t co = 0; co < c_out; ++co)
      for (std::int64_t ki = 0; ki < g.kh; ++ki)
        for (std::int64_t kj = 0; kj < g.kw; ++kj) {
          const double wv = w[((co * g.channels + ci) * g.kh + ki) * g.kw + kj];
          const double* src = dy + co * out_plane;
          double* dst = dx + ci * in_plane;
          for_each_shifted_row(g, ki, kj, [&](std::int64_t o, std::int64_t i, std::int64_t len) {
            for (std::int64_t t = 0; t < len; ++t) dst[i + t] += wv * src[o + t];
          });
        }
}

void direct_conv_backward_weight(const ConvGeometry& g, std::int64_t c_out,
                                 const double* dy, const double* image, double* dw) {
  const std::int64_t in_plane = g.in_h * g.in_w;
  const std::int64_t out_plane = g.out_h * g.out_w;
  for (std::int64_t co = 0; co < c_out; ++co)
    for (std::int64_t ci = 0; ci < g.channels; ++ci)
      for (std::int64_t ki = 0; ki < g.kh; ++ki)
        for (std::int64_t kj = 0; kj < g.kw; ++kj) {
          const double* grad = dy + co * out_plane;
          const double* src = image + ci * in_plane;
          double acc = 0.0;
          for_each_shifted_row(g, ki, kj, [&](std::int64_t o, std::int64_t i, std::int64_t len) {
            for (std::int64_t t = 0; t < len; ++t) acc += grad[o + t] * src[i + t];
          });
          dw[((co * g.channels + ci) * g.kh + ki) * g.kw + kj] += acc;
        }
}

bool use_direct_conv(const ConvGeometry& g, std::int64_t c_out) {
  return g.stride == 1 && !g.is_pointwise() && c_out < 4;
}

void check_conv_inputs(const Tensor& x, const Tensor& w, const Tensor& bias,
                       std::int64_t bias_channels, const Conv2dOptions& opt,
                       const char* op) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected x [B,C,H,W] and 4-d weight, got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  if (opt.stride < 1 || opt.pad < 0) {
    throw ShapeError(std::string(op) + ": stride must be >= 1 and pad >= 0");
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != bias_channels)) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(bias.shape()) +
                     " does not match " + std::to_string(bias_channels) + " channels");
  }
}

void add_channel_bias(std::vector<double>& out, const Tensor& bias, std::int64_t batch,
                      std::int64_t channels, std::int64_t plane) {
  if (!bias.defined()) return;
  const auto b = bias.data();
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t c = 0; c < channels; ++c) {
      double* p = out.data() + (n * channels + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) p[i] += b[static_cast<std::size_t>(c)];
    }
}

void accumulate_channel_bias_grad(TensorImpl& bias, const std::vector<double>& grad,
                                  std::int64_t batch, std::int64_t channels,
                                  std::int64_t plane) {
  auto& gb = grad_buffer(bias);
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t c = 0; c < channels; ++c) {
      const double* p = grad.data() + (n * channels + c) * plane;
      double s = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) s += p[i];
      gb[static_cast<std::size_t>(c)] += s;
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt) {
  check_conv_inputs(x, w, bias, w.rank() == 4 ? w.dim(0) : 0, opt, "conv2d");
  const std::int64_t batch = x.dim(0);
  const std::int64_t c_out = w.dim(0);
  if (w.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " expects " +
                     std::to_string(w.dim(1)) + " input channels, x is " +
                     shape_str(x.shape()));
  }
  ConvGeometry g;
  g.channels = x.dim(1);
  g.in_h = x.dim(2);
  g.in_w = x.dim(3);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = opt.stride;
  g.pad = opt.pad;
  if (g.kh > g.in_h + 2 * g.pad || g.kw > g.in_w + 2 * g.pad) {
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) +
                     " larger than padded input " + shape_str(x.shape()));
  }
  g.out_h = (g.in_h + 2 * g.pad - g.kh) / g.stride + 1;
  g.out_w = (g.in_w + 2 * g.pad - g.kw) / g.stride + 1;

  const auto rows = static_cast<std::size_t>(g.col_rows());
  const auto cols = static_cast<std::size_t>(g.col_cols());
  const std::int64_t in_plane = g.channels * g.in_h * g.in_w;
  const std::int64_t out_plane = c_out * g.out_h * g.out_w;
  std::vector<double> out(static_cast<std::size_t>(batch * out_plane), 0.0);
  const bool direct = use_direct_conv(g, c_out);
  std::vector<double> col(g.is_pointwise() || direct ? 0 : rows * cols);
  for (std::int64_t n = 0; n < batch; ++n) {
    const double* image = x.data().data() + n * in_plane;
    if (direct) {
      direct_conv_forward(g, c_out, w.data().data(), image, out.data() + n * out_plane);
      continue;
    }
    const double* src = image;
    if (!g.is_pointwise()) {
      im2col(g, image, col.data());
      src = col.data();
    }
    detail::gemm(false, false, static_cast<std::size_t>(c_out), cols, rows,
                 w.data().data(), rows, src, cols, out.data() + n * out_plane, cols,
                 false);
  }
  add_channel_bias(out, bias, batch, c_out, g.out_h * g.out_w);

  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(
      {batch, c_out, g.out_h, g.out_w}, std::move(out), std::move(inputs),
      [g, batch, c_out, in_plane, out_plane](TensorImpl& self) {
        TensorImpl& ix = *self.inputs[0];
        TensorImpl& iw = *self.inputs[1];
        const auto rows = static_cast<std::size_t>(g.col_rows());
        const auto cols = static_cast<std::size_t>(g.col_cols());
        const auto co = static_cast<std::size_t>(c_out);
        const bool direct = use_direct_conv(g, c_out);
        std::vector<double> col(direct ? 0 : rows * cols);
        for (std::int64_t n = 0; n < batch; ++n) {
          const double* dy = self.grad.data() + n * out_plane;
          const double* image = ix.value.data() + n * in_plane;
          if (direct) {
            if (iw.requires_grad)
              direct_conv_backward_weight(g, c_out, dy, image, grad_buffer(iw).data());
            if (ix.requires_grad)
              direct_conv_backward_input(g, c_out, iw.value.data(), dy,
                                         grad_buffer(ix).data() + n * in_plane);
            continue;
          }
          if (iw.requires_grad) {  // dW += dY * col^T
            const double* src = image;
            if (!g.is_pointwise()) {
              im2col(g, image, col.data());
              src = col.data();
            }
            detail::gemm(false, true, co, rows, cols, dy, cols, src, cols,
                         grad_buffer(iw).data(), rows, true);
          }
          if (ix.requires_grad) {  // dcol = W^T * dY
            double* gx = grad_buffer(ix).data() + n * in_plane;
            if (g.is_pointwise()) {
              detail::gemm(true, false, rows, cols, co, iw.value.data(), rows, dy, cols,
                           gx, cols, true);
            } else {
              detail::gemm(true, false, rows, cols, co, iw.value.data(), rows, dy, cols,
                           col.data(), cols, false);
              col2im(g, col.data(), gx);
            }
          }
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          accumulate_channel_bias_grad(*self.inputs[2], self.grad, batch, c_out,
                                       g.out_h * g.out_w);
        }
      },
      "conv2d");
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias,
                        Conv2dOptions opt) {
  check_conv_inputs(x, w, bias, w.rank() == 4 ? w.dim(1) : 0, opt, "conv2d_transpose");
  if (w.dim(0) != x.dim(1)) {
    throw ShapeError("conv2d_transpose: weight " + shape_str(w.shape()) + " expects " +
                     std::to_string(w.dim(0)) + " input channels, x is " +
                     shape_str(x.shape()));
  }
  if (opt.output_padding < 0 || opt.output_padding >= opt.stride) {
    throw ShapeError("conv2d_transpose: output_padding must lie in [0, stride)");
  }
  const std::int64_t batch = x.dim(0);
  const std::int64_t c_in = x.dim(1);
  const std::int64_t c_out = w.dim(1);
  // Geometry of the forward convolution this op is the adjoint of:
  // its input is our output and its output is our input.
  ConvGeometry g;
  g.channels = c_out;
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = opt.stride;
  g.pad = opt.pad;
  g.out_h = x.dim(2);
  g.out_w = x.dim(3);
  g.in_h = (g.out_h - 1) * g.stride - 2 * g.pad + g.kh + opt.output_padding;
  g.in_w = (g.out_w - 1) * g.stride - 2 * g.pad + g.kw + opt.output_padding;
  if (g.in_h < 1 || g.in_w < 1 || g.kh > g.in_h + 2 * g.pad ||
      g.kw > g.in_w + 2 * g.pad) {
    throw ShapeError("conv2d_transpose: kernel " + shape_str(w.shape()) +
                     " inconsistent with input " + shape_str(x.shape()) +
                     " for stride " + std::to_string(opt.stride) + ", pad " +
                     std::to_string(opt.pad));
  }
  const auto rows = static_cast<std::size_t>(g.col_rows());
  const auto cols = static_cast<std::size_t>(g.col_cols());
  const std::int64_t in_plane = c_in * g.out_h * g.out_w;
  const std::int64_t out_plane = c_out * g.in_h * g.in_w;
  std::vector<double> out(static_cast<std::size_t>(batch * out_plane), 0.0);
  std::vector<double> col(rows * cols);
  const auto ci = static_cast<std::size_t>(c_in);
  for (std::int64_t n = 0; n < batch; ++n) {
    const double* xs = x.data().data() + n * in_plane;
    // col = W^T x with W viewed as [Cin, Cout*kh*kw]
    detail::gemm(true, false, rows, cols, ci, w.data().data(), rows, xs, cols,
                 col.data(), cols, false);
    col2im(g, col.data(), out.data() + n * out_plane);
  }
  add_channel_bias(out, bias, batch, c_out, g.in_h * g.in_w);

  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(
      {batch, c_out, g.in_h, g.in_w}, std::move(out), std::move(inputs),
      [g, batch, c_out, ci, in_plane, out_plane](TensorImpl& self) {
        TensorImpl& ix = *self.inputs[0];
        TensorImpl& iw = *self.inputs[1];
        const auto rows = static_cast<std::size_t>(g.col_rows());
        const auto cols = static_cast<std::size_t>(g.col_cols());
        std::vector<double> col(rows * cols);
        for (std::int64_t n = 0; n < batch; ++n) {
          im2col(g, self.grad.data() + n * out_plane, col.data());
          const double* xs = ix.value.data() + n * in_plane;
          if (iw.requires_grad) {  // dW += x * col^T
            detail::gemm(false, true, ci, rows, cols, xs, cols, col.data(), cols,
                         grad_buffer(iw).data(), rows, true);
          }
          if (ix.requires_grad) {  // dx += W * col
            detail::gemm(false, false, ci, cols, rows, iw.value.data(), rows,
                         col.data(), cols, grad_buffer(ix).data() + n * in_plane, cols,
                         true);
          }
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          accumulate_channel_bias_grad(*self.inputs[2], self.grad, batch, c_out,
                                       g.in_h * g.in_w);
        }
      },
      "conv2d_transpose");
}

// ---------------------------------------------------------------------------
// Reductions and shape manipulation

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::make_result(
      {}, {total}, {x},
      [](TensorImpl& self) {
        auto& g = grad_buffer(*self.inputs[0]);
        for (auto& v : g) v += self.grad[0];
      },
      "sum");
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  const int ax = normalize_axis(axis, x.rank(), "sum");
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[static_cast<std::size_t>(ax)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + ax);
  }
  const auto in = x.data();
  std::vector<double> out(static_cast<std::size_t>(s.outer * s.inner), 0.0);
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t i = 0; i < s.len; ++i)
      for (std::int64_t r = 0; r < s.inner; ++r)
        out[static_cast<std::size_t>(o * s.inner + r)] +=
            in[static_cast<std::size_t>((o * s.len + i) * s.inner + r)];
  return Tensor::make_result(
      std::move(out_shape), std::move(out), {x},
      [s](TensorImpl& self) {
        auto& g = grad_buffer(*self.inputs[0]);
        for (std::int64_t o = 0; o < s.outer; ++o)
          for (std::int64_t i = 0; i < s.len; ++i)
            for (std::int64_t r = 0; r < s.inner; ++r)
              g[static_cast<std::size_t>((o * s.len + i) * s.inner + r)] +=
                  self.grad[static_cast<std::size_t>(o * s.inner + r)];
      },
      "sum_axis");
}

Tensor mean(const Tensor& x) {
  return mul(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const double len = static_cast<double>(x.dim(axis));
  return mul(sum(x, axis, keepdim), 1.0 / len);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  std::vector<double> values(x.data().begin(), x.data().end());
  return Tensor::make_result(
      std::move(shape), std::move(values), {x},
      [](TensorImpl& self) {
        auto& g = grad_buffer(*self.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      },
      "reshape");
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) {
    throw ShapeError("transpose: rank-2 tensor required, got " + shape_str(x.shape()));
  }
  const std::int64_t r = x.dim(0);
  const std::int64_t c = x.dim(1);
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j)
      out[static_cast<std::size_t>(j * r + i)] = in[static_cast<std::size_t>(i * c + j)];
  return Tensor::make_result(
      {c, r}, std::move(out), {x},
      [r, c](TensorImpl& self) {
        auto& g = grad_buffer(*self.inputs[0]);
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            g[static_cast<std::size_t>(i * c + j)] +=
                self.grad[static_cast<std::size_t>(j * r + i)];
      },
      "transpose");
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int ax = normalize_axis(axis, parts[0].rank(), "concat");
  Shape out_shape = parts[0].shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape();
    Shape b = out_shape;
    if (a.size() != b.size()) {
      throw ShapeError("concat: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    a[static_cast<std::size_t>(ax)] = 0;
    b[static_cast<std::size_t>(ax)] = 0;
    if (a != b) {
      throw ShapeError("concat: incompatible shapes " + shape_str(p.shape()) + " and " +
                       shape_str(parts[0].shape()) + " along axis " +
                       std::to_string(ax));
    }
    total += p.dim(ax);
  }
  out_shape[static_cast<std::size_t>(ax)] = total;
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::int64_t len = p.dim(ax);
    const auto in = p.data();
    for (std::int64_t o = 0; o < s.outer; ++o)
      std::copy_n(in.data() + o * len * s.inner, len * s.inner,
                  out.data() + (o * total + offset) * s.inner);
    offset += len;
  }
  return Tensor::make_result(
      std::move(out_shape), std::move(out), parts,
      [s, total, offsets](TensorImpl& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
          TensorImpl& in = *self.inputs[k];
          if (!in.requires_grad) continue;
          auto& g = grad_buffer(in);
          const std::int64_t len = static_cast<std::int64_t>(g.size()) / (s.outer * s.inner);
          for (std::int64_t o = 0; o < s.outer; ++o) {
            const double* src = self.grad.data() + (o * total + offsets[k]) * s.inner;
            double* dst = g.data() + o * len * s.inner;
            for (std::int64_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
          }
        }
      },
      "concat");
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  const int ax = normalize_axis(axis, x.rank(), "slice");
  if (start < 0 || length < 1 || start + length > x.dim(ax)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of bounds for axis " +
                     std::to_string(ax) + " of " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(ax)] = length;
  std::vector<double> out(static_cast<std::size_t>(s.outer * length * s.inner));
  const auto in = x.data();
  for (std::int64_t o = 0; o < s.outer; ++o)
    std::copy_n(in.data() + (o * s.len + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  return Tensor::make_result(
      std::move(out_shape), std::move(out), {x},
      [s, start, length](TensorImpl& self) {
        auto& g = grad_buffer(*self.inputs[0]);
        for (std::int64_t o = 0; o < s.outer; ++o) {
          const double* src = self.grad.data() + o * length * s.inner;
          double* dst = g.data() + (o * s.len + start) * s.inner;
          for (std::int64_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
        }
      },
      "slice");
}

Tensor bias_add(const Tensor& x, const Tensor& b) {
  if (x.rank() < 1 || b.rank() != 1 || b.dim(0) != x.dim(-1)) {
    throw ShapeError("bias_add: bias " + shape_str(b.shape()) +
                     " does not match trailing extent of " + shape_str(x.shape()));
  }
  const auto d = static_cast<std::size_t>(b.dim(0));
  const auto in = x.data();
  const auto bv = b.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] + bv[i % d];
  return Tensor::make_result(
      x.shape(), std::move(out), {x, b},
      [d](TensorImpl& self) {
        if (self.inputs[0]->requires_grad) {
          auto& g = grad_buffer(*self.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.inputs[1]->requires_grad) {
          auto& g = grad_buffer(*self.inputs[1]);
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
        }
      },
      "bias_add");
}

Tensor take_rows(const Tensor& x, std::span<const std::int64_t> rows) {
  if (x.rank() != 2 || rows.empty()) {
    throw ShapeError("take_rows: rank-2 tensor and non-empty index list required, got " +
                     shape_str(x.shape()));
  }
  const std::int64_t n = x.dim(0);
  const std::int64_t d = x.dim(1);
  std::vector<std::int64_t> index(rows.begin(), rows.end());
  std::vector<double> out(index.size() * static_cast<std::size_t>(d));
  const auto in = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= n) {
      throw ShapeError("take_rows: row " + std::to_string(index[i]) +
                       " out of range for " + shape_str(x.shape()));
    }
    std::copy_n(in.data() + index[i] * d, d, out.data() + static_cast<std::int64_t>(i) * d);
  }
  return Tensor::make_result(
      {static_cast<std::int64_t>(index.size()), d}, std::move(out), {x},
      [index, d](TensorImpl& self) {
        auto& g = grad_buffer(*self.inputs[0]);
        for (std::size_t i = 0; i < index.size(); ++i) {
          const double* src = self.grad.data() + static_cast<std::int64_t>(i) * d;
          double* dst = g.data() + index[i] * d;
          for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
        }
      },
      "take_rows");
}

}  // namespace stgan
