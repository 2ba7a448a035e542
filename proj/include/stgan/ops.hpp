#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "stgan/tensor.hpp"

namespace stgan {

// Elementwise arithmetic. Binary ops require equal shapes, or one operand
// of rank 0 which is applied to every element of the other.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor rsub(double a, const Tensor& b);  // a - b

Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
// Natural log of max(x, kLogFloor); the gradient is zero below the floor.
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor power(const Tensor& x, double p);
Tensor abs(const Tensor& x);

inline constexpr double kLogFloor = 1e-12;
inline constexpr double kExpCeiling = 700.0;

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator-(double a, const Tensor& b) { return rsub(a, b); }

// [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Numerically stable softmax along `axis` (negative axes count from the end).
Tensor softmax(const Tensor& x, int axis);

struct Conv2dOptions {
  int stride = 1;
  int pad = 0;
  int output_padding = 0;  // transpose convolution only
};

// Cross-correlation. x [B,Cin,H,W], w [Cout,Cin,kh,kw], bias [Cout] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              Conv2dOptions opt = {});

// Adjoint of conv2d with respect to its input. x [B,Cin,H,W],
// w [Cin,Cout,kh,kw]; output spatial size (H-1)*stride - 2*pad + kh + output_padding.
Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias,
                        Conv2dOptions opt = {});

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);

Tensor reshape(const Tensor& x, Shape shape);
// Rank-2 transpose.
Tensor transpose(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);

// x [..., d] + b [d], broadcast over all leading positions.
Tensor bias_add(const Tensor& x, const Tensor& b);

// Row gather on a rank-2 tensor: out[i] = x[rows[i]].
Tensor take_rows(const Tensor& x, std::span<const std::int64_t> rows);

namespace detail {

// Receives the inputs of non-differentiable-point ops (relu, leaky_relu, abs)
// while installed. Used by finite-difference checks to detect kink crossings.
class KinkObserver {
 public:
  virtual ~KinkObserver() = default;
  virtual void observe(std::span<const double> inputs) = 0;
};

void set_kink_observer(KinkObserver* observer);
KinkObserver* kink_observer();

}  // namespace detail
}  // namespace stgan
