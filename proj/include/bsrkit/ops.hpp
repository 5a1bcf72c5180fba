#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "bsrkit/tensor.hpp"

namespace bsrkit {

enum class ElementwiseOp { add, sub, mul, relu, gelu };

// Dispatcher over the elementwise family. Binary ops need `b`.
Tensor elementwise(ElementwiseOp op, const Tensor& a,
                   const std::optional<Tensor>& b = std::nullopt);

// Binary ops broadcast numpy-style: shapes are right-aligned and each pair
// of extents must match or one of them must be 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor relu(const Tensor& x);
// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim = true);

// out[i] = x[index[i]]; backward scatter-adds. Every reshape, permutation
// and window partition is built on this.
Tensor gather(const Tensor& x, Shape out_shape, std::vector<std::size_t> index);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
// Swaps the two trailing axes.
Tensor transpose_last(const Tensor& x);
// Slice [begin, end) along one axis.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// input [C_in,H,W], kernel [C_out,C_in,k,k], bias [C_out] (or empty tensor).
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t padding, std::size_t stride = 1);
// Per-channel 3-D conv: kernel [C,1,k,k], bias [C].
Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, std::size_t padding);
// input [C_in,H,W], kernel [C_in,C_out,k,k] with stride == k, no overlap.
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, std::size_t stride);

// Batched [...,m,k] x [...,k,n]; leading extents must be equal.
Tensor matmul(const Tensor& a, const Tensor& b);
// x [..., in] * weight [in, out] + bias [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::size_t axis, double eps = 1e-5);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }

}  // namespace bsrkit
