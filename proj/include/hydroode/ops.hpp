#pragma once

#include <cstddef>
#include <vector>

#include "hydroode/tensor.hpp"

namespace hode {

// Matrix product. `a` is [..., m, k]. `b` is either [k, p] (shared across a's batch
// dimensions) or [..., k, p] with exactly a's batch dimensions.
Tensor matmul(const Tensor& a, const Tensor& b);

// Binary ops require equal shapes, or one operand that is a rank-0 scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor square(const Tensor& x);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator*(double c, const Tensor& x);
Tensor operator-(const Tensor& x);

/// Softmax over the last axis, max-subtracted.
Tensor softmax_lastdim(const Tensor& x);

/// Normalizes each last-axis slice to zero mean and unit variance (no affine part).
Tensor layer_norm_lastdim(const Tensor& x, double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces over the listed axes (removed from the shape).
Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor transpose_last2(const Tensor& x);
Tensor swap_axes(const Tensor& x, std::size_t a, std::size_t b);
Tensor reshape(const Tensor& x, Shape shape);
/// Repeats `x` over new leading dimensions: result shape is lead ++ x.shape.
Tensor tile_leading(const Tensor& x, const Shape& lead);

}  // namespace hode
