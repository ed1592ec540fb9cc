#pragma once

#include <span>
#include <vector>

#include "dastm/tensor.hpp"

// Differentiable primitives. Every op records a backward closure when any
// input requires a gradient; otherwise the result is a detached leaf.

namespace dastm::ops {

enum class Axis { c, h, w };

enum class Activation { relu, sigmoid };

enum class PoolKind { global_avg, global_max, avg_over_w, avg_over_h, mean_over_c, max_over_c };

enum class CombineKind { add, mul_broadcast, concat_channel, concat_spatial };

/// Cross-correlation. weight is (cout, cin, k, k); bias is (1, cout, 1, 1) or
/// an empty tensor. Throws DimensionError on channel mismatch and ConfigError
/// when the output size is not integral or below one.
Tensor4 conv2d(const Tensor4& input, const Tensor4& weight, const Tensor4& bias, int stride, int pad);

/// y = W x + b per sample; x is (n, in, 1, 1), W is (out, in, 1, 1), b is (1, out, 1, 1).
Tensor4 linear(const Tensor4& x, const Tensor4& weight, const Tensor4& bias);

Tensor4 activation(Activation kind, const Tensor4& x);
inline Tensor4 relu(const Tensor4& x) { return activation(Activation::relu, x); }
inline Tensor4 sigmoid(const Tensor4& x) { return activation(Activation::sigmoid, x); }
Tensor4 exponential(const Tensor4& x);

/// Temperature softmax along one axis, max-subtracted. Throws ParameterError for tau <= 0.
Tensor4 softmax(const Tensor4& x, Axis axis, double tau);

/// Reduces the named axes, keeping rank 4 with size-1 reduced dims. Max pools
/// route gradient to the first (lowest flat index) maximum.
Tensor4 pool(PoolKind kind, const Tensor4& x);

/// add: equal shapes. mul_broadcast: b may have size-1 dims. concat_channel:
/// along c. concat_spatial: along h (w must agree).
Tensor4 combine(CombineKind kind, const Tensor4& a, const Tensor4& b);
inline Tensor4 add(const Tensor4& a, const Tensor4& b) { return combine(CombineKind::add, a, b); }
inline Tensor4 mul(const Tensor4& a, const Tensor4& b) { return combine(CombineKind::mul_broadcast, a, b); }

Tensor4 concat(Axis axis, std::span<const Tensor4> parts);
Tensor4 slice(const Tensor4& x, Axis axis, int start, int length);
Tensor4 reshape(const Tensor4& x, Shape shape);
// Swaps the h and w axes.
Tensor4 transpose_hw(const Tensor4& x);
// Batched (n, 1, p, q) x (n, 1, q, r) -> (n, 1, p, r).
Tensor4 matmul(const Tensor4& a, const Tensor4& b);

Tensor4 scale(const Tensor4& x, double s);
// Sum of all entries as a (1,1,1,1) tensor.
Tensor4 sum(const Tensor4& x);

/// Masked mean of binary cross-entropy with logits. With subtract_entropy the
/// target entropy is removed per entry (same gradient, zero at the optimum for
/// soft targets). Returns 0 when the mask is empty.
Tensor4 bce_with_logits(const Tensor4& logits, const Tensor4& targets, const Tensor4& mask,
                        bool subtract_entropy = false);

/// Masked mean of 1 - IoU between boxes given as (l, t, r, b) distances from a
/// shared anchor point. pred/target are (n, 4, h, w); mask is (n, 1, h, w).
Tensor4 iou_loss(const Tensor4& pred, const Tensor4& target, const Tensor4& mask);

}  // namespace dastm::ops
