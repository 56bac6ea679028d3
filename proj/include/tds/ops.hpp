// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tds/rng.hpp"
#include "tds/tensor.hpp"

// Differentiable operations. Every op validates shapes, throws ShapeError on
// mismatch, and records an exact analytic backward pass on the tape.
namespace tds {

using Lengths = std::span<const std::size_t>;

// Elementwise ops on equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Same data, new shape (numel must match).
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);

/// Affine map over the last dimension: x[..., n_in] * w[n_in, n_out] + b.
/// `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Output length of a strided convolution over time.
/// Throws ShapeError when it would be < 1.
std::size_t conv_output_length(std::size_t length, std::size_t kernel,
                               std::size_t stride, std::size_t padding);

/// 2D convolution with k x 1 kernels: mixes channels, aggregates over time,
/// and leaves the width axis untouched (weights shared across width).
///
///   x: [T, w, c_in] or [B, T, w, c_in]
///   weight: [k, c_in, c_out], bias: [c_out] (may be undefined)
///
/// With a batch axis, `lengths` gives the valid time steps of each example.
/// Frames at or past an example's length read as zero, exactly as if the
/// example were convolved alone, and output frames past the example's output
/// length are zero.
Tensor conv2d_time(const Tensor& x, const Tensor& weight, const Tensor& bias,
                   std::size_t stride, std::size_t padding, Lengths lengths = {});

/// Layer normalization over every element of an example (time included):
/// y = gain * (x - mean) / sqrt(var + eps) + bias with scalar gain and bias.
/// Rank >= 2 inputs with `lengths` are treated as [B, T, ...] and only the
/// first lengths[b] time steps enter the statistics; the rest output zero.
/// Without `lengths` the whole tensor is one example.
Tensor layer_norm_example(const Tensor& x, const Tensor& gain, const Tensor& bias,
                          double eps, Lengths lengths = {});

/// Numerically stable softmax along `axis` (negative counts from the end).
Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x);

/// Inverted dropout. Identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);

/// Rows of `table` [n, d] selected by `ids` -> [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const int> ids);

/// Mean over positions of the cross-entropy against a smoothed target:
/// 1 - eps on the true token, eps / (V - 1) on every other token.
Tensor label_smoothed_loss(const Tensor& log_probs, std::span<const int> targets,
                           double eps);

/// Gated recurrent unit parameters. Gate layout along the 3h axis is
/// [update z | reset r | candidate n].
///
///   z = sigmoid(x W_xz + h W_hz + b_z)
///   r = sigmoid(x W_xr + h W_hr + b_r)
///   n = tanh(x W_xn + (r * h) W_hn + b_n)
///   h' = (1 - z) * h + z * n
struct GruParams {
  Tensor w_x;    // [n_in, 3h]
  Tensor b;      // [3h]
  Tensor w_hzr;  // [h, 2h]
  Tensor w_hn;   // [h, h]

  std::size_t input_size() const { return w_x.dim(0); }
  std::size_t hidden_size() const { return w_hn.dim(0); }
};

/// Recurrent half of the cell. `x_proj` [B, 3h] is x W_x + b, precomputed so
/// that a whole teacher-forced sequence needs a single input projection.
Tensor gru_recurrence(const Tensor& x_proj, const Tensor& h_prev,
                      const Tensor& w_hzr, const Tensor& w_hn);

/// x: [n_in] or [B, n_in]; h_prev: [h] or [B, h].
Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& params);

}  // namespace tds
