#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mrd/diffcore/tensor.hpp"

namespace mrd {

// Differentiable op set. Rank-1 tensors act as a single row wherever an op
// is defined row-wise. Shape violations throw DimensionError.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);
// Rank-1: axis 0 gives a scalar. Rank-2: axis 0 averages rows -> [cols],
// axis 1 averages columns -> [rows].
Tensor mean(const Tensor& a, std::size_t axis);
// Elementwise mean of equally shaped tensors.
Tensor mean_of(std::span<const Tensor> parts);

// Concatenate along the last dimension (all parts share leading extents).
Tensor concat(std::span<const Tensor> parts);
// Parts of shape [B x d] -> [(B*n) x d], rows ordered sample-major:
// out[b*n + i] = parts[i][b]. With B = 1 this stacks vectors into rows.
Tensor interleave_rows(std::span<const Tensor> parts);
// One row of a rank-2 tensor as a rank-1 tensor.
Tensor row(const Tensor& a, std::size_t r);

// x * W + b with x of shape [in] or [B x in], W [in x out], b [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// x * W without bias.
Tensor project(const Tensor& x, const Tensor& w);

// softmax(x / tau), row-wise for rank-2 input. Max-subtracted.
Tensor softmax_temp(const Tensor& x, double tau);

// KL(p || q) = sum p (ln p - ln q), with 0 ln 0 = 0 and q clamped to
// >= 1e-12 inside the log. Rank-1 inputs give a scalar, rank-2 a per-row
// vector. Both inputs must be probability rows (ValidationError otherwise).
inline constexpr double kKlClamp = 1e-12;
Tensor kl_divergence(const Tensor& p, const Tensor& q);

// -log_softmax(logits)[y]. Rank-1 logits with one label give a scalar;
// rank-2 logits with one label per row give a per-row vector.
Tensor cross_entropy(const Tensor& logits, std::size_t label);
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// Per-segment pooling over rows. offsets has B+1 entries delimiting B
// non-empty row ranges of x; the result is [B x cols].
Tensor segment_mean(const Tensor& x, std::span<const std::size_t> offsets);
Tensor segment_first(const Tensor& x, std::span<const std::size_t> offsets);

// Attention weights recorded by attention() for inspection.
struct AttentionTrace {
  std::size_t heads = 0;
  std::vector<std::size_t> q_offsets;
  std::vector<std::size_t> k_offsets;
  std::vector<std::size_t> row_start;  // per query row, into weights
  std::vector<double> weights;

  // Weights of one query row for one head, over the keys of its segment.
  std::span<const double> row_weights(std::size_t query_row, std::size_t head) const;
};

// Block-diagonal multi-head scaled dot-product attention:
// softmax(Q_h K_h^T / sqrt(d_k)) V_h per head and per segment, heads
// concatenated. q is [Nq x w], k and v are [Nk x w]; segment b pairs query
// rows [q_offsets[b], q_offsets[b+1]) with key rows [k_offsets[b], ...).
// heads must divide w.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 std::span<const std::size_t> q_offsets,
                 std::span<const std::size_t> k_offsets, AttentionTrace* trace = nullptr);

// Single-segment convenience form.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 AttentionTrace* trace = nullptr);

}  // namespace mrd
