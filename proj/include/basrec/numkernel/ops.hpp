#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>

#include "basrec/numkernel/rng.hpp"
#include "basrec/numkernel/tape.hpp"

// Differentiable kernel ops. Rank-3 tensors are laid out [batch, position, feature].
// Every op validates shapes (ShapeError names the op) and rejects non-finite
// outputs (NumericError).
namespace basrec::ops {

inline constexpr std::size_t kNoPosition = std::numeric_limits<std::size_t>::max();

/// Which axis a per-row weight matrix spans in permute_mix.
enum class MixAxis { kPositions, kFeatures };

/// Row gather from `table` ([V, D]); output shape is prefix + [D]. Backward scatter-adds.
template <typename Real>
Var<Real> gather_rows(Var<Real> table, std::span<const std::int32_t> ids, const Shape& prefix);

/// x [..., K] times w [K, M].
template <typename Real>
Var<Real> matmul(Var<Real> x, Var<Real> w);

/// x [..., M] plus bias b [M] broadcast over leading dims.
template <typename Real>
Var<Real> add_bias(Var<Real> x, Var<Real> b);

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b);
template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b);
template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b);
template <typename Real>
Var<Real> scale(Var<Real> a, double s);

template <typename Real>
Var<Real> sigmoid(Var<Real> x);
template <typename Real>
Var<Real> tanh(Var<Real> x);
template <typename Real>
Var<Real> relu(Var<Real> x);

/// Normalizes over the last axis, then applies gain and bias ([D] each).
template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gain, Var<Real> bias, double eps = 1e-8);

/// Inverted dropout. Identity when p == 0 or rng is null (inference).
template <typename Real>
Var<Real> dropout(Var<Real> x, double p, Generator* rng);

/// x [B, N, D] scaled by a constant per-position factor mask[B*N].
template <typename Real>
Var<Real> mask_positions(Var<Real> x, std::span<const Real> mask);

/// Batched q k^T * scale: [B, N, D] x [B, N, D] -> [B, N, N].
template <typename Real>
Var<Real> scores_qk(Var<Real> q, Var<Real> k, double scale);

/// Softmax over the last axis of [B, N, N]. Key s is visible to query t iff
/// key_mask[b*N+s] and (not causal or s <= t). Masked entries get exactly 0;
/// a row with no visible key is all zeros.
template <typename Real>
Var<Real> masked_softmax(Var<Real> scores, std::span<const std::uint8_t> key_mask, bool causal);

/// Batched p v: [B, N, N] x [B, N, D] -> [B, N, D].
template <typename Real>
Var<Real> attend(Var<Real> p, Var<Real> v);

/// Dot product along the last axis: [..., D] x [..., D] -> [...].
template <typename Real>
Var<Real> rowdot(Var<Real> a, Var<Real> b);

/// sum_i w_i * (softplus(-pos_i) + softplus(neg_i)), i.e. the weighted
/// binary cross-entropy of positive/negative logits. Returns shape [1].
template <typename Real>
Var<Real> weighted_bce(Var<Real> pos_logits, Var<Real> neg_logits, std::span<const Real> weights);

/// Picks x[b, idx[b], :] from [B, N, D]; kNoPosition yields a zero row.
template <typename Real>
Var<Real> take_positions(Var<Real> x, std::span<const std::size_t> idx);

/// x[:, t, :] from [B, N, F] as [B, F].
template <typename Real>
Var<Real> slice_time(Var<Real> x, std::size_t t);

/// Inverse of slice_time over all t: N tensors [B, F] -> [B, N, F].
template <typename Real>
Var<Real> stack_time(std::span<const Var<Real>> steps);

/// Columns [start, start+len) of [B, F].
template <typename Real>
Var<Real> slice_cols(Var<Real> x, std::size_t start, std::size_t len);

/// Row b of the result is on[b] if keep[b] else off[b]. Shapes [B, F].
template <typename Real>
Var<Real> select_rows(Var<Real> on, Var<Real> off, std::span<const std::uint8_t> keep);

/// lambda[b] * a[b] + (1 - lambda[b]) * c[b] with one coefficient per leading row.
template <typename Real>
Var<Real> mix_rows(Var<Real> a, Var<Real> c, std::span<const double> lambdas);

/// out[b] = W[b] * x[b] + (1 - W[b]) * x[perm[b]] (Hadamard), with W [B, N]
/// broadcast over features (kPositions) or W [B, D] broadcast over positions
/// (kFeatures). x is [B, N, D].
template <typename Real>
Var<Real> permute_mix(Var<Real> x, std::span<const std::size_t> perm, const Tensor<Real>& weights,
                      MixAxis axis);

/// Concatenation along axis 0.
template <typename Real>
Var<Real> concat_rows(std::span<const Var<Real>> parts);

/// Rows [start, start+count) along axis 0.
template <typename Real>
Var<Real> slice_rows(Var<Real> x, std::size_t start, std::size_t count);

/// Sum of all elements, shape [1].
template <typename Real>
Var<Real> sum(Var<Real> x);

}  // namespace basrec::ops
