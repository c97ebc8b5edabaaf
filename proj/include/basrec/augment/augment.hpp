#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "basrec/datapipe/batches.hpp"
#include "basrec/numkernel/ops.hpp"
#include "basrec/numkernel/rng.hpp"
#include "basrec/numkernel/tape.hpp"

namespace basrec::augment {

using datapipe::ItemId;

enum class Operator { kReorder, kSubstitute };
enum class CrossKind { kItemWise, kFeatureWise };

CrossKind parse_cross_kind(std::string_view name);
std::string_view cross_kind_name(CrossKind kind);

inline constexpr double kDefaultOmegaFloor = 0.05;

/// Number of edited positions: max(1, floor(rate * len)), at most len.
std::size_t edit_count(double rate, std::size_t len);

/// Shuffles one contiguous window of edit_count(rate, len) items starting at
/// a uniformly random offset. Everything outside the window is untouched.
std::vector<ItemId> op_reorder(std::span<const ItemId> seq, double rate, Generator& rng);

/// Top-k most cosine-similar items per item id (self excluded).
struct SimilarityIndex {
  std::size_t top_k = 1;
  /// neighbors[v * top_k + j] is the j-th most similar item to v; row 0 unused.
  std::vector<ItemId> neighbors;

  std::int32_t num_items() const {
    return top_k == 0 ? 0 : static_cast<std::int32_t>(neighbors.size() / top_k) - 1;
  }
  ItemId top1(ItemId v) const { return neighbors.at(static_cast<std::size_t>(v) * top_k); }
};

/// Cosine similarity over rows 1..|V| of `table` ([|V|+1, D]). Ties go to
/// the lowest item id. A zero-norm row has no defined similarity: it is
/// never picked as a neighbor (unless nothing else is left) and itself gets
/// uniformly random other items, with a warning.
template <typename Real>
SimilarityIndex build_similarity_index(const Tensor<Real>& table, std::size_t top_k, Generator& rng);

/// Replaces edit_count(rate, len) distinct random positions with their top-1
/// similar item.
std::vector<ItemId> op_substitute(std::span<const ItemId> seq, double rate, const SimilarityIndex& index,
                                  Generator& rng);

/// Operator rate ~ Uniform[a, b). ConfigError unless 0 < a < b < 1.
double sample_rate(double a, double b, Generator& rng);

/// omega = max(floor, (w - min) / (max - min)) with w = 1 / (rate * lambda),
/// min/max over the batch products; 1.0 when max == min. Products at or
/// below zero are clamped to 1e-6 with a warning.
double adaptive_weight(double rate, double lambda, std::span<const double> batch_products,
                       double floor = kDefaultOmegaFloor);

/// adaptive_weight for every product of a batch at once.
std::vector<double> adaptive_weights(std::span<const double> products, double floor = kDefaultOmegaFloor);

/// One operator's augmented copy of a batch: edited ids s'_u (same padding
/// layout as the input) and per-row rate, lambda, omega. Rows without valid
/// positions keep their ids and get omega 0.
struct AugRecords {
  Operator op = Operator::kReorder;
  std::vector<ItemId> ids;
  std::vector<double> rates;
  std::vector<double> lambdas;
  std::vector<double> omegas;
};

struct SingleAugConfig {
  double rate_min = 0.1;
  double rate_max = 0.8;
  double alpha = 0.4;
  double omega_floor = kDefaultOmegaFloor;
};

/// Both operators on every row of `batch` (reorder first, then substitute).
/// Edits draw from per-row splits of `op_rng`; lambdas from `mix_rng`. The
/// omega min-max pools the products of both operators.
std::array<AugRecords, 2> sample_single_augmentation(const datapipe::SequenceBatch& batch,
                                                     const SimilarityIndex& index, const SingleAugConfig& cfg,
                                                     Generator& op_rng, Generator& mix_rng);

/// E_in = lambda * E + (1 - lambda) * E', one lambda per batch row. The result
/// is tagged kSingleAug.
template <typename Real>
Var<Real> mix_single(Var<Real> E, Var<Real> E_prime, std::span<const double> lambdas);
template <typename Real>
Var<Real> mix_single(Var<Real> E, Var<Real> E_prime, double lambda);

template <typename Real>
struct CrossMixPlan {
  std::uint64_t id = 0;
  std::vector<std::size_t> perm;
  CrossKind kind = CrossKind::kItemWise;
  Tensor<Real> weights;  // [B, N] item-wise or [B, D] feature-wise
};

/// Random batch permutation plus Lambda ~ Beta(alpha, alpha) elementwise.
/// Returns nothing (with a warning) when B < 2.
template <typename Real>
std::optional<CrossMixPlan<Real>> make_cross_plan(std::size_t B, std::size_t N, std::size_t D, CrossKind kind,
                                                  double alpha, Generator& rng);

/// out[b] = Lambda[b] * x[b] + (1 - Lambda[b]) * x[perm[b]]. Refuses inputs
/// carrying kSingleAug provenance; tags the result kCrossMixed.
template <typename Real>
Var<Real> apply_cross_mix(Var<Real> x, const CrossMixPlan<Real>& plan);

/// Validity of mixed rows: mask[b] AND mask[perm[b]], positionwise.
std::vector<std::uint8_t> mixed_mask(std::span<const std::uint8_t> mask, std::span<const std::size_t> perm,
                                     std::size_t max_len);

/// Process-wide call counters for the augmentation operations.
struct Counters {
  std::atomic<std::uint64_t> reorder{0};
  std::atomic<std::uint64_t> substitute{0};
  std::atomic<std::uint64_t> mix_single{0};
  std::atomic<std::uint64_t> cross_plans{0};
  std::atomic<std::uint64_t> cross_apply{0};
  std::atomic<std::uint64_t> similarity_builds{0};

  std::uint64_t total() const;
  void reset();
};
Counters& counters();

/// When enabled, apply_cross_mix appends each plan id it applies.
void set_plan_recording(bool on);
std::vector<std::uint64_t> take_plan_log();

}  // namespace basrec::augment
