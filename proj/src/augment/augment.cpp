#include "basrec/augment/augment.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>

#include "basrec/errors.hpp"
#include "basrec/log.hpp"

namespace basrec::augment {
namespace {

constexpr double kMinProduct = 1e-6;

std::atomic<bool> g_recording{false};
std::atomic<std::uint64_t> g_next_plan{1};
std::mutex g_plan_mutex;
std::vector<std::uint64_t> g_plan_log;

}  // namespace

CrossKind parse_cross_kind(std::string_view name) {
  if (name == "item_wise") return CrossKind::kItemWise;
  if (name == "feature_wise") return CrossKind::kFeatureWise;
  throw ConfigError("unknown cross kind '" + std::string(name) + "' (expected item_wise or feature_wise)");
}

std::string_view cross_kind_name(CrossKind kind) {
  return kind == CrossKind::kItemWise ? "item_wise" : "feature_wise";
}

std::size_t edit_count(double rate, std::size_t len) {
  const auto c = static_cast<std::size_t>(std::floor(rate * static_cast<double>(len)));
  return std::min(len, std::max<std::size_t>(1, c));
}

std::vector<ItemId> op_reorder(std::span<const ItemId> seq, double rate, Generator& rng) {
  counters().reorder.fetch_add(1, std::memory_order_relaxed);
  std::vector<ItemId> out(seq.begin(), seq.end());
  if (out.empty()) return out;
  const std::size_t c = edit_count(rate, out.size());
  const std::size_t start = rng.below(out.size() - c + 1);
  rng.shuffle(std::span<ItemId>(out.data() + start, c));
  return out;
}

std::vector<ItemId> op_substitute(std::span<const ItemId> seq, double rate, const SimilarityIndex& index,
                                  Generator& rng) {
  counters().substitute.fetch_add(1, std::memory_order_relaxed);
  std::vector<ItemId> out(seq.begin(), seq.end());
  if (out.empty()) return out;
  const std::size_t c = edit_count(rate, out.size());
  // Partial Fisher-Yates picks c distinct positions.
  std::vector<std::size_t> positions(out.size());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  for (std::size_t i = 0; i < c; ++i) {
    const std::size_t j = i + rng.below(positions.size() - i);
    std::swap(positions[i], positions[j]);
    out[positions[i]] = index.top1(seq[positions[i]]);
  }
  return out;
}

template <typename Real>
SimilarityIndex build_similarity_index(const Tensor<Real>& table, std::size_t top_k, Generator& rng) {
  counters().similarity_builds.fetch_add(1, std::memory_order_relaxed);
  if (table.rank() != 2 || table.dim(0) < 3) throw ShapeError("build_similarity_index: need a [|V|+1, D] table with |V| >= 2");
  const std::size_t V = table.dim(0) - 1;
  const std::size_t D = table.dim(1);
  if (top_k < 1 || top_k >= V) throw ConfigError("build_similarity_index: top_k must be in [1, |V|)");

  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Mat unit(V, D);
  std::vector<std::uint8_t> zero(V + 1, 0);
  for (std::size_t v = 1; v <= V; ++v) {
    double norm = 0.0;
    for (std::size_t d = 0; d < D; ++d) norm += static_cast<double>(table.at(v, d)) * static_cast<double>(table.at(v, d));
    norm = std::sqrt(norm);
    zero[v] = norm == 0.0;
    for (std::size_t d = 0; d < D; ++d) unit(v - 1, d) = zero[v] ? 0.0 : static_cast<double>(table.at(v, d)) / norm;
  }

  SimilarityIndex index;
  index.top_k = top_k;
  index.neighbors.assign((V + 1) * top_k, datapipe::kPadItem);
  constexpr double kUndefined = -std::numeric_limits<double>::infinity();
  std::size_t zero_rows = 0;
  std::vector<std::pair<double, ItemId>> scored(V);
  constexpr std::size_t kBlock = 256;
  for (std::size_t lo = 0; lo < V; lo += kBlock) {
    const std::size_t rows = std::min(kBlock, V - lo);
    const Mat sims = unit.middleRows(lo, rows) * unit.transpose();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t v = lo + r + 1;
      ItemId* dst = index.neighbors.data() + v * top_k;
      if (zero[v]) {
        ++zero_rows;
        std::vector<ItemId> others;
        for (std::size_t u = 1; u <= V; ++u) {
          if (u != v) others.push_back(static_cast<ItemId>(u));
        }
        for (std::size_t j = 0; j < top_k; ++j) {
          const std::size_t pick = j + rng.below(others.size() - j);
          std::swap(others[j], others[pick]);
          dst[j] = others[j];
        }
        continue;
      }
      scored.clear();
      for (std::size_t u = 1; u <= V; ++u) {
        if (u == v) continue;
        scored.emplace_back(zero[u] ? kUndefined : sims(r, u - 1), static_cast<ItemId>(u));
      }
      std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(top_k), scored.end(),
                        [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
      for (std::size_t j = 0; j < top_k; ++j) dst[j] = scored[j].second;
    }
  }
  if (zero_rows > 0) {
    log::warn("build_similarity_index: " + std::to_string(zero_rows) +
              " zero-norm embedding row(s) mapped to random items");
  }
  return index;
}

double sample_rate(double a, double b, Generator& rng) {
  if (!(a > 0.0 && a < b && b < 1.0)) {
    throw ConfigError("operator rate bounds must satisfy 0 < a < b < 1, got a=" + std::to_string(a) +
                      " b=" + std::to_string(b));
  }
  return sample_uniform(a, b, rng);
}

namespace {

double clamp_product(double p, std::size_t& clamped) {
  if (p > kMinProduct || !(p == p)) return p;
  ++clamped;
  return kMinProduct;
}

void report_clamped(std::size_t clamped) {
  if (clamped > 0) {
    log::warn("adaptive_weight: " + std::to_string(clamped) + " rate*lambda product(s) at or below 1e-6 clamped to 1e-6");
  }
}

}  // namespace

double adaptive_weight(double rate, double lambda, std::span<const double> batch_products, double floor) {
  if (batch_products.empty()) return 1.0;
  std::size_t clamped = 0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double p : batch_products) {
    const double w = 1.0 / clamp_product(p, clamped);
    lo = std::min(lo, w);
    hi = std::max(hi, w);
  }
  const double w = 1.0 / clamp_product(rate * lambda, clamped);
  report_clamped(clamped);
  if (hi == lo) return 1.0;
  return std::max(floor, (w - lo) / (hi - lo));
}

std::vector<double> adaptive_weights(std::span<const double> products, double floor) {
  std::vector<double> inv(products.size());
  std::size_t clamped = 0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < products.size(); ++i) {
    inv[i] = 1.0 / clamp_product(products[i], clamped);
    lo = std::min(lo, inv[i]);
    hi = std::max(hi, inv[i]);
  }
  report_clamped(clamped);
  std::vector<double> out(products.size(), 1.0);
  if (hi == lo) return out;
  for (std::size_t i = 0; i < products.size(); ++i) out[i] = std::max(floor, (inv[i] - lo) / (hi - lo));
  return out;
}

std::array<AugRecords, 2> sample_single_augmentation(const datapipe::SequenceBatch& batch,
                                                     const SimilarityIndex& index, const SingleAugConfig& cfg,
                                                     Generator& op_rng, Generator& mix_rng) {
  const std::size_t B = batch.batch_size;
  const std::size_t N = batch.max_len;
  std::array<AugRecords, 2> out;
  out[0].op = Operator::kReorder;
  out[1].op = Operator::kSubstitute;
  for (auto& rec : out) {
    rec.ids = batch.input_ids;
    rec.rates.assign(B, 0.0);
    rec.lambdas.assign(B, 1.0);
    rec.omegas.assign(B, 0.0);
  }

  std::vector<double> products;
  std::vector<std::pair<std::size_t, std::size_t>> slots;  // (operator, row)
  for (std::size_t b = 0; b < B; ++b) {
    Generator row_rng = op_rng.split(b);
    std::size_t first = N;
    while (first > 0 && batch.mask[b * N + first - 1]) --first;
    const std::span<const ItemId> valid(batch.input_ids.data() + b * N + first, N - first);
    if (valid.empty()) continue;
    for (std::size_t k = 0; k < 2; ++k) {
      auto& rec = out[k];
      const double rate = sample_rate(cfg.rate_min, cfg.rate_max, row_rng);
      const auto edited = k == 0 ? op_reorder(valid, rate, row_rng) : op_substitute(valid, rate, index, row_rng);
      std::copy(edited.begin(), edited.end(), rec.ids.begin() + static_cast<std::ptrdiff_t>(b * N + first));
      rec.rates[b] = rate;
      rec.lambdas[b] = sample_beta(cfg.alpha, mix_rng);
      products.push_back(rate * rec.lambdas[b]);
      slots.emplace_back(k, b);
    }
  }
  const auto omegas = adaptive_weights(products, cfg.omega_floor);
  for (std::size_t i = 0; i < slots.size(); ++i) out[slots[i].first].omegas[slots[i].second] = omegas[i];
  return out;
}

template <typename Real>
Var<Real> mix_single(Var<Real> E, Var<Real> E_prime, std::span<const double> lambdas) {
  counters().mix_single.fetch_add(1, std::memory_order_relaxed);
  for (double l : lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("mix_single: lambda outside [0, 1]");
  }
  Var<Real> out = ops::mix_rows(E, E_prime, lambdas);
  out.tape->add_provenance(out, kSingleAug);
  return out;
}

template <typename Real>
Var<Real> mix_single(Var<Real> E, Var<Real> E_prime, double lambda) {
  const std::vector<double> lambdas(E.shape().empty() ? 0 : E.shape()[0], lambda);
  return mix_single(E, E_prime, std::span<const double>(lambdas));
}

template <typename Real>
std::optional<CrossMixPlan<Real>> make_cross_plan(std::size_t B, std::size_t N, std::size_t D, CrossKind kind,
                                                  double alpha, Generator& rng) {
  if (B < 2) {
    log::warn("make_cross_plan: batch of " + std::to_string(B) + " row(s), nothing to cross");
    return std::nullopt;
  }
  if (!(alpha > 0.0)) throw ConfigError("make_cross_plan: alpha must be positive");
  counters().cross_plans.fetch_add(1, std::memory_order_relaxed);
  CrossMixPlan<Real> plan;
  plan.id = g_next_plan.fetch_add(1, std::memory_order_relaxed);
  plan.kind = kind;
  plan.perm.resize(B);
  std::iota(plan.perm.begin(), plan.perm.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(plan.perm));
  plan.weights = Tensor<Real>(Shape{B, kind == CrossKind::kItemWise ? N : D});
  for (std::size_t i = 0; i < plan.weights.numel(); ++i) plan.weights[i] = static_cast<Real>(sample_beta(alpha, rng));
  return plan;
}

template <typename Real>
Var<Real> apply_cross_mix(Var<Real> x, const CrossMixPlan<Real>& plan) {
  if (x.provenance() & kSingleAug) {
    throw std::logic_error("apply_cross_mix: input derives from single-sequence augmentation");
  }
  counters().cross_apply.fetch_add(1, std::memory_order_relaxed);
  if (g_recording.load(std::memory_order_relaxed)) {
    std::lock_guard lock(g_plan_mutex);
    g_plan_log.push_back(plan.id);
  }
  const auto axis = plan.kind == CrossKind::kItemWise ? ops::MixAxis::kPositions : ops::MixAxis::kFeatures;
  Var<Real> out = ops::permute_mix(x, std::span<const std::size_t>(plan.perm), plan.weights, axis);
  out.tape->add_provenance(out, kCrossMixed);
  return out;
}

std::vector<std::uint8_t> mixed_mask(std::span<const std::uint8_t> mask, std::span<const std::size_t> perm,
                                     std::size_t max_len) {
  if (mask.size() != perm.size() * max_len) throw ShapeError("mixed_mask: mask is not [B, N] for the plan");
  std::vector<std::uint8_t> out(mask.size());
  for (std::size_t b = 0; b < perm.size(); ++b) {
    for (std::size_t t = 0; t < max_len; ++t) {
      out[b * max_len + t] = mask[b * max_len + t] && mask[perm[b] * max_len + t];
    }
  }
  return out;
}

std::uint64_t Counters::total() const {
  return reorder.load() + substitute.load() + mix_single.load() + cross_plans.load() + cross_apply.load() +
         similarity_builds.load();
}

void Counters::reset() {
  for (auto* c : {&reorder, &substitute, &mix_single, &cross_plans, &cross_apply, &similarity_builds}) c->store(0);
}

Counters& counters() {
  static Counters instance;
  return instance;
}

void set_plan_recording(bool on) {
  std::lock_guard lock(g_plan_mutex);
  g_recording.store(on);
  if (!on) g_plan_log.clear();
}

std::vector<std::uint64_t> take_plan_log() {
  std::lock_guard lock(g_plan_mutex);
  return std::exchange(g_plan_log, {});
}

#define BASREC_INSTANTIATE_AUGMENT(R)                                                                   \
  template SimilarityIndex build_similarity_index(const Tensor<R>&, std::size_t, Generator&);          \
  template Var<R> mix_single(Var<R>, Var<R>, std::span<const double>);                                 \
  template Var<R> mix_single(Var<R>, Var<R>, double);                                                  \
  template std::optional<CrossMixPlan<R>> make_cross_plan<R>(std::size_t, std::size_t, std::size_t,     \
                                                             CrossKind, double, Generator&);           \
  template Var<R> apply_cross_mix(Var<R>, const CrossMixPlan<R>&);

BASREC_INSTANTIATE_AUGMENT(float)
BASREC_INSTANTIATE_AUGMENT(double)

#undef BASREC_INSTANTIATE_AUGMENT

}  // namespace basrec::augment
