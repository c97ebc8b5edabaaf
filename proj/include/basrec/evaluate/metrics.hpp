#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "basrec/datapipe/dataset.hpp"
#include "basrec/encoders/model.hpp"

namespace basrec::evaluate {

using datapipe::ItemId;

enum class Split { kVal, kTest };
Split parse_split(std::string_view name);
std::string_view split_name(Split split);

struct MetricsReport {
  Split split = Split::kTest;
  bool exclude_history = false;
  std::size_t users = 0;
  double n10 = 0.0, h10 = 0.0, n20 = 0.0, h20 = 0.0;

  /// Stable-key JSON document.
  std::string to_json() const;
};

/// scores[v] for v in 1..|V| (index 0 is ignored). Rank is 1 + the number of
/// competitors scoring higher, where an equal score counts as higher when the
/// competitor's id is lower. With exclude_history, ids in `sorted_history`
/// (other than the target) are not competitors.
template <typename Real>
std::size_t rank_target(std::span<const Real> scores, ItemId target, bool exclude_history,
                        std::span<const ItemId> sorted_history);

/// Fraction of ranks <= k. Throws on an empty list.
double hr_at_k(std::span<const std::size_t> ranks, std::size_t k);
/// Mean of 1/log2(rank + 1) over ranks <= k (0 otherwise).
double ndcg_at_k(std::span<const std::size_t> ranks, std::size_t k);

/// The left-padded input row and target the protocol uses for one user.
std::vector<ItemId> eval_input(const datapipe::InteractionDataset& dataset, std::size_t user, Split split,
                               std::size_t max_len);
ItemId eval_target(const datapipe::InteractionDataset& dataset, std::size_t user, Split split);

/// Full-ranking rank of the held-out item for every user, in user order.
/// Inference only: no dropout and no augmentation.
template <typename Real>
std::vector<std::size_t> compute_ranks(encoders::Model<Real>& model, const datapipe::InteractionDataset& dataset,
                                       Split split, bool exclude_history, std::size_t chunk = 256);

MetricsReport summarize(std::span<const std::size_t> ranks, Split split, bool exclude_history);

template <typename Real>
MetricsReport evaluate(encoders::Model<Real>& model, const datapipe::InteractionDataset& dataset, Split split,
                       bool exclude_history = false);

}  // namespace basrec::evaluate
