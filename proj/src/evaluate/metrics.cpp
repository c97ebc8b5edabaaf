#include "basrec/evaluate/metrics.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include "json.hpp"

#include "basrec/datapipe/batches.hpp"
#include "basrec/errors.hpp"
#include "basrec/numkernel/memory.hpp"

namespace basrec::evaluate {

Split parse_split(std::string_view name) {
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(name) + "' (expected val or test)");
}

std::string_view split_name(Split split) { return split == Split::kVal ? "val" : "test"; }

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["split"] = split_name(split);
  j["exclude_history"] = exclude_history;
  j["users"] = users;
  j["n10"] = n10;
  j["h10"] = h10;
  j["n20"] = n20;
  j["h20"] = h20;
  return j.dump(2);
}

template <typename Real>
std::size_t rank_target(std::span<const Real> scores, ItemId target, bool exclude_history,
                        std::span<const ItemId> sorted_history) {
  if (target < 1 || static_cast<std::size_t>(target) >= scores.size()) {
    throw IndexError("rank_target: target " + std::to_string(target) + " out of range");
  }
  const Real s = scores[static_cast<std::size_t>(target)];
  std::size_t rank = 1;
  for (std::size_t v = 1; v < scores.size(); ++v) {
    const auto id = static_cast<ItemId>(v);
    if (id == target) continue;
    const bool beats = scores[v] > s || (scores[v] == s && id < target);
    if (!beats) continue;
    if (exclude_history && std::binary_search(sorted_history.begin(), sorted_history.end(), id)) continue;
    ++rank;
  }
  return rank;
}

double hr_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw DataError("hr_at_k: empty rank list");
  double hits = 0.0;
  for (std::size_t r : ranks) hits += r <= k ? 1.0 : 0.0;
  return hits / static_cast<double>(ranks.size());
}

double ndcg_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw DataError("ndcg_at_k: empty rank list");
  double total = 0.0;
  for (std::size_t r : ranks) {
    if (r < 1) throw DataError("ndcg_at_k: ranks start at 1");
    if (r <= k) total += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  }
  return total / static_cast<double>(ranks.size());
}

std::vector<ItemId> eval_input(const datapipe::InteractionDataset& dataset, std::size_t user, Split split,
                               std::size_t max_len) {
  return datapipe::left_pad(split == Split::kVal ? dataset.val_input(user) : dataset.test_input(user), max_len);
}

ItemId eval_target(const datapipe::InteractionDataset& dataset, std::size_t user, Split split) {
  return split == Split::kVal ? dataset.val_target(user) : dataset.test_target(user);
}

template <typename Real>
std::vector<std::size_t> compute_ranks(encoders::Model<Real>& model, const datapipe::InteractionDataset& dataset,
                                       Split split, bool exclude_history, std::size_t chunk) {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  configure_allocator();
  const std::size_t N = model.dims().max_len;
  const std::size_t D = model.dims().dim;
  const std::size_t V = static_cast<std::size_t>(model.dims().num_items) + 1;
  if (dataset.num_items > model.dims().num_items) throw DataError("evaluate: dataset has more items than the model");
  const auto& table = model.params().get("item_emb").value;
  Mat items(V, D);
  for (std::size_t i = 0; i < V * D; ++i) items.data()[i] = static_cast<double>(table[i]);

  std::vector<std::size_t> ranks;
  ranks.reserve(dataset.num_users());
  std::vector<double> row_scores(V);
  std::vector<ItemId> history;
  for (std::size_t lo = 0; lo < dataset.num_users(); lo += chunk) {
    const std::size_t rows = std::min(chunk, dataset.num_users() - lo);
    std::vector<ItemId> ids;
    ids.reserve(rows * N);
    for (std::size_t u = lo; u < lo + rows; ++u) {
      const auto row = eval_input(dataset, u, split, N);
      ids.insert(ids.end(), row.begin(), row.end());
    }
    std::vector<std::uint8_t> mask(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) mask[i] = ids[i] != datapipe::kPadItem;

    Tape<Real> tape;
    const auto out = model.forward(tape, ids, mask, nullptr);
    const auto& last = out.last_state.value();
    Mat states(rows, D);
    for (std::size_t i = 0; i < rows * D; ++i) states.data()[i] = static_cast<double>(last[i]);
    const Mat scores = states * items.transpose();

    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t u = lo + r;
      std::copy(scores.row(r).data(), scores.row(r).data() + V, row_scores.begin());
      if (exclude_history) {
        const auto h = split == Split::kVal ? dataset.val_input(u) : dataset.test_input(u);
        history.assign(h.begin(), h.end());
        std::sort(history.begin(), history.end());
      } else {
        history.clear();
      }
      ranks.push_back(rank_target(std::span<const double>(row_scores), eval_target(dataset, u, split),
                                  exclude_history, history));
    }
  }
  return ranks;
}

MetricsReport summarize(std::span<const std::size_t> ranks, Split split, bool exclude_history) {
  MetricsReport r;
  r.split = split;
  r.exclude_history = exclude_history;
  r.users = ranks.size();
  r.n10 = ndcg_at_k(ranks, 10);
  r.h10 = hr_at_k(ranks, 10);
  r.n20 = ndcg_at_k(ranks, 20);
  r.h20 = hr_at_k(ranks, 20);
  return r;
}

template <typename Real>
MetricsReport evaluate(encoders::Model<Real>& model, const datapipe::InteractionDataset& dataset, Split split,
                       bool exclude_history) {
  const auto ranks = compute_ranks(model, dataset, split, exclude_history);
  return summarize(ranks, split, exclude_history);
}

template std::size_t rank_target(std::span<const float>, ItemId, bool, std::span<const ItemId>);
template std::size_t rank_target(std::span<const double>, ItemId, bool, std::span<const ItemId>);
template std::vector<std::size_t> compute_ranks(encoders::Model<float>&, const datapipe::InteractionDataset&, Split,
                                                bool, std::size_t);
template std::vector<std::size_t> compute_ranks(encoders::Model<double>&, const datapipe::InteractionDataset&, Split,
                                                bool, std::size_t);
template MetricsReport evaluate(encoders::Model<float>&, const datapipe::InteractionDataset&, Split, bool);
template MetricsReport evaluate(encoders::Model<double>&, const datapipe::InteractionDataset&, Split, bool);

}  // namespace basrec::evaluate
