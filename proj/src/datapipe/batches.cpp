#include "basrec/datapipe/batches.hpp"

#include <algorithm>
#include <numeric>

#include "basrec/errors.hpp"
#include "basrec/numkernel/ops.hpp"

namespace basrec::datapipe {

std::size_t SequenceBatch::valid_positions() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::size_t SequenceBatch::last_valid(std::size_t b) const {
  for (std::size_t t = max_len; t > 0; --t) {
    if (mask[b * max_len + t - 1]) return t - 1;
  }
  return ops::kNoPosition;
}

std::vector<ItemId> left_pad(std::span<const ItemId> items, std::size_t n) {
  std::vector<ItemId> out(n, kPadItem);
  const std::size_t keep = std::min(n, items.size());
  std::copy(items.end() - static_cast<std::ptrdiff_t>(keep), items.end(),
            out.end() - static_cast<std::ptrdiff_t>(keep));
  return out;
}

ItemId sample_negative(std::int32_t num_items, std::span<const ItemId> sorted_history, Generator& rng) {
  // Distinct history items bound how many ids are excluded.
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < sorted_history.size(); ++i) {
    if (i == 0 || sorted_history[i] != sorted_history[i - 1]) ++distinct;
  }
  if (distinct >= static_cast<std::size_t>(num_items)) {
    throw DataError("sample_negative: user history covers every item");
  }
  for (;;) {
    const auto v = static_cast<ItemId>(1 + rng.below(static_cast<std::uint64_t>(num_items)));
    if (!std::binary_search(sorted_history.begin(), sorted_history.end(), v)) return v;
  }
}

SequenceBatch make_training_batch(const InteractionDataset& dataset, std::span<const std::size_t> rows,
                                  std::size_t max_len, Generator& negatives) {
  if (max_len < 2) throw ConfigError("make_training_batch: max_len must be >= 2");
  SequenceBatch batch;
  batch.batch_size = rows.size();
  batch.max_len = max_len;
  const std::size_t cells = rows.size() * max_len;
  batch.input_ids.assign(cells, kPadItem);
  batch.pos_ids.assign(cells, kPadItem);
  batch.neg_ids.assign(cells, kPadItem);
  batch.mask.assign(cells, 0);
  batch.rows.assign(rows.begin(), rows.end());

  std::vector<ItemId> history;
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const auto prefix = dataset.train_prefix(rows[b]);
    batch.user_ids.push_back(dataset.users[rows[b]].user_id);
    if (prefix.size() < 2) continue;
    const auto input = left_pad(prefix.first(prefix.size() - 1), max_len);
    const auto pos = left_pad(prefix.subspan(1), max_len);
    history.assign(prefix.begin(), prefix.end());
    std::sort(history.begin(), history.end());
    for (std::size_t t = 0; t < max_len; ++t) {
      const std::size_t i = b * max_len + t;
      batch.input_ids[i] = input[t];
      if (input[t] == kPadItem) continue;
      batch.mask[i] = 1;
      batch.pos_ids[i] = pos[t];
      batch.neg_ids[i] = sample_negative(dataset.num_items, history, negatives);
    }
  }
  return batch;
}

std::vector<SequenceBatch> build_batches(const InteractionDataset& dataset, std::size_t batch_size,
                                         std::size_t max_len, RngStream& rng) {
  if (batch_size < 1) throw ConfigError("build_batches: batch size must be >= 1");
  if (max_len < 2) throw ConfigError("build_batches: max_len must be >= 2");
  std::vector<std::size_t> order;
  for (std::size_t u = 0; u < dataset.num_users(); ++u) {
    if (dataset.train_prefix(u).size() >= 2) order.push_back(u);
  }
  rng.stream(streams::kShuffle).shuffle(std::span<std::size_t>(order));

  Generator& negatives = rng.stream(streams::kNegatives);
  std::vector<SequenceBatch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.push_back(make_training_batch(
        dataset, std::span<const std::size_t>(order.data() + start, end - start), max_len, negatives));
  }
  return out;
}

}  // namespace basrec::datapipe
