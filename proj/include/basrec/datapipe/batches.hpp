#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "basrec/datapipe/dataset.hpp"
#include "basrec/numkernel/rng.hpp"

namespace basrec::datapipe {

/// B x N id matrices, row-major, left-padded so the most recent item sits in
/// the last column.
struct SequenceBatch {
  std::size_t batch_size = 0;
  std::size_t max_len = 0;
  std::vector<ItemId> input_ids;
  std::vector<ItemId> pos_ids;
  std::vector<ItemId> neg_ids;
  std::vector<std::uint8_t> mask;
  std::vector<std::int32_t> user_ids;
  /// Row index into InteractionDataset::users for each batch row.
  std::vector<std::size_t> rows;

  std::size_t valid_positions() const;
  /// Column of the last valid position of row b, or none for an all-pad row.
  std::size_t last_valid(std::size_t b) const;
  std::span<const ItemId> row_inputs(std::size_t b) const {
    return {input_ids.data() + b * max_len, max_len};
  }
};

/// Keeps the most recent n items and left-pads with kPadItem to length n.
std::vector<ItemId> left_pad(std::span<const ItemId> items, std::size_t n);

/// Training rows for the given dataset rows: inputs are the training prefix
/// minus its last item, targets the prefix shifted by one. One negative per
/// valid position, never an item of the user's training prefix.
SequenceBatch make_training_batch(const InteractionDataset& dataset,
                                  std::span<const std::size_t> rows, std::size_t max_len,
                                  Generator& negatives);

/// One epoch: users shuffled with the data-shuffle substream, negatives drawn
/// from the negatives substream.
std::vector<SequenceBatch> build_batches(const InteractionDataset& dataset, std::size_t batch_size,
                                         std::size_t max_len, RngStream& rng);

/// Uniform draw from 1..num_items excluding `sorted_history`.
ItemId sample_negative(std::int32_t num_items, std::span<const ItemId> sorted_history,
                       Generator& rng);

}  // namespace basrec::datapipe
