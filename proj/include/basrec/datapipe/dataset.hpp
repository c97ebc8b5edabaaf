#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "basrec/datapipe/interactions.hpp"

namespace basrec::datapipe {

using ItemId = std::int32_t;

/// Item id 0 is reserved for padding; real items are 1..num_items.
inline constexpr ItemId kPadItem = 0;

struct UserSequence {
  std::int32_t user_id = 0;  // dense, 1-based
  std::vector<ItemId> items;  // chronological
};

/// Chronological per-user sequences over dense ids. After split_leave_one_out
/// the last item of each sequence is the test target and the second-to-last
/// the validation target.
struct InteractionDataset {
  std::vector<UserSequence> users;
  std::int32_t num_items = 0;
  bool split = false;

  std::size_t num_users() const { return users.size(); }
  std::size_t num_interactions() const;

  /// Items the model may train on: all but the last two.
  std::span<const ItemId> train_prefix(std::size_t u) const;
  /// Validation input is the training prefix; test input adds the validation target.
  std::span<const ItemId> val_input(std::size_t u) const { return train_prefix(u); }
  std::span<const ItemId> test_input(std::size_t u) const;
  ItemId val_target(std::size_t u) const;
  ItemId test_target(std::size_t u) const;
};

struct DatasetStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  double avg_length = 0.0;
  double sparsity = 0.0;  // 1 - interactions / (users * items)
};

/// Dense-remaps users and items in order of first appearance and sorts each
/// user's records by timestamp (ties keep input order).
InteractionDataset build_dataset(const std::vector<InteractionRecord>& records);

/// Marks the leave-one-out split; users with fewer than 3 items are dropped
/// with a warning.
InteractionDataset split_leave_one_out(InteractionDataset dataset);

DatasetStats compute_stats(const InteractionDataset& dataset);
std::string format_stats(const DatasetStats& stats);

/// Back to string records ("u<id>", "i<id>", position as timestamp).
std::vector<InteractionRecord> to_records(const InteractionDataset& dataset);

// Binary cache, little-endian:
//   "BASD" | u32 version | u32 flags (bit0 = split) | u32 users | u32 items |
//   u64 interactions | u32 length[users] | u32 item[interactions]
inline constexpr std::uint32_t kCacheVersion = 1;

std::vector<std::uint8_t> encode_cache(const InteractionDataset& dataset);
InteractionDataset decode_cache(std::span<const std::uint8_t> bytes);
void save_cache(const std::filesystem::path& path, const InteractionDataset& dataset);
InteractionDataset load_cache(const std::filesystem::path& path);

/// FNV-1a over the cache encoding, as 16 hex digits.
std::string dataset_hash(const InteractionDataset& dataset);

}  // namespace basrec::datapipe
