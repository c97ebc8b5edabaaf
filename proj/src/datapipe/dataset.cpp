#include "basrec/datapipe/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "basrec/errors.hpp"
#include "basrec/log.hpp"

namespace basrec::datapipe {
namespace {

void require_split(const InteractionDataset& d, const char* what) {
  if (!d.split) throw DataError(std::string(what) + ": dataset has no leave-one-out split");
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t read(int width) {
    if (pos_ + static_cast<std::size_t>(width) > bytes_.size()) throw DataError("cache: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(read(4)); }
  std::uint64_t u64() { return read(8); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t InteractionDataset::num_interactions() const {
  std::size_t n = 0;
  for (const auto& u : users) n += u.items.size();
  return n;
}

std::span<const ItemId> InteractionDataset::train_prefix(std::size_t u) const {
  require_split(*this, "train_prefix");
  const auto& items = users.at(u).items;
  return {items.data(), items.size() - 2};
}

std::span<const ItemId> InteractionDataset::test_input(std::size_t u) const {
  require_split(*this, "test_input");
  const auto& items = users.at(u).items;
  return {items.data(), items.size() - 1};
}

ItemId InteractionDataset::val_target(std::size_t u) const {
  require_split(*this, "val_target");
  const auto& items = users.at(u).items;
  return items[items.size() - 2];
}

ItemId InteractionDataset::test_target(std::size_t u) const {
  require_split(*this, "test_target");
  return users.at(u).items.back();
}

InteractionDataset build_dataset(const std::vector<InteractionRecord>& records) {
  std::unordered_map<std::string, std::int32_t> user_ids, item_ids;
  std::vector<std::vector<std::pair<std::int64_t, ItemId>>> per_user;
  for (const auto& r : records) {
    auto [uit, new_user] = user_ids.try_emplace(r.user_id, static_cast<std::int32_t>(user_ids.size() + 1));
    if (new_user) per_user.emplace_back();
    auto [iit, new_item] = item_ids.try_emplace(r.item_id, static_cast<std::int32_t>(item_ids.size() + 1));
    per_user[static_cast<std::size_t>(uit->second - 1)].emplace_back(r.timestamp, iit->second);
  }

  InteractionDataset dataset;
  dataset.num_items = static_cast<std::int32_t>(item_ids.size());
  dataset.users.reserve(per_user.size());
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    auto& events = per_user[u];
    std::stable_sort(events.begin(), events.end(),
                     [](const auto& x, const auto& y) { return x.first < y.first; });
    UserSequence seq;
    seq.user_id = static_cast<std::int32_t>(u + 1);
    seq.items.reserve(events.size());
    for (const auto& e : events) seq.items.push_back(e.second);
    dataset.users.push_back(std::move(seq));
  }
  return dataset;
}

InteractionDataset split_leave_one_out(InteractionDataset dataset) {
  std::vector<UserSequence> kept;
  kept.reserve(dataset.users.size());
  std::size_t dropped = 0;
  for (auto& u : dataset.users) {
    if (u.items.size() < 3) {
      ++dropped;
      continue;
    }
    kept.push_back(std::move(u));
  }
  if (dropped > 0) {
    log::warn("split_leave_one_out: dropped " + std::to_string(dropped) + " user(s) with fewer than 3 items");
  }
  dataset.users = std::move(kept);
  dataset.split = true;
  return dataset;
}

DatasetStats compute_stats(const InteractionDataset& dataset) {
  DatasetStats s;
  s.users = dataset.num_users();
  s.items = static_cast<std::size_t>(dataset.num_items);
  s.interactions = dataset.num_interactions();
  if (s.users > 0) s.avg_length = static_cast<double>(s.interactions) / static_cast<double>(s.users);
  if (s.users > 0 && s.items > 0) {
    s.sparsity = 1.0 - static_cast<double>(s.interactions) /
                           (static_cast<double>(s.users) * static_cast<double>(s.items));
  }
  return s;
}

std::string format_stats(const DatasetStats& stats) {
  char buf[64];
  std::ostringstream out;
  out << "users = " << stats.users << "\n";
  out << "items = " << stats.items << "\n";
  out << "interactions = " << stats.interactions << "\n";
  std::snprintf(buf, sizeof buf, "%.4f", stats.avg_length);
  out << "avg_length = " << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.6f", stats.sparsity);
  out << "sparsity = " << buf << "\n";
  return out.str();
}

std::vector<InteractionRecord> to_records(const InteractionDataset& dataset) {
  std::vector<InteractionRecord> out;
  out.reserve(dataset.num_interactions());
  for (const auto& u : dataset.users) {
    for (std::size_t t = 0; t < u.items.size(); ++t) {
      out.push_back({"u" + std::to_string(u.user_id), "i" + std::to_string(u.items[t]),
                     static_cast<std::int64_t>(t)});
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_cache(const InteractionDataset& dataset) {
  std::vector<std::uint8_t> out{'B', 'A', 'S', 'D'};
  out.reserve(28 + 4 * (dataset.num_users() + dataset.num_interactions()));
  put_u32(out, kCacheVersion);
  put_u32(out, dataset.split ? 1u : 0u);
  put_u32(out, static_cast<std::uint32_t>(dataset.num_users()));
  put_u32(out, static_cast<std::uint32_t>(dataset.num_items));
  put_u64(out, dataset.num_interactions());
  for (const auto& u : dataset.users) put_u32(out, static_cast<std::uint32_t>(u.items.size()));
  for (const auto& u : dataset.users) {
    for (ItemId v : u.items) put_u32(out, static_cast<std::uint32_t>(v));
  }
  return out;
}

InteractionDataset decode_cache(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(bytes.begin(), bytes.begin() + 4, "BASD")) {
    throw DataError("cache: bad magic");
  }
  Reader in(bytes.subspan(4));
  const std::uint32_t version = in.u32();
  if (version != kCacheVersion) throw DataError("cache: unsupported version " + std::to_string(version));
  const std::uint32_t flags = in.u32();
  const std::uint32_t n_users = in.u32();
  const std::uint32_t n_items = in.u32();
  const std::uint64_t n_inter = in.u64();
  if (n_items > static_cast<std::uint32_t>(INT32_MAX)) throw DataError("cache: item count out of range");
  if (in.remaining() != 4 * (static_cast<std::uint64_t>(n_users) + n_inter)) {
    throw DataError("cache: size does not match header counts");
  }

  InteractionDataset d;
  d.split = (flags & 1u) != 0;
  d.num_items = static_cast<std::int32_t>(n_items);
  d.users.resize(n_users);
  std::uint64_t total = 0;
  for (std::uint32_t u = 0; u < n_users; ++u) {
    d.users[u].user_id = static_cast<std::int32_t>(u + 1);
    const std::uint32_t len = in.u32();
    d.users[u].items.resize(len);
    total += len;
  }
  if (total != n_inter) throw DataError("cache: sequence lengths do not sum to interaction count");
  for (auto& u : d.users) {
    for (auto& v : u.items) {
      const std::uint32_t id = in.u32();
      if (id == 0 || id > n_items) throw DataError("cache: item id " + std::to_string(id) + " out of range");
      v = static_cast<ItemId>(id);
    }
  }
  return d;
}

void save_cache(const std::filesystem::path& path, const InteractionDataset& dataset) {
  const auto bytes = encode_cache(dataset);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_cache: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("save_cache: write failed for " + path.string());
}

InteractionDataset load_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_cache: cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_cache(bytes);
}

std::string dataset_hash(const InteractionDataset& dataset) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : encode_cache(dataset)) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace basrec::datapipe
