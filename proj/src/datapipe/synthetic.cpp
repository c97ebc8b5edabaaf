#include "basrec/datapipe/synthetic.hpp"

#include <algorithm>
#include <string>

#include "basrec/errors.hpp"
#include "basrec/numkernel/rng.hpp"

namespace basrec::datapipe {
namespace {

std::size_t draw_length(const SyntheticOptions& opt, Generator& rng) {
  std::size_t len = opt.min_length;
  const double stop = 1.0 / (1.0 + static_cast<double>(opt.mean_extra_length));
  while (len < opt.max_length && rng.uniform01() >= stop) ++len;
  return len;
}

ItemId uniform_item(std::size_t n_items, Generator& rng) {
  return static_cast<ItemId>(1 + rng.below(n_items));
}

// Banded walk: each user prefers one successor offset but follows the others
// half of the time.
std::vector<ItemId> markov_user(std::size_t n_items, std::size_t len, const SyntheticOptions& opt,
                                Generator& rng) {
  const std::size_t preferred = 1 + rng.below(opt.band);
  std::vector<ItemId> items;
  std::size_t cur = rng.below(n_items);
  items.push_back(static_cast<ItemId>(cur + 1));
  while (items.size() < len) {
    if (rng.uniform01() < opt.noise) {
      cur = rng.below(n_items);
    } else {
      const std::size_t step = rng.uniform01() < 0.5 ? preferred : 1 + rng.below(opt.band);
      cur = (cur + step) % n_items;
    }
    items.push_back(static_cast<ItemId>(cur + 1));
  }
  return items;
}

std::vector<ItemId> blocks_user(std::size_t n_items, std::size_t len, const SyntheticOptions& opt,
                                Generator& rng) {
  const std::size_t block_size = std::max<std::size_t>(opt.band * 2, 5);
  const std::size_t n_blocks = std::max<std::size_t>(1, n_items / block_size);
  const std::size_t block = rng.below(n_blocks);
  const std::size_t lo = block * block_size;
  const std::size_t width = block + 1 == n_blocks ? n_items - lo : block_size;
  std::vector<ItemId> items;
  while (items.size() < len) {
    if (rng.uniform01() < opt.noise) {
      items.push_back(uniform_item(n_items, rng));
    } else {
      items.push_back(static_cast<ItemId>(lo + rng.below(width) + 1));
    }
  }
  return items;
}

}  // namespace

SyntheticPattern parse_pattern(std::string_view name) {
  if (name == "markov") return SyntheticPattern::kMarkov;
  if (name == "blocks") return SyntheticPattern::kBlocks;
  throw ConfigError("unknown synthetic pattern '" + std::string(name) + "' (expected markov or blocks)");
}

InteractionDataset gen_synthetic(std::uint64_t seed, std::size_t n_users, std::size_t n_items,
                                 SyntheticPattern pattern, const SyntheticOptions& options) {
  if (n_users < 10 || n_items < 10) throw ConfigError("gen_synthetic: need at least 10 users and 10 items");
  if (options.band < 1 || options.band >= n_items) throw ConfigError("gen_synthetic: band out of range");
  if (options.min_length < 1 || options.max_length < options.min_length) {
    throw ConfigError("gen_synthetic: invalid length bounds");
  }
  if (!(options.noise >= 0.0 && options.noise <= 1.0)) throw ConfigError("gen_synthetic: noise must be in [0,1]");

  Generator root(splitmix64(seed ^ hash_name("synthetic")));
  InteractionDataset d;
  d.num_items = static_cast<std::int32_t>(n_items);
  d.users.reserve(n_users);
  for (std::size_t u = 0; u < n_users; ++u) {
    Generator rng = root.split(u);
    const std::size_t len = draw_length(options, rng);
    UserSequence seq;
    seq.user_id = static_cast<std::int32_t>(u + 1);
    seq.items = pattern == SyntheticPattern::kMarkov ? markov_user(n_items, len, options, rng)
                                                     : blocks_user(n_items, len, options, rng);
    d.users.push_back(std::move(seq));
  }
  return d;
}

}  // namespace basrec::datapipe
