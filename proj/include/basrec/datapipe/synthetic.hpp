#pragma once

#include <cstdint>
#include <string_view>

#include "basrec/datapipe/dataset.hpp"

namespace basrec::datapipe {

enum class SyntheticPattern {
  kMarkov,  // banded first-order transitions
  kBlocks,  // users cluster over contiguous item blocks
};

SyntheticPattern parse_pattern(std::string_view name);

struct SyntheticOptions {
  std::size_t min_length = 5;
  std::size_t mean_extra_length = 5;  // geometric tail above min_length
  std::size_t max_length = 40;
  std::size_t band = 4;               // markov: successor offsets 1..band
  double noise = 0.15;                // probability of a uniformly random item
};

/// Deterministic for a given seed. Every user has at least min_length items.
InteractionDataset gen_synthetic(std::uint64_t seed, std::size_t n_users, std::size_t n_items,
                                 SyntheticPattern pattern, const SyntheticOptions& options = {});

}  // namespace basrec::datapipe
