#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>

#include "basrec/datapipe/dataset.hpp"
#include "basrec/trainer/config.hpp"

namespace basrec::evaluate {

/// Cosine of two length-d vectors, accumulated in double. Two zero vectors
/// count as identical; one zero vector against a nonzero one gives 0.
template <typename Real>
double cosine(const Real* a, const Real* b, std::size_t d) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    ab += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    aa += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    bb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  if (aa == 0.0 || bb == 0.0) return aa == bb ? 1.0 : 0.0;
  return ab / std::sqrt(aa * bb);
}

/// Mean cosine between original and augmented final representations over
/// all stage-2 batches of one training run per variant.
struct SimilarityReport {
  double sim_basrec = 0.0;
  double sim_basrec_single_only = 0.0;
  double sim_basrec_cross_only = 0.0;
  double sim_raw_ops = 0.0;
  std::uint64_t seed = 0;

  std::string to_json() const;
};

/// Trains the four variants (full, single-sequence only, cross-sequence only,
/// raw operators) from the same seed and records their similarity traces.
/// Throws DataError when a run never reaches stage 2.
SimilarityReport similarity_analysis(const trainer::TrainConfig& config, const datapipe::InteractionDataset& dataset,
                                     std::uint64_t seed);

}  // namespace basrec::evaluate
