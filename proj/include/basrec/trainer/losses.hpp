#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "basrec/augment/augment.hpp"
#include "basrec/datapipe/batches.hpp"
#include "basrec/encoders/model.hpp"
#include "basrec/numkernel/param_store.hpp"
#include "basrec/trainer/config.hpp"

namespace basrec::trainer {

/// Mean over valid positions of softplus(-H.e+) + softplus(H.e-). Throws
/// DataError when the mask has no valid position.
template <typename Real>
Var<Real> bce_loss(Var<Real> H, Var<Real> pos_repr, Var<Real> neg_repr, std::span<const std::uint8_t> mask);

/// Per-position BCE weighted by weights[r*N + t] (rows of H), summed.
template <typename Real>
Var<Real> weighted_bce_loss(Var<Real> H, Var<Real> pos_repr, Var<Real> neg_repr, std::span<const Real> weights);

/// Cosine similarities gathered for the relevance/diversity analysis.
struct SimilaritySample {
  double sum = 0.0;
  std::size_t count = 0;
  void add(double cosine) {
    sum += cosine;
    ++count;
  }
};

/// Single-sequence loss over both operators' records. Each record's mixed
/// input E_in = lambda E + (1 - lambda) E' is encoded and scored against the
/// original positive/negative representations; position losses are scaled
/// by the record's omega and normalized by the valid-position count of the
/// copies, then averaged over the two operators. With raw_ops, E_in = E'
/// and omega = 1. When `similarity` is given, the cosine between each
/// record's final state and the matching row of `clean_last` is recorded.
template <typename Real>
Var<Real> loss_ssa(encoders::Model<Real>& model, Var<Real> table, Var<Real> E,
                   const std::array<augment::AugRecords, 2>& records, const datapipe::SequenceBatch& batch,
                   Var<Real> pos_repr, Var<Real> neg_repr, bool raw_ops, Generator* dropout_rng,
                   SimilaritySample* similarity = nullptr, const Tensor<Real>* clean_last = nullptr);

/// Cross-sequence loss: each plan mixes H, E+ and E- identically, the mixed
/// mask is the AND of both source rows, and the per-plan BCE is averaged over
/// plans. Zero when there are no plans. When `similarity` is given, the
/// cosine between each mixed final state and the original one is recorded.
template <typename Real>
Var<Real> loss_csa(Var<Real> H, Var<Real> pos_repr, Var<Real> neg_repr,
                   std::span<const augment::CrossMixPlan<Real>> plans, std::span<const std::uint8_t> mask,
                   SimilaritySample* similarity = nullptr);

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update from the stored gradients; pinned rows
/// (the embedding padding row) are re-zeroed afterwards.
template <typename Real>
void adam_step(ParamStore<Real>& store, const AdamOptions& options);

/// Everything random about one training step, drawn up front so the loss is
/// a deterministic function of the parameters.
template <typename Real>
struct StepSample {
  std::optional<std::array<augment::AugRecords, 2>> single;
  std::vector<augment::CrossMixPlan<Real>> plans;
  std::uint64_t dropout_seed = 0;
};

/// Which terms of L = L_main + L_ssa + L_csa are active.
struct LossSwitches {
  bool ssa = false;
  bool csa = false;
  bool raw_ops = false;
};

LossSwitches loss_switches(const TrainConfig& config, bool stage2);

/// Stage 1 draws only the dropout seed. Stage 2 draws operator edits (operator
/// substream), lambdas and cross plans (mixup substream) as enabled.
template <typename Real>
StepSample<Real> draw_step_sample(const datapipe::SequenceBatch& batch, const TrainConfig& config,
                                  const LossSwitches& switches, const augment::SimilarityIndex* index,
                                  RngStream& rng);

template <typename Real>
struct StepLoss {
  Var<Real> total;
  double main = 0.0;
  double ssa = 0.0;
  double csa = 0.0;
};

template <typename Real>
StepLoss<Real> step_loss(encoders::Model<Real>& model, Tape<Real>& tape, const datapipe::SequenceBatch& batch,
                         const StepSample<Real>& sample, const LossSwitches& switches,
                         SimilaritySample* similarity = nullptr);

}  // namespace basrec::trainer
