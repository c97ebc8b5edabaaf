#pragma once

#include <functional>
#include <string>
#include <vector>

#include "basrec/datapipe/dataset.hpp"
#include "basrec/encoders/model.hpp"
#include "basrec/evaluate/metrics.hpp"
#include "basrec/numkernel/grad_check.hpp"
#include "basrec/trainer/config.hpp"

namespace basrec::trainer {

struct EpochReport {
  std::size_t epoch = 0;  // 1-based
  int stage = 1;
  double loss_main = 0.0;
  double loss_ssa = 0.0;
  double loss_csa = 0.0;
  double loss_total = 0.0;  // mean over batches of the optimized total
  double seconds = 0.0;     // training plus validation
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
  evaluate::MetricsReport val;

  /// One-line JSON record for the training log.
  std::string to_json() const;
};

/// Running mean of per-batch mean cosines over stage-2 batches.
struct SimilarityTrace {
  std::vector<double> per_batch;
  double mean() const;
};

struct TrainResult {
  encoders::Model<float> model;  // parameters of the best validation epoch
  std::vector<EpochReport> epochs;
  std::size_t best_epoch = 0;
  double best_val_ndcg10 = -1.0;
  bool early_stopped = false;
  SimilarityTrace similarity;
  std::uint64_t operator_draws_after_stage1 = 0;
  std::uint64_t mixup_draws_after_stage1 = 0;
};

struct TrainOptions {
  std::function<void(const EpochReport&)> on_epoch;
  bool track_similarity = false;
  bool validate_each_epoch = true;
};

/// Two-stage training: L_main for the first stage1_epochs epochs, then
/// L_main + L_ssa + L_csa. Selects the epoch with the best validation
/// NDCG@10; early stopping applies to stage-2 epochs only. A non-finite
/// value anywhere aborts with NumericError naming the epoch and batch.
TrainResult train(const TrainConfig& config, const datapipe::InteractionDataset& dataset, std::uint64_t seed,
                  const TrainOptions& options = {});

/// The 4-user, 8-item, N = 6 instance used for gradient verification.
datapipe::InteractionDataset toy_gradcheck_dataset();

struct GradCheckEntry {
  std::string name;
  GradCheckReport report;
};

/// Double-precision finite-difference checks on the toy instance: L_main for
/// each encoder, then the full stage-2 loss for each encoder.
std::vector<GradCheckEntry> run_gradcheck_suite(const TrainConfig& config, std::uint64_t seed, double eps);

}  // namespace basrec::trainer
