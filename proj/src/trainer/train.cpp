#include "basrec/trainer/train.hpp"

#include <chrono>
#include <cstdio>

#include "basrec/augment/augment.hpp"
#include "basrec/datapipe/batches.hpp"
#include "basrec/errors.hpp"
#include "basrec/log.hpp"
#include "basrec/numkernel/memory.hpp"
#include "basrec/trainer/losses.hpp"
#include "json.hpp"

namespace basrec::trainer {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

encoders::ModelDims model_dims(const TrainConfig& config, const datapipe::InteractionDataset& dataset) {
  return {dataset.num_items, config.dim, config.max_len, config.layers};
}

template <typename Real>
TrainResult train_impl(const TrainConfig& config, const datapipe::InteractionDataset& dataset, std::uint64_t seed,
                       const TrainOptions& options) {
  validate(config);
  if (!dataset.split) throw DataError("train: dataset has no leave-one-out split");
  if (dataset.num_users() == 0) throw DataError("train: dataset has no users");

  configure_allocator();
  RngStream rng(seed);
  encoders::Model<Real> model(config.encoder, model_dims(config, dataset), config.dropout);
  model.initialize(rng.stream(streams::kInit));
  const AdamOptions adam{config.lr, config.beta1, config.beta2, config.adam_eps};

  TrainResult result{.model = model.template cast<float>(), .epochs = {}, .similarity = {}};
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < config.total_epochs; ++epoch) {
    const bool stage2 = epoch >= config.stage1_epochs;
    if (epoch == config.stage1_epochs) {
      result.operator_draws_after_stage1 = rng.draws(streams::kOperator);
      result.mixup_draws_after_stage1 = rng.draws(streams::kMixup);
      since_best = 0;
    }
    const LossSwitches switches = loss_switches(config, stage2);
    const auto t0 = Clock::now();

    std::optional<augment::SimilarityIndex> index;
    if (switches.ssa) {
      index = augment::build_similarity_index(model.params().get("item_emb").value, 1,
                                              rng.stream(streams::kOperator));
    }
    const auto batches = datapipe::build_batches(dataset, config.batch_size, config.max_len, rng);

    EpochReport report;
    report.epoch = epoch + 1;
    report.stage = stage2 ? 2 : 1;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      if (batch.valid_positions() == 0) continue;
      try {
        const auto sample = draw_step_sample<Real>(batch, config, switches, index ? &*index : nullptr, rng);
        SimilaritySample sim;
        Tape<Real> tape;
        const auto loss = step_loss(model, tape, batch, sample, switches,
                                    options.track_similarity && stage2 ? &sim : nullptr);
        model.params().zero_grad();
        tape.backward(loss.total);
        adam_step(model.params(), adam);
        for (const auto& p : model.params().params()) {
          if (!p.value.all_finite()) throw NumericError("parameter " + p.name + " became non-finite");
        }
        report.loss_main += loss.main;
        report.loss_ssa += loss.ssa;
        report.loss_csa += loss.csa;
        report.loss_total += static_cast<double>(loss.total.value()[0]);
        if (sim.count > 0) result.similarity.per_batch.push_back(sim.sum / static_cast<double>(sim.count));
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(bi + 1) + ": " + e.what());
      }
    }
    const double nb = static_cast<double>(batches.size());
    report.loss_main /= nb;
    report.loss_ssa /= nb;
    report.loss_csa /= nb;
    report.loss_total /= nb;
    report.train_seconds = seconds_since(t0);

    const auto t1 = Clock::now();
    bool improved = true;
    if (options.validate_each_epoch) {
      report.val = evaluate::evaluate(model, dataset, evaluate::Split::kVal, config.exclude_history);
      improved = report.val.n10 > result.best_val_ndcg10;
    }
    report.eval_seconds = seconds_since(t1);
    report.seconds = seconds_since(t0);

    if (improved) {
      result.best_val_ndcg10 = report.val.n10;
      result.best_epoch = report.epoch;
      result.model = model.template cast<float>();
      since_best = 0;
    } else if (stage2) {
      ++since_best;
    }
    result.epochs.push_back(report);
    if (options.on_epoch) options.on_epoch(report);
    if (stage2 && config.patience > 0 && since_best >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (result.epochs.size() <= config.stage1_epochs) {
    result.operator_draws_after_stage1 = rng.draws(streams::kOperator);
    result.mixup_draws_after_stage1 = rng.draws(streams::kMixup);
  }
  return result;
}

}  // namespace

std::string EpochReport::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["stage"] = stage;
  j["loss_main"] = loss_main;
  j["loss_ssa"] = loss_ssa;
  j["loss_csa"] = loss_csa;
  j["loss_total"] = loss_total;
  j["seconds"] = seconds;
  j["train_seconds"] = train_seconds;
  j["eval_seconds"] = eval_seconds;
  j["val"] = {{"n10", val.n10}, {"h10", val.h10}, {"n20", val.n20}, {"h20", val.h20}};
  return j.dump();
}

double SimilarityTrace::mean() const {
  if (per_batch.empty()) throw DataError("similarity: no stage-2 batches were recorded");
  double s = 0.0;
  for (double v : per_batch) s += v;
  return s / static_cast<double>(per_batch.size());
}

TrainResult train(const TrainConfig& config, const datapipe::InteractionDataset& dataset, std::uint64_t seed,
                  const TrainOptions& options) {
  return config.precision == Precision::kF64 ? train_impl<double>(config, dataset, seed, options)
                                             : train_impl<float>(config, dataset, seed, options);
}

datapipe::InteractionDataset toy_gradcheck_dataset() {
  datapipe::InteractionDataset d;
  d.num_items = 8;
  d.users = {{1, {1, 2, 3, 4, 5, 6, 7, 8}},
             {2, {3, 5, 7, 2, 8, 1}},
             {3, {8, 6, 4, 2, 1, 3, 5}},
             {4, {2, 4, 6, 8, 5}}};
  d.split = true;
  return d;
}

std::vector<GradCheckEntry> run_gradcheck_suite(const TrainConfig& base, std::uint64_t seed, double eps) {
  const auto dataset = toy_gradcheck_dataset();
  std::vector<GradCheckEntry> out;
  for (bool full : {false, true}) {
    for (auto kind : {encoders::EncoderKind::kAttention, encoders::EncoderKind::kRecurrent}) {
      TrainConfig config = base;
      config.encoder = kind;
      config.max_len = 6;
      config.dim = std::min<std::size_t>(base.dim, 8);
      config.batch_size = 4;
      config.aug = AugMode::kBasrec;
      config.use_ssa = config.use_csa = true;
      if (config.cross_rounds == 0) config.cross_rounds = 2;

      RngStream rng(seed);
      encoders::Model<double> model(kind, {dataset.num_items, config.dim, config.max_len, config.layers},
                                    config.dropout);
      model.initialize(rng.stream(streams::kInit));
      // Check at a generic point: the fresh init has zero biases and unit
      // gains, which leaves some coordinates with near-zero gradients.
      for (auto& p : model.params().params()) {
        for (std::size_t i = 0; i < p.value.numel(); ++i) p.value[i] += 0.3 * rng.stream(streams::kInit).normal();
        if (p.pinned_zero_row) {
          const std::size_t cols = p.value.dim(1);
          for (std::size_t j = 0; j < cols; ++j) p.value[*p.pinned_zero_row * cols + j] = 0.0;
        }
      }
      const auto batches = datapipe::build_batches(dataset, config.batch_size, config.max_len, rng);
      const auto& batch = batches.at(0);
      const LossSwitches switches = loss_switches(config, full);
      std::optional<augment::SimilarityIndex> index;
      if (switches.ssa) {
        index = augment::build_similarity_index(model.params().get("item_emb").value, 1,
                                                rng.stream(streams::kOperator));
      }
      const auto sample = draw_step_sample<double>(batch, config, switches, index ? &*index : nullptr, rng);
      const LossBuilder loss = [&](Tape<double>& tape) { return step_loss(model, tape, batch, sample, switches).total; };
      std::string name = std::string(full ? "full_loss:" : "main_loss:") + std::string(encoders::encoder_kind_name(kind));
      out.push_back({std::move(name), grad_check(loss, model.params(), eps, 400, seed)});
    }
  }
  return out;
}

}  // namespace basrec::trainer
