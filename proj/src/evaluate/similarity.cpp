#include "basrec/evaluate/similarity.hpp"

#include "basrec/log.hpp"
#include "basrec/trainer/train.hpp"
#include "json.hpp"

namespace basrec::evaluate {

std::string SimilarityReport::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["sim_basrec"] = sim_basrec;
  j["sim_basrec_single_only"] = sim_basrec_single_only;
  j["sim_basrec_cross_only"] = sim_basrec_cross_only;
  j["sim_raw_ops"] = sim_raw_ops;
  return j.dump(2);
}

namespace {

double run_variant(trainer::TrainConfig config, const datapipe::InteractionDataset& dataset, std::uint64_t seed,
                   const char* name) {
  if (config.stage1_epochs >= config.total_epochs) {
    throw DataError(std::string("similarity analysis: variant ") + name + " never reaches stage 2");
  }
  trainer::TrainOptions options;
  options.track_similarity = true;
  log::info(std::string("similarity analysis: training variant ") + name);
  const trainer::TrainResult result = trainer::train(config, dataset, seed, options);
  return result.similarity.mean();
}

}  // namespace

SimilarityReport similarity_analysis(const trainer::TrainConfig& config, const datapipe::InteractionDataset& dataset,
                                     std::uint64_t seed) {
  SimilarityReport report;
  report.seed = seed;

  trainer::TrainConfig full = config;
  full.aug = trainer::AugMode::kBasrec;
  full.use_ssa = true;
  full.use_csa = true;
  report.sim_basrec = run_variant(full, dataset, seed, "basrec");

  trainer::TrainConfig single = full;
  single.use_csa = false;
  report.sim_basrec_single_only = run_variant(single, dataset, seed, "basrec_single_only");

  trainer::TrainConfig cross = full;
  cross.use_ssa = false;
  report.sim_basrec_cross_only = run_variant(cross, dataset, seed, "basrec_cross_only");

  trainer::TrainConfig raw = full;
  raw.aug = trainer::AugMode::kRawOps;
  raw.use_csa = false;
  report.sim_raw_ops = run_variant(raw, dataset, seed, "raw_ops");
  return report;
}

}  // namespace basrec::evaluate
