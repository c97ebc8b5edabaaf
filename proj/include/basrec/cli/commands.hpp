#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "basrec/datapipe/interactions.hpp"
#include "basrec/datapipe/synthetic.hpp"
#include "basrec/evaluate/metrics.hpp"
#include "basrec/evaluate/similarity.hpp"
#include "basrec/trainer/config.hpp"
#include "basrec/trainer/train.hpp"

namespace basrec::cli {

inline constexpr const char* kCodeVersion = "0.1.0";

/// Everything needed to reproduce a command's outputs. Written to
/// <out>/manifest.json before any compute starts.
struct RunManifest {
  std::string command;
  trainer::TrainConfig config;
  std::string dataset_hash;
  std::vector<std::string> outputs;
  std::string extra;  // command-specific settings as compact JSON

  std::string to_json() const;
};

void write_manifest(const std::filesystem::path& out_dir, const RunManifest& manifest);

struct PrepareOptions {
  std::filesystem::path input;  // delimited user,item,timestamp file; empty with synthetic
  std::filesystem::path output;  // cache file
  std::size_t k = 5;
  datapipe::TextFormat format = datapipe::TextFormat::kCsv;
  // synthetic generation instead of reading input
  std::optional<datapipe::SyntheticPattern> synthetic;
  std::size_t users = 2000;
  std::size_t items = 500;
  std::uint64_t seed = 1;
};

/// ingest -> kcore_filter -> split -> cache. Returns the stats text that is
/// also written next to the cache as <output>.stats.txt.
std::string cmd_prepare(const PrepareOptions& options);

struct SeedRun {
  std::uint64_t seed = 0;
  trainer::TrainResult result;
  evaluate::MetricsReport val;
  evaluate::MetricsReport test;
};

/// Trains one model per seed in config.seeds. Per seed, <out>/seed-<s>/ gets
/// model.ckpt, epochs.jsonl, val.json and test.json.
std::vector<SeedRun> cmd_train(const trainer::TrainConfig& config);

/// Loads a checkpoint and evaluates it on the dataset cache at data_path.
evaluate::MetricsReport cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data_path,
                                 evaluate::Split split, bool exclude_history);

/// Similarity analysis for the first seed; writes <out>/similarity.json.
evaluate::SimilarityReport cmd_analyze(const trainer::TrainConfig& config);

/// Toy-instance gradient checks; writes <out>/gradcheck.json. Throws
/// NumericError when any entry reaches kGradCheckTolerance.
inline constexpr double kGradCheckTolerance = 1e-5;
inline constexpr double kGradCheckEps = 2e-5;
std::vector<trainer::GradCheckEntry> cmd_gradcheck(const trainer::TrainConfig& config, double eps = kGradCheckEps);

struct SweepCell {
  double alpha = 0.0;
  double rate_min = 0.0;
  double rate_max = 0.0;
  std::vector<evaluate::MetricsReport> per_seed;  // test split
  double mean_n10 = 0, std_n10 = 0, mean_h10 = 0, std_h10 = 0;
  double mean_n20 = 0, std_n20 = 0, mean_h20 = 0, std_h20 = 0;
};

struct SweepGrid {
  std::vector<double> alphas{0.2, 0.3, 0.4, 0.5, 0.6};
  std::vector<double> rate_mins{0.1, 0.2, 0.3};
  std::vector<double> rate_maxs{0.6, 0.7, 0.8};
  std::size_t size() const { return alphas.size() * rate_mins.size() * rate_maxs.size(); }
};

/// Worker threads for sweeps: BASREC_WORKERS if set and positive, else 1.
std::size_t sweep_workers_from_env();

/// One training run per (cell, seed). Writes <out>/sweep.csv and
/// <out>/sweep.json; rows are in grid order regardless of worker count.
std::vector<SweepCell> cmd_sweep(const trainer::TrainConfig& config, const SweepGrid& grid = {},
                                 std::size_t workers = 1);

std::string sweep_csv(const std::vector<SweepCell>& cells);

}  // namespace basrec::cli
