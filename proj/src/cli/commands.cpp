#include "basrec/cli/commands.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "basrec/cli/exit_codes.hpp"
#include "basrec/encoders/checkpoint.hpp"
#include "basrec/errors.hpp"
#include "basrec/log.hpp"
#include "json.hpp"

namespace basrec::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const ConfigError&) {
    return kExitConfig;
  } catch (const DataError&) {
    return kExitData;
  } catch (const NumericError&) {
    return kExitNumeric;
  } catch (...) {
    return kExitOther;
  }
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

datapipe::InteractionDataset load_split_dataset(const std::string& path) {
  if (path.empty()) throw ConfigError("config key 'data': no dataset cache given");
  datapipe::InteractionDataset ds = datapipe::load_cache(path);
  if (!ds.split) throw DataError(path + ": dataset cache has no leave-one-out split");
  return ds;
}

ordered_json config_json(const trainer::TrainConfig& config) {
  ordered_json j = ordered_json::object();
  std::istringstream lines(trainer::config_to_text(config));
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

fs::path seed_dir(const trainer::TrainConfig& config, std::uint64_t seed) {
  return fs::path(config.out) / ("seed-" + std::to_string(seed));
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = 0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  // Population deviation; a single seed reports 0.
  sd = std::sqrt(ss / static_cast<double>(xs.size()));
}

}  // namespace

std::string RunManifest::to_json() const {
  ordered_json j;
  j["command"] = command;
  j["code_version"] = kCodeVersion;
  j["dataset_hash"] = dataset_hash;
  j["seeds"] = config.seeds;
  j["config"] = config_json(config);
  j["outputs"] = outputs;
  j["extra"] = extra.empty() ? ordered_json::object() : ordered_json::parse(extra);
  return j.dump(2) + "\n";
}

void write_manifest(const fs::path& out_dir, const RunManifest& manifest) {
  write_text(out_dir / "manifest.json", manifest.to_json());
}

std::string cmd_prepare(const PrepareOptions& options) {
  if (options.output.empty()) throw ConfigError("prepare: --out is required");
  datapipe::InteractionDataset ds;
  if (options.synthetic) {
    ds = datapipe::gen_synthetic(options.seed, options.users, options.items, *options.synthetic);
  } else {
    if (options.input.empty()) throw ConfigError("prepare: --input or --synthetic is required");
    if (options.k < 1) throw ConfigError("prepare: k must be >= 1");
    auto ingested = datapipe::ingest(options.input, options.format);
    auto kept = datapipe::kcore_filter(std::move(ingested.records), static_cast<int>(options.k));
    ds = datapipe::build_dataset(kept);
  }
  ds = datapipe::split_leave_one_out(std::move(ds));

  RunManifest manifest;
  manifest.command = "prepare";
  manifest.dataset_hash = datapipe::dataset_hash(ds);
  manifest.outputs = {options.output.string(), options.output.string() + ".stats.txt"};
  ordered_json extra;
  extra["input"] = options.input.string();
  extra["k"] = options.k;
  extra["synthetic"] = options.synthetic ? (*options.synthetic == datapipe::SyntheticPattern::kMarkov ? "markov" : "blocks")
                                         : "";
  extra["users"] = options.users;
  extra["items"] = options.items;
  extra["seed"] = options.seed;
  manifest.extra = extra.dump();
  write_text(options.output.string() + ".manifest.json", manifest.to_json());

  datapipe::save_cache(options.output, ds);
  const std::string stats = datapipe::format_stats(datapipe::compute_stats(ds));
  write_text(options.output.string() + ".stats.txt", stats);
  return stats;
}

std::vector<SeedRun> cmd_train(const trainer::TrainConfig& config) {
  trainer::validate(config);
  const auto ds = load_split_dataset(config.data);

  RunManifest manifest;
  manifest.command = "train";
  manifest.config = config;
  manifest.dataset_hash = datapipe::dataset_hash(ds);
  for (std::uint64_t seed : config.seeds) {
    for (const char* f : {"model.ckpt", "epochs.jsonl", "val.json", "test.json"})
      manifest.outputs.push_back((seed_dir(config, seed) / f).string());
  }
  manifest.outputs.push_back((fs::path(config.out) / "summary.json").string());
  write_manifest(config.out, manifest);

  std::vector<SeedRun> runs;
  for (std::uint64_t seed : config.seeds) {
    const fs::path dir = seed_dir(config, seed);
    fs::create_directories(dir);
    std::ofstream epoch_log(dir / "epochs.jsonl", std::ios::binary);
    trainer::TrainOptions options;
    options.on_epoch = [&](const trainer::EpochReport& r) {
      epoch_log << r.to_json() << "\n";
      epoch_log.flush();
      char line[160];
      std::snprintf(line, sizeof line, "seed %llu epoch %zu stage %d loss %.5f val n10 %.4f (%.1fs)",
                    static_cast<unsigned long long>(seed), r.epoch, r.stage, r.loss_total, r.val.n10, r.seconds);
      log::info(line);
    };
    SeedRun run{seed, trainer::train(config, ds, seed, options), {}, {}};
    encoders::save_checkpoint(dir / "model.ckpt", run.result.model);
    run.val = evaluate::evaluate(run.result.model, ds, evaluate::Split::kVal, config.exclude_history);
    run.test = evaluate::evaluate(run.result.model, ds, evaluate::Split::kTest, config.exclude_history);
    write_text(dir / "val.json", run.val.to_json() + "\n");
    write_text(dir / "test.json", run.test.to_json() + "\n");
    runs.push_back(std::move(run));
  }

  ordered_json summary;
  ordered_json per_seed = ordered_json::array();
  std::vector<double> n10;
  for (const auto& r : runs) {
    ordered_json row;
    row["seed"] = r.seed;
    row["best_epoch"] = r.result.best_epoch;
    row["test"] = ordered_json::parse(r.test.to_json());
    per_seed.push_back(row);
    n10.push_back(r.test.n10);
  }
  double mean = 0, sd = 0;
  mean_std(n10, mean, sd);
  summary["runs"] = per_seed;
  summary["mean_test_n10"] = mean;
  summary["std_test_n10"] = sd;
  write_text(fs::path(config.out) / "summary.json", summary.dump(2) + "\n");
  return runs;
}

evaluate::MetricsReport cmd_eval(const fs::path& checkpoint, const fs::path& data_path, evaluate::Split split,
                                 bool exclude_history) {
  if (!fs::exists(checkpoint)) throw DataError("missing checkpoint: " + checkpoint.string());
  auto model = encoders::load_checkpoint(checkpoint);
  const auto ds = load_split_dataset(data_path.string());
  return evaluate::evaluate(model, ds, split, exclude_history);
}

evaluate::SimilarityReport cmd_analyze(const trainer::TrainConfig& config) {
  trainer::validate(config);
  const auto ds = load_split_dataset(config.data);
  RunManifest manifest;
  manifest.command = "analyze";
  manifest.config = config;
  manifest.dataset_hash = datapipe::dataset_hash(ds);
  manifest.outputs = {(fs::path(config.out) / "similarity.json").string()};
  write_manifest(config.out, manifest);

  const auto report = evaluate::similarity_analysis(config, ds, config.seeds.front());
  write_text(fs::path(config.out) / "similarity.json", report.to_json() + "\n");
  return report;
}

std::vector<trainer::GradCheckEntry> cmd_gradcheck(const trainer::TrainConfig& config, double eps) {
  RunManifest manifest;
  manifest.command = "gradcheck";
  manifest.config = config;
  manifest.dataset_hash = datapipe::dataset_hash(datapipe::split_leave_one_out(trainer::toy_gradcheck_dataset()));
  manifest.outputs = {(fs::path(config.out) / "gradcheck.json").string()};
  ordered_json extra;
  extra["eps"] = eps;
  extra["tolerance"] = kGradCheckTolerance;
  manifest.extra = extra.dump();
  write_manifest(config.out, manifest);

  const auto entries = trainer::run_gradcheck_suite(config, config.seeds.front(), eps);
  ordered_json j;
  j["eps"] = eps;
  j["tolerance"] = kGradCheckTolerance;
  ordered_json rows = ordered_json::array();
  double worst = 0;
  for (const auto& e : entries) {
    ordered_json row;
    row["name"] = e.name;
    row["max_rel_error"] = e.report.max_rel_error;
    row["probes"] = e.report.probes;
    row["kink_skips"] = e.report.kink_skips;
    row["worst_param"] = e.report.worst_param;
    row["worst_index"] = e.report.worst_index;
    rows.push_back(row);
    worst = std::max(worst, e.report.max_rel_error);
  }
  j["entries"] = rows;
  j["max_rel_error"] = worst;
  j["pass"] = worst < kGradCheckTolerance;
  write_text(fs::path(config.out) / "gradcheck.json", j.dump(2) + "\n");
  if (!(worst < kGradCheckTolerance)) {
    char msg[128];
    std::snprintf(msg, sizeof msg, "gradcheck: max relative error %.3e >= %.0e", worst, kGradCheckTolerance);
    throw NumericError(msg);
  }
  return entries;
}

std::size_t sweep_workers_from_env() {
  const char* v = std::getenv("BASREC_WORKERS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("BASREC_WORKERS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::string out = "alpha,rate_min,rate_max,seeds,mean_n10,std_n10,mean_h10,std_h10,mean_n20,std_n20,mean_h20,std_h20\n";
  char line[512];
  for (const auto& c : cells) {
    std::snprintf(line, sizeof line, "%.2f,%.2f,%.2f,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", c.alpha,
                  c.rate_min, c.rate_max, c.per_seed.size(), c.mean_n10, c.std_n10, c.mean_h10, c.std_h10,
                  c.mean_n20, c.std_n20, c.mean_h20, c.std_h20);
    out += line;
  }
  return out;
}

std::vector<SweepCell> cmd_sweep(const trainer::TrainConfig& config, const SweepGrid& grid, std::size_t workers) {
  trainer::validate(config);
  if (grid.size() == 0) throw ConfigError("sweep: empty grid");
  if (workers < 1) throw ConfigError("sweep: worker count must be positive");
  const auto ds = load_split_dataset(config.data);

  RunManifest manifest;
  manifest.command = "sweep";
  manifest.config = config;
  manifest.dataset_hash = datapipe::dataset_hash(ds);
  manifest.outputs = {(fs::path(config.out) / "sweep.csv").string(), (fs::path(config.out) / "sweep.json").string()};
  ordered_json extra;
  extra["alpha"] = grid.alphas;
  extra["rate_min"] = grid.rate_mins;
  extra["rate_max"] = grid.rate_maxs;
  manifest.extra = extra.dump();
  write_manifest(config.out, manifest);

  std::vector<SweepCell> cells;
  for (double a : grid.alphas)
    for (double lo : grid.rate_mins)
      for (double hi : grid.rate_maxs) {
        SweepCell c;
        c.alpha = a;
        c.rate_min = lo;
        c.rate_max = hi;
        c.per_seed.resize(config.seeds.size());
        cells.push_back(std::move(c));
      }

  // Jobs are (cell, seed) pairs; each owns its output slot, so no locking is
  // needed beyond the job counter and the first error.
  const std::size_t jobs = cells.size() * config.seeds.size();
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      {
        std::lock_guard<std::mutex> lock(error_mu);
        if (first_error) return;
      }
      SweepCell& cell = cells[j / config.seeds.size()];
      const std::size_t s = j % config.seeds.size();
      try {
        trainer::TrainConfig c = config;
        c.alpha = cell.alpha;
        c.rate_min = cell.rate_min;
        c.rate_max = cell.rate_max;
        trainer::TrainOptions options;
        auto result = trainer::train(c, ds, config.seeds[s], options);
        cell.per_seed[s] = evaluate::evaluate(result.model, ds, evaluate::Split::kTest, config.exclude_history);
        char line[128];
        std::snprintf(line, sizeof line, "sweep: alpha %.2f a %.2f b %.2f seed %llu test n10 %.4f", cell.alpha,
                      cell.rate_min, cell.rate_max, static_cast<unsigned long long>(config.seeds[s]),
                      cell.per_seed[s].n10);
        log::info(line);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, jobs); ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  ordered_json rows = ordered_json::array();
  for (auto& c : cells) {
    std::vector<double> n10, h10, n20, h20;
    for (const auto& m : c.per_seed) {
      n10.push_back(m.n10);
      h10.push_back(m.h10);
      n20.push_back(m.n20);
      h20.push_back(m.h20);
    }
    mean_std(n10, c.mean_n10, c.std_n10);
    mean_std(h10, c.mean_h10, c.std_h10);
    mean_std(n20, c.mean_n20, c.std_n20);
    mean_std(h20, c.mean_h20, c.std_h20);
    ordered_json row;
    row["alpha"] = c.alpha;
    row["rate_min"] = c.rate_min;
    row["rate_max"] = c.rate_max;
    row["test_n10"] = n10;
    row["mean_n10"] = c.mean_n10;
    row["std_n10"] = c.std_n10;
    row["mean_h10"] = c.mean_h10;
    row["std_h10"] = c.std_h10;
    row["mean_n20"] = c.mean_n20;
    row["std_n20"] = c.std_n20;
    row["mean_h20"] = c.mean_h20;
    row["std_h20"] = c.std_h20;
    rows.push_back(row);
  }
  write_text(fs::path(config.out) / "sweep.csv", sweep_csv(cells));
  write_text(fs::path(config.out) / "sweep.json", rows.dump(2) + "\n");
  return cells;
}

}  // namespace basrec::cli
