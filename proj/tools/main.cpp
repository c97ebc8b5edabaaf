#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "basrec/cli/commands.hpp"
#include "basrec/cli/exit_codes.hpp"
#include "basrec/errors.hpp"

namespace {

using basrec::trainer::TrainConfig;

// Flags shared by the config-driven subcommands. Values given on the command
// line override the config file.
struct CommonFlags {
  std::string config;
  std::optional<std::string> data, out, seeds, encoder, aug, precision;
  std::vector<std::string> sets;
  bool exclude_history = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "flat key = value config file");
    app->add_option("--data", data, "dataset cache from `prepare`");
    app->add_option("--out", out, "output directory");
    app->add_option("--seed,--seeds", seeds, "seed or comma-separated seed list");
    app->add_option("--encoder", encoder, "attention | recurrent");
    app->add_option("--aug", aug, "none | raw_ops | basrec");
    app->add_option("--precision", precision, "f32 | f64");
    app->add_flag("--exclude-history", exclude_history, "drop history items from ranking competitors");
    app->add_option("--set", sets, "extra key=value override (repeatable)");
  }

  TrainConfig resolve() const {
    TrainConfig c = config.empty() ? TrainConfig{} : basrec::trainer::load_config(config);
    auto set = [&](const char* key, const std::optional<std::string>& v) {
      if (v) basrec::trainer::set_key(c, key, *v);
    };
    set("data", data);
    set("out", out);
    set("seeds", seeds);
    set("encoder", encoder);
    set("aug", aug);
    set("precision", precision);
    if (exclude_history) c.exclude_history = true;
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw basrec::ConfigError("--set expects key=value, got '" + kv + "'");
      basrec::trainer::set_key(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    basrec::trainer::validate(c);
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Balanced sequence augmentation toolkit for next-item recommendation"};
  app.require_subcommand(1);

  basrec::cli::PrepareOptions prep;
  std::string prep_input, prep_out, prep_format = "csv", prep_synthetic;
  auto* prepare = app.add_subcommand("prepare", "ingest, k-core filter, split and cache a dataset");
  prepare->add_option("--input", prep_input, "user,item,timestamp file");
  prepare->add_option("--out", prep_out, "cache path")->required();
  prepare->add_option("--k", prep.k, "k-core threshold")->capture_default_str();
  prepare->add_option("--format", prep_format, "csv | tsv")->capture_default_str();
  prepare->add_option("--synthetic", prep_synthetic, "generate instead of reading: markov | blocks");
  prepare->add_option("--users", prep.users, "synthetic users")->capture_default_str();
  prepare->add_option("--items", prep.items, "synthetic items")->capture_default_str();
  prepare->add_option("--seed", prep.seed, "synthetic seed")->capture_default_str();

  CommonFlags train_flags, analyze_flags, grad_flags, sweep_flags;
  auto* train = app.add_subcommand("train", "train one model per seed");
  train_flags.attach(train);

  std::string ckpt, eval_data, eval_split = "test", eval_out;
  bool eval_exclude = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ckpt, "model.ckpt")->required();
  eval->add_option("--data", eval_data, "dataset cache")->required();
  eval->add_option("--split", eval_split, "val | test")->capture_default_str();
  eval->add_option("--out", eval_out, "report path (default: stdout only)");
  eval->add_flag("--exclude-history", eval_exclude, "drop history items from ranking competitors");

  auto* analyze = app.add_subcommand("analyze", "original/augmented similarity analysis");
  analyze_flags.attach(analyze);

  double eps = basrec::cli::kGradCheckEps;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check on the toy instance");
  grad_flags.attach(gradcheck);
  gradcheck->add_option("--eps", eps, "central-difference step")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "alpha x rate_min x rate_max grid");
  sweep_flags.attach(sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? basrec::cli::kExitOk : basrec::cli::kExitConfig;
  }

  try {
    if (prepare->parsed()) {
      prep.input = prep_input;
      prep.output = prep_out;
      prep.format = basrec::datapipe::TextFormat::kCsv;
      if (prep_format == "tsv") {
        prep.format = basrec::datapipe::TextFormat::kTsv;
      } else if (prep_format != "csv") {
        throw basrec::ConfigError("--format must be csv or tsv, got '" + prep_format + "'");
      }
      if (!prep_synthetic.empty()) prep.synthetic = basrec::datapipe::parse_pattern(prep_synthetic);
      std::cout << basrec::cli::cmd_prepare(prep);
    } else if (train->parsed()) {
      const auto runs = basrec::cli::cmd_train(train_flags.resolve());
      for (const auto& r : runs) std::cout << "seed " << r.seed << " test " << r.test.to_json() << "\n";
    } else if (eval->parsed()) {
      const auto report = basrec::cli::cmd_eval(ckpt, eval_data, basrec::evaluate::parse_split(eval_split), eval_exclude);
      const std::string text = report.to_json() + "\n";
      std::cout << text;
      if (!eval_out.empty()) {
        std::FILE* f = std::fopen(eval_out.c_str(), "wb");
        if (!f) throw basrec::DataError("cannot write " + eval_out);
        std::fwrite(text.data(), 1, text.size(), f);
        std::fclose(f);
      }
    } else if (analyze->parsed()) {
      std::cout << basrec::cli::cmd_analyze(analyze_flags.resolve()).to_json() << "\n";
    } else if (gradcheck->parsed()) {
      const auto entries = basrec::cli::cmd_gradcheck(grad_flags.resolve(), eps);
      for (const auto& e : entries)
        std::printf("%-22s max_rel_error %.3e (%zu probes)\n", e.name.c_str(), e.report.max_rel_error, e.report.probes);
    } else if (sweep->parsed()) {
      const auto cells = basrec::cli::cmd_sweep(sweep_flags.resolve(), {}, basrec::cli::sweep_workers_from_env());
      std::cout << basrec::cli::sweep_csv(cells);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return basrec::cli::exit_code_for_current_exception();
  }
  return basrec::cli::kExitOk;
}
