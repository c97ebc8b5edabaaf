#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "basrec/augment/augment.hpp"
#include "basrec/encoders/model.hpp"

namespace basrec::trainer {

enum class AugMode { kNone, kRawOps, kBasrec };
AugMode parse_aug_mode(std::string_view name);
std::string_view aug_mode_name(AugMode mode);

enum class Precision { kF32, kF64 };
Precision parse_precision(std::string_view name);
std::string_view precision_name(Precision p);

struct TrainConfig {
  // data and outputs
  std::string data;  // dataset cache produced by `prepare`
  std::string out = "runs/default";

  // model
  encoders::EncoderKind encoder = encoders::EncoderKind::kAttention;
  std::size_t dim = 64;
  std::size_t max_len = 50;
  std::size_t layers = 2;
  double dropout = 0.2;

  // optimization
  std::size_t batch_size = 256;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t stage1_epochs = 50;
  std::size_t total_epochs = 100;
  std::size_t patience = 10;  // stage-2 epochs without a better val NDCG@10; 0 disables
  Precision precision = Precision::kF32;

  // augmentation
  AugMode aug = AugMode::kBasrec;
  bool use_ssa = true;
  bool use_csa = true;
  double alpha = 0.4;
  double rate_min = 0.2;
  double rate_max = 0.7;
  double omega_floor = augment::kDefaultOmegaFloor;
  std::size_t cross_rounds = 2;
  std::vector<augment::CrossKind> cross_kinds{augment::CrossKind::kItemWise, augment::CrossKind::kFeatureWise};

  // evaluation
  bool exclude_history = false;
  std::vector<std::uint64_t> seeds{1};
};

/// Throws ConfigError naming the offending key.
void validate(const TrainConfig& config);

/// Sets one key from its text value. Unknown keys are a ConfigError.
void set_key(TrainConfig& config, std::string_view key, std::string_view value);

/// Flat `key = value` lines; '#' starts a comment. Unknown keys are errors.
TrainConfig parse_config(std::string_view text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

/// Every key with its resolved value, in a fixed order; parse_config of the
/// output reproduces the config.
std::string config_to_text(const TrainConfig& config);

std::vector<std::string_view> config_keys();

}  // namespace basrec::trainer
