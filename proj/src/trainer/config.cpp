#include "basrec/trainer/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "basrec/errors.hpp"

namespace basrec::trainer {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError("config key '" + std::string(key) + "': invalid value '" + std::string(value) + "' (expected " +
                    expected + ")");
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !(out == out)) bad_value(key, v, "a number");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(trim(v.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct Key {
  std::string_view name;
  std::function<void(TrainConfig&, std::string_view)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Key size_key(std::string_view name, T TrainConfig::*field) {
  return {name, [name, field](TrainConfig& c, std::string_view v) { c.*field = static_cast<T>(to_u64(name, v)); },
          [field](const TrainConfig& c) { return std::to_string(c.*field); }};
}

Key double_key(std::string_view name, double TrainConfig::*field) {
  return {name, [name, field](TrainConfig& c, std::string_view v) { c.*field = to_double(name, v); },
          [field](const TrainConfig& c) { return fmt(c.*field); }};
}

Key bool_key(std::string_view name, bool TrainConfig::*field) {
  return {name, [name, field](TrainConfig& c, std::string_view v) { c.*field = to_bool(name, v); },
          [field](const TrainConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}

Key string_key(std::string_view name, std::string TrainConfig::*field) {
  return {name, [field](TrainConfig& c, std::string_view v) { c.*field = std::string(v); },
          [field](const TrainConfig& c) { return c.*field; }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(string_key("data", &TrainConfig::data));
    k.push_back(string_key("out", &TrainConfig::out));
    k.push_back({"encoder",
                 [](TrainConfig& c, std::string_view v) {
                   try {
                     c.encoder = encoders::parse_encoder_kind(v);
                   } catch (const ConfigError&) {
                     bad_value("encoder", v, "attention or recurrent");
                   }
                 },
                 [](const TrainConfig& c) { return std::string(encoders::encoder_kind_name(c.encoder)); }});
    k.push_back(size_key("dim", &TrainConfig::dim));
    k.push_back(size_key("max_len", &TrainConfig::max_len));
    k.push_back(size_key("layers", &TrainConfig::layers));
    k.push_back(double_key("dropout", &TrainConfig::dropout));
    k.push_back(size_key("batch_size", &TrainConfig::batch_size));
    k.push_back(double_key("lr", &TrainConfig::lr));
    k.push_back(double_key("beta1", &TrainConfig::beta1));
    k.push_back(double_key("beta2", &TrainConfig::beta2));
    k.push_back(double_key("adam_eps", &TrainConfig::adam_eps));
    k.push_back(size_key("stage1_epochs", &TrainConfig::stage1_epochs));
    k.push_back(size_key("total_epochs", &TrainConfig::total_epochs));
    k.push_back(size_key("patience", &TrainConfig::patience));
    k.push_back({"precision",
                 [](TrainConfig& c, std::string_view v) {
                   try {
                     c.precision = parse_precision(v);
                   } catch (const ConfigError&) {
                     bad_value("precision", v, "f32 or f64");
                   }
                 },
                 [](const TrainConfig& c) { return std::string(precision_name(c.precision)); }});
    k.push_back({"aug",
                 [](TrainConfig& c, std::string_view v) {
                   try {
                     c.aug = parse_aug_mode(v);
                   } catch (const ConfigError&) {
                     bad_value("aug", v, "none, raw_ops or basrec");
                   }
                 },
                 [](const TrainConfig& c) { return std::string(aug_mode_name(c.aug)); }});
    k.push_back(bool_key("use_ssa", &TrainConfig::use_ssa));
    k.push_back(bool_key("use_csa", &TrainConfig::use_csa));
    k.push_back(double_key("alpha", &TrainConfig::alpha));
    k.push_back(double_key("rate_min", &TrainConfig::rate_min));
    k.push_back(double_key("rate_max", &TrainConfig::rate_max));
    k.push_back(double_key("omega_floor", &TrainConfig::omega_floor));
    k.push_back(size_key("cross_rounds", &TrainConfig::cross_rounds));
    k.push_back({"cross_kinds",
                 [](TrainConfig& c, std::string_view v) {
                   c.cross_kinds.clear();
                   for (auto item : split_list(v)) {
                     try {
                       c.cross_kinds.push_back(augment::parse_cross_kind(item));
                     } catch (const ConfigError&) {
                       bad_value("cross_kinds", v, "a comma list of item_wise, feature_wise");
                     }
                   }
                 },
                 [](const TrainConfig& c) {
                   std::string s;
                   for (auto kind : c.cross_kinds) {
                     if (!s.empty()) s += ",";
                     s += augment::cross_kind_name(kind);
                   }
                   return s;
                 }});
    k.push_back(bool_key("exclude_history", &TrainConfig::exclude_history));
    k.push_back({"seeds",
                 [](TrainConfig& c, std::string_view v) {
                   c.seeds.clear();
                   for (auto item : split_list(v)) c.seeds.push_back(to_u64("seeds", item));
                 },
                 [](const TrainConfig& c) {
                   std::string s;
                   for (auto seed : c.seeds) {
                     if (!s.empty()) s += ",";
                     s += std::to_string(seed);
                   }
                   return s;
                 }});
    return k;
  }();
  return table;
}

}  // namespace

AugMode parse_aug_mode(std::string_view name) {
  if (name == "none") return AugMode::kNone;
  if (name == "raw_ops") return AugMode::kRawOps;
  if (name == "basrec") return AugMode::kBasrec;
  throw ConfigError("unknown augmentation mode '" + std::string(name) + "' (expected none, raw_ops or basrec)");
}

std::string_view aug_mode_name(AugMode mode) {
  switch (mode) {
    case AugMode::kNone: return "none";
    case AugMode::kRawOps: return "raw_ops";
    case AugMode::kBasrec: return "basrec";
  }
  return "?";
}

Precision parse_precision(std::string_view name) {
  if (name == "f32") return Precision::kF32;
  if (name == "f64") return Precision::kF64;
  throw ConfigError("unknown precision '" + std::string(name) + "' (expected f32 or f64)");
}

std::string_view precision_name(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

void validate(const TrainConfig& c) {
  auto fail = [](const char* key, const std::string& why) {
    throw ConfigError("config key '" + std::string(key) + "': " + why);
  };
  if (c.dim < 1) fail("dim", "must be positive");
  if (c.max_len < 2) fail("max_len", "must be at least 2");
  if (c.encoder == encoders::EncoderKind::kAttention && c.layers < 1) fail("layers", "must be positive");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) fail("dropout", "must be in [0, 1)");
  if (c.batch_size < 1) fail("batch_size", "must be positive");
  if (!(c.lr > 0.0)) fail("lr", "must be positive");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) fail("beta1", "must be in [0, 1)");
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) fail("beta2", "must be in [0, 1)");
  if (!(c.adam_eps > 0.0)) fail("adam_eps", "must be positive");
  if (c.total_epochs < 1) fail("total_epochs", "must be positive");
  if (c.stage1_epochs >= c.total_epochs) fail("stage1_epochs", "must be less than total_epochs");
  if (!(c.alpha > 0.0)) fail("alpha", "must be positive");
  if (!(c.rate_min > 0.0 && c.rate_min < c.rate_max && c.rate_max < 1.0)) {
    fail("rate_min", "rate bounds must satisfy 0 < rate_min < rate_max < 1");
  }
  if (!(c.omega_floor >= 0.0 && c.omega_floor <= 1.0)) fail("omega_floor", "must be in [0, 1]");
  if (c.cross_rounds > 0 && c.cross_kinds.empty()) fail("cross_kinds", "must name at least one kind");
  if (c.aug == AugMode::kBasrec && !c.use_ssa && !c.use_csa) fail("use_ssa", "basrec mode needs use_ssa or use_csa");
  if (c.seeds.empty()) fail("seeds", "must list at least one seed");
}

void set_key(TrainConfig& config, std::string_view key, std::string_view value) {
  for (const auto& k : keys()) {
    if (k.name == key) {
      k.set(config, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

TrainConfig parse_config(std::string_view text, TrainConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected `key = value`");
    }
    set_key(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

std::string config_to_text(const TrainConfig& config) {
  std::string out;
  for (const auto& k : keys()) {
    out += std::string(k.name) + " = " + k.get(config) + "\n";
  }
  return out;
}

std::vector<std::string_view> config_keys() {
  std::vector<std::string_view> out;
  for (const auto& k : keys()) out.push_back(k.name);
  return out;
}

}  // namespace basrec::trainer
