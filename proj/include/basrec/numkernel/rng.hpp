#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>

namespace basrec {

/// Substream names. Each consumer owns exactly one.
namespace streams {
inline constexpr std::string_view kShuffle = "data-shuffle";
inline constexpr std::string_view kOperator = "operator";
inline constexpr std::string_view kMixup = "mixup";
inline constexpr std::string_view kNegatives = "negatives";
inline constexpr std::string_view kInit = "init";
inline constexpr std::string_view kDropout = "dropout";
}  // namespace streams

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t hash_name(std::string_view name);

/// One deterministic random sequence with a draw counter. All derived
/// variates are computed here so results do not depend on the standard
/// library's distribution implementations.
class Generator {
 public:
  explicit Generator(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() {
    ++draws_;
    return engine_();
  }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  double normal();
  double gamma(double shape);

  /// In-place Fisher-Yates.
  template <typename T>
  void shuffle(std::span<T> xs) {
    for (std::size_t i = xs.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(xs[i - 1], xs[j]);
    }
  }

  /// Independent child generator keyed by an index (per-sequence splits).
  Generator split(std::uint64_t index) {
    return Generator(splitmix64(next_u64() ^ splitmix64(index + 0x9e3779b97f4a7c15ULL)));
  }

  std::uint64_t draws() const { return draws_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t draws_ = 0;
};

/// Master seed plus lazily created named substreams. A substream's sequence
/// depends only on (master seed, name), never on other substreams' usage.
class RngStream {
 public:
  explicit RngStream(std::uint64_t master_seed = 0) : master_(master_seed) {}

  Generator& stream(std::string_view name);
  std::uint64_t draws(std::string_view name) const;
  std::uint64_t master_seed() const { return master_; }

 private:
  std::uint64_t master_;
  std::map<std::string, Generator, std::less<>> streams_;
};

/// r with lo <= r < hi. Throws ConfigError unless lo < hi.
double sample_uniform(double lo, double hi, Generator& rng);

/// lambda ~ Beta(alpha, alpha) via two Gamma draws. Throws ConfigError for alpha <= 0.
double sample_beta(double alpha, Generator& rng);

}  // namespace basrec
