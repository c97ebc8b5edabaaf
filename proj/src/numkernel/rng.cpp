#include "basrec/numkernel/rng.hpp"

#include <cmath>
#include <limits>

#include "basrec/errors.hpp"

namespace basrec {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t Generator::below(std::uint64_t n) {
  // Rejection keeps the draw unbiased for any n.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Generator::normal() {
  // Marsaglia polar method; the spare variate is discarded so that the
  // generator state is the only state.
  double u, v, s;
  do {
    u = 2.0 * uniform01() - 1.0;
    v = 2.0 * uniform01() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  return u * std::sqrt(-2.0 * std::log(s) / s);
}

double Generator::gamma(double shape) {
  if (shape < 1.0) {
    // Boost: Gamma(a) = Gamma(a + 1) * U^(1/a).
    double u;
    do {
      u = uniform01();
    } while (u == 0.0);
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  // Marsaglia-Tsang squeeze.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform01();
    if (u < 1.0 - 0.0331 * (x * x) * (x * x)) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

Generator& RngStream::stream(std::string_view name) {
  auto it = streams_.find(name);
  if (it == streams_.end()) {
    const std::uint64_t seed = splitmix64(master_ ^ splitmix64(hash_name(name)));
    it = streams_.emplace(std::string(name), Generator(seed)).first;
  }
  return it->second;
}

std::uint64_t RngStream::draws(std::string_view name) const {
  auto it = streams_.find(name);
  return it == streams_.end() ? 0 : it->second.draws();
}

double sample_uniform(double lo, double hi, Generator& rng) {
  if (!(lo < hi)) {
    throw ConfigError("sample_uniform: need lo < hi, got lo=" + std::to_string(lo) +
                      " hi=" + std::to_string(hi));
  }
  double r = lo + (hi - lo) * rng.uniform01();
  if (r >= hi) r = std::nextafter(hi, lo);
  return r;
}

double sample_beta(double alpha, Generator& rng) {
  if (!(alpha > 0.0)) {
    throw ConfigError("sample_beta: alpha must be positive, got " + std::to_string(alpha));
  }
  for (;;) {
    const double x = rng.gamma(alpha);
    const double y = rng.gamma(alpha);
    const double s = x + y;
    if (s > 0.0 && std::isfinite(s)) {
      const double lam = x / s;
      return lam < 0.0 ? 0.0 : (lam > 1.0 ? 1.0 : lam);
    }
  }
}

}  // namespace basrec
