#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string_view>
#include <vector>

#include "fedmil/errors.hpp"

namespace fedmil {

// splitmix64 finalizer, used to mix seeds and tags into stream keys.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derive an independent stream key from a base seed, a textual tag and
// optional integer qualifiers (round, client id, ...). Every module draws
// from its own derived stream so call order elsewhere cannot perturb it.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  std::uint64_t h = mix64(base ^ 0x5bf03635d1f6b2ecULL);
  for (char c : tag) h = mix64(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t a) {
  return mix64(derive_seed(base, tag) ^ mix64(a));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t a, std::uint64_t b) {
  return mix64(derive_seed(base, tag, a) ^ mix64(b ^ 0x1f123bb5159a55e5ULL));
}

// Deterministic random source. The engine is std::mt19937_64 (bit-exact by
// the standard); the distributions are implemented here because the
// std::*_distribution classes are not portable across standard libraries.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1): rejects exact zeros so logs are always finite.
  double uniform_pos() {
    double u;
    do { u = uniform(); } while (u == 0.0);
    return u;
  }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t uniform_below(std::uint64_t n) {
    require(n > 0, ErrorCode::config, "uniform_below: n must be positive");
    const std::uint64_t threshold = (0 - n) % n; // 2^64 mod n
    for (;;) {
      std::uint64_t x = next_u64();
      if (x >= threshold) return x % n;
    }
  }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform_pos();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // log of a Gamma(alpha, 1) draw. Marsaglia-Tsang for alpha >= 1; the
  // alpha < 1 boost is applied in log space so tiny concentrations
  // (alpha = 0.2 in the sweeps) cannot underflow.
  double log_gamma(double alpha) {
    require(alpha > 0.0, ErrorCode::config, "log_gamma: alpha must be > 0");
    if (alpha < 1.0) {
      double u = uniform_pos();
      return log_gamma(alpha + 1.0) + std::log(u) / alpha;
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform_pos();
      double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2 ||
          std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) {
        return std::log(d) + std::log(v);
      }
    }
  }

  // Symmetric Dirichlet(alpha) on the (dim-1)-simplex, via normalized
  // exp(log Gamma) with max subtraction.
  std::vector<double> dirichlet(double alpha, int dim) {
    require(dim >= 1, ErrorCode::config, "dirichlet: dim must be >= 1");
    std::vector<double> lg(static_cast<std::size_t>(dim));
    double lg_max = -std::numeric_limits<double>::infinity();
    for (auto& v : lg) {
      v = log_gamma(alpha);
      lg_max = std::max(lg_max, v);
    }
    double sum = 0.0;
    std::vector<double> w(lg.size());
    for (std::size_t i = 0; i < lg.size(); ++i) {
      w[i] = std::exp(lg[i] - lg_max);
      sum += w[i];
    }
    for (auto& v : w) v /= sum;
    return w;
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

} // namespace fedmil
