#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace sqlearn {

/// Derives an independent sub-stream seed from a master seed and a stream tag
/// (splitmix64 finalizer). Used so that each data operation consumes its own
/// stream: a shift never perturbs a later split's draws.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seeded random source with samplers written out explicitly so that the
/// produced sequences depend only on the mt19937_64 engine, not on the
/// standard library's distribution implementations. Identical seeds give
/// identical draws on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). Unbiased via rejection.
  std::uint64_t below(std::uint64_t n) {
    assert(n > 0);
    const std::uint64_t rem = (0 - n) % n;  // 2^64 mod n
    std::uint64_t x = engine_();
    if (rem != 0) {
      const std::uint64_t bound = 0 - rem;  // largest multiple of n
      while (x >= bound) x = engine_();
    }
    return x % n;
  }

  /// Standard normal via Box-Muller; pairs are consumed from one draw of
  /// (u1, u2) with u1 in (0, 1].
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 =
        (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  /// Laplace(loc, scale) via the inverse CDF transform.
  double laplace(double loc, double scale) {
    double u = uniform();
    while (u == 0.0) u = uniform();  // keep 1 - 2|u - 1/2| > 0
    const double t = u - 0.5;
    const double s = (t > 0.0) - (t < 0.0);
    return loc - scale * s * std::log(1.0 - 2.0 * std::abs(t));
  }

  bool bernoulli(double prob) { return uniform() < prob; }

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Shuffled identity permutation of {0, ..., n-1}.
  std::vector<std::ptrdiff_t> permutation(std::ptrdiff_t n) {
    std::vector<std::ptrdiff_t> idx(static_cast<std::size_t>(n));
    for (std::ptrdiff_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    shuffle(idx);
    return idx;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace sqlearn
