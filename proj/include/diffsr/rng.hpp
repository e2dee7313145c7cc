#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace diffsr {

/// Seedable generator used for every stochastic operation.
///
/// Algorithm (part of the reproducibility contract):
///   * engine: std::mt19937_64 seeded with the 64-bit seed;
///   * uniform(): (engine() >> 11) * 2^-53, i.e. 53-bit uniform in [0, 1);
///   * normal(): Box-Muller on (u1, u2) with u1 = 1 - uniform() in (0, 1],
///     returning r*cos(2*pi*u2) first and caching r*sin(2*pi*u2) for the
///     next call.
/// std::normal_distribution is avoided because its algorithm is
/// implementation defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  double uniform() noexcept;
  double normal() noexcept;
  /// Integer uniformly drawn from [lo, hi].
  int uniform_int(int lo, int hi) noexcept;
  void fill_normal(std::span<double> out) noexcept;

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace diffsr
