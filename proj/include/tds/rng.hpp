// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace tds {

/// Seeded pseudo-random stream.
///
/// Built on std::mt19937_64, whose output sequence is fixed by the standard.
/// All derived distributions are computed here from raw 64-bit draws instead
/// of std::*_distribution, whose algorithms vary between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). Requires n > 0.
  std::uint64_t uniform_int(std::uint64_t n);
  bool bernoulli(double p);
  double normal();

  /// Independent stream keyed by (seed, stream). Does not advance this Rng.
  Rng derive(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

/// splitmix64 finalizer; used for seed mixing.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace tds
