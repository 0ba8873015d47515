#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace diffalign {

/// Deterministic random stream. Every consumer derives its own stream from a
/// (seed, stream index) pair so results do not depend on scheduling order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  /// Uniform double in [0, 1) built from the top 53 bits of the engine.
  double uniform();

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  /// Standard normal draw (Box-Muller, platform independent).
  double normal();

  /// Draws an index from unnormalized non-negative weights.
  std::size_t categorical(std::span<const double> weights);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer, used to decorrelate derived seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace diffalign
