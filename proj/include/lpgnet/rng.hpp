#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lpgnet {

/// Mixes a base seed, a stream name, and a counter into an independent key.
/// Adding a new named stream never perturbs the values drawn by existing ones.
std::uint64_t derive_key(std::uint64_t seed, std::string_view stream, std::uint64_t counter = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t key) : engine_(key) {}
  Rng(std::uint64_t seed, std::string_view stream, std::uint64_t counter = 0)
      : engine_(derive_key(seed, stream, counter)) {}

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller; no cached state between calls.
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  std::uint64_t next() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace lpgnet
