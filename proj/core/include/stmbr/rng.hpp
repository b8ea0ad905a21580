#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace stmbr {

/// xoshiro256++ generator with explicit, serializable state. All project
/// randomness flows through this type so that checkpoints can capture exact
/// RNG cursors and runs replay bit-identically on any platform.
class Rng {
 public:
  explicit Rng(uint64_t seed);
  Rng() : Rng(0) {}

  /// Derives an independent stream from a master seed and a stream name
  /// (init, dropout, shuffle, synth, split). Toggling one consumer does not
  /// perturb the others.
  static Rng stream(uint64_t master_seed, std::string_view name);

  uint64_t next();

  /// Uniform double in [0, 1).
  double uniform();
  double uniform(double lo, double hi);

  /// Uniform integer in [0, n); n > 0.
  int64_t uniform_int(int64_t n);

  /// Standard normal via the polar method; stateless between calls apart
  /// from the generator words (no cached spare).
  double normal();

  template <typename It>
  void shuffle(It first, It last) {
    const int64_t n = static_cast<int64_t>(last - first);
    for (int64_t i = n - 1; i > 0; --i) {
      const int64_t j = uniform_int(i + 1);
      std::swap(first[i], first[j]);
    }
  }

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

 private:
  std::array<uint64_t, 4> s_{};
};

uint64_t splitmix64(uint64_t& x);
uint64_t fnv1a64(std::string_view s);

}  // namespace stmbr
