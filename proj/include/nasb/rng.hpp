#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace nasb {

// Deterministic xoshiro256** generator. We roll our own instead of using
// <random> distributions because their output is implementation defined and
// the checkpoint/determinism contracts require bit-identical streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Independent stream derived from (seed, tag, index). Streams are stable
  // regardless of the order they are created or consumed in, which keeps
  // per-edge gate sampling independent of edge iteration order.
  static Rng substream(std::uint64_t seed, std::string_view tag,
                       std::uint64_t index = 0);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller (pairs cached).
  double normal();

  // Uniform integer in [0, n).
  std::int64_t uniform_int(std::int64_t n);

  std::array<std::uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<std::uint64_t, 4>& s);

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nasb
