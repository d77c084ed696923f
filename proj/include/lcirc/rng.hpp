#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace lcirc {

/// Philox4x32-10 counter-based generator.
///
/// A stream is identified by (key, stream id); the n-th output block is a pure
/// function of (key, stream id, n), so results do not depend on platform or on
/// how many other streams were created before. `split` derives an independent
/// child stream, which is how per-parameter initialization stays independent
/// of module construction order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  [[nodiscard]] Rng split(std::uint64_t tag) const;
  [[nodiscard]] Rng split(std::string_view name) const;

  std::uint64_t next_u64();
  std::uint32_t next_u32();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [lo, hi], inclusive. Requires lo <= hi.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller (no cached second value, so the stream
  /// position after k calls is always 2k uniforms).
  double normal();

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace lcirc
