#pragma once

// Counter-based random numbers. Every stream is a pure function of
// (seed, stream id, draw index), so datasets and resamples are reproducible
// across platforms and compiler versions. The block cipher is Philox4x32-10;
// the variate transforms below are written out rather than taken from
// <random> because the standard distributions are implementation-defined.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace mkqr {

class Philox4x32
{
public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter encrypt(Counter ctr, Key key)
  {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = { hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0 };
    }
    return ctr;
  }

private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;
};

//! Sequential draws from one Philox stream.
class Rng
{
public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
    : key_{ static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32) }
    , stream_(stream)
  {}

  //! Independent child stream; used to give each replicate or restart its
  //! own sequence derived from one master seed.
  Rng substream(std::uint64_t index) const
  {
    // mix so that (stream, index) pairs do not collide for small values
    std::uint64_t s = stream_ * 0x9E3779B97F4A7C15ull + index + 1;
    s ^= s >> 31;
    s *= 0xBF58476D1CE4E5B9ull;
    s ^= s >> 29;
    Rng child(*this);
    child.stream_ = s;
    child.counter_ = 0;
    child.buffered_ = 0;
    child.has_spare_normal_ = false;
    return child;
  }

  std::uint32_t next_u32()
  {
    if (buffered_ == 0) {
      block_ = Philox4x32::encrypt({ static_cast<std::uint32_t>(counter_),
                                    static_cast<std::uint32_t>(counter_ >> 32),
                                    static_cast<std::uint32_t>(stream_),
                                    static_cast<std::uint32_t>(stream_ >> 32) },
                                  key_);
      ++counter_;
      buffered_ = 4;
    }
    return block_[4 - buffered_--];
  }

  //! Uniform on the open interval (0, 1) with 53 random bits.
  double uniform()
  {
    const std::uint64_t hi = next_u32() >> 5;
    const std::uint64_t lo = next_u32() >> 6;
    return (static_cast<double>(hi * 67108864ull + lo) + 0.5) / 9007199254740992.0;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  //! Index in [0, n).
  std::size_t index(std::size_t n)
  {
    auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  //! Standard normal via Box-Muller.
  double normal()
  {
    if (has_spare_normal_) {
      has_spare_normal_ = false;
      return spare_normal_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_normal_ = r * std::sin(angle);
    has_spare_normal_ = true;
    return r * std::cos(angle);
  }

  //! Student t with `dof` integer degrees of freedom, unscaled.
  double student_t(int dof)
  {
    const double num = normal();
    double chisq = 0.0;
    for (int i = 0; i < dof; ++i) {
      const double g = normal();
      chisq += g * g;
    }
    return num / std::sqrt(chisq / dof);
  }

  //! Rademacher sign, +1 or -1 with equal probability.
  double sign() { return (next_u32() & 1u) ? 1.0 : -1.0; }

private:
  Philox4x32::Key key_;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
  Philox4x32::Counter block_{};
  int buffered_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_normal_ = false;
};

} // namespace mkqr
