#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace dot {

/// Philox4x32-10 counter-based generator. Draws are addressed by
/// (seed, stream, counter), so substreams are reproducible independent of
/// thread schedule or call order.
struct Philox {
  static std::array<std::uint32_t, 4> block(std::uint64_t key,
                                            std::array<std::uint32_t, 4> ctr) {
    std::uint32_t k0 = static_cast<std::uint32_t>(key);
    std::uint32_t k1 = static_cast<std::uint32_t>(key >> 32);
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = 0xD2511F53ull * ctr[0];
      const std::uint64_t p1 = 0xCD9E8D57ull * ctr[2];
      const std::array<std::uint32_t, 4> next{
          static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ k0,
          static_cast<std::uint32_t>(p1),
          static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ k1,
          static_cast<std::uint32_t>(p0)};
      ctr = next;
      k0 += 0x9E3779B9u;
      k1 += 0xBB67AE85u;
    }
    return ctr;
  }
};

/// Sequential view over one Philox stream.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream)
      : key_(seed), stream_(stream) {}

  std::uint64_t next_u64() {
    if (have_spare_u64_) {
      have_spare_u64_ = false;
      return spare_u64_;
    }
    const std::array<std::uint32_t, 4> ctr{
        static_cast<std::uint32_t>(counter_),
        static_cast<std::uint32_t>(counter_ >> 32),
        static_cast<std::uint32_t>(stream_),
        static_cast<std::uint32_t>(stream_ >> 32)};
    ++counter_;
    const auto out = Philox::block(key_, ctr);
    spare_u64_ = (static_cast<std::uint64_t>(out[2]) << 32) | out[3];
    have_spare_u64_ = true;
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
  }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (deterministic draw count).
  double normal() {
    if (have_spare_normal_) {
      have_spare_normal_ = false;
      return spare_normal_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_normal_ = r * std::sin(a);
    have_spare_normal_ = true;
    return r * std::cos(a);
  }

  /// Poisson count; Knuth's method with chunking for large means.
  std::uint64_t poisson(double lambda) {
    std::uint64_t total = 0;
    while (lambda > 30.0) {
      total += poisson_small(30.0);
      lambda -= 30.0;
    }
    return total + poisson_small(lambda);
  }

 private:
  std::uint64_t poisson_small(double lambda) {
    if (lambda <= 0.0) return 0;
    const double limit = std::exp(-lambda);
    std::uint64_t k = 0;
    double prod = uniform();
    while (prod > limit) {
      ++k;
      prod *= uniform();
    }
    return k;
  }

  std::uint64_t key_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
  std::uint64_t spare_u64_ = 0;
  double spare_normal_ = 0.0;
  bool have_spare_u64_ = false;
  bool have_spare_normal_ = false;
};

}  // namespace dot
