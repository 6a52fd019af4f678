#pragma once

// Counter-based random streams (Philox4x32-10). A stream is identified by
// (seed, stream id); the n-th draw depends only on those and n, so results do
// not depend on evaluation order or on how work is split across particles.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace cws {

class Rng {
 public:
  static constexpr const char* kAlgorithm = "philox4x32-10";

  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  // Independent child stream; the parent's position is irrelevant.
  Rng fork(std::uint64_t sub) const { return Rng(seed_, mix(stream_ ^ mix(sub + 0x9E3779B97F4A7C15ULL))); }

  // Stream addressed by a tuple such as (epoch, batch, particle).
  Rng fork(std::initializer_list<std::uint64_t> path) const {
    Rng r = *this;
    for (auto p : path) r = r.fork(p);
    return r;
  }

  std::uint32_t next_u32() {
    if (buffered_ == 0) refill();
    return block_[4 - buffered_--];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Uniform in the open interval (0, 1), 53 bits of resolution.
  double uniform() {
    const std::uint64_t bits = next_u64() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double gumbel() { return -std::log(-std::log(uniform())); }

  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  void refill() {
    block_ = philox({static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
                     static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
                    {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
    buffered_ = 4;
    ++counter_;
  }

 public:
  using Block = std::array<std::uint32_t, 4>;
  static Block philox(Block ctr, std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{0xD2511F53} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57} * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
      key[0] += 0x9E3779B9;
      key[1] += 0xBB67AE85;
    }
    return ctr;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int buffered_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace cws
