#pragma once

#include <cmath>
#include <cstdint>

namespace ssdid {

// Counter-based random stream. Every draw is a pure function of
// (seed, stream, counter), so replicates and simulation units can be generated
// in any order or on any thread with identical results.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : state_(mix(mix(0x9e3779b97f4a7c15ull ^ seed) ^ mix(stream + 0x2545f4914f6cdd1dull))) {}

  // Derive a child stream, e.g. one per replicate or per unit.
  CounterRng fork(std::uint64_t substream) const {
    return CounterRng(state_ ^ mix(substream + 0x6a09e667f3bcc909ull), substream);
  }

  std::uint64_t next_u64() {
    counter_ += 1;
    return mix(state_ + counter_ * 0x9e3779b97f4a7c15ull);
  }

  // Uniform on the open interval (0, 1).
  double next_u01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53;
  }

  double next_exponential() { return -std::log(next_u01()); }

  // Box-Muller; one fresh pair per call keeps draws independent of call parity.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_u01();
    double u2 = next_u01();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 6.283185307179586476925286766559 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  std::uint64_t next_below(std::uint64_t n) {
    // Modulo bias is irrelevant for the small n used here.
    return next_u64() % n;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace ssdid
