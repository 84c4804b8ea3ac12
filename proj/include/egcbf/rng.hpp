#pragma once

// Deterministic splitmix64 stream. Episode sampling, parameter init and the
// property suites all draw from this so that results are reproducible
// byte-for-byte across platforms (std:: distributions are not).

#include <cmath>
#include <cstdint>

#include "egcbf/types.hpp"

namespace egcbf {

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
  }

  /// Standard normal via Box-Muller; consumes two draws per call.
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  Vec3 uniform_vec3(double lo, double hi) {
    const double x = uniform(lo, hi), y = uniform(lo, hi), z = uniform(lo, hi);
    return Vec3(x, y, z);
  }

  Vec3 normal_vec3(double scale = 1.0) {
    const double x = normal(), y = normal(), z = normal();
    return scale * Vec3(x, y, z);
  }

  /// Derive an independent stream.
  Rng split() { return Rng(next_u64() ^ 0xd1342543de82ef95ULL); }

  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
};

}  // namespace egcbf
