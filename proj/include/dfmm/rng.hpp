#pragma once

#include <cstdint>
#include <string_view>

#include "dfmm/core.hpp"

namespace dfmm {

// Counter-based generator: every consumer derives its own stream from the
// global seed plus a name and up to four integer tags, so draws do not
// depend on scheduling or on how much randomness other components used.
// Same binary, same seed, same stream name: bit-identical values.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::string_view name, std::uint64_t a = 0,
             std::uint64_t b = 0, std::uint64_t c = 0, std::uint64_t d = 0) {
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the stream name
    for (char ch : name) {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ull;
    }
    key_ = mix(mix(seed ^ 0x9e3779b97f4a7c15ull) ^ h);
    key_ = mix(key_ ^ mix(a ^ 0xd1b54a32d192ed03ull));
    key_ = mix(key_ ^ mix(b ^ 0x8cb92ba72f3d8dd7ull));
    key_ = mix(key_ ^ mix(c ^ 0xaef17502108ef2d9ull));
    key_ = mix(key_ ^ mix(d ^ 0x94d049bb133111ebull));
  }

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

  // uniform in [0,1): 53 mantissa bits
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; the pair is consumed deterministically
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = kTwoPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  std::uint32_t next_below(std::uint32_t n) {
    return static_cast<std::uint32_t>(next_u64() % n);
  }

  Point3 in_ball(double radius) {
    for (;;) {
      Point3 p{uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)};
      if (norm2(p) <= 1.0) return p * radius;
    }
  }

  Point3 on_sphere(double radius = 1.0) {
    for (;;) {
      Point3 p{uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)};
      double n2 = norm2(p);
      if (n2 > 1e-12 && n2 <= 1.0) return p * (radius / std::sqrt(n2));
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {  // splitmix64 finalizer
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace dfmm
