#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dfmm {

using cplx = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

// Errors carry the CLI exit code for their category.
struct Error : std::runtime_error {
  int exit_code;
  Error(int code, const std::string& msg) : std::runtime_error(msg), exit_code(code) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(2, msg) {}
};
struct NumericalError : Error {
  explicit NumericalError(const std::string& msg) : Error(3, msg) {}
};
struct TransportError : Error {
  explicit TransportError(const std::string& msg) : Error(4, msg) {}
};

#define DFMM_REQUIRE(cond, msg) \
  do { \
    if (!(cond)) throw ::dfmm::ConfigError(msg); \
  } while (0)

struct Point3 {
  double x = 0, y = 0, z = 0;

  double& operator[](int i) { return (&x)[i]; }
  double operator[](int i) const { return (&x)[i]; }

  Point3 operator+(const Point3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Point3 operator-(const Point3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Point3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Point3& operator+=(const Point3& o) {
    x += o.x; y += o.y; z += o.z;
    return *this;
  }
};

inline double dot(const Point3& a, const Point3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm2(const Point3& a) { return dot(a, a); }
inline double norm(const Point3& a) { return std::sqrt(norm2(a)); }
inline Point3 cross(const Point3& a, const Point3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

// Unit-wavelength Helmholtz kernel. Lengths are measured in wavelengths,
// so the phase advances by 2*pi per unit distance and |G| = 1/r.
inline cplx kernel(const Point3& x, const Point3& y) {
  const double r = norm(x - y);
  if (r == 0.0) throw NumericalError("kernel evaluated at coincident points");
  const double ph = kTwoPi * r;
  return cplx(std::cos(ph) / r, std::sin(ph) / r);
}

// Global problem description. The domain is the cube [-K/2, K/2]^3 with
// K = 4^L; boxes of width >= 1 are treated directionally, narrower ones
// with non-directional expansions. Level L of the octree (width sqrt(K))
// is where ownership is assigned when running with several workers.
struct ProblemConfig {
  int L = 1;
  double K = 4.0;
  double epsilon = 1e-4;
  int leaf_capacity = 64;
  std::uint64_t seed = 0;

  static ProblemConfig from_K(double K, double epsilon, std::uint64_t seed,
                              int leaf_capacity = 64) {
    ProblemConfig c;
    double l = std::log2(K) / 2.0;
    int li = static_cast<int>(std::lround(l));
    DFMM_REQUIRE(li >= 1 && std::abs(K - std::ldexp(1.0, 2 * li)) < 1e-9,
                 "K must be 4^L for a positive integer L");
    c.L = li;
    c.K = std::ldexp(1.0, 2 * li);
    c.epsilon = epsilon;
    c.seed = seed;
    c.leaf_capacity = leaf_capacity;
    c.validate();
    return c;
  }

  void validate() const {
    DFMM_REQUIRE(L >= 1, "L must be >= 1");
    DFMM_REQUIRE(std::abs(K - std::ldexp(1.0, 2 * L)) < 1e-9, "K must equal 4^L");
    DFMM_REQUIRE(epsilon > 0.0 && epsilon < 1.0, "epsilon must lie in (0,1)");
    DFMM_REQUIRE(leaf_capacity >= 1, "leaf_capacity must be positive");
  }

  int partition_level() const { return L; }
  int unit_level() const { return 2 * L; }   // width-1 boxes
  double width(int level) const { return std::ldexp(K, -level); }
};

}  // namespace dfmm
