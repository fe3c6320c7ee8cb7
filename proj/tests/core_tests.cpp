#include "doctest.h"

#include "dfmm/core.hpp"
#include "dfmm/rng.hpp"

using namespace dfmm;

TEST_SUITE("core") {

TEST_CASE("kernel at integer and half-integer distances") {
  // r = 1: full phase turn, G = 1/r
  cplx g = kernel({0, 0, 0}, {1, 0, 0});
  CHECK(g.real() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(g.imag() == doctest::Approx(0.0).scale(1).epsilon(1e-12));

  // r = 1/2: half turn
  g = kernel({0, 0, 0}, {0.5, 0, 0});
  CHECK(g.real() == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(g.imag() == doctest::Approx(0.0).scale(1).epsilon(1e-12));

  // r = 2: two turns, magnitude 1/2
  g = kernel({0, 0, 0}, {0, 0, 2});
  CHECK(g.real() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(g.imag() == doctest::Approx(0.0).scale(1).epsilon(1e-12));
}

TEST_CASE("kernel magnitude and symmetry on random pairs") {
  CounterRng rng(3, "test/kernel");
  for (int i = 0; i < 200; ++i) {
    Point3 x = rng.in_ball(5.0), y = rng.in_ball(5.0);
    if (norm(x - y) < 1e-6) continue;
    cplx g = kernel(x, y);
    CHECK(std::abs(g) * norm(x - y) == doctest::Approx(1.0).epsilon(1e-13));
    cplx h = kernel(y, x);
    CHECK(g.real() == h.real());
    CHECK(g.imag() == h.imag());
  }
}

TEST_CASE("kernel rejects coincident points") {
  CHECK_THROWS_AS(kernel({1, 2, 3}, {1, 2, 3}), NumericalError);
}

TEST_CASE("problem config ties K to 4^L") {
  ProblemConfig c = ProblemConfig::from_K(4.0, 1e-4, 7);
  CHECK(c.L == 1);
  CHECK(c.unit_level() == 2);
  CHECK(c.partition_level() == 1);
  CHECK(c.width(0) == 4.0);
  CHECK(c.width(2) == 1.0);
  CHECK(c.width(3) == 0.5);

  c = ProblemConfig::from_K(16.0, 1e-6, 7);
  CHECK(c.L == 2);
  CHECK(c.unit_level() == 4);
  CHECK(c.width(2) == 4.0);

  CHECK_THROWS_AS(ProblemConfig::from_K(8.0, 1e-4, 7), ConfigError);
  CHECK_THROWS_AS(ProblemConfig::from_K(4.0, 2.0, 7), ConfigError);
  CHECK_THROWS_AS(ProblemConfig::from_K(4.0, 1e-4, 7, 0), ConfigError);
}

}  // TEST_SUITE
