#include "doctest.h"

#include <cmath>

#include "dfmm/rng.hpp"

using namespace dfmm;

TEST_SUITE("rng") {

TEST_CASE("streams replay exactly under the same name and tags") {
  CounterRng a(42, "unit/stream", 1, 2), b(42, "unit/stream", 1, 2);
  for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct names, tags or seeds give distinct streams") {
  CounterRng base(42, "unit/stream", 1);
  CHECK(base.next_u64() != CounterRng(42, "unit/stream", 2).next_u64());
  CHECK(CounterRng(42, "unit/a").next_u64() != CounterRng(42, "unit/b").next_u64());
  CHECK(CounterRng(42, "unit/a").next_u64() != CounterRng(43, "unit/a").next_u64());
}

TEST_CASE("uniform stays in range") {
  CounterRng rng(1, "unit/uniform");
  for (int i = 0; i < 1000; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 1000; ++i) {
    double u = rng.uniform(-3.0, 5.0);
    CHECK(u >= -3.0);
    CHECK(u < 5.0);
  }
}

TEST_CASE("next_below stays below") {
  CounterRng rng(1, "unit/below");
  for (int i = 0; i < 1000; ++i) CHECK(rng.next_below(7) < 7);
}

TEST_CASE("normal draws have the right first two moments") {
  CounterRng rng(9, "unit/normal");
  const int n = 4000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / n) < 0.08);
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("ball and sphere draws respect their radii") {
  CounterRng rng(5, "unit/geom");
  for (int i = 0; i < 200; ++i) CHECK(norm(rng.in_ball(2.5)) <= 2.5 + 1e-12);
  for (int i = 0; i < 200; ++i)
    CHECK(norm(rng.on_sphere(1.5)) == doctest::Approx(1.5).epsilon(1e-12));
}

}  // TEST_SUITE
