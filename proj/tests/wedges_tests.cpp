#include "doctest.h"

#include <cmath>

#include "dfmm/rng.hpp"
#include "dfmm/wedges.hpp"

using namespace dfmm;

namespace {
double angle_between(const Point3& a, const Point3& b) {
  double c = dot(a, b) / (norm(a) * norm(b));
  return std::acos(std::min(1.0, std::max(-1.0, c)));
}
}  // namespace

TEST_SUITE("wedges") {

TEST_CASE("width one has one wedge per face") {
  CHECK(dir_count(1) == 6);
  CHECK(dir_count(2) == 24);
  CHECK(dir_count(4) == 96);

  DirIndex d = assign_direction(1, {0, 0, 3});
  CHECK(d.face == 4);  // +z in face order +x,-x,+y,-y,+z,-z
  CHECK(d.u == 0);
  CHECK(d.v == 0);
  CHECK(assign_direction(1, {5, 0, 0}).face == 0);
  CHECK(assign_direction(1, {0, -2, 0}).face == 3);
  CHECK(assign_direction(1, {0, 0, -1}).face == 5);
}

TEST_CASE("zero offset is rejected") {
  CHECK_THROWS_AS(assign_direction(1, {0, 0, 0}), Error);
}

TEST_CASE("ties break toward the lexicographically smaller wedge") {
  // dominant-axis tie between +x and +y lands on the smaller face id
  DirIndex d = assign_direction(1, {1, 1, 0});
  CHECK(d.face == 0);
  d = assign_direction(1, {0, 1, 1});
  CHECK(d.face == 2);

  // cell-boundary tie inside one face: the midpoint of two adjacent cell
  // centers lies exactly on their shared boundary
  for (int face = 0; face < 6; ++face) {
    DirIndex a{1, std::uint8_t(face), 0, 0}, b{1, std::uint8_t(face), 1, 0};
    Point3 mid = direction_center(a) + direction_center(b);
    DirIndex got = assign_direction(2, mid);
    CHECK(got == a);

    DirIndex c{1, std::uint8_t(face), 0, 1};
    mid = direction_center(a) + direction_center(c);
    got = assign_direction(2, mid);
    CHECK(got == a);
  }
}

TEST_CASE("parent direction halves the cell") {
  for (std::uint8_t f = 0; f < 6; ++f) {
    DirIndex d{1, f, 1, 1};
    DirIndex p = parent_direction(d);
    CHECK(p.width_level == 0);
    CHECK(p.face == f);
    CHECK(p.u == 0);
    CHECK(p.v == 0);
  }
  DirIndex d{2, 3, 3, 2};
  DirIndex p = parent_direction(d);
  CHECK(p.width_level == 1);
  CHECK(p.u == 1);
  CHECK(p.v == 1);
}

TEST_CASE("assigned wedge center is within the angular bound") {
  // spanning angle O(1/w): the assigned cell center is never further than
  // (1 + overlap) / w from the direction itself
  CounterRng rng(21, "test/wedge-angle");
  for (int w : {1, 2, 4}) {
    double worst = 0;
    for (int i = 0; i < 100000; ++i) {
      Point3 dir = rng.on_sphere();
      DirIndex d = assign_direction(w, dir);
      worst = std::max(worst, angle_between(dir, direction_center(d)));
    }
    CHECK(worst <= 1.25 / w);
  }
}

TEST_CASE("every direction lands in exactly one wedge whose cell contains it") {
  CounterRng rng(22, "test/wedge-cover");
  for (int i = 0; i < 2000; ++i) {
    Point3 dir = rng.on_sphere();
    DirIndex d = assign_direction(2, dir);
    CHECK(d.face < 6);
    CHECK(d.u < 2);
    CHECK(d.v < 2);
    // assignment is a function: repeat call agrees
    CHECK(assign_direction(2, dir * 7.0) == d);
  }
}

TEST_CASE("sampled wedge directions map back to their own wedge") {
  CounterRng rng(23, "test/wedge-sample");
  for (std::uint8_t f = 0; f < 6; ++f)
    for (std::uint16_t u = 0; u < 2; ++u)
      for (std::uint16_t v = 0; v < 2; ++v) {
        DirIndex d{1, f, u, v};
        for (int i = 0; i < 200; ++i) {
          Point3 ray = sample_wedge_direction(d, 0.0, rng);
          CHECK(assign_direction(2, ray) == d);
        }
      }
}

TEST_CASE("children wedges stay inside the mapped parent wedge") {
  // every ray a fine wedge serves is handled by the coarse wedge it maps to
  CounterRng rng(24, "test/wedge-contain");
  for (std::uint8_t f = 0; f < 6; ++f)
    for (std::uint16_t u = 0; u < 2; ++u)
      for (std::uint16_t v = 0; v < 2; ++v) {
        DirIndex fine{1, f, u, v};
        DirIndex coarse = parent_direction(fine);
        for (int i = 0; i < 300; ++i)
          CHECK(assign_direction(1, sample_wedge_direction(fine, 0.0, rng)) == coarse);
      }
  for (std::uint8_t f = 0; f < 6; ++f)
    for (std::uint16_t u = 0; u < 4; ++u)
      for (std::uint16_t v = 0; v < 4; ++v) {
        DirIndex fine{2, f, u, v};
        DirIndex coarse = parent_direction(fine);
        for (int i = 0; i < 100; ++i)
          CHECK(assign_direction(2, sample_wedge_direction(fine, 0.0, rng)) == coarse);
      }
}

TEST_CASE("reciprocal offsets get reciprocal directions deterministically") {
  CounterRng rng(25, "test/wedge-recip");
  for (int i = 0; i < 500; ++i) {
    Point3 off = rng.on_sphere(rng.uniform(3.0, 20.0));
    DirIndex fwd = assign_direction(2, off);
    DirIndex bwd = assign_direction(2, off * -1.0);
    CHECK(assign_direction(2, off * -1.0) == bwd);
    CHECK_FALSE(fwd == bwd);
  }
}

}  // TEST_SUITE
