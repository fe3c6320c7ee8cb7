#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dfmm/geometry.hpp"
#include "test_support.hpp"

using namespace dfmm;

TEST_SUITE("geometry") {

TEST_CASE("analytic sphere point count follows the area formula") {
  // 4 pi (K/2)^2 ppw^2 = 4 pi at K=4, ppw=1/2 -> 13 points
  PointCloud c = analytic_sphere(4.0, 0.5, 11);
  CHECK(c.size() == 13);

  c = analytic_sphere(4.0, 10.0, 11);
  CHECK(c.size() == std::llround(4.0 * kPi * 4.0 * 100.0));
}

TEST_CASE("analytic sphere points sit on the sphere") {
  PointCloud c = analytic_sphere(4.0, 2.0, 3);
  for (const auto& p : c.points) CHECK(norm(p) == doctest::Approx(2.0).epsilon(1e-12));
  for (const auto& f : c.densities) CHECK(f.imag() == 0.0);
  CHECK(c.K == 4.0);
}

TEST_CASE("sphere sampling is deterministic per seed") {
  PointCloud a = analytic_sphere(4.0, 2.0, 5), b = analytic_sphere(4.0, 2.0, 5);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.points[i].x == b.points[i].x);
    CHECK(a.densities[i] == b.densities[i]);
  }
  PointCloud d = analytic_sphere(4.0, 2.0, 6);
  CHECK(d.size() == a.size());
  CHECK(d.points[0].x != a.points[0].x);
}

TEST_CASE("obj loader normalizes the octahedron into the half-ball") {
  TriangleMesh m = load_obj(test::data_path("octahedron.obj"));
  REQUIRE(m.vertices.size() == 6);
  REQUIRE(m.triangles.size() == 8);
  double rmax = 0;
  for (const auto& v : m.vertices) rmax = std::max(rmax, norm(v));
  CHECK(rmax == doctest::Approx(0.5).epsilon(1e-12));
  // octahedron with axis vertices at radius 1/2: area = sqrt(3)/4 * 8 * (1/2 * sqrt(2))^2
  CHECK(m.area() == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("surface sampling draws round(area * ppw^2) points on the scaled mesh") {
  TriangleMesh m = load_obj(test::data_path("octahedron.obj"));
  PointCloud c = sample_surface(m, 4.0, 2.0, 17);
  CHECK(c.size() == std::llround(16.0 * m.area() * 4.0));
  for (const auto& p : c.points) CHECK(norm(p) <= 2.0 + 1e-9);

  PointCloud c2 = sample_surface(m, 4.0, 2.0, 17);
  REQUIRE(c2.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c.points[i].z == c2.points[i].z);
}

TEST_CASE("single triangle sampling count") {
  TriangleMesh m;
  m.vertices = {{0, 0, 0}, {0.3, 0, 0}, {0, 0.4, 0}};
  m.triangles = {{0, 1, 2}};
  const double a = m.area();
  CHECK(a == doctest::Approx(0.06).epsilon(1e-12));
  PointCloud c = sample_surface(m, 4.0, 5.0, 1);
  CHECK(c.size() == std::llround(16.0 * a * 25.0));
}

TEST_CASE("cloud binary dump round-trips bit exactly") {
  PointCloud c = analytic_sphere(4.0, 1.0, 9);
  const std::string path = test::artifact_dir() + "/cloud_roundtrip.bin";
  dump_cloud(c, path);
  PointCloud r = load_cloud(path, 4.0);
  REQUIRE(r.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(r.points[i].x == c.points[i].x);
    CHECK(r.points[i].y == c.points[i].y);
    CHECK(r.points[i].z == c.points[i].z);
    CHECK(r.densities[i] == c.densities[i]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("loader errors") {
  CHECK_THROWS_AS(load_obj("no_such_file.obj"), Error);
}

}  // TEST_SUITE
