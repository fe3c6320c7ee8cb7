#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfmm/core.hpp"

namespace dfmm {

// Unit-scale surface mesh: vertices inside the ball of radius 1/2 after
// load-time normalization (centered on the bounding box, scaled uniformly).
struct TriangleMesh {
  std::vector<Point3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  double area() const;
};

TriangleMesh load_obj(const std::string& path);

struct PointCloud {
  std::vector<Point3> points;
  std::vector<cplx> densities;
  double K = 0.0;

  std::size_t size() const { return points.size(); }
};

// Scale the mesh by K, then draw round(area * ppw^2) points, triangles
// weighted by area, uniform barycentric within each. Densities are real
// standard normal draws.
PointCloud sample_surface(const TriangleMesh& mesh, double K, double points_per_wavelength,
                          std::uint64_t seed);

// Sphere of radius K/2 sampled uniformly via normalized Gaussian triples.
PointCloud analytic_sphere(double K, double points_per_wavelength, std::uint64_t seed);

// Binary dump: u64 N, then N*3 f64 coordinates, then N*2 f64 densities,
// all little-endian.
void dump_cloud(const PointCloud& cloud, const std::string& path);
PointCloud load_cloud(const std::string& path, double K);

}  // namespace dfmm
