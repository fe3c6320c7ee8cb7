#include "dfmm/geometry.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "dfmm/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace dfmm {

namespace {

double tri_area(const Point3& a, const Point3& b, const Point3& c) {
  return 0.5 * norm(cross(b - a, c - a));
}

}  // namespace

double TriangleMesh::area() const {
  double s = 0.0;
  for (const auto& t : triangles)
    s += tri_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
  return s;
}

TriangleMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open OBJ file: " + path);

  TriangleMesh mesh;
  std::string line;
  auto vertex_id = [&](const std::string& tok) -> std::uint32_t {
    // "idx", "idx/t", "idx/t/n", "idx//n"; negative = relative to the end
    long idx = std::strtol(tok.c_str(), nullptr, 10);
    long n = static_cast<long>(mesh.vertices.size());
    if (idx < 0) idx = n + 1 + idx;
    if (idx < 1 || idx > n) throw ConfigError("OBJ vertex index out of range in " + path);
    return static_cast<std::uint32_t>(idx - 1);
  };

  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Point3 p;
      if (!(ls >> p.x >> p.y >> p.z)) throw ConfigError("malformed OBJ vertex in " + path);
      mesh.vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<std::uint32_t> ids;
      std::string tok;
      while (ls >> tok) ids.push_back(vertex_id(tok));
      if (ids.size() < 3) throw ConfigError("OBJ face with fewer than 3 vertices in " + path);
      for (std::size_t i = 1; i + 1 < ids.size(); ++i)
        mesh.triangles.push_back({ids[0], ids[i], ids[i + 1]});
    }
    // vn/vt/usemtl/comments are ignored
  }
  if (mesh.vertices.empty() || mesh.triangles.empty())
    throw ConfigError("OBJ file has no usable geometry: " + path);

  // drop degenerate triangles, then normalize into the ball of radius 1/2
  std::erase_if(mesh.triangles, [&](const std::array<std::uint32_t, 3>& t) {
    return tri_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]) == 0.0;
  });
  if (mesh.triangles.empty()) throw ConfigError("OBJ mesh is fully degenerate: " + path);

  Point3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (const auto& v : mesh.vertices)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], v[a]);
      hi[a] = std::max(hi[a], v[a]);
    }
  Point3 center = (lo + hi) * 0.5;
  double rmax = 0.0;
  for (const auto& v : mesh.vertices) rmax = std::max(rmax, norm(v - center));
  if (rmax == 0.0) throw ConfigError("OBJ mesh collapses to a point: " + path);
  double scale = 0.5 / rmax;
  for (auto& v : mesh.vertices) v = (v - center) * scale;
  return mesh;
}

PointCloud sample_surface(const TriangleMesh& mesh, double K, double points_per_wavelength,
                          std::uint64_t seed) {
  DFMM_REQUIRE(points_per_wavelength > 0.0, "points_per_wavelength must be positive");
  if (mesh.vertices.empty() || mesh.triangles.empty()) throw ConfigError("empty mesh");

  std::vector<double> cum(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    total += tri_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
    cum[i] = total;
  }
  if (total <= 0.0) throw ConfigError("mesh has zero area");

  double scaled_area = K * K * total;
  auto n = static_cast<std::size_t>(
      std::llround(scaled_area * points_per_wavelength * points_per_wavelength));

  PointCloud cloud;
  cloud.K = K;
  cloud.points.reserve(n);
  cloud.densities.reserve(n);
  CounterRng pts(seed, "geometry/surface-points");
  CounterRng dens(seed, "geometry/densities");
  for (std::size_t i = 0; i < n; ++i) {
    double pick = pts.uniform() * total;
    auto it = std::upper_bound(cum.begin(), cum.end(), pick);
    std::size_t ti = std::min<std::size_t>(it - cum.begin(), cum.size() - 1);
    const auto& t = mesh.triangles[ti];
    double b1 = pts.uniform(), b2 = pts.uniform();
    if (b1 + b2 > 1.0) {
      b1 = 1.0 - b1;
      b2 = 1.0 - b2;
    }
    const Point3& a = mesh.vertices[t[0]];
    Point3 p = a + (mesh.vertices[t[1]] - a) * b1 + (mesh.vertices[t[2]] - a) * b2;
    cloud.points.push_back(p * K);
    cloud.densities.emplace_back(dens.normal(), 0.0);
  }
  return cloud;
}

PointCloud analytic_sphere(double K, double points_per_wavelength, std::uint64_t seed) {
  DFMM_REQUIRE(points_per_wavelength > 0.0, "points_per_wavelength must be positive");
  double radius = 0.5 * K;
  double area = 4.0 * kPi * radius * radius;
  auto n = static_cast<std::size_t>(
      std::llround(area * points_per_wavelength * points_per_wavelength));

  PointCloud cloud;
  cloud.K = K;
  cloud.points.reserve(n);
  cloud.densities.reserve(n);
  CounterRng pts(seed, "geometry/sphere-points");
  CounterRng dens(seed, "geometry/densities");
  for (std::size_t i = 0; i < n; ++i) {
    Point3 g;
    double n2 = 0.0;
    do {
      g = Point3{pts.normal(), pts.normal(), pts.normal()};
      n2 = norm2(g);
    } while (n2 < 1e-24);
    cloud.points.push_back(g * (radius / std::sqrt(n2)));
    cloud.densities.emplace_back(dens.normal(), 0.0);
  }
  return cloud;
}

void dump_cloud(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  std::uint64_t n = cloud.size();
  out.write(reinterpret_cast<const char*>(&n), 8);
  for (const auto& p : cloud.points) out.write(reinterpret_cast<const char*>(&p.x), 24);
  for (const auto& d : cloud.densities) {
    double re = d.real(), im = d.imag();
    out.write(reinterpret_cast<const char*>(&re), 8);
    out.write(reinterpret_cast<const char*>(&im), 8);
  }
  if (!out) throw ConfigError("write failed: " + path);
}

PointCloud load_cloud(const std::string& path, double K) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open: " + path);
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), 8);
  if (!in) throw ConfigError("truncated point cloud file: " + path);
  PointCloud cloud;
  cloud.K = K;
  cloud.points.resize(n);
  cloud.densities.resize(n);
  for (auto& p : cloud.points) in.read(reinterpret_cast<char*>(&p.x), 24);
  for (auto& d : cloud.densities) {
    double reim[2];
    in.read(reinterpret_cast<char*>(reim), 16);
    d = cplx(reim[0], reim[1]);
  }
  if (!in) throw ConfigError("truncated point cloud file: " + path);
  return cloud;
}

}  // namespace dfmm
