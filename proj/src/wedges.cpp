#include "dfmm/wedges.hpp"

#include <cmath>

namespace dfmm {

namespace {

// tangent axes per face axis: x -> (y,z), y -> (z,x), z -> (x,y)
inline void tangent_axes(int axis, int& t1, int& t2) {
  t1 = (axis + 1) % 3;
  t2 = (axis + 2) % 3;
}

// cell index of tangent coordinate t in [-1,1]; exact boundaries take the
// smaller cell
inline int cell_of(double t, int w) {
  double s = (t + 1.0) * 0.5 * w;
  double fl = std::floor(s);
  int c = static_cast<int>(fl);
  if (s == fl && c > 0) --c;
  if (c >= w) c = w - 1;
  if (c < 0) c = 0;
  return c;
}

}  // namespace

DirIndex assign_direction(int w, const Point3& offset) {
  if (offset.x == 0.0 && offset.y == 0.0 && offset.z == 0.0)
    throw NumericalError("assign_direction: zero offset");
  int axis = 0;
  double best = std::abs(offset.x);
  for (int a = 1; a < 3; ++a) {
    double m = std::abs(offset[a]);
    if (m > best) {
      best = m;
      axis = a;
    }
  }
  // smallest face id among ties: axes are scanned in order and only a
  // strictly larger component replaces, and +side precedes -side
  std::uint8_t face = static_cast<std::uint8_t>(2 * axis + (offset[axis] < 0.0 ? 1 : 0));
  int t1, t2;
  tangent_axes(axis, t1, t2);
  double inv = 1.0 / std::abs(offset[axis]);
  DirIndex d;
  d.width_level = static_cast<std::int8_t>(std::lround(std::log2(double(w))));
  d.face = face;
  d.u = static_cast<std::uint16_t>(cell_of(offset[t1] * inv, w));
  d.v = static_cast<std::uint16_t>(cell_of(offset[t2] * inv, w));
  return d;
}

DirIndex parent_direction(const DirIndex& parent_dir) {
  DirIndex d = parent_dir;
  d.width_level = static_cast<std::int8_t>(parent_dir.width_level - 1);
  d.u = static_cast<std::uint16_t>(parent_dir.u / 2);
  d.v = static_cast<std::uint16_t>(parent_dir.v / 2);
  return d;
}

CellBounds cell_bounds(const DirIndex& d) {
  int w = 1 << d.width_level;
  double cell = 2.0 / w;
  CellBounds b;
  b.tu0 = -1.0 + d.u * cell;
  b.tu1 = b.tu0 + cell;
  b.tv0 = -1.0 + d.v * cell;
  b.tv1 = b.tv0 + cell;
  return b;
}

namespace {

Point3 from_face_tangent(std::uint8_t face, double tu, double tv) {
  int axis = face / 2;
  double sign = (face % 2 == 0) ? 1.0 : -1.0;
  int t1, t2;
  tangent_axes(axis, t1, t2);
  Point3 p;
  p[axis] = sign;
  p[t1] = tu;
  p[t2] = tv;
  return p * (1.0 / norm(p));
}

}  // namespace

Point3 direction_center(const DirIndex& d) {
  CellBounds b = cell_bounds(d);
  return from_face_tangent(d.face, 0.5 * (b.tu0 + b.tu1), 0.5 * (b.tv0 + b.tv1));
}

Point3 sample_wedge_direction(const DirIndex& d, double overlap, CounterRng& rng) {
  CellBounds b = cell_bounds(d);
  int w = 1 << d.width_level;
  double m = overlap * 2.0 / w;
  double tu = rng.uniform(b.tu0 - m, b.tu1 + m);
  double tv = rng.uniform(b.tv0 - m, b.tv1 + m);
  return from_face_tangent(d.face, tu, tv);
}

}  // namespace dfmm
