#pragma once

#include <cstdint>
#include <tuple>

#include "dfmm/core.hpp"
#include "dfmm/rng.hpp"

namespace dfmm {

// Directional wedge id for boxes of width w = 2^width_level. The far field
// of a width-w box is split into 6 w^2 angular cells by projecting directions
// onto the dominant face of the unit cube (face order +x,-x,+y,-y,+z,-z) and
// tiling that face with a w x w grid. Cells nest across widths by halving,
// which is what makes the parent/child direction mapping exact.
struct DirIndex {
  std::int8_t width_level = 0;  // w = 2^width_level, >= 0
  std::uint8_t face = 0;        // 0..5
  std::uint16_t u = 0, v = 0;   // cell in [0, w)^2

  friend bool operator==(const DirIndex& a, const DirIndex& b) {
    return a.width_level == b.width_level && a.face == b.face && a.u == b.u && a.v == b.v;
  }
  friend bool operator<(const DirIndex& a, const DirIndex& b) {
    return std::tie(a.width_level, a.face, a.u, a.v) <
           std::tie(b.width_level, b.face, b.u, b.v);
  }
};

// packed form used in map keys and on the wire; width level is contextual
inline std::uint32_t pack_dir(const DirIndex& d) {
  return (std::uint32_t(d.face) << 26) | (std::uint32_t(d.u) << 13) | std::uint32_t(d.v);
}

inline int dir_count(int w) { return 6 * w * w; }

// Wedge containing the given far-field offset. Ties on face and cell
// boundaries break toward the lexicographically smaller (face, u, v).
DirIndex assign_direction(int w, const Point3& offset);

// Direction one width-halving down that geometrically contains the given
// parent-width wedge: cell (u,v) -> (u/2, v/2) on the same face.
DirIndex parent_direction(const DirIndex& parent_dir);

// Unit vector through the cell center.
Point3 direction_center(const DirIndex& d);

// Tangent-plane cell bounds [tu0,tu1]x[tv0,tv1] in [-1,1]^2 on the face.
struct CellBounds {
  double tu0, tu1, tv0, tv1;
};
CellBounds cell_bounds(const DirIndex& d);

// Random unit vector inside the wedge extended by `overlap` cells on every
// side (the overlapped wedge used when sampling compression regions).
Point3 sample_wedge_direction(const DirIndex& d, double overlap, CounterRng& rng);

}  // namespace dfmm
