#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dfmm/core.hpp"
#include "dfmm/wedges.hpp"

namespace dfmm {

class Octree;

// Tunables of the compression step. The geometric constants are tied to the
// validity regions derived from the interaction-list geometry; see the
// sampling code for what each one covers.
struct PrecomputeParams {
  int n_min = 400;               // minimum sample count per side
  int oversample = 4;            // samples per expected rank unit
  int rank_cap = 500;
  double residual_factor = 12.0;  // holdout residual allowance before refining
  double lf_eq_factor = 0.99;    // equivalent surface, in box half-widths
  double lf_chk_factor = 2.95;   // check surface, in box half-widths

  // One step denser than usual KI-FMM practice: the width-1 transfers read
  // child box surfaces from nearly touching distances, which the coarser
  // lattice cannot feed accurately.
  static int m_per_edge(double epsilon) {
    if (epsilon > 1e-5) return 6;
    if (epsilon > 1e-7) return 8;
    return 10;
  }
  static int rank_guess(double epsilon);
};

// One compressed translation unit. Directional entries hold the skeleton of
// the ball-to-wedge interaction at a given (width, direction): equiv are the
// selected source-side points b_q, check the selected wedge-side points a_p,
// both as offsets from the box center, and D the fitted translation matrix
// (check potentials -> equivalent charges). Low-frequency entries hold the
// cube surfaces (equiv = inner surface, check = outer surface) and the
// regularized inverse of the outer-from-inner kernel matrix.
// The same data serves both orientations: outgoing as stored, incoming with
// the roles of equiv and check reversed and D transposed.
struct SkeletonData {
  double width = 0.0;
  bool directional = false;
  DirIndex dir;
  Eigen::Matrix3Xd equiv;
  Eigen::Matrix3Xd check;
  Eigen::MatrixXcd D;

  int rank() const { return static_cast<int>(D.rows()); }
};

// every index offset that can appear in a width-w interaction list, keyed by
// the wedge containing it, nearest first
std::map<DirIndex, std::vector<std::array<int, 3>>> interaction_offsets(int w);

SkeletonData build_directional_skeleton(int width, const DirIndex& dir, double epsilon,
                                        std::uint64_t seed, bool has_parent_width,
                                        const PrecomputeParams& params = {});
SkeletonData build_lowfreq_surfaces(double width, double epsilon,
                                    const PrecomputeParams& params = {});

// surface lattice helper: 6 (m-1)^2 + 2 points on the cube of half-side h
Eigen::Matrix3Xd cube_surface(int m, double h);

struct CertificateResult {
  bool passed = true;
  double max_rel_err = 0.0;  // largest raw route error
  double max_margin = 0.0;   // route error over its budget; above 1 fails
  std::string worst;         // human-readable key of the thinnest-margin entry
  std::vector<std::pair<std::string, double>> entries;
};

struct PrecomputeCache {
  std::uint32_t version = 1;
  double epsilon = 0.0;
  double K_max = 0.0;
  std::uint64_t seed = 0;
  int lf_depth = 0;
  PrecomputeParams params;

  std::map<DirIndex, SkeletonData> hf;  // all widths 1..sqrt(K), all directions
  std::map<int, SkeletonData> lf;       // depth j >= 1, width 2^-j

  static PrecomputeCache build(double K, double epsilon, std::uint64_t seed,
                               int lf_depth = 8, const PrecomputeParams& params = {});

  const SkeletonData& hf_entry(const DirIndex& d) const;
  const SkeletonData& lf_entry(int depth) const;
  bool covers(double K, int deepest_lf_depth) const;

  // held-out random-charge certificates for every stored entry; each route is
  // graded against tolerance_factor * epsilon per fitted transfer it composes
  CertificateResult verify(double tolerance_factor = 100.0) const;

  std::size_t byte_size() const;
};

void save_cache(const PrecomputeCache& cache, const std::string& path);
PrecomputeCache load_cache(const std::string& path);

// child center offset from the parent center for an octant id (x bit 2,
// y bit 1, z bit 0, matching BoxKey::child)
inline Point3 child_offset(int octant, double parent_width) {
  const double q = parent_width / 4.0;
  return {((octant >> 2) & 1) ? q : -q, ((octant >> 1) & 1) ? q : -q,
          (octant & 1) ? q : -q};
}

// Kernel-evaluation matrices reused across boxes of a run, built once from
// the tree before any worker starts. Every entry is exactly the matrix the
// engine would otherwise evaluate per box, so table hits change nothing but
// speed. lf_m2l is keyed by (level, index offset); the transfer tables hold
// the parent-check-from-child-equivalent blocks keyed by (parent level,
// octant) for the cube surfaces and by (parent width level, direction,
// octant) for the directional skeletons, and serve the downward pass
// transposed. Building stops at the byte budget; the engine computes
// missing blocks on the fly.
struct RunTables {
  std::unordered_map<std::uint64_t, Eigen::MatrixXcd> lf_m2l;
  std::unordered_map<std::uint64_t, Eigen::MatrixXcd> lf_transfer;
  std::unordered_map<std::uint64_t, Eigen::MatrixXcd> hf_transfer;

  static std::uint64_t lf_m2l_key(int level, int dx, int dy, int dz) {
    return (std::uint64_t(level) << 12) | (std::uint64_t(dx + 3) << 8) |
           (std::uint64_t(dy + 3) << 4) | std::uint64_t(dz + 3);
  }
  static std::uint64_t oct_key(int level, int octant) {
    return (std::uint64_t(level) << 3) | std::uint64_t(octant);
  }
  static std::uint64_t hf_key(int width_level, std::uint32_t packed_dir, int octant) {
    return (std::uint64_t(width_level) << 40) | (std::uint64_t(packed_dir) << 8) |
           std::uint64_t(octant);
  }

  std::size_t byte_size() const;
};

RunTables build_run_tables(const Octree& tree, const PrecomputeCache& cache,
                           std::size_t byte_budget = std::size_t(512) << 20);

}  // namespace dfmm
