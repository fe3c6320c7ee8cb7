#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <unordered_map>
#include <vector>

#include "dfmm/core.hpp"
#include "dfmm/geometry.hpp"
#include "dfmm/wedges.hpp"

namespace dfmm {

struct BoxKey {
  std::int8_t level = 0;
  std::array<std::uint32_t, 3> idx{0, 0, 0};

  friend bool operator==(const BoxKey& a, const BoxKey& b) {
    return a.level == b.level && a.idx == b.idx;
  }
  friend bool operator<(const BoxKey& a, const BoxKey& b) {
    if (a.level != b.level) return a.level < b.level;
    return a.idx < b.idx;
  }

  BoxKey parent() const {
    return {static_cast<std::int8_t>(level - 1), {idx[0] / 2, idx[1] / 2, idx[2] / 2}};
  }
  BoxKey child(int octant) const {
    return {static_cast<std::int8_t>(level + 1),
            {2 * idx[0] + ((octant >> 2) & 1), 2 * idx[1] + ((octant >> 1) & 1),
             2 * idx[2] + (octant & 1)}};
  }
  int octant_in_parent() const { return ((idx[0] & 1) << 2) | ((idx[1] & 1) << 1) | (idx[2] & 1); }

  // Z-curve key; valid for level <= 21
  std::uint64_t morton() const;
};

struct BoxKeyHash {
  std::size_t operator()(const BoxKey& k) const {
    std::uint64_t h = (std::uint64_t(std::uint8_t(k.level)) << 56) ^
                      (std::uint64_t(k.idx[0]) << 42) ^ (std::uint64_t(k.idx[1]) << 21) ^
                      std::uint64_t(k.idx[2]);
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    return static_cast<std::size_t>(h);
  }
};

// One directional interaction-list entry of a target box B: the member A,
// the wedge of B containing A (dir, which keys B's incoming data) and the
// wedge of A containing B (src_dir, which keys A's outgoing data).
struct HfListEntry {
  DirIndex dir;
  int src = -1;
  DirIndex src_dir;
};

struct OctreeNode {
  BoxKey key;
  int parent = -1;
  std::array<int, 8> child{-1, -1, -1, -1, -1, -1, -1, -1};
  std::uint32_t pt_begin = 0, pt_count = 0;  // range into Octree::perm
  bool leaf = false;                         // low-frequency leaf
};

// Hybrid octree over the non-empty boxes: non-adaptive while boxes are in
// the high-frequency regime (width >= 1, levels 0..2L), adaptive below.
// Near fields use the parabolic ball rule at high-frequency levels and
// 3x3x3 adjacency at low-frequency levels; interaction lists are inherited
// level by level (children of the parent's near field, classified).
class Octree {
 public:
  static Octree build(const PointCloud& cloud, const ProblemConfig& cfg);

  const ProblemConfig& config() const { return cfg_; }
  const std::vector<OctreeNode>& nodes() const { return nodes_; }
  const OctreeNode& node(int id) const { return nodes_[id]; }
  int node_id(const BoxKey& key) const;  // -1 if not materialized
  int max_level() const { return static_cast<int>(by_level_.size()) - 1; }
  const std::vector<int>& level_nodes(int level) const { return by_level_[level]; }
  const std::vector<std::uint32_t>& perm() const { return perm_; }

  double width(int level) const { return cfg_.width(level); }
  Point3 center(const BoxKey& key) const;
  bool is_high_frequency(int level) const { return level <= cfg_.unit_level(); }

  // Same-level non-empty boxes intersecting the closed ball of radius
  // 3 w^2 / 4 about the box center (high-frequency boxes only).
  std::vector<BoxKey> near_field(const BoxKey& box) const;

  const std::vector<int>& near_ids(int node) const { return near_[node]; }
  const std::vector<HfListEntry>& hf_list(int node) const { return hf_list_[node]; }
  const std::vector<int>& lf_list(int node) const { return lf_list_[node]; }
  const std::vector<int>& u_list(int node) const { return u_list_[node]; }
  const std::vector<DirIndex>& need_dirs(int node) const { return need_dirs_[node]; }

  // point ids of a leaf
  const std::uint32_t* leaf_points(int node) const { return perm_.data() + nodes_[node].pt_begin; }

  std::size_t max_members_per_direction() const { return max_members_per_direction_; }
  std::size_t total_hf_pairs() const { return total_hf_pairs_; }
  std::size_t total_lf_pairs() const { return total_lf_pairs_; }

  void dump_json_lines(std::ostream& os) const;

 private:
  void build_lists();

  ProblemConfig cfg_;
  std::vector<OctreeNode> nodes_;
  std::vector<std::uint32_t> perm_;
  std::vector<std::vector<int>> by_level_;
  std::unordered_map<BoxKey, int, BoxKeyHash> index_;

  std::vector<std::vector<int>> near_;
  std::vector<std::vector<HfListEntry>> hf_list_;
  std::vector<std::vector<int>> lf_list_;
  std::vector<std::vector<int>> u_list_;
  std::vector<std::vector<DirIndex>> need_dirs_;
  std::size_t max_members_per_direction_ = 0;
  std::size_t total_hf_pairs_ = 0;
  std::size_t total_lf_pairs_ = 0;
};

}  // namespace dfmm
