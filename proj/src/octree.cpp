#include "dfmm/octree.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace dfmm {

std::uint64_t BoxKey::morton() const {
  auto spread = [](std::uint64_t x) {
    x &= 0x1fffff;
    x = (x | x << 32) & 0x1f00000000ffffull;
    x = (x | x << 16) & 0x1f0000ff0000ffull;
    x = (x | x << 8) & 0x100f00f00f00f00full;
    x = (x | x << 4) & 0x10c30c30c30c30c3ull;
    x = (x | x << 2) & 0x1249249249249249ull;
    return x;
  };
  return (spread(idx[0]) << 2) | (spread(idx[1]) << 1) | spread(idx[2]);
}

int Octree::node_id(const BoxKey& key) const {
  auto it = index_.find(key);
  return it == index_.end() ? -1 : it->second;
}

Point3 Octree::center(const BoxKey& key) const {
  double w = width(key.level);
  double half = 0.5 * cfg_.K;
  return {-half + (key.idx[0] + 0.5) * w, -half + (key.idx[1] + 0.5) * w,
          -half + (key.idx[2] + 0.5) * w};
}

namespace {

// distance from the region of box A to the center of same-level box B,
// against the parabolic radius 3 w^2 / 4 (closed ball)
bool ball_near(const BoxKey& a, const BoxKey& b, double w) {
  double s = 0.0;
  for (int ax = 0; ax < 3; ++ax) {
    double di = std::abs(double(a.idx[ax]) - double(b.idx[ax]));
    double d = std::max(0.0, di - 0.5);
    s += d * d;
  }
  return s * w * w <= (0.75 * w * w) * (0.75 * w * w);
}

bool adjacent(const BoxKey& a, const BoxKey& b) {
  for (int ax = 0; ax < 3; ++ax) {
    long d = long(a.idx[ax]) - long(b.idx[ax]);
    if (d < -1 || d > 1) return false;
  }
  return true;
}

}  // namespace

Octree Octree::build(const PointCloud& cloud, const ProblemConfig& cfg) {
  cfg.validate();
  DFMM_REQUIRE(cloud.size() > 0, "point cloud is empty");
  DFMM_REQUIRE(std::abs(cloud.K - cfg.K) < 1e-9, "cloud K does not match config K");
  const double half = 0.5 * cfg.K * (1.0 + 1e-12);
  for (const auto& p : cloud.points)
    if (std::abs(p.x) > half || std::abs(p.y) > half || std::abs(p.z) > half)
      throw ConfigError("point outside the domain cube [-K/2, K/2]^3");

  Octree tree;
  tree.cfg_ = cfg;
  const std::size_t n = cloud.size();
  tree.perm_.resize(n);
  for (std::size_t i = 0; i < n; ++i) tree.perm_[i] = static_cast<std::uint32_t>(i);

  const int unit = cfg.unit_level();
  const int max_lvl = unit + 20;
  std::vector<std::uint32_t> scratch(n);

  // depth-first construction; only non-empty boxes are materialized
  auto make_node = [&](auto&& self, const BoxKey& key, int parent, std::uint32_t begin,
                       std::uint32_t end) -> int {
    int id = static_cast<int>(tree.nodes_.size());
    tree.nodes_.push_back({});
    tree.nodes_[id].key = key;
    tree.nodes_[id].parent = parent;
    tree.nodes_[id].pt_begin = begin;
    tree.nodes_[id].pt_count = end - begin;
    tree.index_.emplace(key, id);

    std::uint32_t count = end - begin;
    bool subdivide = key.level <= unit || (count > std::uint32_t(cfg.leaf_capacity) &&
                                           key.level < max_lvl);
    if (!subdivide) {
      tree.nodes_[id].leaf = true;
      return id;
    }

    Point3 c = tree.center(key);
    std::array<std::uint32_t, 8> cnt{};
    auto octant_of = [&](std::uint32_t pi) {
      const Point3& p = cloud.points[pi];
      return ((p.x >= c.x) << 2) | ((p.y >= c.y) << 1) | int(p.z >= c.z);
    };
    for (std::uint32_t i = begin; i < end; ++i) ++cnt[octant_of(tree.perm_[i])];
    std::array<std::uint32_t, 8> offset{};
    std::uint32_t acc = begin;
    for (int o = 0; o < 8; ++o) {
      offset[o] = acc;
      acc += cnt[o];
    }
    std::array<std::uint32_t, 8> cursor = offset;
    for (std::uint32_t i = begin; i < end; ++i) scratch[cursor[octant_of(tree.perm_[i])]++] = tree.perm_[i];
    std::copy(scratch.begin() + begin, scratch.begin() + end, tree.perm_.begin() + begin);

    for (int o = 0; o < 8; ++o) {
      if (cnt[o] == 0) continue;
      int child = self(self, key.child(o), id, offset[o], offset[o] + cnt[o]);
      tree.nodes_[id].child[o] = child;
    }
    return id;
  };
  make_node(make_node, BoxKey{0, {0, 0, 0}}, -1, 0, static_cast<std::uint32_t>(n));

  int deepest = 0;
  for (const auto& nd : tree.nodes_) deepest = std::max(deepest, int(nd.key.level));
  tree.by_level_.assign(deepest + 1, {});
  for (int id = 0; id < int(tree.nodes_.size()); ++id)
    tree.by_level_[tree.nodes_[id].key.level].push_back(id);
  for (auto& lvl : tree.by_level_)
    std::sort(lvl.begin(), lvl.end(),
              [&](int a, int b) { return tree.nodes_[a].key < tree.nodes_[b].key; });

  tree.build_lists();
  return tree;
}

void Octree::build_lists() {
  const int n_nodes = static_cast<int>(nodes_.size());
  const int unit = cfg_.unit_level();
  near_.assign(n_nodes, {});
  hf_list_.assign(n_nodes, {});
  lf_list_.assign(n_nodes, {});
  u_list_.assign(n_nodes, {});
  need_dirs_.assign(n_nodes, {});

  near_[0] = {0};
  for (int level = 1; level <= max_level(); ++level) {
    const bool hf = is_high_frequency(level);
    const double w = width(level);
    const int wi = hf ? static_cast<int>(std::lround(w)) : 0;
    for (int b : by_level_[level]) {
      const BoxKey bk = nodes_[b].key;
      const Point3 cb = center(bk);
      auto& nearb = near_[b];
      for (int pn : near_[nodes_[b].parent]) {
        for (int a : nodes_[pn].child) {
          if (a < 0) continue;
          const BoxKey ak = nodes_[a].key;
          if (hf) {
            if (ball_near(ak, bk, w)) {
              nearb.push_back(a);
            } else {
              Point3 off = center(ak) - cb;
              hf_list_[b].push_back({assign_direction(wi, off), a,
                                     assign_direction(wi, off * -1.0)});
            }
          } else {
            if (adjacent(ak, bk))
              nearb.push_back(a);
            else
              lf_list_[b].push_back(a);
          }
        }
      }
      std::sort(nearb.begin(), nearb.end());
      if (hf) {
        auto& lst = hf_list_[b];
        std::sort(lst.begin(), lst.end(), [&](const HfListEntry& x, const HfListEntry& y) {
          if (!(x.dir == y.dir)) return x.dir < y.dir;
          return nodes_[x.src].key < nodes_[y.src].key;
        });
        total_hf_pairs_ += lst.size();
        std::size_t run = 0;
        for (std::size_t i = 0; i < lst.size(); ++i) {
          run = (i > 0 && lst[i].dir == lst[i - 1].dir) ? run + 1 : 1;
          max_members_per_direction_ = std::max(max_members_per_direction_, run);
        }
      } else {
        std::sort(lf_list_[b].begin(), lf_list_[b].end());
        total_lf_pairs_ += lf_list_[b].size();
      }
    }
  }

  // directions each box must carry: its own list's plus the mapped-down
  // directions its parent carries
  const int part = cfg_.partition_level();
  for (int level = part; level <= std::min(unit, max_level()); ++level) {
    for (int b : by_level_[level]) {
      auto& dirs = need_dirs_[b];
      for (const auto& e : hf_list_[b]) dirs.push_back(e.dir);
      if (level > part)
        for (const auto& pd : need_dirs_[nodes_[b].parent])
          dirs.push_back(parent_direction(pd));
      std::sort(dirs.begin(), dirs.end());
      dirs.erase(std::unique(dirs.begin(), dirs.end()), dirs.end());
    }
  }

  // U-lists: leaves reachable while every ancestor pair stays near
  for (int b = 0; b < n_nodes; ++b) {
    if (!nodes_[b].leaf) continue;
    auto& ul = u_list_[b];
    for (int a : near_[b]) {
      // all leaves in a's subtree
      std::vector<int> stack{a};
      while (!stack.empty()) {
        int x = stack.back();
        stack.pop_back();
        if (nodes_[x].leaf) {
          ul.push_back(x);
          continue;
        }
        for (int c : nodes_[x].child)
          if (c >= 0) stack.push_back(c);
      }
    }
    for (int p = nodes_[b].parent; p >= 0 && nodes_[p].key.level > unit;
         p = nodes_[p].parent)
      for (int a : near_[p])
        if (nodes_[a].leaf) ul.push_back(a);
    std::sort(ul.begin(), ul.end());
  }
}

std::vector<BoxKey> Octree::near_field(const BoxKey& box) const {
  DFMM_REQUIRE(is_high_frequency(box.level),
               "near_field applies to high-frequency boxes; use the adjacency rule below width 1");
  int id = node_id(box);
  DFMM_REQUIRE(id >= 0, "near_field: box is empty or not part of this tree");
  std::vector<BoxKey> out;
  out.reserve(near_[id].size());
  for (int a : near_[id]) out.push_back(nodes_[a].key);
  std::sort(out.begin(), out.end());
  return out;
}

void Octree::dump_json_lines(std::ostream& os) const {
  for (const auto& nd : nodes_) {
    os << "{\"level\":" << int(nd.key.level) << ",\"idx\":[" << nd.key.idx[0] << ','
       << nd.key.idx[1] << ',' << nd.key.idx[2] << "],\"count\":" << nd.pt_count
       << ",\"leaf\":" << (nd.leaf ? "true" : "false") << "}\n";
  }
}

}  // namespace dfmm
