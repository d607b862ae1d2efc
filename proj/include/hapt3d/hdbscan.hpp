#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "hapt3d/cloud.hpp"
#include "hapt3d/error.hpp"
#include "hapt3d/parallel.hpp"

namespace hapt3d {

enum class ClusterSelection { kExcessOfMass };

struct ClusterParams {
  int min_cluster_size = 20;
  int min_samples = 10;  // neighborhood size for core distances, counting the point itself
  ClusterSelection selection = ClusterSelection::kExcessOfMass;

  static ClusterParams tree_level() { return {100, 10, ClusterSelection::kExcessOfMass}; }
  static ClusterParams instance_level() { return {20, 10, ClusterSelection::kExcessOfMass}; }

  void validate() const {
    if (min_cluster_size < 2) throw ArgumentError("min_cluster_size must be >= 2");
    if (min_samples < 1) throw ArgumentError("min_samples must be >= 1");
  }
};

inline constexpr int kNoise = -1;

// Renumbers cluster labels 0..n-1 by descending size, ties by smallest member
// index. Negative labels stay noise.
inline std::vector<int> canonical_labels(const std::vector<int>& labels) {
  struct Info {
    std::size_t size = 0;
    std::size_t first = 0;
    int label = 0;
  };
  std::vector<Info> infos;
  std::vector<int> seen;  // label -> slot, labels are small non-negative ints
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l < 0) continue;
    if (static_cast<std::size_t>(l) >= seen.size()) seen.resize(l + 1, -1);
    if (seen[l] < 0) {
      seen[l] = static_cast<int>(infos.size());
      infos.push_back({0, i, l});
    }
    ++infos[seen[l]].size;
  }
  std::vector<std::size_t> order(infos.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (infos[a].size != infos[b].size) return infos[a].size > infos[b].size;
    return infos[a].first < infos[b].first;
  });
  std::vector<int> remap(seen.size(), kNoise);
  for (std::size_t r = 0; r < order.size(); ++r) remap[infos[order[r]].label] = static_cast<int>(r);
  std::vector<int> out(labels.size(), kNoise);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) out[i] = remap[labels[i]];
  return out;
}

namespace hdbscan_detail {

inline double dist(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Lambda = 1 / distance, capped so coincident points stay finite.
inline double lambda_of(double d) { return 1.0 / std::max(d, 1e-10); }

struct Edge {
  std::size_t a, b;
  double w;
};

struct CondensedRow {
  int parent;       // cluster id
  int child;        // cluster id (if child_size > 1 and is_cluster) or point index
  bool is_cluster;
  double lambda;
  std::size_t child_size;
};

}  // namespace hdbscan_detail

// HDBSCAN over 3D points: core distances -> mutual reachability -> exact
// Prim MST -> single-linkage hierarchy -> condensed tree -> excess-of-mass
// selection. The root cluster is never selected. Noise is -1; labels are
// canonical (see canonical_labels).
inline std::vector<int> hdbscan(const std::vector<Vec3>& pts, const ClusterParams& params) {
  using namespace hdbscan_detail;
  params.validate();
  const std::size_t m = pts.size();
  std::vector<int> labels(m, kNoise);
  if (m < static_cast<std::size_t>(params.min_cluster_size) || m < 2) return labels;
  const std::size_t mcs = static_cast<std::size_t>(params.min_cluster_size);

  // (1) core distances: distance to the min_samples-th nearest point,
  // counting the point itself as the first.
  const std::size_t kth = std::min<std::size_t>(params.min_samples, m) - 1;
  std::vector<double> core(m);
  parallel_for(m, [&](std::size_t b, std::size_t e) {
    std::vector<double> d(m);
    for (std::size_t i = b; i < e; ++i) {
      for (std::size_t j = 0; j < m; ++j) d[j] = dist(pts[i], pts[j]);
      std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kth), d.end());
      core[i] = d[kth];
    }
  }, 256);

  // (2)+(3) Prim on the implicit complete mutual-reachability graph.
  std::vector<Edge> mst;
  mst.reserve(m - 1);
  {
    std::vector<double> best(m, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> from(m, 0);
    std::vector<char> in_tree(m, 0);
    std::size_t cur = 0;
    in_tree[0] = 1;
    for (std::size_t step = 1; step < m; ++step) {
      std::size_t next = m;
      double next_w = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < m; ++j) {
        if (in_tree[j]) continue;
        const double w = std::max({core[cur], core[j], dist(pts[cur], pts[j])});
        if (w < best[j]) {
          best[j] = w;
          from[j] = cur;
        }
        if (best[j] < next_w) {
          next_w = best[j];
          next = j;
        }
      }
      in_tree[next] = 1;
      mst.push_back({from[next], next, next_w});
      cur = next;
    }
  }
  std::stable_sort(mst.begin(), mst.end(), [](const Edge& a, const Edge& b) { return a.w < b.w; });

  // (4) single-linkage hierarchy. All edges of one weight merge at once, so
  // a node may have more than two children; this keeps the result
  // independent of how ties between equal edges would be ordered.
  std::vector<std::vector<std::size_t>> kids(m);
  std::vector<std::size_t> size(m, 1);
  std::vector<double> height(m, 0.0);
  {
    std::vector<std::size_t> uf(2 * m);
    std::iota(uf.begin(), uf.end(), 0);
    auto find = [&](std::size_t x) {
      while (uf[x] != x) {
        uf[x] = uf[uf[x]];
        x = uf[x];
      }
      return x;
    };
    for (std::size_t b = 0; b < mst.size();) {
      std::size_t e = b;
      while (e < mst.size() && mst[e].w == mst[b].w) ++e;
      // Components touched by this weight group, joined through a scratch
      // union-find over their roots.
      std::vector<std::pair<std::size_t, std::size_t>> links;
      for (std::size_t k = b; k < e; ++k) links.emplace_back(find(mst[k].a), find(mst[k].b));
      std::map<std::size_t, std::size_t> scratch;
      auto sfind = [&](std::size_t x) {
        scratch.try_emplace(x, x);
        while (scratch[x] != x) x = scratch[x];
        return x;
      };
      for (const auto& [ra, rb] : links) {
        const std::size_t sa = sfind(ra), sb = sfind(rb);
        if (sa != sb) scratch[std::max(sa, sb)] = std::min(sa, sb);
      }
      std::map<std::size_t, std::vector<std::size_t>> groups;
      for (const auto& [r, parent] : scratch) groups[sfind(r)].push_back(r);
      for (auto& [rep, members] : groups) {
        const std::size_t node = kids.size();
        kids.push_back(members);
        height.push_back(mst[b].w);
        std::size_t total = 0;
        for (std::size_t c : members) {
          total += size[c];
          uf[c] = node;
        }
        size.push_back(total);
      }
      b = e;
    }
  }

  // (5) condensed tree, walking the hierarchy top-down.
  const std::size_t n_nodes = kids.size();
  std::vector<CondensedRow> rows;
  std::vector<int> cluster_of(n_nodes, -1);  // hierarchy node -> cluster id
  std::vector<double> birth{0.0};
  std::vector<int> cluster_parent{-1};
  const std::size_t root = n_nodes - 1;
  cluster_of[root] = 0;
  auto fall_out = [&](std::size_t node, int cluster, double lambda) {
    std::vector<std::size_t> stack{node};
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      if (u < m) {
        rows.push_back({cluster, static_cast<int>(u), false, lambda, 1});
      } else {
        stack.insert(stack.end(), kids[u].begin(), kids[u].end());
      }
    }
  };
  std::vector<std::size_t> queue{root};
  for (std::size_t qi = 0; qi < queue.size(); ++qi) {
    const std::size_t node = queue[qi];
    if (node < m) continue;
    const int cl = cluster_of[node];
    const double lambda = lambda_of(height[node]);
    std::vector<std::size_t> big;
    for (std::size_t c : kids[node]) {
      if (size[c] >= mcs) {
        big.push_back(c);
      } else {
        fall_out(c, cl, lambda);
      }
    }
    if (big.size() >= 2) {
      for (std::size_t c : big) {
        const int id = static_cast<int>(birth.size());
        birth.push_back(lambda);
        cluster_parent.push_back(cl);
        cluster_of[c] = id;
        rows.push_back({cl, id, true, lambda, size[c]});
        queue.push_back(c);
      }
    } else if (big.size() == 1) {
      cluster_of[big[0]] = cl;
      queue.push_back(big[0]);
    }
  }

  // (6) stability and excess-of-mass selection.
  const std::size_t n_clusters = birth.size();
  std::vector<double> stability(n_clusters, 0.0);
  std::vector<std::vector<int>> children(n_clusters);
  for (const auto& row : rows) {
    stability[row.parent] += (row.lambda - birth[row.parent]) * static_cast<double>(row.child_size);
    if (row.is_cluster) children[row.parent].push_back(row.child);
  }
  std::vector<char> selected(n_clusters, 1);
  selected[0] = 0;
  // Children always have larger ids than their parent.
  for (std::size_t c = n_clusters; c-- > 1;) {
    double subtree = 0.0;
    for (int ch : children[c]) subtree += stability[ch];
    if (!children[c].empty() && subtree > stability[c]) {
      selected[c] = 0;
      stability[c] = subtree;
    } else {
      std::vector<int> stack(children[c].begin(), children[c].end());
      while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        selected[u] = 0;
        stack.insert(stack.end(), children[u].begin(), children[u].end());
      }
    }
  }

  // Each point joins the nearest selected ancestor of the cluster it fell
  // out of; no selected ancestor means noise.
  std::vector<int> owner(n_clusters, kNoise);
  for (std::size_t c = 0; c < n_clusters; ++c) {
    if (selected[c]) {
      owner[c] = static_cast<int>(c);
    } else if (cluster_parent[c] >= 0) {
      owner[c] = owner[cluster_parent[c]];  // parents precede children
    }
  }
  for (const auto& row : rows) {
    if (!row.is_cluster) labels[row.child] = owner[row.parent];
  }
  return canonical_labels(labels);
}

}  // namespace hapt3d
