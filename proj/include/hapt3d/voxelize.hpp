#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <vector>

#include "hapt3d/cloud.hpp"
#include "hapt3d/grid.hpp"

namespace hapt3d {

namespace voxel_detail {

// Most frequent value; ties go to the smallest value.
inline int majority(std::vector<int>& votes) {
  std::sort(votes.begin(), votes.end());
  int best = votes.front(), best_count = 0;
  for (std::size_t i = 0; i < votes.size();) {
    std::size_t j = i;
    while (j < votes.size() && votes[j] == votes[i]) ++j;
    if (static_cast<int>(j - i) > best_count) {
      best_count = static_cast<int>(j - i);
      best = votes[i];
    }
    i = j;
  }
  return best;
}

}  // namespace voxel_detail

// One output point per occupied voxel, in lexicographic voxel order. Position
// and color are member means; the semantic label is a majority vote, and the
// id labels are voted among the members that carry the winning class.
inline LabeledCloud voxelize(const LabeledCloud& cloud, double voxel_size = 0.003) {
  if (!(voxel_size > 0.0)) throw ArgumentError("voxelize: voxel_size must be positive");
  const std::size_t n = cloud.size();
  std::vector<Coord> coords(n);
  for (std::size_t i = 0; i < n; ++i) coords[i] = voxel_of(cloud.points[i].position, voxel_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return coords[a] < coords[b]; });

  LabeledCloud out;
  std::vector<int> votes;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && coords[order[j]] == coords[order[i]]) ++j;
    const double m = static_cast<double>(j - i);
    PointRecord r;
    votes.clear();
    for (std::size_t k = i; k < j; ++k) {
      const auto& p = cloud.points[order[k]];
      for (int a = 0; a < 3; ++a) {
        r.position[a] += p.position[a];
        r.color[a] += p.color[a];
      }
      votes.push_back(p.semantic);
    }
    for (int a = 0; a < 3; ++a) {
      r.position[a] /= m;
      r.color[a] /= m;
    }
    r.semantic = voxel_detail::majority(votes);
    if (ClassTable::is_thing(r.semantic)) {
      std::vector<int> tree_votes, inst_votes;
      for (std::size_t k = i; k < j; ++k) {
        const auto& p = cloud.points[order[k]];
        if (p.semantic != r.semantic) continue;
        tree_votes.push_back(p.tree_id.value_or(-1));
        inst_votes.push_back(p.instance_id.value_or(-1));
      }
      const int t = voxel_detail::majority(tree_votes);
      const int s = voxel_detail::majority(inst_votes);
      if (t >= 0) r.tree_id = t;
      if (s >= 0) r.instance_id = s;
    }
    out.points.push_back(r);
    i = j;
  }
  return out;
}

}  // namespace hapt3d
