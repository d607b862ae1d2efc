#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "hapt3d/cloud.hpp"
#include "hapt3d/error.hpp"
#include "hapt3d/hdbscan.hpp"
#include "hapt3d/network.hpp"

namespace hapt3d {

struct InstancePrediction {
  std::vector<int> semantic;
  std::vector<int> tree_label;
  std::vector<int> instance_label;

  std::size_t size() const { return semantic.size(); }
};

namespace instance_detail {

inline void check_output(const NetworkOutput& out, const LabeledCloud& cloud) {
  if (out.point_to_row.size() != cloud.size()) {
    throw ArgumentError("network output covers " + std::to_string(out.point_to_row.size()) +
                        " points but the cloud has " + std::to_string(cloud.size()));
  }
  const std::size_t rows = out.rows();
  if (out.positions.rows() != rows || out.tree_offsets.rows() != rows ||
      out.instance_offsets.rows() != rows) {
    throw ArgumentError("network output matrices disagree on the row count");
  }
  for (std::int32_t r : out.point_to_row) {
    if (r < 0 || static_cast<std::size_t>(r) >= rows) throw ArgumentError("point_to_row out of range");
  }
}

// Points whose predicted class is a thing class, with e_p = voxel center + offset.
inline std::pair<std::vector<std::size_t>, std::vector<Vec3>> thing_embeddings(
    const NetworkOutput& out, const std::vector<int>& semantic, const Matrix& offsets) {
  std::vector<std::size_t> idx;
  std::vector<Vec3> emb;
  for (std::size_t i = 0; i < semantic.size(); ++i) {
    if (!ClassTable::is_thing(semantic[i])) continue;
    const auto r = static_cast<std::size_t>(out.point_to_row[i]);
    idx.push_back(i);
    emb.push_back({out.positions(r, 0) + offsets(r, 0), out.positions(r, 1) + offsets(r, 1),
                   out.positions(r, 2) + offsets(r, 2)});
  }
  return {std::move(idx), std::move(emb)};
}

}  // namespace instance_detail

// Argmax of the semantic logits for every input point (first maximum wins).
inline std::vector<int> predicted_semantics(const NetworkOutput& out) {
  std::vector<int> row_label(out.rows());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    int best = 0;
    for (std::size_t k = 1; k < out.semantic_logits.cols(); ++k) {
      if (out.semantic_logits(r, k) > out.semantic_logits(r, best)) best = static_cast<int>(k);
    }
    row_label[r] = best;
  }
  std::vector<int> labels(out.point_to_row.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = row_label[out.point_to_row[i]];
  return labels;
}

inline std::vector<int> extract_tree_instances(const NetworkOutput& out, const LabeledCloud& cloud,
                                               const ClusterParams& params) {
  instance_detail::check_output(out, cloud);
  const auto semantic = predicted_semantics(out);
  const auto [idx, emb] = instance_detail::thing_embeddings(out, semantic, out.tree_offsets);
  std::vector<int> labels(cloud.size(), kNoise);
  const auto cl = hdbscan(emb, params);
  for (std::size_t j = 0; j < idx.size(); ++j) labels[idx[j]] = cl[j];
  return labels;
}

// Splits every cluster by predicted class; parts smaller than
// min_cluster_size become noise.
inline std::vector<int> split_by_semantic(const std::vector<int>& labels, const std::vector<int>& semantic,
                                          std::size_t min_size) {
  std::map<std::pair<int, int>, std::vector<std::size_t>> parts;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) parts[{labels[i], semantic[i]}].push_back(i);
  }
  std::vector<int> out(labels.size(), kNoise);
  int next = 0;
  for (const auto& [key, members] : parts) {
    if (members.size() < min_size) continue;
    for (std::size_t i : members) out[i] = next;
    ++next;
  }
  return canonical_labels(out);
}

inline std::vector<int> extract_fine_instances(const NetworkOutput& out, const LabeledCloud& cloud,
                                               const ClusterParams& params) {
  instance_detail::check_output(out, cloud);
  const auto semantic = predicted_semantics(out);
  const auto [idx, emb] = instance_detail::thing_embeddings(out, semantic, out.instance_offsets);
  const auto cl = hdbscan(emb, params);
  std::vector<int> labels(cloud.size(), kNoise);
  for (std::size_t j = 0; j < idx.size(); ++j) labels[idx[j]] = cl[j];
  return split_by_semantic(labels, semantic, static_cast<std::size_t>(params.min_cluster_size));
}

inline InstancePrediction extract_instances(const NetworkOutput& out, const LabeledCloud& cloud,
                                            const ClusterParams& tree_params,
                                            const ClusterParams& instance_params) {
  InstancePrediction p;
  p.semantic = predicted_semantics(out);
  p.tree_label = extract_tree_instances(out, cloud, tree_params);
  p.instance_label = extract_fine_instances(out, cloud, instance_params);
  return p;
}

inline InstancePrediction predict(Network& net, const LabeledCloud& cloud, const ClusterParams& tree_params,
                                  const ClusterParams& instance_params) {
  const NetworkOutput out = net.forward(cloud, Mode::kEval);
  return extract_instances(out, cloud, tree_params, instance_params);
}

// Copies geometry from `cloud` and replaces all labels with the prediction.
inline LabeledCloud to_labeled_cloud(const LabeledCloud& cloud, const InstancePrediction& pred) {
  if (pred.size() != cloud.size()) throw ArgumentError("prediction size does not match the cloud");
  LabeledCloud out;
  out.points.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    PointRecord p;
    p.position = cloud.points[i].position;
    p.color = cloud.points[i].color;
    p.semantic = pred.semantic[i];
    if (pred.tree_label[i] >= 0) p.tree_id = pred.tree_label[i];
    if (pred.instance_label[i] >= 0) p.instance_id = pred.instance_label[i];
    out.points.push_back(p);
  }
  return out;
}

inline InstancePrediction from_labeled_cloud(const LabeledCloud& cloud) {
  InstancePrediction p;
  for (const auto& pt : cloud.points) {
    p.semantic.push_back(pt.semantic);
    p.tree_label.push_back(pt.tree_id.value_or(kNoise));
    p.instance_label.push_back(pt.instance_id.value_or(kNoise));
  }
  return p;
}

}  // namespace hapt3d
