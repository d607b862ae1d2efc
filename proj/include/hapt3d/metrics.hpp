#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hapt3d/cloud.hpp"
#include "hapt3d/error.hpp"
#include "hapt3d/instances.hpp"

namespace hapt3d {

inline constexpr int kClasses = ClassTable::kNumClasses;

inline std::string class_name(int k) { return std::string(ClassTable::name(k)); }

struct Segment {
  int cls = 0;
  std::vector<std::size_t> points;
};

// Per-class semantic confusion counts.
struct IouCounts {
  std::size_t tp = 0, fp = 0, fn = 0;

  bool present() const { return tp + fp + fn > 0; }
  double iou() const { return present() ? static_cast<double>(tp) / static_cast<double>(tp + fp + fn) : 0.0; }
};

// Panoptic counts for one class: matched pairs, unmatched pred/gt segments,
// and the summed IoU of matched pairs.
struct PqCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
  double iou_sum = 0.0;

  bool present() const { return tp + fp + fn > 0; }
  double denom() const { return static_cast<double>(tp) + 0.5 * static_cast<double>(fp + fn); }
  double pq() const { return present() ? iou_sum / denom() : 0.0; }
  double sq() const { return tp > 0 ? iou_sum / static_cast<double>(tp) : 0.0; }
  double rq() const { return present() ? static_cast<double>(tp) / denom() : 0.0; }

  PqCounts& operator+=(const PqCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    iou_sum += o.iou_sum;
    return *this;
  }
};

struct MiouResult {
  std::array<std::optional<double>, kClasses> iou;  // empty when the class is absent on both sides
  double miou = 0.0;
};

inline std::array<IouCounts, kClasses> semantic_counts(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size()) throw ArgumentError("semantic label vectors differ in length");
  std::array<IouCounts, kClasses> c{};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!ClassTable::is_valid(pred[i]) || !ClassTable::is_valid(gt[i])) {
      throw ArgumentError("semantic label out of range at point " + std::to_string(i));
    }
    if (pred[i] == gt[i]) {
      ++c[pred[i]].tp;
    } else {
      ++c[pred[i]].fp;
      ++c[gt[i]].fn;
    }
  }
  return c;
}

inline MiouResult miou_from_counts(const std::array<IouCounts, kClasses>& c) {
  MiouResult r;
  double sum = 0.0;
  int n = 0;
  for (int k = 0; k < kClasses; ++k) {
    if (!c[k].present()) continue;
    r.iou[k] = c[k].iou();
    sum += *r.iou[k];
    ++n;
  }
  r.miou = n > 0 ? sum / n : 0.0;
  return r;
}

inline MiouResult miou(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.empty()) throw ArgumentError("miou: no points");
  return miou_from_counts(semantic_counts(pred, gt));
}

// Thing segments are label groups; stuff classes contribute one segment
// each holding all their points. Points with label -1 and a thing class
// belong to no segment.
inline std::vector<Segment> make_segments(const std::vector<int>& semantic, const std::vector<int>& labels) {
  if (semantic.size() != labels.size()) throw ArgumentError("segment inputs differ in length");
  std::map<int, Segment> things;
  std::array<Segment, kClasses> stuff{};
  for (std::size_t i = 0; i < semantic.size(); ++i) {
    const int c = semantic[i];
    if (!ClassTable::is_valid(c)) throw ArgumentError("semantic label out of range at point " + std::to_string(i));
    if (ClassTable::is_stuff(c)) {
      stuff[c].points.push_back(i);
    } else if (labels[i] >= 0) {
      auto& s = things[labels[i]];
      if (s.points.empty()) s.cls = c;
      if (s.cls != c) throw ArgumentError("instance " + std::to_string(labels[i]) + " mixes classes");
      s.points.push_back(i);
    }
  }
  std::vector<Segment> out;
  for (int c = 0; c < kClasses; ++c) {
    if (stuff[c].points.empty()) continue;
    stuff[c].cls = c;
    out.push_back(std::move(stuff[c]));
  }
  for (auto& [l, s] : things) out.push_back(std::move(s));
  return out;
}

// Segments from tree labels, all of the single class 0.
inline std::vector<Segment> make_tree_segments(const std::vector<int>& labels) {
  std::map<int, Segment> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) groups[labels[i]].points.push_back(i);
  }
  std::vector<Segment> out;
  for (auto& [l, s] : groups) out.push_back(std::move(s));
  return out;
}

// Matches segments of equal class at IoU > 0.5 and accumulates counts for
// classes 0..num_classes-1.
inline std::vector<PqCounts> match_segments(const std::vector<Segment>& pred, const std::vector<Segment>& gt,
                                            int num_classes) {
  auto owner_map = [](const std::vector<Segment>& segs, const char* side) {
    std::unordered_map<std::size_t, std::size_t> owner;
    for (std::size_t s = 0; s < segs.size(); ++s) {
      for (std::size_t p : segs[s].points) {
        if (!owner.emplace(p, s).second) {
          throw ArgumentError(std::string(side) + " segments overlap at point " + std::to_string(p));
        }
      }
    }
    return owner;
  };
  for (const auto* segs : {&pred, &gt}) {
    for (const auto& s : *segs) {
      if (s.cls < 0 || s.cls >= num_classes) throw ArgumentError("segment class out of range");
    }
  }
  owner_map(pred, "predicted");
  const auto gt_owner = owner_map(gt, "ground-truth");

  std::vector<PqCounts> counts(num_classes);
  std::vector<char> gt_matched(gt.size(), 0);
  for (const auto& ps : pred) {
    std::map<std::size_t, std::size_t> inter;
    for (std::size_t p : ps.points) {
      const auto it = gt_owner.find(p);
      if (it != gt_owner.end() && gt[it->second].cls == ps.cls) ++inter[it->second];
    }
    bool matched = false;
    for (const auto& [g, n] : inter) {
      const double uni = static_cast<double>(ps.points.size() + gt[g].points.size() - n);
      const double iou = static_cast<double>(n) / uni;
      if (iou > 0.5) {
        ++counts[ps.cls].tp;
        counts[ps.cls].iou_sum += iou;
        gt_matched[g] = 1;
        matched = true;
        break;  // at most one gt segment can exceed 0.5
      }
    }
    if (!matched) ++counts[ps.cls].fp;
  }
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (!gt_matched[g]) ++counts[gt[g].cls].fn;
  }
  return counts;
}

struct PqResult {
  std::array<PqCounts, kClasses> per_class{};
  double pq = 0.0;
};

// Mean over classes with at least one segment on either side.
inline double mean_pq(const std::array<PqCounts, kClasses>& c) {
  double sum = 0.0;
  int n = 0;
  for (const auto& k : c) {
    if (!k.present()) continue;
    sum += k.pq();
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

inline PqResult panoptic_quality(const std::vector<Segment>& pred, const std::vector<Segment>& gt) {
  const auto v = match_segments(pred, gt, kClasses);
  PqResult r;
  for (int k = 0; k < kClasses; ++k) r.per_class[k] = v[k];
  r.pq = mean_pq(r.per_class);
  return r;
}

// No trees on either side counts as a perfect score.
inline double pq_tree_value(const PqCounts& c) { return c.present() ? c.pq() : 1.0; }

inline PqCounts pq_tree_counts(const std::vector<int>& pred_tree, const std::vector<int>& gt_tree) {
  if (pred_tree.size() != gt_tree.size()) throw ArgumentError("tree label vectors differ in length");
  return match_segments(make_tree_segments(pred_tree), make_tree_segments(gt_tree), 1)[0];
}

inline double pq_tree(const std::vector<int>& pred_tree, const std::vector<int>& gt_tree) {
  return pq_tree_value(pq_tree_counts(pred_tree, gt_tree));
}

struct PanopticReport {
  std::array<std::optional<double>, kClasses> iou;
  double miou = 0.0;
  std::array<PqCounts, kClasses> classes{};
  double pq = 0.0;
  PqCounts tree;
  double pq_t = 0.0;
  double mpq = 0.0;

  std::string table() const;
  std::string key_values() const;
};

// Count accumulator; merging is associative and commutative, and the
// report divides only once at the end.
class PanopticAccumulator {
 public:
  void add(const InstancePrediction& pred, const LabeledCloud& gt) {
    if (pred.size() != gt.size()) throw ArgumentError("prediction and ground truth differ in point count");
    const auto g = from_labeled_cloud(gt);
    const auto sc = semantic_counts(pred.semantic, g.semantic);
    for (int k = 0; k < kClasses; ++k) {
      sem_[k].tp += sc[k].tp;
      sem_[k].fp += sc[k].fp;
      sem_[k].fn += sc[k].fn;
    }
    const auto pq = panoptic_quality(make_segments(pred.semantic, pred.instance_label),
                                     make_segments(g.semantic, g.instance_label));
    for (int k = 0; k < kClasses; ++k) pq_[k] += pq.per_class[k];
    tree_ += pq_tree_counts(pred.tree_label, g.tree_label);
    ++clouds_;
  }

  void merge(const PanopticAccumulator& o) {
    for (int k = 0; k < kClasses; ++k) {
      sem_[k].tp += o.sem_[k].tp;
      sem_[k].fp += o.sem_[k].fp;
      sem_[k].fn += o.sem_[k].fn;
      pq_[k] += o.pq_[k];
    }
    tree_ += o.tree_;
    clouds_ += o.clouds_;
  }

  std::size_t clouds() const { return clouds_; }

  PanopticReport report() const {
    PanopticReport r;
    const auto m = miou_from_counts(sem_);
    r.iou = m.iou;
    r.miou = m.miou;
    r.classes = pq_;
    r.pq = mean_pq(pq_);
    r.tree = tree_;
    r.pq_t = pq_tree_value(tree_);
    r.mpq = 0.5 * (r.pq + r.pq_t);
    return r;
  }

 private:
  std::array<IouCounts, kClasses> sem_{};
  std::array<PqCounts, kClasses> pq_{};
  PqCounts tree_;
  std::size_t clouds_ = 0;
};

inline PanopticReport evaluate(const InstancePrediction& pred, const LabeledCloud& gt) {
  PanopticAccumulator acc;
  acc.add(pred, gt);
  return acc.report();
}

namespace metrics_detail {

inline std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

inline std::string counts(const PqCounts& c) {
  return std::to_string(c.tp) + "," + std::to_string(c.fp) + "," + std::to_string(c.fn);
}

}  // namespace metrics_detail

inline std::string PanopticReport::table() const {
  using metrics_detail::fixed;
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-8s %8s %8s %8s %8s %6s %6s %6s\n", "class", "IoU", "PQ", "SQ", "RQ", "TP",
                "FP", "FN");
  out += line;
  auto row = [&](const std::string& name, const std::string& iou, const PqCounts& c) {
    std::snprintf(line, sizeof(line), "%-8s %8s %8s %8s %8s %6zu %6zu %6zu\n", name.c_str(), iou.c_str(),
                  fixed(c.pq()).c_str(), fixed(c.sq()).c_str(), fixed(c.rq()).c_str(), c.tp, c.fp, c.fn);
    out += line;
  };
  for (int k = 0; k < kClasses; ++k) row(class_name(k), iou[k] ? fixed(*iou[k]) : "-", classes[k]);
  row("tree", "-", tree);
  std::snprintf(line, sizeof(line), "\nmIoU %s  PQ %s  PQ_T %s  mPQ %s\n", fixed(miou).c_str(), fixed(pq).c_str(),
                fixed(pq_t).c_str(), fixed(mpq).c_str());
  out += line;
  return out;
}

inline std::string PanopticReport::key_values() const {
  using metrics_detail::num;
  std::string out;
  for (int k = 0; k < kClasses; ++k) {
    out += "iou." + class_name(k) + "=" + (iou[k] ? num(*iou[k]) : "nan") + "\n";
  }
  out += "miou=" + num(miou) + "\n";
  for (int k = 0; k < kClasses; ++k) {
    out += "pq." + class_name(k) + "=" + num(classes[k].pq()) + "\n";
    out += "sq." + class_name(k) + "=" + num(classes[k].sq()) + "\n";
    out += "rq." + class_name(k) + "=" + num(classes[k].rq()) + "\n";
  }
  out += "pq=" + num(pq) + "\n";
  out += "pq_t=" + num(pq_t) + "\n";
  out += "mpq=" + num(mpq) + "\n";
  for (int k = 0; k < kClasses; ++k) {
    out += "counts." + class_name(k) + "=" + metrics_detail::counts(classes[k]) + "\n";
  }
  out += "counts.tree=" + metrics_detail::counts(tree) + "\n";
  return out;
}

}  // namespace hapt3d
