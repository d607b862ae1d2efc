#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hapt3d/error.hpp"

namespace hapt3d {

using Vec3 = std::array<double, 3>;

// Fixed orchard class table. Trunk and apple are "things" (countable
// instances); ground, canopy and pole are "stuff".
enum class SemanticClass : int { kGround = 0, kTrunk = 1, kCanopy = 2, kApple = 3, kPole = 4 };

struct ClassTable {
  static constexpr int kNumClasses = 5;
  static constexpr std::array<std::string_view, kNumClasses> kNames = {"ground", "trunk", "canopy",
                                                                       "apple", "pole"};
  static constexpr bool is_valid(int k) { return k >= 0 && k < kNumClasses; }
  static constexpr bool is_thing(int k) {
    return k == static_cast<int>(SemanticClass::kTrunk) ||
           k == static_cast<int>(SemanticClass::kApple);
  }
  static constexpr bool is_stuff(int k) { return is_valid(k) && !is_thing(k); }
  static std::string_view name(int k) { return is_valid(k) ? kNames[k] : "invalid"; }
};

constexpr int kTrunk = static_cast<int>(SemanticClass::kTrunk);
constexpr int kApple = static_cast<int>(SemanticClass::kApple);
constexpr int kGround = static_cast<int>(SemanticClass::kGround);
constexpr int kCanopy = static_cast<int>(SemanticClass::kCanopy);
constexpr int kPole = static_cast<int>(SemanticClass::kPole);

struct PointRecord {
  Vec3 position{};  // meters
  Vec3 color{};     // RGB in [0, 1]
  int semantic = 0;
  std::optional<int> tree_id;
  std::optional<int> instance_id;

  friend bool operator==(const PointRecord&, const PointRecord&) = default;
};

// Ground truth demands complete, hierarchy-consistent labels. Predictions may
// leave thing points unassigned (clustering noise) and need not have exactly
// one trunk per tree.
enum class ValidationMode { kGroundTruth, kPrediction };

struct LabeledCloud {
  std::vector<PointRecord> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  friend bool operator==(const LabeledCloud&, const LabeledCloud&) = default;
};

// Throws ValidationError naming the first offending point or group.
inline void validate(const LabeledCloud& cloud,
                     ValidationMode mode = ValidationMode::kGroundTruth) {
  std::map<int, int> instance_class;
  std::map<int, int> instance_tree;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& p = cloud.points[i];
    const auto where = " at point " + std::to_string(i);
    if (!ClassTable::is_valid(p.semantic)) {
      throw ValidationError("semantic class " + std::to_string(p.semantic) + " out of range" + where);
    }
    if ((p.tree_id && *p.tree_id < 0) || (p.instance_id && *p.instance_id < 0)) {
      throw ValidationError("negative id" + where);
    }
    const bool thing = ClassTable::is_thing(p.semantic);
    if (!thing && (p.tree_id || p.instance_id)) {
      throw ValidationError("stuff point carries an instance or tree id" + where);
    }
    if (mode == ValidationMode::kGroundTruth && thing && (!p.tree_id || !p.instance_id)) {
      throw ValidationError("thing point without instance/tree id" + where);
    }
    if (p.instance_id) {
      auto [it, fresh] = instance_class.emplace(*p.instance_id, p.semantic);
      if (!fresh && it->second != p.semantic) {
        throw ValidationError("instance " + std::to_string(*p.instance_id) +
                              " mixes semantic classes" + where);
      }
    }
    if (mode == ValidationMode::kGroundTruth && p.instance_id) {
      auto [it, fresh] = instance_tree.emplace(*p.instance_id, *p.tree_id);
      if (!fresh && it->second != *p.tree_id) {
        throw ValidationError("instance " + std::to_string(*p.instance_id) +
                              " spans several trees" + where);
      }
    }
  }
  if (mode != ValidationMode::kGroundTruth) return;
  std::map<int, int> trunks_per_tree;
  for (const auto& [inst, cls] : instance_class) {
    const int tree = instance_tree.at(inst);
    auto& n = trunks_per_tree[tree];
    if (cls == kTrunk) ++n;
  }
  for (const auto& [tree, n] : trunks_per_tree) {
    if (n != 1) {
      throw ValidationError("tree " + std::to_string(tree) + " has " + std::to_string(n) +
                            " trunk instances, expected exactly 1");
    }
  }
}

// Inverse-frequency class weights: w_k = N / (K * n_k); absent classes get 0.
inline std::array<double, ClassTable::kNumClasses> class_frequencies(
    const std::vector<LabeledCloud>& clouds) {
  constexpr int K = ClassTable::kNumClasses;
  std::array<double, K> counts{};
  double total = 0.0;
  for (const auto& c : clouds) {
    for (const auto& p : c.points) {
      if (!ClassTable::is_valid(p.semantic)) {
        throw ArgumentError("class_frequencies: semantic class out of range");
      }
      counts[p.semantic] += 1.0;
      total += 1.0;
    }
  }
  if (total == 0.0) throw ArgumentError("class_frequencies: no labeled points");
  std::array<double, K> w{};
  for (int k = 0; k < K; ++k) w[k] = counts[k] > 0.0 ? total / (K * counts[k]) : 0.0;
  return w;
}

// Ground-truth instance groups as row-index lists, ordered by id.
inline std::vector<std::vector<std::size_t>> group_by_tree(const LabeledCloud& cloud) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    if (cloud.points[i].tree_id) groups[*cloud.points[i].tree_id].push_back(i);
  }
  std::vector<std::vector<std::size_t>> out;
  for (auto& [id, rows] : groups) out.push_back(std::move(rows));
  return out;
}

inline std::vector<std::vector<std::size_t>> group_by_instance(const LabeledCloud& cloud) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    if (cloud.points[i].instance_id) groups[*cloud.points[i].instance_id].push_back(i);
  }
  std::vector<std::vector<std::size_t>> out;
  for (auto& [id, rows] : groups) out.push_back(std::move(rows));
  return out;
}

}  // namespace hapt3d
