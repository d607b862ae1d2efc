#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hapt3d/autograd.hpp"
#include "hapt3d/cloud.hpp"
#include "hapt3d/error.hpp"
#include "hapt3d/matrix.hpp"

namespace hapt3d {

// Where an instance's soft-mask center comes from.
enum class CentroidMode {
  kEmbeddingMean,  // mean predicted embedding of the instance's members (carries gradient)
  kSpatial,        // mean ground-truth position of the members (constant)
};

struct LossConfig {
  double w_sem = 1.0;
  double w_tree = 1.0;
  double w_ins = 1.0;
  double eta_tree = 0.5;       // meters
  double eta_instance = 0.05;  // meters
  std::vector<double> class_weights;  // empty means all ones
  CentroidMode centroid = CentroidMode::kEmbeddingMean;

  void validate() const {
    if (w_sem < 0 || w_tree < 0 || w_ins < 0) throw ArgumentError("loss weights must be non-negative");
    if (!(eta_tree > 0) || !(eta_instance > 0)) throw ArgumentError("eta values must be positive");
  }
};

// Ground-truth instances of one task level: disjoint lists of member rows.
struct InstanceSpec {
  std::vector<std::vector<std::size_t>> members;

  std::size_t size() const { return members.size(); }
  bool empty() const { return members.empty(); }

  void validate(std::size_t n) const {
    std::vector<char> used(n, 0);
    for (std::size_t j = 0; j < members.size(); ++j) {
      if (members[j].empty()) throw ArgumentError("instance " + std::to_string(j) + " is empty");
      for (std::size_t r : members[j]) {
        if (r >= n) throw ArgumentError("instance member row out of range");
        if (used[r]) throw ArgumentError("instance masks overlap at row " + std::to_string(r));
        used[r] = 1;
      }
    }
  }
};

namespace loss {

// L = -(1/N) sum_p w[t_p] * log softmax(f_p)[t_p], softmax with max
// subtraction. Writes dL/dlogits into `grad` when given.
inline double weighted_cross_entropy(const Matrix& logits, std::span<const int> targets,
                                     std::span<const double> weights, Matrix* grad = nullptr) {
  const std::size_t n = logits.rows(), k = logits.cols();
  if (n == 0) throw ArgumentError("weighted_cross_entropy: no points");
  if (targets.size() != n) throw ArgumentError("weighted_cross_entropy: target count mismatch");
  if (weights.size() != k) throw ArgumentError("weighted_cross_entropy: need one weight per class");
  if (grad) *grad = Matrix(n, k);
  double total = 0.0;
  std::vector<double> p(k);
  for (std::size_t r = 0; r < n; ++r) {
    const int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw ArgumentError("weighted_cross_entropy: target out of range at row " + std::to_string(r));
    }
    auto f = logits.row(r);
    const double mx = *std::max_element(f.begin(), f.end());
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      p[c] = std::exp(f[c] - mx);
      z += p[c];
    }
    const double log_pt = f[t] - mx - std::log(z);
    total -= weights[t] * log_pt;
    if (grad) {
      const double s = weights[t] / static_cast<double>(n);
      for (std::size_t c = 0; c < k; ++c) (*grad)(r, c) = s * (p[c] / z - (static_cast<int>(c) == t ? 1.0 : 0.0));
    }
  }
  return total / static_cast<double>(n);
}

// e_p = p + o_p.
inline Matrix embeddings(const Matrix& positions, const Matrix& offsets) {
  positions.require_same_shape(offsets, "embeddings");
  Matrix e = positions;
  e += offsets;
  return e;
}

inline Vec3 centroid(const Matrix& e, std::span<const std::size_t> members) {
  if (members.empty()) throw ArgumentError("centroid: empty instance");
  Vec3 c{};
  for (std::size_t r : members)
    for (int a = 0; a < 3; ++a) c[a] += e(r, a);
  for (auto& v : c) v /= static_cast<double>(members.size());
  return c;
}

// f_p = exp(-|e_p - c|^2 / (2 eta^2)).
inline std::vector<double> soft_mask(const Matrix& e, const Vec3& c, double eta) {
  if (!(eta > 0)) throw ArgumentError("soft_mask: eta must be positive");
  std::vector<double> f(e.rows());
  const double inv = 1.0 / (2.0 * eta * eta);
  for (std::size_t r = 0; r < e.rows(); ++r) {
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = e(r, a) - c[a];
      d2 += d * d;
    }
    f[r] = std::exp(-d2 * inv);
  }
  return f;
}

// Lovasz extension of the Jaccard error on [0,1]-valued masks. Errors are
// 1 - f on foreground and f on background; sorted descending (stable, so
// ties keep index order). Writes dL/df into `grad` when given.
inline double lovasz_hinge(std::span<const double> f, std::span<const std::uint8_t> g,
                           std::vector<double>* grad = nullptr) {
  const std::size_t n = f.size();
  if (g.size() != n) throw ArgumentError("lovasz_hinge: mask length mismatch");
  std::size_t positives = 0;
  for (auto v : g) positives += v ? 1 : 0;
  if (positives == 0) throw ArgumentError("lovasz_hinge: ground truth has no foreground");
  std::vector<double> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = g[i] ? 1.0 - f[i] : f[i];
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return m[a] > m[b]; });
  if (grad) grad->assign(n, 0.0);
  const double P = static_cast<double>(positives);
  double fg = 0.0, bg = 0.0, prev = 0.0, loss = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    if (g[i]) fg += 1.0; else bg += 1.0;
    const double jac = 1.0 - (P - fg) / (P + bg);
    const double delta = jac - prev;
    prev = jac;
    loss += m[i] * delta;
    if (grad) (*grad)[i] = g[i] ? -delta : delta;
  }
  return loss;
}

struct InstanceLoss {
  double value = 0.0;
  bool has_instances = false;
};

// Mean over instances of lovasz_hinge(soft mask over all rows, member mask).
// With no instances the loss is 0 and has_instances is false.
inline InstanceLoss instance_level_loss(const Matrix& e, const InstanceSpec& spec, double eta,
                                        CentroidMode mode = CentroidMode::kEmbeddingMean,
                                        const Matrix* positions = nullptr, Matrix* grad_e = nullptr) {
  if (e.cols() != 3) throw ArgumentError("instance_level_loss: embeddings must be N x 3");
  if (!(eta > 0)) throw ArgumentError("instance_level_loss: eta must be positive");
  const std::size_t n = e.rows();
  if (grad_e) *grad_e = Matrix(n, 3);
  if (spec.empty()) return {};
  spec.validate(n);
  if (mode == CentroidMode::kSpatial && (!positions || positions->rows() != n)) {
    throw ArgumentError("instance_level_loss: spatial centroids need positions");
  }
  const double scale = 1.0 / static_cast<double>(spec.size());
  const double inv_eta2 = 1.0 / (eta * eta);
  std::vector<std::uint8_t> g(n);
  std::vector<double> df;
  double total = 0.0;
  for (const auto& members : spec.members) {
    const Vec3 c = mode == CentroidMode::kEmbeddingMean ? centroid(e, members) : centroid(*positions, members);
    const auto f = soft_mask(e, c, eta);
    std::fill(g.begin(), g.end(), 0);
    for (std::size_t r : members) g[r] = 1;
    total += lovasz_hinge(f, g, grad_e ? &df : nullptr);
    if (!grad_e) continue;
    // df_p/de_p = -f_p (e_p - c) / eta^2 ; df_p/dc = +f_p (e_p - c) / eta^2.
    Vec3 dc{};
    for (std::size_t r = 0; r < n; ++r) {
      const double k = df[r] * f[r] * inv_eta2 * scale;
      if (k == 0.0) continue;
      for (int a = 0; a < 3; ++a) {
        const double d = e(r, a) - c[a];
        (*grad_e)(r, a) -= k * d;
        dc[a] += k * d;
      }
    }
    if (mode == CentroidMode::kEmbeddingMean) {
      const double share = 1.0 / static_cast<double>(members.size());
      for (std::size_t r : members)
        for (int a = 0; a < 3; ++a) (*grad_e)(r, a) += dc[a] * share;
    }
  }
  return {total * scale, true};
}

inline double total_loss(double sem, double tree, double ins, const LossConfig& cfg) {
  return cfg.w_sem * sem + cfg.w_tree * tree + cfg.w_ins * ins;
}

// ---- graph-recorded versions ----

inline Var cross_entropy_op(Graph& g, const Var& logits, std::vector<int> targets,
                            std::vector<double> weights) {
  Matrix grad;
  const double v = weighted_cross_entropy(g.value(logits.id), targets, weights, &grad);
  const NodeId lid = logits.id;
  const NodeId id = g.op("cross_entropy", Matrix(1, 1, v), {lid},
                         [lid, grad = std::move(grad)](Graph& g, NodeId self) {
                           if (!g.requires_grad(lid)) return;
                           const double d = g.grad(self)(0, 0);
                           Matrix& dx = g.grad(lid);
                           for (std::size_t i = 0; i < grad.size(); ++i) dx.data()[i] += d * grad.data()[i];
                         });
  return {id, nullptr};
}

inline Var embeddings_op(Graph& g, const Var& offsets, const Matrix& positions) {
  Matrix e = embeddings(positions, g.value(offsets.id));
  const NodeId oid = offsets.id;
  const NodeId id = g.op("embed", std::move(e), {oid}, [oid](Graph& g, NodeId self) {
    if (g.requires_grad(oid)) g.grad(oid) += g.grad(self);
  });
  return {id, offsets.coords};
}

struct InstanceLossVar {
  Var value;
  bool has_instances = false;
};

inline InstanceLossVar instance_loss_op(Graph& g, const Var& e, const InstanceSpec& spec, double eta,
                                        CentroidMode mode = CentroidMode::kEmbeddingMean,
                                        const Matrix* positions = nullptr) {
  Matrix grad;
  const auto res = instance_level_loss(g.value(e.id), spec, eta, mode, positions, &grad);
  const NodeId eid = e.id;
  const NodeId id = g.op("lovasz", Matrix(1, 1, res.value), {eid},
                         [eid, grad = std::move(grad)](Graph& g, NodeId self) {
                           if (!g.requires_grad(eid)) return;
                           const double d = g.grad(self)(0, 0);
                           Matrix& dx = g.grad(eid);
                           for (std::size_t i = 0; i < grad.size(); ++i) dx.data()[i] += d * grad.data()[i];
                         });
  return {{id, nullptr}, res.has_instances};
}

}  // namespace loss
}  // namespace hapt3d
