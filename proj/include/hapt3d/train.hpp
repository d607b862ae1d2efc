#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hapt3d/augment.hpp"
#include "hapt3d/cloud.hpp"
#include "hapt3d/error.hpp"
#include "hapt3d/hdbscan.hpp"
#include "hapt3d/instances.hpp"
#include "hapt3d/loss.hpp"
#include "hapt3d/metrics.hpp"
#include "hapt3d/network.hpp"
#include "hapt3d/random.hpp"
#include "hapt3d/voxelize.hpp"

namespace hapt3d {

struct AdamWParams {
  double lr = 5e-3;
  double weight_decay = 0.99;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw ArgumentError("lr must be positive");
    if (!(weight_decay >= 0.0)) throw ArgumentError("weight_decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ArgumentError("beta1 and beta2 must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ArgumentError("eps must be positive");
  }
};

struct OptimState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step = 0;
};

// Decoupled weight decay: theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
// A non-finite gradient rejects the whole step and leaves params and state untouched.
inline void adamw_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, OptimState& st,
                       const AdamWParams& cfg) {
  if (params.size() != grads.size()) throw ArgumentError("adamw_step: params and grads differ in count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->require_same_shape(*grads[i], "adamw_step");
    for (double g : grads[i]->values()) {
      if (!std::isfinite(g)) throw DivergenceError("adamw_step: non-finite gradient, step rejected");
    }
  }
  if (st.m.empty()) {
    for (const Matrix* p : params) {
      st.m.emplace_back(p->rows(), p->cols());
      st.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (st.m.size() != params.size()) throw ArgumentError("adamw_step: optimizer state does not match params");
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->require_same_shape(st.m[i], "adamw_step state");

  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* th = params[i]->data();
    const double* g = grads[i]->data();
    double* m = st.m[i].data();
    double* v = st.v[i].data();
    for (std::size_t j = 0; j < params[i]->size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      th[j] -= cfg.lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * th[j]);
    }
  }
}

// Steps every trainable parameter of the store using its current gradient.
inline void adamw_step(ParameterStore& store, OptimState& st, const AdamWParams& cfg) {
  std::vector<Matrix*> ps;
  std::vector<const Matrix*> gs;
  for (Parameter* p : store.trainable()) {
    ps.push_back(&p->value);
    gs.push_back(&p->grad);
  }
  adamw_step(ps, gs, st, cfg);
}

// Rescales all gradients so their joint L2 norm is at most max_norm.
inline double clip_grad_norm(ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (Parameter* p : store.trainable()) sq += dot(p->grad, p->grad);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Parameter* p : store.trainable())
      for (double& g : p->grad.values()) g *= s;
  }
  return norm;
}

struct TrainConfig {
  AdamWParams optim;
  int epochs = 50;
  std::uint64_t seed = 0;  // also seeds network initialization
  int eval_every = 0;      // 0 disables mid-training evaluation
  double grad_clip = 0.0;  // max gradient norm, 0 = off
  LossConfig loss;
  AugmentConfig augment;
  NetworkConfig network;
  ClusterParams tree_cluster = ClusterParams::tree_level();
  ClusterParams instance_cluster = ClusterParams::instance_level();

  void validate() const {
    optim.validate();
    if (epochs < 0) throw ArgumentError("epochs must be non-negative");
    if (eval_every < 0) throw ArgumentError("eval_every must be non-negative");
    if (grad_clip < 0.0) throw ArgumentError("grad_clip must be non-negative");
    loss.validate();
    augment.validate();
    network.validate();
    tree_cluster.validate();
    instance_cluster.validate();
  }
};

struct LossParts {
  double total = 0.0, sem = 0.0, tree = 0.0, ins = 0.0;
};

// Row-level training targets for a cloud already voxelized at the network's
// voxel size.
struct Targets {
  std::vector<int> semantic;
  InstanceSpec trees;
  InstanceSpec instances;
};

inline Targets make_targets(const LabeledCloud& vox, const std::vector<std::int32_t>& point_to_row,
                            std::size_t rows) {
  Targets t;
  t.semantic.assign(rows, 0);
  for (std::size_t i = 0; i < vox.size(); ++i) t.semantic[point_to_row[i]] = vox.points[i].semantic;
  auto to_rows = [&](const std::vector<std::vector<std::size_t>>& groups) {
    InstanceSpec spec;
    for (const auto& g : groups) {
      std::vector<std::size_t> rs;
      for (std::size_t i : g) rs.push_back(static_cast<std::size_t>(point_to_row[i]));
      std::sort(rs.begin(), rs.end());
      rs.erase(std::unique(rs.begin(), rs.end()), rs.end());
      spec.members.push_back(std::move(rs));
    }
    return spec;
  };
  t.trees = to_rows(group_by_tree(vox));
  t.instances = to_rows(group_by_instance(vox));
  return t;
}

// Forward, loss assembly and backward for one voxelized cloud. Parameter
// gradients are left in the store.
inline LossParts loss_and_gradients(Network& net, const LabeledCloud& vox, const std::vector<double>& class_weights,
                                    const LossConfig& cfg) {
  NetworkOutput out = net.forward(vox, Mode::kTrain);
  const Targets t = make_targets(vox, out.point_to_row, out.rows());
  Graph& g = net.graph();
  const Var ce = loss::cross_entropy_op(g, out.logits_var, t.semantic, class_weights);
  const Var et = loss::embeddings_op(g, out.tree_var, out.positions);
  const Var ei = loss::embeddings_op(g, out.instance_var, out.positions);
  const auto lt = loss::instance_loss_op(g, et, t.trees, cfg.eta_tree, cfg.centroid, &out.positions);
  const auto li = loss::instance_loss_op(g, ei, t.instances, cfg.eta_instance, cfg.centroid, &out.positions);
  const Var total = ops::weighted_sum(g, {ce, lt.value, li.value}, {cfg.w_sem, cfg.w_tree, cfg.w_ins});
  LossParts parts{g.value(total.id)(0, 0), g.value(ce.id)(0, 0), g.value(lt.value.id)(0, 0),
                  g.value(li.value.id)(0, 0)};
  if (!std::isfinite(parts.total)) throw DivergenceError("non-finite training loss");
  net.backward(total);
  return parts;
}

inline PanopticAccumulator evaluate_network(Network& net, const std::vector<LabeledCloud>& clouds,
                                            const ClusterParams& tree_params, const ClusterParams& instance_params) {
  PanopticAccumulator acc;
  for (const auto& c : clouds) acc.add(predict(net, c, tree_params, instance_params), c);
  return acc;
}

struct EpochRecord {
  int epoch = 0;  // 1-based
  LossParts loss;  // means over the epoch's clouds
  std::optional<PanopticReport> eval;
};

struct TrainResult {
  std::unique_ptr<Network> network;  // holds the retained parameters
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // epoch of the retained parameters (0 = initialization)
  double best_mpq = -1.0;
  bool diverged = false;
  std::string error;
};

// Class weights of the loss config, or inverse frequencies of the training
// clouds when none are configured.
inline std::vector<double> resolve_class_weights(const LossConfig& cfg, const std::vector<LabeledCloud>& clouds) {
  if (!cfg.class_weights.empty()) {
    if (cfg.class_weights.size() != static_cast<std::size_t>(ClassTable::kNumClasses)) {
      throw ArgumentError("class_weights needs one entry per class");
    }
    return cfg.class_weights;
  }
  const auto w = class_frequencies(clouds);
  return {w.begin(), w.end()};
}

// Sequential batch-size-1 training. Parameters retained at the end are the
// best-mPQ evaluation when evaluation is enabled, otherwise the final ones;
// on divergence the last finite parameters are kept and `diverged` is set.
inline TrainResult train(const std::vector<LabeledCloud>& train_clouds, const std::vector<LabeledCloud>& val_clouds,
                         const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (train_clouds.empty()) throw ArgumentError("train: need at least one training cloud");
  NetworkConfig nc = cfg.network;
  nc.seed = cfg.seed;
  TrainResult res;
  res.network = std::make_unique<Network>(nc);
  Network& net = *res.network;
  const auto weights = resolve_class_weights(cfg.loss, train_clouds);

  Rng rng(cfg.seed ^ 0x7261696EULL);
  OptimState opt;
  std::vector<Matrix> best = net.snapshot();
  std::vector<Matrix> good = best;
  std::vector<std::size_t> order(train_clouds.size());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch;
    try {
      for (std::size_t idx : order) {
        Rng aug_rng = rng.fork(idx);
        const LabeledCloud vox = voxelize(augment(train_clouds[idx], cfg.augment, aug_rng), nc.voxel_size);
        const LossParts p = loss_and_gradients(net, vox, weights, cfg.loss);
        if (cfg.grad_clip > 0.0) clip_grad_norm(net.params(), cfg.grad_clip);
        adamw_step(net.params(), opt, cfg.optim);
        rec.loss.total += p.total;
        rec.loss.sem += p.sem;
        rec.loss.tree += p.tree;
        rec.loss.ins += p.ins;
      }
    } catch (const DivergenceError& e) {
      res.diverged = true;
      res.error = "epoch " + std::to_string(epoch) + ": " + e.what();
      net.restore(cfg.eval_every > 0 && res.best_epoch > 0 ? best : good);
      return res;
    }
    const double n = static_cast<double>(order.size());
    rec.loss.total /= n;
    rec.loss.sem /= n;
    rec.loss.tree /= n;
    rec.loss.ins /= n;
    good = net.snapshot();
    if (cfg.eval_every > 0 && !val_clouds.empty() && epoch % cfg.eval_every == 0) {
      rec.eval = evaluate_network(net, val_clouds, cfg.tree_cluster, cfg.instance_cluster).report();
      if (rec.eval->mpq > res.best_mpq) {
        res.best_mpq = rec.eval->mpq;
        res.best_epoch = epoch;
        best = good;
      }
    }
    res.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (res.best_epoch > 0) {
    net.restore(best);
  } else {
    res.best_epoch = cfg.epochs;
  }
  return res;
}

struct AblationRow {
  SkipScheme scheme = SkipScheme::kNone;
  PanopticReport report;
};

// One training run per skip scheme with otherwise identical configuration,
// each evaluated on the validation clouds. Rows follow the A-D order.
inline std::vector<AblationRow> ablate(const std::vector<LabeledCloud>& train_clouds,
                                       const std::vector<LabeledCloud>& val_clouds, const TrainConfig& base,
                                       const std::function<void(SkipScheme, const EpochRecord&)>& on_epoch = {}) {
  std::vector<AblationRow> rows;
  for (SkipScheme s : kAllSchemes) {
    TrainConfig cfg = base;
    cfg.network.skip_scheme = s;
    auto cb = [&](const EpochRecord& r) {
      if (on_epoch) on_epoch(s, r);
    };
    TrainResult tr = train(train_clouds, val_clouds, cfg, cb);
    if (tr.diverged) throw DivergenceError("ablation row " + std::string(1, scheme_letter(s)) + ": " + tr.error);
    rows.push_back({s, evaluate_network(*tr.network, val_clouds, cfg.tree_cluster, cfg.instance_cluster).report()});
  }
  return rows;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-3s %-15s %8s %8s %8s %8s\n", "row", "skip", "mIoU", "PQ", "PQ_T", "mPQ");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-3c %-15s %8.2f %8.2f %8.2f %8.2f\n", scheme_letter(r.scheme),
                  to_string(r.scheme).c_str(), 100.0 * r.report.miou, 100.0 * r.report.pq, 100.0 * r.report.pq_t,
                  100.0 * r.report.mpq);
    out += line;
  }
  return out;
}

}  // namespace hapt3d
