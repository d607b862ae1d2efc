#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hapt3d/error.hpp"
#include "hapt3d/matrix.hpp"
#include "hapt3d/sparse.hpp"

namespace hapt3d {

// Named array with a gradient slot. Non-trainable entries hold buffers such as
// normalization running statistics; they are checkpointed but never updated by
// the optimizer.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;
};

class ParameterStore {
 public:
  Parameter& add(const std::string& name, Matrix init, bool trainable = true) {
    if (index_.count(name)) throw ArgumentError("duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->grad = Matrix(init.rows(), init.cols());
    p->value = std::move(init);
    p->trainable = trainable;
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter '" + name + "'");
    return *params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->at(name);
  }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  std::vector<Parameter*> trainable() {
    std::vector<Parameter*> out;
    for (auto& p : params_)
      if (p->trainable) out.push_back(p.get());
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad = Matrix(p->value.rows(), p->value.cols());
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p->trainable) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

using NodeId = int;

// Tape-based reverse-mode graph. Nodes are appended in evaluation order, so
// reverse insertion order is a valid topological order for the backward pass.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, NodeId self)>;

  enum class State { kIdle, kRecording, kConsumed };

  struct Node {
    std::string kind;
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<NodeId> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  void reset() {
    nodes_.clear();
    param_nodes_.clear();
    state_ = State::kRecording;
  }

  State state() const { return state_; }
  std::size_t size() const { return nodes_.size(); }

  NodeId constant(Matrix v, std::string kind = "constant") {
    begin_record();
    Node n;
    n.kind = std::move(kind);
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  // One leaf per parameter per recording, so each parameter receives exactly
  // one accumulated gradient.
  NodeId parameter(Parameter& p) {
    begin_record();
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    Node n;
    n.kind = "parameter";
    n.value = p.value;
    n.requires_grad = p.trainable;
    n.param = &p;
    nodes_.push_back(std::move(n));
    const auto id = static_cast<NodeId>(nodes_.size() - 1);
    param_nodes_[&p] = id;
    return id;
  }

  NodeId op(std::string kind, Matrix value, std::vector<NodeId> parents, BackwardFn fn) {
    begin_record();
    Node n;
    n.kind = std::move(kind);
    n.value = std::move(value);
    for (NodeId p : parents) n.requires_grad = n.requires_grad || nodes_.at(p).requires_grad;
    n.parents = std::move(parents);
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  const Matrix& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  const Node& node(NodeId id) const { return nodes_.at(id); }

  Matrix& grad(NodeId id) {
    Node& n = nodes_.at(id);
    if (!n.has_grad) {
      n.grad = Matrix(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  // Seeds d(loss)/d(loss) = 1, propagates, writes parameter gradients, then
  // frees the tape. A second call without a new forward is a state error.
  void backward(NodeId loss) {
    if (state_ == State::kIdle) throw StateError("backward called before forward");
    if (state_ == State::kConsumed) throw StateError("backward already ran; run forward again");
    const Node& ln = nodes_.at(loss);
    if (ln.value.rows() != 1 || ln.value.cols() != 1) {
      throw ArgumentError("backward: loss must be a 1x1 scalar, got " + ln.value.shape_string());
    }
    grad(loss)(0, 0) = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.has_grad && n.backward) n.backward(*this, id);
    }
    for (Node& n : nodes_) {
      if (!n.param || !n.param->trainable) continue;
      Parameter& p = *n.param;
      p.grad = n.has_grad ? std::move(n.grad) : Matrix(p.value.rows(), p.value.cols());
    }
    nodes_.clear();
    param_nodes_.clear();
    state_ = State::kConsumed;
  }

  std::vector<std::string> kinds() const {
    std::vector<std::string> out;
    for (const auto& n : nodes_) out.push_back(n.kind);
    return out;
  }

  std::size_t count_kind(const std::string& kind) const {
    std::size_t c = 0;
    for (const auto& n : nodes_) c += n.kind == kind;
    return c;
  }

  // Names of parameters `id` depends on.
  std::set<std::string> reachable_parameters(NodeId id) const {
    std::set<std::string> names;
    std::vector<char> seen(nodes_.size(), 0);
    std::vector<NodeId> stack{id};
    while (!stack.empty()) {
      const NodeId u = stack.back();
      stack.pop_back();
      if (seen[u]) continue;
      seen[u] = 1;
      if (nodes_[u].param) names.insert(nodes_[u].param->name);
      for (NodeId p : nodes_[u].parents) stack.push_back(p);
    }
    return names;
  }

 private:
  void begin_record() {
    if (state_ != State::kRecording) reset();
  }

  std::deque<Node> nodes_;  // deque keeps value references valid while recording
  std::unordered_map<const Parameter*, NodeId> param_nodes_;
  State state_ = State::kIdle;
};

// Graph handle for a sparse feature matrix; `coords` is null for dense values
// such as scalar losses.
struct Var {
  NodeId id = -1;
  CoordsPtr coords;
};

namespace ops {

inline Var input(Graph& g, Matrix feats, CoordsPtr coords) {
  return {g.constant(std::move(feats), "input"), std::move(coords)};
}

// Sparse convolution through a prebuilt kernel map. `bias` may be null.
inline Var conv(Graph& g, const Var& x, Parameter& w, Parameter* bias,
                std::shared_ptr<const KernelMap> km, CoordsPtr out_coords) {
  const NodeId wid = g.parameter(w);
  const NodeId bid = bias ? g.parameter(*bias) : -1;
  const Matrix& xv = g.value(x.id);
  if (xv.cols() * km->volume() != w.value.rows()) {
    throw ArgumentError("conv '" + w.name + "': expects " +
                        std::to_string(w.value.rows() / km->volume()) + " input channels, got " +
                        std::to_string(xv.cols()));
  }
  Matrix out = bias ? broadcast_bias(km->out_rows, bias->value) : Matrix(km->out_rows, w.value.cols());
  conv_accumulate(xv, w.value, *km, out);
  std::vector<NodeId> parents{x.id, wid};
  if (bias) parents.push_back(bid);
  const NodeId xid = x.id;
  const NodeId id = g.op("conv", std::move(out), parents, [xid, wid, bid, km](Graph& g, NodeId self) {
    const Matrix& dout = g.grad(self);
    if (g.requires_grad(xid)) conv_backward_input(dout, g.value(wid), *km, g.grad(xid));
    if (g.requires_grad(wid)) conv_backward_weight(g.value(xid), dout, *km, g.grad(wid));
    if (bid >= 0 && g.requires_grad(bid)) {
      Matrix& db = g.grad(bid);
      for (std::size_t r = 0; r < dout.rows(); ++r) {
        auto row = dout.row(r);
        for (std::size_t c = 0; c < dout.cols(); ++c) db(0, c) += row[c];
      }
    }
  });
  return {id, std::move(out_coords)};
}

struct NormParams {
  Parameter* gamma;
  Parameter* beta;
  Parameter* running_mean;
  Parameter* running_var;
  double momentum = 0.9;
  double eps = 1e-5;
};

// Per-channel normalization over all rows (the whole cloud is the batch).
// Training mode uses the batch statistics (biased variance) and updates the
// running statistics; evaluation mode uses the running statistics.
inline Var norm(Graph& g, const Var& x, const NormParams& np, bool training) {
  const Matrix& xv = g.value(x.id);
  const std::size_t n = xv.rows(), c = xv.cols();
  const NodeId gid = g.parameter(*np.gamma);
  const NodeId bid = g.parameter(*np.beta);
  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  if (training && n > 0) {
    std::vector<double> var(c, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < c; ++k) mean[k] += xv(r, k);
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < c; ++k) {
        const double d = xv(r, k) - mean[k];
        var[k] += d * d;
      }
    for (std::size_t k = 0; k < c; ++k) {
      var[k] /= static_cast<double>(n);
      inv_std[k] = 1.0 / std::sqrt(var[k] + np.eps);
      np.running_mean->value(0, k) = np.momentum * np.running_mean->value(0, k) + (1 - np.momentum) * mean[k];
      np.running_var->value(0, k) = np.momentum * np.running_var->value(0, k) + (1 - np.momentum) * var[k];
    }
  } else {
    for (std::size_t k = 0; k < c; ++k) {
      mean[k] = np.running_mean->value(0, k);
      inv_std[k] = 1.0 / std::sqrt(np.running_var->value(0, k) + np.eps);
    }
  }
  Matrix xhat(n, c), out(n, c);
  const Matrix& gamma = np.gamma->value;
  const Matrix& beta = np.beta->value;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      xhat(r, k) = (xv(r, k) - mean[k]) * inv_std[k];
      out(r, k) = gamma(0, k) * xhat(r, k) + beta(0, k);
    }
  const NodeId xid = x.id;
  const bool batch_stats = training && n > 0;
  const NodeId id = g.op(
      "norm", std::move(out), {xid, gid, bid},
      [xid, gid, bid, xhat = std::move(xhat), inv_std, batch_stats](Graph& g, NodeId self) {
        const Matrix& dy = g.grad(self);
        const std::size_t n = dy.rows(), c = dy.cols();
        const Matrix& gamma = g.value(gid);
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t k = 0; k < c; ++k) {
            sum_dy[k] += dy(r, k);
            sum_dy_xhat[k] += dy(r, k) * xhat(r, k);
          }
        if (g.requires_grad(gid)) {
          Matrix& dg = g.grad(gid);
          for (std::size_t k = 0; k < c; ++k) dg(0, k) += sum_dy_xhat[k];
        }
        if (g.requires_grad(bid)) {
          Matrix& db = g.grad(bid);
          for (std::size_t k = 0; k < c; ++k) db(0, k) += sum_dy[k];
        }
        if (!g.requires_grad(xid)) return;
        Matrix& dx = g.grad(xid);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t k = 0; k < c; ++k) {
            const double gk = gamma(0, k) * inv_std[k];
            if (batch_stats) {
              dx(r, k) += gk * (dy(r, k) - inv_n * sum_dy[k] - xhat(r, k) * inv_n * sum_dy_xhat[k]);
            } else {
              dx(r, k) += gk * dy(r, k);
            }
          }
      });
  return {id, x.coords};
}

inline Var relu(Graph& g, const Var& x) {
  Matrix out = g.value(x.id);
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  const NodeId xid = x.id;
  const NodeId id = g.op("relu", std::move(out), {xid}, [xid](Graph& g, NodeId self) {
    if (!g.requires_grad(xid)) return;
    const Matrix& y = g.value(self);
    const Matrix& dy = g.grad(self);
    Matrix& dx = g.grad(xid);
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y.data()[i] > 0.0) dx.data()[i] += dy.data()[i];
  });
  return {id, x.coords};
}

inline bool same_coords(const CoordsPtr& a, const CoordsPtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  return a->stride() == b->stride() && a->coords() == b->coords();
}

inline Var add(Graph& g, const Var& a, const Var& b) {
  if (!same_coords(a.coords, b.coords)) throw ArgumentError("add: coordinate sets differ");
  Matrix out = g.value(a.id);
  out += g.value(b.id);
  const NodeId aid = a.id, bid = b.id;
  const NodeId id = g.op("add", std::move(out), {aid, bid}, [aid, bid](Graph& g, NodeId self) {
    const Matrix& dy = g.grad(self);
    if (g.requires_grad(aid)) g.grad(aid) += dy;
    if (g.requires_grad(bid)) g.grad(bid) += dy;
  });
  return {id, a.coords};
}

// Channel concatenation on an identical coordinate set.
inline Var concat(Graph& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw ArgumentError("concat: no inputs");
  std::size_t cols = 0;
  const std::size_t rows = g.value(parts[0].id).rows();
  for (const auto& p : parts) {
    if (!same_coords(p.coords, parts[0].coords)) throw ArgumentError("concat: coordinate sets differ");
    cols += g.value(p.id).cols();
  }
  Matrix out(rows, cols);
  std::vector<NodeId> ids;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Matrix& v = g.value(p.id);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, off + c) = v(r, c);
    off += v.cols();
    ids.push_back(p.id);
  }
  const NodeId id = g.op("concat", std::move(out), ids, [ids](Graph& g, NodeId self) {
    const Matrix& dy = g.grad(self);
    std::size_t off = 0;
    for (NodeId p : ids) {
      const std::size_t w = g.value(p).cols();
      if (g.requires_grad(p)) {
        Matrix& dx = g.grad(p);
        for (std::size_t r = 0; r < dy.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) dx(r, c) += dy(r, off + c);
      }
      off += w;
    }
  });
  return {id, parts[0].coords};
}

// Scalar sum of all entries.
inline Var sum(Graph& g, const Var& x) {
  double s = 0.0;
  for (double v : g.value(x.id).values()) s += v;
  const NodeId xid = x.id;
  const NodeId id = g.op("sum", Matrix(1, 1, s), {xid}, [xid](Graph& g, NodeId self) {
    if (!g.requires_grad(xid)) return;
    const double d = g.grad(self)(0, 0);
    for (auto& v : g.grad(xid).values()) v += d;
  });
  return {id, nullptr};
}

// Scalar <x, weights>; handy as a generic downstream objective.
inline Var inner(Graph& g, const Var& x, Matrix weights) {
  const double s = dot(g.value(x.id), weights);
  const NodeId xid = x.id;
  const NodeId id = g.op("inner", Matrix(1, 1, s), {xid},
                         [xid, w = std::move(weights)](Graph& g, NodeId self) {
                           if (!g.requires_grad(xid)) return;
                           const double d = g.grad(self)(0, 0);
                           Matrix& dx = g.grad(xid);
                           for (std::size_t i = 0; i < w.size(); ++i) dx.data()[i] += d * w.data()[i];
                         });
  return {id, nullptr};
}

// sum_i coeffs[i] * scalars[i].
inline Var weighted_sum(Graph& g, const std::vector<Var>& scalars, const std::vector<double>& coeffs) {
  if (scalars.size() != coeffs.size()) throw ArgumentError("weighted_sum: size mismatch");
  double s = 0.0;
  std::vector<NodeId> ids;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    s += coeffs[i] * g.value(scalars[i].id)(0, 0);
    ids.push_back(scalars[i].id);
  }
  const NodeId id = g.op("weighted_sum", Matrix(1, 1, s), ids, [ids, coeffs](Graph& g, NodeId self) {
    const double d = g.grad(self)(0, 0);
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (g.requires_grad(ids[i])) g.grad(ids[i])(0, 0) += coeffs[i] * d;
  });
  return {id, nullptr};
}

}  // namespace ops
}  // namespace hapt3d
