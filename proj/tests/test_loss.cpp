#include <gtest/gtest.h>

#include "oracles.hpp"
#include "support.hpp"

using namespace hapt3d;
using testing_support::check_gradients;
using testing_support::random_matrix;

namespace {

std::vector<std::uint8_t> random_mask(Rng& rng, std::size_t n, bool need_one) {
  std::vector<std::uint8_t> m(n);
  for (auto& v : m) v = rng.below(2) ? 1 : 0;
  if (need_one) m[rng.below(n)] = 1;
  return m;
}

std::vector<double> as_double(const std::vector<std::uint8_t>& m) { return {m.begin(), m.end()}; }

}  // namespace

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  const Matrix logits(4, 5, 0.3);
  const std::vector<int> t{0, 1, 2, 4};
  const std::vector<double> w(5, 1.0);
  EXPECT_NEAR(loss::weighted_cross_entropy(logits, t, w), std::log(5.0), 1e-12);
}

TEST(CrossEntropy, MarginDrivesLossToZero) {
  const std::vector<int> t{2};
  const std::vector<double> w(5, 1.0);
  double prev = std::numeric_limits<double>::infinity();
  for (double margin : {0.0, 1.0, 5.0, 20.0, 60.0}) {
    Matrix logits(1, 5);
    logits(0, 2) = margin;
    const double l = loss::weighted_cross_entropy(logits, t, w);
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-20);
}

TEST(CrossEntropy, MatchesNaiveSum) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix logits = random_matrix(10, 5, rng, -3.0, 3.0);
    std::vector<int> t(10);
    for (auto& v : t) v = static_cast<int>(rng.below(5));
    std::vector<double> w(5);
    for (auto& v : w) v = rng.uniform(0.1, 3.0);
    EXPECT_NEAR(loss::weighted_cross_entropy(logits, t, w), oracle::naive_weighted_ce(logits, t, w), 1e-12);
  }
}

TEST(CrossEntropy, ShiftInvariantPerRow) {
  Rng rng(2);
  Matrix logits = random_matrix(8, 5, rng);
  std::vector<int> t{0, 1, 2, 3, 4, 0, 1, 2};
  const std::vector<double> w{1.0, 2.0, 0.5, 1.0, 3.0};
  const double base = loss::weighted_cross_entropy(logits, t, w);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double s = rng.uniform(-50.0, 50.0);
    for (std::size_t k = 0; k < 5; ++k) logits(r, k) += s;
  }
  EXPECT_NEAR(loss::weighted_cross_entropy(logits, t, w), base, 1e-10);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  Matrix logits = random_matrix(6, 5, rng);
  const std::vector<int> t{4, 3, 2, 1, 0, 0};
  const std::vector<double> w{0.5, 1.0, 1.5, 2.0, 2.5};
  Matrix grad;
  loss::weighted_cross_entropy(logits, t, w, &grad);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double num = testing_support::central_difference(
        logits, i, [&] { return loss::weighted_cross_entropy(logits, t, w); });
    EXPECT_LT(testing_support::grad_rel_err(grad.data()[i], num), 1e-6);
  }
}

TEST(CrossEntropy, Errors) {
  const std::vector<double> w(5, 1.0);
  EXPECT_THROW(loss::weighted_cross_entropy(Matrix(0, 5), {}, w), ArgumentError);
  EXPECT_THROW(loss::weighted_cross_entropy(Matrix(1, 5), std::vector<int>{5}, w), ArgumentError);
  EXPECT_THROW(loss::weighted_cross_entropy(Matrix(1, 5), std::vector<int>{0}, std::vector<double>(4, 1.0)),
               ArgumentError);
}

TEST(Embeddings, Basics) {
  Rng rng(4);
  const Matrix p = random_matrix(5, 3, rng);
  EXPECT_EQ(loss::embeddings(p, Matrix(5, 3)), p);
  Matrix shift(5, 3);
  for (std::size_t r = 0; r < 5; ++r) shift(r, 0) = 1.0;
  const Matrix e = loss::embeddings(p, shift);
  for (std::size_t r = 0; r < 5; ++r) {
    EXPECT_DOUBLE_EQ(e(r, 0), p(r, 0) + 1.0);
    EXPECT_DOUBLE_EQ(e(r, 1), p(r, 1));
  }
  EXPECT_THROW(loss::embeddings(p, Matrix(4, 3)), ArgumentError);
}

TEST(SoftMask, ClosedForms) {
  const double eta = 0.7;
  Matrix e(3, 3);
  e(1, 0) = eta * std::sqrt(2.0);
  e(2, 1) = -eta * std::sqrt(2.0);
  const auto f = loss::soft_mask(e, Vec3{0, 0, 0}, eta);
  EXPECT_DOUBLE_EQ(f[0], 1.0);
  EXPECT_NEAR(f[1], std::exp(-1.0), 1e-12);
  EXPECT_NEAR(f[2], std::exp(-1.0), 1e-12);
  EXPECT_THROW(loss::soft_mask(e, Vec3{}, 0.0), ArgumentError);
}

TEST(SoftMask, PointwiseOracleAndTranslationInvariance) {
  Rng rng(5);
  const Matrix e = random_matrix(20, 3, rng);
  const Vec3 c{0.1, -0.2, 0.3};
  const double eta = 0.4;
  const auto f = loss::soft_mask(e, c, eta);
  for (std::size_t r = 0; r < 20; ++r) {
    const double d2 = std::pow(e(r, 0) - c[0], 2) + std::pow(e(r, 1) - c[1], 2) + std::pow(e(r, 2) - c[2], 2);
    EXPECT_NEAR(f[r], std::exp(-d2 / (2 * eta * eta)), 1e-12);
    EXPECT_GT(f[r], 0.0);
    EXPECT_LE(f[r], 1.0);
  }
  Matrix moved = e;
  const Vec3 t{5.0, -3.0, 2.0};
  for (std::size_t r = 0; r < 20; ++r)
    for (int a = 0; a < 3; ++a) moved(r, a) += t[a];
  const auto g = loss::soft_mask(moved, Vec3{c[0] + t[0], c[1] + t[1], c[2] + t[2]}, eta);
  for (std::size_t r = 0; r < 20; ++r) EXPECT_NEAR(g[r], f[r], 1e-12);
}

TEST(Lovasz, PerfectAndComplement) {
  const std::vector<std::uint8_t> g{1, 0, 1, 1, 0};
  EXPECT_EQ(loss::lovasz_hinge(as_double(g), g), 0.0);
  std::vector<double> comp;
  for (auto v : g) comp.push_back(v ? 0.0 : 1.0);
  EXPECT_DOUBLE_EQ(loss::lovasz_hinge(comp, g), 1.0);
}

TEST(Lovasz, BinaryMasksGiveJaccardError) {
  Rng rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(32);
    const auto g = random_mask(rng, n, true);
    const auto p = random_mask(rng, n, false);
    EXPECT_NEAR(loss::lovasz_hinge(as_double(p), g), 1.0 - oracle::discrete_iou(p, g), 1e-12);
  }
}

TEST(Lovasz, BoundedAndMonotone) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(20);
    const auto g = random_mask(rng, n, true);
    std::vector<double> f(n);
    for (auto& v : f) v = rng.uniform(0.0, 1.0);
    std::vector<double> grad;
    const double l = loss::lovasz_hinge(f, g, &grad);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 1.0 + 1e-12);
    // Raising a foreground score never hurts, raising a background one never helps.
    for (std::size_t i = 0; i < n; ++i) {
      if (g[i]) EXPECT_LE(grad[i], 0.0);
      else EXPECT_GE(grad[i], 0.0);
    }
    const std::size_t i = rng.below(n);
    std::vector<double> bumped = f;
    bumped[i] = g[i] ? std::min(1.0, f[i] + 1e-7) : std::max(0.0, f[i] - 1e-7);
    EXPECT_LE(loss::lovasz_hinge(bumped, g), l + 1e-15);
  }
}

TEST(Lovasz, GradientIsExactInsideALinearPiece) {
  Rng rng(8);
  const std::size_t n = 12;
  const auto g = random_mask(rng, n, true);
  std::vector<double> f(n);
  for (auto& v : f) v = rng.uniform(0.05, 0.95);
  std::vector<double> grad;
  loss::lovasz_hinge(f, g, &grad);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> a = f, b = f;
    a[i] += 1e-9;
    b[i] -= 1e-9;
    const double num = (loss::lovasz_hinge(a, g) - loss::lovasz_hinge(b, g)) / 2e-9;
    EXPECT_NEAR(grad[i], num, 1e-5);
  }
}

TEST(Lovasz, Errors) {
  EXPECT_THROW(loss::lovasz_hinge(std::vector<double>{0.5, 0.5}, std::vector<std::uint8_t>{0, 0}), ArgumentError);
  EXPECT_THROW(loss::lovasz_hinge(std::vector<double>{0.5}, std::vector<std::uint8_t>{1, 0}), ArgumentError);
}

TEST(InstanceLoss, CollapsedMembersNearlyPerfect) {
  Matrix e(10, 3);
  for (std::size_t r = 5; r < 10; ++r) e(r, 0) = 10.0 + static_cast<double>(r);
  InstanceSpec spec{{{0, 1, 2, 3, 4}}};
  EXPECT_LT(loss::instance_level_loss(e, spec, 0.5).value, 0.01);
}

TEST(InstanceLoss, IdenticalInstancesAverageToTheShared) {
  Rng rng(9);
  // Two copies of the same configuration, 100 m apart so neither mask sees the other.
  const Matrix half = random_matrix(6, 3, rng);
  Matrix e(12, 3);
  for (std::size_t r = 0; r < 6; ++r)
    for (int a = 0; a < 3; ++a) {
      e(r, a) = half(r, a);
      e(r + 6, a) = half(r, a) + (a == 0 ? 100.0 : 0.0);
    }
  const InstanceSpec one{{{0, 1, 2}}};
  const InstanceSpec both{{{0, 1, 2}, {6, 7, 8}}};
  Matrix single(6, 3);
  for (std::size_t r = 0; r < 6; ++r)
    for (int a = 0; a < 3; ++a) single(r, a) = half(r, a);
  const double shared = loss::instance_level_loss(single, one, 0.5).value;
  // Far points only add exact-zero mask values, so the per-instance value is unchanged.
  EXPECT_NEAR(loss::instance_level_loss(e, both, 0.5).value, shared, 1e-12);
}

TEST(InstanceLoss, NoInstancesIsFlagged) {
  const auto res = loss::instance_level_loss(Matrix(4, 3), InstanceSpec{}, 0.5);
  EXPECT_FALSE(res.has_instances);
  EXPECT_EQ(res.value, 0.0);
}

TEST(InstanceLoss, Errors) {
  EXPECT_THROW(loss::instance_level_loss(Matrix(4, 3), InstanceSpec{{{}}}, 0.5), ArgumentError);
  EXPECT_THROW(loss::instance_level_loss(Matrix(4, 3), InstanceSpec{{{0, 1}, {1, 2}}}, 0.5), ArgumentError);
  EXPECT_THROW(loss::instance_level_loss(Matrix(4, 3), InstanceSpec{{{7}}}, 0.5), ArgumentError);
  EXPECT_THROW(loss::instance_level_loss(Matrix(4, 3), InstanceSpec{{{0}}}, 0.0), ArgumentError);
  EXPECT_THROW(loss::instance_level_loss(Matrix(4, 3), InstanceSpec{{{0}}}, 0.5, CentroidMode::kSpatial), ArgumentError);
}

TEST(InstanceLoss, GradientThroughOffsetsMatchesFiniteDifferences) {
  for (CentroidMode mode : {CentroidMode::kEmbeddingMean, CentroidMode::kSpatial}) {
    Rng rng(10);
    ParameterStore store;
    Parameter& off = store.add("off", random_matrix(15, 3, rng, -0.2, 0.2));
    const Matrix pos = random_matrix(15, 3, rng, -0.5, 0.5);
    const InstanceSpec spec{{{0, 1, 2, 3, 4}, {5, 6, 7}, {10, 12}}};
    Graph g;
    auto loss = [&]() {
      g.reset();
      Var o{g.parameter(off), nullptr};
      Var e = loss::embeddings_op(g, o, pos);
      return loss::instance_loss_op(g, e, spec, 0.3, mode, &pos).value;
    };
    auto value = [&]() { return g.value(loss().id)(0, 0); };
    auto backprop = [&]() {
      Var l = loss();
      g.backward(l.id);
    };
    Rng pick(11);
    EXPECT_LT(check_gradients(store, value, backprop, 30, pick, 1e-7).worst, 1e-4);
  }
}

TEST(InstanceLoss, OffsetGradientEqualsEmbeddingGradient) {
  Rng rng(12);
  const Matrix pos = random_matrix(8, 3, rng);
  const Matrix off = random_matrix(8, 3, rng, -0.1, 0.1);
  const InstanceSpec spec{{{0, 1, 2}, {4, 5}}};
  Matrix grad_e;
  loss::instance_level_loss(loss::embeddings(pos, off), spec, 0.4, CentroidMode::kEmbeddingMean, nullptr, &grad_e);
  ParameterStore store;
  Parameter& p = store.add("off", off);
  Graph g;
  Var e = loss::embeddings_op(g, Var{g.parameter(p), nullptr}, pos);
  g.backward(loss::instance_loss_op(g, e, spec, 0.4).value.id);
  EXPECT_EQ(p.grad, grad_e);
}

TEST(TotalLoss, WeightedSum) {
  LossConfig cfg;
  EXPECT_DOUBLE_EQ(loss::total_loss(0.5, 0.2, 0.3, cfg), 1.0);
  cfg.w_tree = 0.0;
  cfg.w_ins = 0.0;
  EXPECT_DOUBLE_EQ(loss::total_loss(0.5, 0.2, 0.3, cfg), 0.5);
  cfg = LossConfig{};
  cfg.w_sem = 3.0;
  EXPECT_DOUBLE_EQ(loss::total_loss(0.5, 0.2, 0.3, cfg) - loss::total_loss(0.5, 0.2, 0.3, LossConfig{}), 2 * 0.5);
  cfg.eta_tree = 0.0;
  EXPECT_THROW(cfg.validate(), ArgumentError);
}
