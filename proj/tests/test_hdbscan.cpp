#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "reference_hdbscan.hpp"
#include "support.hpp"

using namespace hapt3d;
using testing_support::same_partition;

namespace {

int cluster_count(const std::vector<int>& labels) {
  int mx = -1;
  for (int l : labels) mx = std::max(mx, l);
  return mx + 1;
}

// A network output whose rows are the points themselves, with one-hot
// logits for `semantic` and the given offsets for both instance heads.
struct Constructed {
  LabeledCloud cloud;
  NetworkOutput out;
};

Constructed construct(const std::vector<Vec3>& positions, const std::vector<int>& semantic,
                      const std::vector<Vec3>& tree_offsets, const std::vector<Vec3>& ins_offsets) {
  Constructed c;
  const std::size_t n = positions.size();
  c.out.positions = Matrix(n, 3);
  c.out.semantic_logits = Matrix(n, ClassTable::kNumClasses);
  c.out.tree_offsets = Matrix(n, 3);
  c.out.instance_offsets = Matrix(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    PointRecord p;
    p.position = positions[i];
    p.semantic = semantic[i];
    c.cloud.points.push_back(p);
    c.out.point_to_row.push_back(static_cast<std::int32_t>(i));
    c.out.semantic_logits(i, semantic[i]) = 5.0;
    for (int a = 0; a < 3; ++a) {
      c.out.positions(i, a) = positions[i][a];
      c.out.tree_offsets(i, a) = tree_offsets[i][a];
      c.out.instance_offsets(i, a) = ins_offsets[i][a];
    }
  }
  return c;
}

// A separate 40-point apple cluster 1 m away. Excess-of-mass selection never
// returns the root, so a lone cluster needs a sibling to be selected.
void add_companion(std::vector<Vec3>& pos, std::vector<Vec3>& off, std::vector<int>& sem, Rng& rng) {
  for (int i = 0; i < 40; ++i) {
    pos.push_back({1.0 + rng.uniform(0, 0.02), rng.uniform(0, 0.02), rng.uniform(0, 0.02)});
    off.push_back({0, 0, 0});
    sem.push_back(kApple);
  }
}

}  // namespace

TEST(Hdbscan, TwoSeparatedBlobs) {
  Rng rng(1);
  std::vector<Vec3> pts;
  fixtures::blob(pts, rng, {0, 0, 0}, 0.1, 50);
  fixtures::blob(pts, rng, {10, 0, 0}, 0.1, 50);
  const auto labels = hdbscan(pts, {5, 10});
  EXPECT_EQ(cluster_count(labels), 2);
  EXPECT_EQ(std::count(labels.begin(), labels.end(), kNoise), 0);
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(labels[i], labels[0]);
    EXPECT_EQ(labels[50 + i], labels[50]);
  }
  EXPECT_NE(labels[0], labels[50]);
}

TEST(Hdbscan, TooFewPointsAreNoise) {
  const std::vector<Vec3> pts{{0, 0, 0}, {0.1, 0, 0}, {0, 0.1, 0}};
  EXPECT_EQ(hdbscan(pts, {5, 2}), std::vector<int>(3, kNoise));
  EXPECT_TRUE(hdbscan({}, {5, 2}).empty());
}

TEST(Hdbscan, ParamValidation) {
  EXPECT_THROW(hdbscan({}, {1, 2}), ArgumentError);
  EXPECT_THROW(hdbscan({}, {5, 0}), ArgumentError);
}

TEST(Hdbscan, CanonicalLabels) {
  EXPECT_EQ(canonical_labels({7, 3, 3, -1, 7, 9, 3}), (std::vector<int>{1, 0, 0, -1, 1, 2, 0}));
  // Equal sizes: the cluster holding the smaller index comes first.
  EXPECT_EQ(canonical_labels({4, 2, 4, 2}), (std::vector<int>{0, 1, 0, 1}));
}

TEST(Hdbscan, MatchesReferenceOnFixtures) {
  for (const auto& f : fixtures::hdbscan_fixtures()) {
    const auto got = hdbscan(f.points, f.params);
    const auto want = ref::hdbscan(f.points, f.params.min_cluster_size, f.params.min_samples);
    EXPECT_TRUE(same_partition(got, want)) << f.name;
    EXPECT_EQ(got, canonical_labels(got)) << f.name;
  }
}

TEST(Hdbscan, FixturesHaveExpectedStructure) {
  const auto fx = fixtures::hdbscan_fixtures();
  EXPECT_EQ(cluster_count(hdbscan(fx[0].points, fx[0].params)), 2);
  EXPECT_EQ(cluster_count(hdbscan(fx[1].points, fx[1].params)), 3);
  EXPECT_GE(cluster_count(hdbscan(fx[3].points, fx[3].params)), 3);
}

TEST(Hdbscan, MatchesReferenceOnRandomScenes) {
  Rng rng(2);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<Vec3> pts;
    const int blobs = 1 + static_cast<int>(rng.below(4));
    for (int b = 0; b < blobs; ++b) {
      fixtures::blob(pts, rng, {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)}, rng.uniform(0.1, 1.0),
                     10 + static_cast<int>(rng.below(30)));
    }
    fixtures::box(pts, rng, -6, 6, static_cast<int>(rng.below(20)));
    const ClusterParams p{2 + static_cast<int>(rng.below(10)), 1 + static_cast<int>(rng.below(8))};
    EXPECT_TRUE(same_partition(hdbscan(pts, p), ref::hdbscan(pts, p.min_cluster_size, p.min_samples)))
        << "trial " << trial;
  }
}

TEST(Hdbscan, PermutationInvariance) {
  Rng rng(3);
  for (const auto& f : fixtures::hdbscan_fixtures()) {
    const auto base = hdbscan(f.points, f.params);
    std::vector<std::size_t> perm(f.points.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<Vec3> shuffled;
    for (auto i : perm) shuffled.push_back(f.points[i]);
    const auto got = hdbscan(shuffled, f.params);
    std::vector<int> back(got.size());
    for (std::size_t j = 0; j < perm.size(); ++j) back[perm[j]] = got[j];
    EXPECT_TRUE(same_partition(base, back)) << f.name;
  }
}

TEST(Hdbscan, RigidMotionInvariance) {
  for (const auto& f : fixtures::hdbscan_fixtures()) {
    const auto base = hdbscan(f.points, f.params);
    const auto moved = fixtures::rigid_motion(f.points, 0.7, {1, 2, 3}, {10, -4, 2.5});
    EXPECT_TRUE(same_partition(base, hdbscan(moved, f.params))) << f.name;
  }
}

TEST(Hdbscan, DuplicatePointsAreHandled) {
  std::vector<Vec3> pts(30, Vec3{1, 1, 1});
  for (int i = 0; i < 30; ++i) pts.push_back({5, 5, 5});
  const auto labels = hdbscan(pts, {5, 3});
  EXPECT_EQ(cluster_count(labels), 2);
  EXPECT_TRUE(same_partition(labels, ref::hdbscan(pts, 5, 3)));
}

TEST(Hdbscan, LargerMinClusterSizeNeverAddsClusters) {
  for (const auto& f : fixtures::hdbscan_fixtures()) {
    int prev = std::numeric_limits<int>::max();
    for (int mcs : {2, 4, 8, 16, 32, 64, 128}) {
      const int n = cluster_count(hdbscan(f.points, {mcs, f.params.min_samples}));
      EXPECT_LE(n, prev) << f.name << " mcs " << mcs;
      prev = n;
    }
  }
}

TEST(Instances, TreeLevelGroupsTrunkWithFruits) {
  // Two trees: each has 40 trunk and 60 apple points scattered around the
  // tree, with oracle offsets pointing at the tree center.
  Rng rng(4);
  std::vector<Vec3> pos, toff, ioff;
  std::vector<int> sem, tree;
  const Vec3 centers[2] = {{0, 0, 1}, {3, 0, 1}};
  for (int t = 0; t < 2; ++t) {
    for (int i = 0; i < 100; ++i) {
      const Vec3 p{centers[t][0] + rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 2)};
      pos.push_back(p);
      toff.push_back({centers[t][0] - p[0] + rng.normal(0, 0.01), centers[t][1] - p[1] + rng.normal(0, 0.01),
                      centers[t][2] - p[2] + rng.normal(0, 0.01)});
      ioff.push_back({0, 0, 0});
      sem.push_back(i < 40 ? kTrunk : kApple);
      tree.push_back(t);
    }
  }
  for (int i = 0; i < 20; ++i) {  // canopy, never clustered
    pos.push_back({rng.uniform(-1, 4), 0, 3});
    toff.push_back({0, 0, 0});
    ioff.push_back({0, 0, 0});
    sem.push_back(kCanopy);
    tree.push_back(kNoise);
  }
  const auto c = construct(pos, sem, toff, ioff);
  const auto labels = extract_tree_instances(c.out, c.cloud, ClusterParams::tree_level());
  EXPECT_TRUE(same_partition(labels, tree));

  // Swapping the two trees' embeddings permutes labels only.
  auto swapped = c;
  for (std::size_t i = 0; i < 200; ++i) {
    const Vec3 target = i < 100 ? centers[1] : centers[0];
    for (int a = 0; a < 3; ++a) swapped.out.tree_offsets(i, a) = target[a] - pos[i][a];
  }
  EXPECT_TRUE(same_partition(extract_tree_instances(swapped.out, swapped.cloud, ClusterParams::tree_level()), tree));
}

TEST(Instances, NoThingPointsMeansNoTrees) {
  std::vector<Vec3> pos(30, Vec3{0, 0, 0}), off(30, Vec3{0, 0, 0});
  const auto c = construct(pos, std::vector<int>(30, kGround), off, off);
  EXPECT_EQ(extract_tree_instances(c.out, c.cloud, ClusterParams::tree_level()), std::vector<int>(30, kNoise));
  EXPECT_EQ(extract_fine_instances(c.out, c.cloud, ClusterParams::instance_level()), std::vector<int>(30, kNoise));
}

TEST(Instances, MixedClusterSplitsBySemantics) {
  Rng rng(5);
  std::vector<Vec3> pos, off;
  std::vector<int> sem;
  for (int i = 0; i < 55; ++i) {
    pos.push_back({rng.uniform(0, 0.02), rng.uniform(0, 0.02), rng.uniform(0, 0.02)});
    off.push_back({0, 0, 0});
    sem.push_back(i < 30 ? kTrunk : kApple);
  }
  add_companion(pos, off, sem, rng);
  const auto c = construct(pos, sem, off, off);
  const auto labels = extract_fine_instances(c.out, c.cloud, ClusterParams::instance_level());
  EXPECT_EQ(cluster_count(labels), 3);
  EXPECT_EQ(std::count(labels.begin(), labels.end(), kNoise), 0);
  EXPECT_NE(labels[0], labels[30]);
  for (int i = 0; i < 55; ++i) EXPECT_EQ(labels[i], labels[i < 30 ? 0 : 30]);
}

TEST(Instances, SmallSemanticPartBecomesNoise) {
  Rng rng(6);
  std::vector<Vec3> pos, off;
  std::vector<int> sem;
  for (int i = 0; i < 33; ++i) {
    pos.push_back({rng.uniform(0, 0.02), rng.uniform(0, 0.02), rng.uniform(0, 0.02)});
    off.push_back({0, 0, 0});
    sem.push_back(i < 30 ? kTrunk : kApple);
  }
  add_companion(pos, off, sem, rng);
  const auto c = construct(pos, sem, off, off);
  const auto labels = extract_fine_instances(c.out, c.cloud, ClusterParams::instance_level());
  EXPECT_EQ(cluster_count(labels), 2);
  for (int i = 0; i < 30; ++i) EXPECT_EQ(labels[i], labels[0]);
  EXPECT_NE(labels[0], kNoise);
  for (int i = 30; i < 33; ++i) EXPECT_EQ(labels[i], kNoise);
}

TEST(Instances, SeparatedApplesAreCounted) {
  Rng rng(7);
  std::vector<Vec3> pos, off;
  std::vector<int> sem, truth;
  const int apples = 7;
  for (int a = 0; a < apples; ++a) {
    const Vec3 c{0.3 * a, 0.1 * (a % 2), 1.5};
    for (int i = 0; i < 25; ++i) {
      const Vec3 p{c[0] + rng.uniform(-0.04, 0.04), c[1] + rng.uniform(-0.04, 0.04), c[2] + rng.uniform(-0.04, 0.04)};
      pos.push_back(p);
      off.push_back({c[0] - p[0], c[1] - p[1], c[2] - p[2]});
      sem.push_back(kApple);
      truth.push_back(a);
    }
  }
  const auto c = construct(pos, sem, off, off);
  const auto labels = extract_fine_instances(c.out, c.cloud, ClusterParams::instance_level());
  EXPECT_EQ(cluster_count(labels), apples);
  EXPECT_TRUE(same_partition(labels, truth));
}

TEST(Instances, OutputMustCoverCloud) {
  std::vector<Vec3> pos(3, Vec3{}), off(3, Vec3{});
  auto c = construct(pos, {kTrunk, kTrunk, kTrunk}, off, off);
  c.cloud.points.pop_back();
  EXPECT_THROW(extract_tree_instances(c.out, c.cloud, ClusterParams::tree_level()), ArgumentError);
}

TEST(Instances, LabeledCloudRoundTrip) {
  const LabeledCloud cloud = testing_support::tiny_orchard(3);
  const InstancePrediction truth = from_labeled_cloud(cloud);
  const LabeledCloud back = to_labeled_cloud(cloud, truth);
  EXPECT_EQ(back.points, cloud.points);
}
