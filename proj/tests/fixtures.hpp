#pragma once

// Shared point-set fixtures for the clustering and metrics tests.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hapt3d/hapt3d.hpp"

namespace fixtures {

using namespace hapt3d;

struct PointFixture {
  std::string name;
  std::vector<Vec3> points;
  ClusterParams params;
};

inline void blob(std::vector<Vec3>& out, Rng& rng, Vec3 c, double sigma, int n) {
  for (int i = 0; i < n; ++i) out.push_back({rng.normal(c[0], sigma), rng.normal(c[1], sigma), rng.normal(c[2], sigma)});
}

inline void box(std::vector<Vec3>& out, Rng& rng, double lo, double hi, int n) {
  for (int i = 0; i < n; ++i) out.push_back({rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)});
}

// The five clustering fixtures, 200 points each.
inline std::vector<PointFixture> hdbscan_fixtures() {
  std::vector<PointFixture> fx;
  {
    Rng rng(101);
    PointFixture f{"two_blobs", {}, {10, 5}};
    blob(f.points, rng, {0, 0, 0}, 0.3, 100);
    blob(f.points, rng, {5, 0, 0}, 0.3, 100);
    fx.push_back(std::move(f));
  }
  {
    Rng rng(102);
    PointFixture f{"three_blobs_noise", {}, {10, 5}};
    blob(f.points, rng, {0, 0, 0}, 0.25, 60);
    blob(f.points, rng, {4, 1, 0}, 0.4, 60);
    blob(f.points, rng, {1, 5, 2}, 0.3, 50);
    box(f.points, rng, -3.0, 8.0, 30);
    fx.push_back(std::move(f));
  }
  {
    Rng rng(103);
    PointFixture f{"uniform_noise", {}, {15, 8}};
    box(f.points, rng, 0.0, 10.0, 200);
    fx.push_back(std::move(f));
  }
  {
    Rng rng(104);
    PointFixture f{"collinear", {}, {8, 4}};
    for (double start : {0.0, 6.0, 13.0}) {
      const int n = start == 13.0 ? 66 : 67;
      for (int i = 0; i < n; ++i) {
        const double t = start + rng.uniform(0.0, 3.0);
        f.points.push_back({t, 0.5 * t, -0.25 * t});
      }
    }
    fx.push_back(std::move(f));
  }
  {
    Rng rng(105);
    PointFixture f{"nested_densities", {}, {12, 6}};
    blob(f.points, rng, {0, 0, 0}, 1.5, 80);
    blob(f.points, rng, {0.5, 0.5, 0}, 0.1, 60);
    blob(f.points, rng, {8, 0, 0}, 0.5, 60);
    fx.push_back(std::move(f));
  }
  return fx;
}

// Rotation about an arbitrary axis followed by a translation.
inline std::vector<Vec3> rigid_motion(const std::vector<Vec3>& pts, double angle, Vec3 axis, Vec3 shift) {
  const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  for (auto& a : axis) a /= n;
  const double c = std::cos(angle), s = std::sin(angle), t = 1 - c;
  const auto [x, y, z] = axis;
  const double r[3][3] = {{t * x * x + c, t * x * y - s * z, t * x * z + s * y},
                          {t * x * y + s * z, t * y * y + c, t * y * z - s * x},
                          {t * x * z - s * y, t * y * z + s * x, t * z * z + c}};
  std::vector<Vec3> out;
  for (const auto& p : pts) {
    Vec3 q{};
    for (int i = 0; i < 3; ++i) q[i] = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + shift[i];
    out.push_back(q);
  }
  return out;
}

struct PqScene {
  std::vector<Segment> pred, gt;
};

// Random scene of at most 5 segments per side over at most 60 points; the
// prediction copies the ground-truth assignment for most points so that
// matches above 0.5 IoU are common.
inline PqScene random_pq_scene(Rng& rng) {
  const std::size_t n = 1 + rng.below(60);
  const int gs = 1 + static_cast<int>(rng.below(5));
  const int ps = 1 + static_cast<int>(rng.below(5));
  std::vector<int> gcls(gs), pcls(ps);
  for (auto& c : gcls) c = static_cast<int>(rng.below(3));
  for (int j = 0; j < ps; ++j) pcls[j] = j < gs && rng.below(4) != 0 ? gcls[j] : static_cast<int>(rng.below(3));
  PqScene s;
  s.gt.resize(gs);
  s.pred.resize(ps);
  for (int j = 0; j < gs; ++j) s.gt[j].cls = gcls[j];
  for (int j = 0; j < ps; ++j) s.pred[j].cls = pcls[j];
  for (std::size_t i = 0; i < n; ++i) {
    const int g = static_cast<int>(rng.below(gs + 1)) - 1;  // -1: unlabeled
    if (g >= 0) s.gt[g].points.push_back(i);
    int p = rng.below(5) != 0 ? g : static_cast<int>(rng.below(ps + 1)) - 1;
    if (p >= ps) p = static_cast<int>(rng.below(ps));
    if (p >= 0) s.pred[p].points.push_back(i);
  }
  auto drop_empty = [](std::vector<Segment>& v) {
    v.erase(std::remove_if(v.begin(), v.end(), [](const Segment& x) { return x.points.empty(); }), v.end());
  };
  drop_empty(s.pred);
  drop_empty(s.gt);
  return s;
}

}  // namespace fixtures
