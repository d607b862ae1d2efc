#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "hapt3d/cloud.hpp"
#include "hapt3d/error.hpp"
#include "hapt3d/orchard.hpp"
#include "hapt3d/random.hpp"

namespace hapt3d {

struct AugmentConfig {
  bool scale_enabled = true;
  bool rotation_enabled = true;
  bool shear_enabled = true;
  bool elastic_enabled = true;
  bool color_enabled = true;

  Range scale{0.9, 1.1};
  double max_tilt = std::numbers::pi / 24.0;  // bound on pitch and roll; yaw is uniform
  double shear = 0.05;                        // off-diagonal coefficients in [-shear, shear]
  double color_sigma = 0.02;
  double elastic_spacing = 0.25;  // meters between control nodes
  double elastic_sigma = 0.01;    // meters

  static AugmentConfig none() {
    AugmentConfig c;
    c.scale_enabled = c.rotation_enabled = c.shear_enabled = c.elastic_enabled = c.color_enabled = false;
    return c;
  }

  void validate() const {
    if (!(scale.min > 0.0) || !(scale.min <= scale.max)) {
      throw ArgumentError("augment: scale range must be positive with min <= max");
    }
    if (elastic_enabled && !(elastic_spacing > 0.0)) {
      throw ArgumentError("augment: elastic_spacing must be positive");
    }
    if (shear < 0 || color_sigma < 0 || elastic_sigma < 0 || max_tilt < 0) {
      throw ArgumentError("augment: negative magnitude");
    }
  }
};

using Mat3 = std::array<std::array<double, 3>, 3>;

inline Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

inline Mat3 rotation_zyx(double yaw, double pitch, double roll) {
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cr = std::cos(roll), sr = std::sin(roll);
  const Mat3 rz{{{cy, -sy, 0}, {sy, cy, 0}, {0, 0, 1}}};
  const Mat3 ry{{{cp, 0, sp}, {0, 1, 0}, {-sp, 0, cp}}};
  const Mat3 rx{{{1, 0, 0}, {0, cr, -sr}, {0, sr, cr}}};
  return mat_mul(rz, mat_mul(ry, rx));
}

namespace augment_detail {

inline void apply_linear(LabeledCloud& cloud, const Mat3& m, const Vec3& pivot) {
  for (auto& p : cloud.points) {
    const Vec3 d{p.position[0] - pivot[0], p.position[1] - pivot[1], p.position[2] - pivot[2]};
    for (int i = 0; i < 3; ++i) {
      p.position[i] = pivot[i] + m[i][0] * d[0] + m[i][1] * d[1] + m[i][2] * d[2];
    }
  }
}

// Trilinear interpolation of Gaussian displacements stored on a coarse grid
// that covers the cloud's bounding box.
inline void elastic(LabeledCloud& cloud, double spacing, double sigma, Rng& rng) {
  Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (const auto& p : cloud.points) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p.position[a]);
      hi[a] = std::max(hi[a], p.position[a]);
    }
  }
  std::array<int, 3> dims{};
  for (int a = 0; a < 3; ++a) dims[a] = static_cast<int>(std::floor((hi[a] - lo[a]) / spacing)) + 2;
  std::vector<Vec3> disp(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]);
  for (auto& d : disp)
    for (auto& v : d) v = rng.normal(0.0, sigma);
  auto node = [&](int i, int j, int k) -> const Vec3& {
    return disp[(static_cast<std::size_t>(i) * dims[1] + j) * dims[2] + k];
  };
  for (auto& p : cloud.points) {
    std::array<int, 3> c{};
    std::array<double, 3> t{};
    for (int a = 0; a < 3; ++a) {
      const double g = (p.position[a] - lo[a]) / spacing;
      c[a] = std::clamp(static_cast<int>(std::floor(g)), 0, dims[a] - 2);
      t[a] = g - c[a];
    }
    Vec3 off{};
    for (int di = 0; di < 2; ++di)
      for (int dj = 0; dj < 2; ++dj)
        for (int dk = 0; dk < 2; ++dk) {
          const double w = (di ? t[0] : 1 - t[0]) * (dj ? t[1] : 1 - t[1]) * (dk ? t[2] : 1 - t[2]);
          const Vec3& d = node(c[0] + di, c[1] + dj, c[2] + dk);
          for (int a = 0; a < 3; ++a) off[a] += w * d[a];
        }
    for (int a = 0; a < 3; ++a) p.position[a] += off[a];
  }
}

}  // namespace augment_detail

// Applies scale -> rotation -> shear -> elastic deformation -> color jitter.
// Linear transforms pivot on the cloud centroid. Labels and point count are
// untouched.
inline LabeledCloud augment(const LabeledCloud& cloud, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  LabeledCloud out = cloud;
  if (out.empty()) return out;
  Vec3 pivot{};
  for (const auto& p : out.points)
    for (int a = 0; a < 3; ++a) pivot[a] += p.position[a];
  for (auto& v : pivot) v /= static_cast<double>(out.size());

  if (cfg.scale_enabled) {
    const double s = cfg.scale.sample(rng);
    const Mat3 m{{{s, 0, 0}, {0, s, 0}, {0, 0, s}}};
    augment_detail::apply_linear(out, m, pivot);
  }
  if (cfg.rotation_enabled) {
    const double yaw = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double pitch = rng.uniform(-cfg.max_tilt, cfg.max_tilt);
    const double roll = rng.uniform(-cfg.max_tilt, cfg.max_tilt);
    augment_detail::apply_linear(out, rotation_zyx(yaw, pitch, roll), pivot);
  }
  if (cfg.shear_enabled) {
    Mat3 m{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (i != j) m[i][j] = rng.uniform(-cfg.shear, cfg.shear);
    augment_detail::apply_linear(out, m, pivot);
  }
  if (cfg.elastic_enabled) augment_detail::elastic(out, cfg.elastic_spacing, cfg.elastic_sigma, rng);
  if (cfg.color_enabled) {
    for (auto& p : out.points)
      for (auto& c : p.color) c = std::clamp(c + rng.normal(0.0, cfg.color_sigma), 0.0, 1.0);
  }
  return out;
}

}  // namespace hapt3d
