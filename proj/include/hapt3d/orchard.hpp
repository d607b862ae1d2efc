#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "hapt3d/cloud.hpp"
#include "hapt3d/error.hpp"
#include "hapt3d/random.hpp"

namespace hapt3d {

struct Range {
  double min = 0.0;
  double max = 0.0;
  double sample(Rng& rng) const { return rng.uniform(min, max); }
  friend bool operator==(const Range&, const Range&) = default;
};

// Procedural orchard tile: one row of trees on a rough ground strip, with
// trellis poles in the gaps. Count defaults follow the training-split means
// of the reference orchard data (3.1 trunks and 19.2 fruits per tree per tile).
struct OrchardConfig {
  double trees_per_tile = 3.1;
  double fruits_per_tree = 19.2;
  double tile_extent = 7.5;  // row length along x
  double row_width = 2.5;    // ground strip width along y
  double ground_roughness = 0.03;
  Range trunk_radius{0.04, 0.07};
  Range trunk_height{0.7, 1.0};
  Range canopy_radius_xy{0.45, 0.65};
  Range canopy_radius_z{0.7, 0.95};
  Range apple_radius{0.035, 0.045};
  int poles_per_tile = 1;
  Range pole_height{2.4, 2.9};
  double pole_radius = 0.04;
  // Point budgets.
  int ground_points = 7000;  // per tile
  int trunk_points = 250;    // per tree
  int canopy_points = 2600;  // per tree
  int apple_points = 50;     // per apple
  int pole_points = 500;     // per pole
  double sensor_noise_sigma = 0.002;
  double color_noise_sigma = 0.04;
  std::uint64_t rng_seed = 42;

  void validate() const {
    auto range = [](const Range& r, const char* name) {
      if (!(r.min <= r.max)) throw ArgumentError(std::string("orchard config: ") + name + " has min > max");
      if (r.min < 0.0) throw ArgumentError(std::string("orchard config: ") + name + " is negative");
    };
    range(trunk_radius, "trunk_radius");
    range(trunk_height, "trunk_height");
    range(canopy_radius_xy, "canopy_radius_xy");
    range(canopy_radius_z, "canopy_radius_z");
    range(apple_radius, "apple_radius");
    range(pole_height, "pole_height");
    if (trees_per_tile < 0 || fruits_per_tree < 0 || poles_per_tile < 0 || ground_points < 0 ||
        trunk_points < 0 || canopy_points < 0 || apple_points < 0 || pole_points < 0) {
      throw ArgumentError("orchard config: counts must be non-negative");
    }
    if (!(tile_extent > 0.0) || !(row_width > 0.0)) {
      throw ArgumentError("orchard config: tile_extent and row_width must be positive");
    }
    if (ground_roughness < 0 || sensor_noise_sigma < 0 || color_noise_sigma < 0 || pole_radius < 0) {
      throw ArgumentError("orchard config: negative scale parameter");
    }
  }
};

struct TileStats {
  std::size_t points = 0;
  std::size_t fruits = 0;
  std::size_t trunks = 0;
  double fruits_per_tree() const {
    return trunks == 0 ? 0.0 : static_cast<double>(fruits) / static_cast<double>(trunks);
  }
};

inline TileStats tile_stats(const LabeledCloud& cloud) {
  TileStats s;
  s.points = cloud.size();
  std::vector<int> seen;
  for (const auto& p : cloud.points) {
    if (!p.instance_id) continue;
    if (std::find(seen.begin(), seen.end(), *p.instance_id) != seen.end()) continue;
    seen.push_back(*p.instance_id);
    if (p.semantic == kApple) ++s.fruits;
    if (p.semantic == kTrunk) ++s.trunks;
  }
  return s;
}

namespace orchard_detail {

struct Ground {
  double amp[3], fx[3], fy[3], px[3], py[3];
  double height(double x, double y) const {
    double h = 0.0;
    for (int k = 0; k < 3; ++k) h += amp[k] * std::sin(fx[k] * x + px[k]) * std::cos(fy[k] * y + py[k]);
    return h;
  }
};

inline Vec3 unit_sphere(Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(a), r * std::sin(a), z};
}

inline Vec3 jitter_color(const Vec3& base, double sigma, Rng& rng) {
  Vec3 c;
  for (int a = 0; a < 3; ++a) c[a] = std::clamp(base[a] + rng.normal(0.0, sigma), 0.0, 1.0);
  return c;
}

struct Apple {
  Vec3 center;
  double radius;
};

}  // namespace orchard_detail

inline LabeledCloud generate_orchard(const OrchardConfig& cfg) {
  using namespace orchard_detail;
  cfg.validate();
  Rng rng(cfg.rng_seed);
  LabeledCloud cloud;

  const Vec3 kGroundColor{0.42, 0.40, 0.25};
  const Vec3 kTrunkColor{0.32, 0.24, 0.16};
  const Vec3 kCanopyColor{0.22, 0.45, 0.15};
  const Vec3 kAppleRed{0.78, 0.18, 0.12};
  const Vec3 kAppleYellow{0.75, 0.60, 0.15};
  const Vec3 kPoleColor{0.62, 0.62, 0.60};

  auto noisy = [&](Vec3 p) {
    for (auto& v : p) v += rng.normal(0.0, cfg.sensor_noise_sigma);
    return p;
  };
  auto emit = [&](const Vec3& pos, const Vec3& color, int sem, std::optional<int> tree,
                  std::optional<int> inst) {
    PointRecord r;
    r.position = noisy(pos);
    r.color = jitter_color(color, cfg.color_noise_sigma, rng);
    r.semantic = sem;
    r.tree_id = tree;
    r.instance_id = inst;
    cloud.points.push_back(r);
  };

  Ground ground{};
  for (int k = 0; k < 3; ++k) {
    ground.amp[k] = cfg.ground_roughness * rng.uniform(0.2, 0.6);
    ground.fx[k] = rng.uniform(0.5, 3.0);
    ground.fy[k] = rng.uniform(0.5, 3.0);
    ground.px[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    ground.py[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }

  // Tree count: integer part plus a Bernoulli draw on the fractional part.
  const double whole = std::floor(cfg.trees_per_tile);
  const int n_trees = static_cast<int>(whole) + (rng.uniform() < cfg.trees_per_tile - whole ? 1 : 0);
  const double spacing = n_trees > 0 ? cfg.tile_extent / n_trees : cfg.tile_extent;

  const Vec3 ground_shade = jitter_color(kGroundColor, 0.02, rng);
  for (int i = 0; i < cfg.ground_points; ++i) {
    const double x = rng.uniform(0.0, cfg.tile_extent);
    const double y = rng.uniform(-0.5 * cfg.row_width, 0.5 * cfg.row_width);
    emit({x, y, ground.height(x, y)}, ground_shade, kGround, std::nullopt, std::nullopt);
  }

  int next_instance = 0;
  for (int t = 0; t < n_trees; ++t) {
    const double tx = (t + 0.5) * spacing + rng.uniform(-0.08, 0.08) * spacing;
    const double ty = rng.uniform(-0.1, 0.1);
    const double base = ground.height(tx, ty);
    const double tr = cfg.trunk_radius.sample(rng);
    const double th = cfg.trunk_height.sample(rng);
    const double rxy = cfg.canopy_radius_xy.sample(rng);
    const double rz = cfg.canopy_radius_z.sample(rng);
    const Vec3 center{tx, ty, base + th + 0.5 * rz};

    const int trunk_id = cfg.trunk_points > 0 ? next_instance++ : -1;
    const Vec3 trunk_shade = jitter_color(kTrunkColor, 0.02, rng);
    for (int i = 0; i < cfg.trunk_points; ++i) {
      const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double z = base + rng.uniform(0.0, th);
      emit({tx + tr * std::cos(a), ty + tr * std::sin(a), z}, trunk_shade, kTrunk, t, trunk_id);
    }

    // Apples sit in the outer foliage layer, kept apart from each other.
    std::vector<Apple> apples;
    // A tree without trunk points cannot anchor apples in the hierarchy.
    const int n_apples = cfg.trunk_points > 0 ? rng.poisson(cfg.fruits_per_tree) : 0;
    const double min_sep = 3.0 * cfg.apple_radius.max;
    for (int a = 0; a < n_apples; ++a) {
      for (int attempt = 0; attempt < 200; ++attempt) {
        const Vec3 d = unit_sphere(rng);
        if (d[2] < -0.7 || d[2] > 0.8) continue;
        const double u = rng.uniform(0.8, 1.0);
        const Vec3 c{center[0] + rxy * u * d[0], center[1] + rxy * u * d[1], center[2] + rz * u * d[2]};
        bool clear = true;
        for (const auto& o : apples) {
          const double dx = o.center[0] - c[0], dy = o.center[1] - c[1], dz = o.center[2] - c[2];
          if (dx * dx + dy * dy + dz * dz < min_sep * min_sep) {
            clear = false;
            break;
          }
        }
        if (clear) {
          apples.push_back({c, cfg.apple_radius.sample(rng)});
          break;
        }
      }
    }

    const Vec3 canopy_shade = jitter_color(kCanopyColor, 0.02, rng);
    for (int i = 0; i < cfg.canopy_points; ++i) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        const Vec3 d = unit_sphere(rng);
        const double u = rng.uniform(0.8, 1.0);
        const Vec3 p{center[0] + rxy * u * d[0], center[1] + rxy * u * d[1], center[2] + rz * u * d[2]};
        bool inside_apple = false;
        for (const auto& ap : apples) {
          const double dx = ap.center[0] - p[0], dy = ap.center[1] - p[1], dz = ap.center[2] - p[2];
          const double keep_out = ap.radius + 0.01;
          if (dx * dx + dy * dy + dz * dz < keep_out * keep_out) {
            inside_apple = true;
            break;
          }
        }
        if (!inside_apple) {
          emit(p, canopy_shade, kCanopy, std::nullopt, std::nullopt);
          break;
        }
      }
    }

    for (const auto& ap : apples) {
      const int id = next_instance++;
      const double ripeness = rng.uniform(0.0, 0.35);
      Vec3 col;
      for (int k = 0; k < 3; ++k) col[k] = (1.0 - ripeness) * kAppleRed[k] + ripeness * kAppleYellow[k];
      for (int i = 0; i < cfg.apple_points; ++i) {
        const Vec3 d = unit_sphere(rng);
        emit({ap.center[0] + ap.radius * d[0], ap.center[1] + ap.radius * d[1],
              ap.center[2] + ap.radius * d[2]},
             col, kApple, t, id);
      }
    }
  }

  // Poles stand in the gaps between trees, or along the tile when treeless.
  std::vector<double> slots;
  for (int t = 1; t < n_trees; ++t) slots.push_back(t * spacing);
  if (n_trees > 0) {
    slots.push_back(0.15);
    slots.push_back(cfg.tile_extent - 0.15);
  }
  for (int k = 0; k < cfg.poles_per_tile; ++k) {
    const double px = slots.empty() ? (k + 1) * cfg.tile_extent / (cfg.poles_per_tile + 1)
                                    : slots[static_cast<std::size_t>(k) % slots.size()];
    const double py = 0.0;
    const double base = ground.height(px, py);
    const double h = cfg.pole_height.sample(rng);
    for (int i = 0; i < cfg.pole_points; ++i) {
      const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
      emit({px + cfg.pole_radius * std::cos(a), py + cfg.pole_radius * std::sin(a),
            base + rng.uniform(0.0, h)},
           kPoleColor, kPole, std::nullopt, std::nullopt);
    }
  }
  return cloud;
}

// Seed of tile `index` in a dataset generated from `seed`.
inline std::uint64_t tile_seed(std::uint64_t seed, std::size_t index) {
  Rng r(seed * 0x9E3779B97F4A7C15ULL + index + 1);
  return r.next_u64();
}

inline std::vector<LabeledCloud> generate_tiles(const OrchardConfig& base, std::uint64_t seed, std::size_t count) {
  std::vector<LabeledCloud> tiles;
  for (std::size_t i = 0; i < count; ++i) {
    OrchardConfig cfg = base;
    cfg.rng_seed = tile_seed(seed, i);
    tiles.push_back(generate_orchard(cfg));
  }
  return tiles;
}

}  // namespace hapt3d
