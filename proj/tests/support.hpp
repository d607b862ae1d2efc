#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "hapt3d/hapt3d.hpp"

namespace testing_support {

using namespace hapt3d;

// Small orchard tile that keeps unit tests fast.
inline OrchardConfig tiny_orchard_config(std::uint64_t seed) {
  OrchardConfig c;
  c.rng_seed = seed;
  c.trees_per_tile = 2.0;
  c.fruits_per_tree = 4.0;
  c.tile_extent = 4.0;
  c.ground_points = 300;
  c.trunk_points = 40;
  c.canopy_points = 150;
  c.apple_points = 12;
  c.pole_points = 30;
  return c;
}

inline LabeledCloud tiny_orchard(std::uint64_t seed) { return generate_orchard(tiny_orchard_config(seed)); }

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "tmp") {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("hapt3d_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

// Central difference of f at x[index].
inline double central_difference(Matrix& x, std::size_t index, const std::function<double()>& f, double h = 1e-6) {
  const double keep = x.data()[index];
  x.data()[index] = keep + h;
  const double up = f();
  x.data()[index] = keep - h;
  const double down = f();
  x.data()[index] = keep;
  return (up - down) / (2.0 * h);
}

// Two labelings describe the same partition (noise must match exactly).
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] < 0) != (b[i] < 0)) return false;
    if (a[i] < 0) continue;
    auto [it1, new1] = ab.emplace(a[i], b[i]);
    auto [it2, new2] = ba.emplace(b[i], a[i]);
    if (it1->second != b[i] || it2->second != a[i]) return false;
  }
  return true;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (auto& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

}  // namespace testing_support

namespace testing_support {

struct GradCheck {
  double worst = 0.0;  // largest relative error seen
  std::size_t checked = 0;
};

// Relative error; `floor` is the gradient magnitude below which the error is
// measured absolutely, so entries whose true derivative is ~0 do not divide
// by round-off.
inline double grad_rel_err(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central difference that steps away from ReLU kinks: when the one-sided
// slopes disagree the interval straddles a kink, so the step shrinks.
inline double kink_safe_difference(Matrix& x, std::size_t index, const std::function<double()>& f, double h,
                                   double floor) {
  const double keep = x.data()[index];
  const double mid = f();
  for (int attempt = 0;; ++attempt) {
    x.data()[index] = keep + h;
    const double up = f();
    x.data()[index] = keep - h;
    const double down = f();
    x.data()[index] = keep;
    const double fwd = (up - mid) / h, bwd = (mid - down) / h;
    if (attempt == 3 || grad_rel_err(fwd, bwd, floor) < 1e-3) return (up - down) / (2.0 * h);
    h *= 0.1;
  }
}

// Compares `backprop` gradients against central differences of `value` on
// `samples` randomly drawn trainable entries of `store`.
inline GradCheck check_gradients(ParameterStore& store, const std::function<double()>& value,
                                 const std::function<void()>& backprop, std::size_t samples, Rng& rng,
                                 double h = 1e-6, double floor = 1e-6) {
  backprop();
  std::vector<std::pair<Parameter*, std::size_t>> entries;
  for (Parameter* p : store.trainable())
    for (std::size_t i = 0; i < p->value.size(); ++i) entries.emplace_back(p, i);
  std::vector<std::pair<Parameter*, std::size_t>> picked;
  for (std::size_t s = 0; s < samples && !entries.empty(); ++s) picked.push_back(entries[rng.below(entries.size())]);
  std::vector<double> analytic;
  for (const auto& [p, i] : picked) analytic.push_back(p->grad.data()[i]);
  GradCheck out;
  for (std::size_t s = 0; s < picked.size(); ++s) {
    auto [p, i] = picked[s];
    const double numeric = kink_safe_difference(p->value, i, value, h, floor);
    out.worst = std::max(out.worst, grad_rel_err(analytic[s], numeric, floor));
    ++out.checked;
  }
  return out;
}

}  // namespace testing_support
