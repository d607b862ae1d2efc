#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hapt3d/cloud.hpp"
#include "hapt3d/error.hpp"
#include "hapt3d/grid.hpp"
#include "hapt3d/matrix.hpp"
#include "hapt3d/parallel.hpp"

namespace hapt3d {

// Unique integer coordinates (base-grid units) at a given tensor stride, with
// a hash index for neighbor lookup. Rows are kept in lexicographic order.
class CoordinateSet {
 public:
  CoordinateSet() = default;
  CoordinateSet(std::vector<Coord> coords, int stride) : coords_(std::move(coords)), stride_(stride) {
    if (stride_ < 1) throw ArgumentError("coordinate stride must be positive");
    index_.reserve(coords_.size() * 2);
    for (std::size_t i = 0; i < coords_.size(); ++i) {
      for (int a = 0; a < 3; ++a) {
        if (coords_[i][a] % stride_ != 0) {
          throw ArgumentError("coordinate row " + std::to_string(i) + " not divisible by stride " +
                              std::to_string(stride_));
        }
      }
      if (!index_.emplace(pack_coord(coords_[i]), static_cast<std::int32_t>(i)).second) {
        throw ArgumentError("duplicate coordinate row " + std::to_string(i));
      }
    }
  }

  std::size_t size() const { return coords_.size(); }
  int stride() const { return stride_; }
  const std::vector<Coord>& coords() const { return coords_; }
  const Coord& operator[](std::size_t i) const { return coords_[i]; }

  std::optional<std::int32_t> find(const Coord& c) const {
    for (int a = 0; a < 3; ++a) {
      if (c[a] <= -kCoordLimit || c[a] >= kCoordLimit) return std::nullopt;
    }
    auto it = index_.find(pack_coord(c));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<Coord> coords_;
  int stride_ = 1;
  std::unordered_map<std::uint64_t, std::int32_t> index_;
};

using CoordsPtr = std::shared_ptr<const CoordinateSet>;

struct SparseTensor {
  CoordsPtr coords;
  Matrix feats;

  std::size_t size() const { return feats.rows(); }
  int stride() const { return coords ? coords->stride() : 1; }
  std::size_t channels() const { return feats.cols(); }
};

// Voxel seed of a point set plus the point -> voxel row mapping.
struct VoxelSeed {
  SparseTensor tensor;
  std::vector<std::int32_t> point_to_row;
};

// coords = floor(position / voxel_size); features of points sharing a voxel
// are averaged. Rows come out in lexicographic coordinate order.
inline VoxelSeed unique_coords(std::span<const Vec3> positions, const Matrix& features,
                               double voxel_size) {
  if (!(voxel_size > 0.0)) throw ArgumentError("unique_coords: voxel_size must be positive");
  if (features.rows() != positions.size()) {
    throw ArgumentError("unique_coords: feature rows do not match point count");
  }
  const std::size_t n = positions.size();
  std::vector<Coord> pc(n);
  for (std::size_t i = 0; i < n; ++i) pc[i] = voxel_of(positions[i], voxel_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pc[a] < pc[b]; });

  VoxelSeed seed;
  seed.point_to_row.assign(n, -1);
  std::vector<Coord> uniq;
  std::vector<std::size_t> counts;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    if (uniq.empty() || uniq.back() != pc[i]) {
      uniq.push_back(pc[i]);
      counts.push_back(0);
    }
    ++counts.back();
    seed.point_to_row[i] = static_cast<std::int32_t>(uniq.size() - 1);
  }
  const std::size_t c = features.cols();
  Matrix feats(uniq.size(), c);
  for (std::size_t i = 0; i < n; ++i) {
    auto dst = feats.row(static_cast<std::size_t>(seed.point_to_row[i]));
    auto src = features.row(i);
    for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
  }
  for (std::size_t r = 0; r < uniq.size(); ++r) {
    for (auto& v : feats.row(r)) v /= static_cast<double>(counts[r]);
  }
  seed.tensor.coords = std::make_shared<CoordinateSet>(std::move(uniq), 1);
  seed.tensor.feats = std::move(feats);
  return seed;
}

// Per-point colors are the input features.
inline VoxelSeed unique_coords(const LabeledCloud& cloud, double voxel_size) {
  std::vector<Vec3> pos(cloud.size());
  Matrix feats(cloud.size(), 3);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    pos[i] = cloud.points[i].position;
    for (int a = 0; a < 3; ++a) feats(i, a) = cloud.points[i].color[a];
  }
  return unique_coords(pos, feats, voxel_size);
}

// Coarser coordinate set: unique floor(c / (2s)) * 2s.
inline CoordsPtr downsample_coords(const CoordinateSet& in) {
  const std::int32_t s2 = in.stride() * 2;
  std::vector<Coord> out;
  out.reserve(in.size());
  for (const auto& c : in.coords()) {
    out.push_back({floor_div(c[0], s2) * s2, floor_div(c[1], s2) * s2, floor_div(c[2], s2) * s2});
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return std::make_shared<CoordinateSet>(std::move(out), s2);
}

// Offsets delta in {-r..r}^3 enumerated lexicographically; index
// ((dx+r)*k + (dy+r))*k + (dz+r).
inline std::vector<Coord> kernel_offsets(int kernel_size) {
  const int r = kernel_size / 2;
  std::vector<Coord> offs;
  for (int dx = -r; dx <= r; ++dx)
    for (int dy = -r; dy <= r; ++dy)
      for (int dz = -r; dz <= r; ++dz) offs.push_back({dx, dy, dz});
  return offs;
}

struct KernelPair {
  std::int32_t in;
  std::int32_t out;
  friend bool operator==(const KernelPair&, const KernelPair&) = default;
};

// For every kernel offset, the (input_row, output_row) pairs it connects.
// `pairs` is sorted by output row within each offset; `by_input` holds the
// same pairs sorted by input row (used by the input-gradient pass).
struct KernelMap {
  int kernel_size = 1;
  std::size_t in_rows = 0;
  std::size_t out_rows = 0;
  std::vector<std::vector<KernelPair>> pairs;
  std::vector<std::vector<KernelPair>> by_input;

  std::size_t volume() const { return pairs.size(); }
  std::size_t total_pairs() const {
    std::size_t n = 0;
    for (const auto& p : pairs) n += p.size();
    return n;
  }
};

// Forward convolution (transposed = false): pair (i, j) at offset delta iff
//   in[i] == out[j] + delta * in.stride,  with out.stride == in.stride * conv_stride.
// Transposed convolution (transposed = true): pair (j, i) at offset delta iff
//   out[i] == in[j] + delta * out.stride, with in.stride == out.stride * conv_stride.
// The transposed map is the forward map of the opposite direction with the
// roles of input and output swapped, which makes the two operations adjoint.
inline KernelMap build_kernel_map(const CoordinateSet& in, const CoordinateSet& out,
                                  int kernel_size, int conv_stride, bool transposed) {
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ArgumentError("build_kernel_map: kernel_size must be odd and >= 1");
  }
  if (conv_stride != 1 && conv_stride != 2) {
    throw ArgumentError("build_kernel_map: stride must be 1 or 2");
  }
  if (!transposed && out.stride() != in.stride() * conv_stride) {
    throw ArgumentError("build_kernel_map: output stride " + std::to_string(out.stride()) +
                        " inconsistent with input stride " + std::to_string(in.stride()));
  }
  if (transposed && in.stride() != out.stride() * conv_stride) {
    throw ArgumentError("build_kernel_map: transposed target stride " +
                        std::to_string(out.stride()) + " inconsistent with input stride " +
                        std::to_string(in.stride()));
  }
  const auto offs = kernel_offsets(kernel_size);
  KernelMap km;
  km.kernel_size = kernel_size;
  km.in_rows = in.size();
  km.out_rows = out.size();
  km.pairs.resize(offs.size());
  const std::int32_t step = transposed ? out.stride() : in.stride();
  for (std::size_t k = 0; k < offs.size(); ++k) {
    const Coord& d = offs[k];
    auto& list = km.pairs[k];
    for (std::size_t j = 0; j < out.size(); ++j) {
      const Coord& o = out[j];
      Coord q;
      for (int a = 0; a < 3; ++a) q[a] = transposed ? o[a] - d[a] * step : o[a] + d[a] * step;
      if (auto i = in.find(q)) list.push_back({*i, static_cast<std::int32_t>(j)});
    }
  }
  km.by_input.resize(offs.size());
  for (std::size_t k = 0; k < offs.size(); ++k) {
    km.by_input[k] = km.pairs[k];
    std::stable_sort(km.by_input[k].begin(), km.by_input[k].end(),
                     [](const KernelPair& a, const KernelPair& b) { return a.in < b.in; });
  }
  return km;
}

namespace sparse_detail {

inline void check_weights(const Matrix& w, const KernelMap& km, std::size_t in_ch) {
  if (in_ch == 0 || w.rows() != km.volume() * in_ch) {
    throw ArgumentError("sparse conv: weight rows " + std::to_string(w.rows()) +
                        " != kernel volume " + std::to_string(km.volume()) + " x in channels " +
                        std::to_string(in_ch));
  }
}

template <typename Pairs, typename Key>
std::pair<std::size_t, std::size_t> row_range(const Pairs& list, std::size_t b, std::size_t e, Key key) {
  auto lo = std::partition_point(list.begin(), list.end(), [&](const KernelPair& p) { return key(p) < b; });
  auto hi = std::partition_point(lo, list.end(), [&](const KernelPair& p) { return key(p) < e; });
  return {static_cast<std::size_t>(lo - list.begin()), static_cast<std::size_t>(hi - list.begin())};
}

}  // namespace sparse_detail

// out[j] += sum over pairs (i, j) at offset k of x[i] * W_k, where W_k is the
// block of rows [k*C_in, (k+1)*C_in) of `w`. Each output row accumulates in
// fixed offset order, so results do not depend on the worker count.
inline void conv_accumulate(const Matrix& x, const Matrix& w, const KernelMap& km, Matrix& out) {
  const std::size_t cin = x.cols(), cout = w.cols();
  sparse_detail::check_weights(w, km, cin);
  if (x.rows() != km.in_rows || out.rows() != km.out_rows || out.cols() != cout) {
    throw ArgumentError("sparse conv: tensor rows do not match kernel map");
  }
  parallel_for(km.out_rows, [&](std::size_t b, std::size_t e) {
    for (std::size_t k = 0; k < km.volume(); ++k) {
      const auto& list = km.pairs[k];
      const auto [lo, hi] = sparse_detail::row_range(list, b, e, [](const KernelPair& p) {
        return static_cast<std::size_t>(p.out);
      });
      const double* wk = w.data() + k * cin * cout;
      for (std::size_t t = lo; t < hi; ++t) {
        const double* xr = x.data() + static_cast<std::size_t>(list[t].in) * cin;
        double* orow = out.data() + static_cast<std::size_t>(list[t].out) * cout;
        for (std::size_t c = 0; c < cin; ++c) {
          const double xv = xr[c];
          const double* wr = wk + c * cout;
          for (std::size_t o = 0; o < cout; ++o) orow[o] += xv * wr[o];
        }
      }
    }
  });
}

// dx[i] += sum over pairs (i, j) of dout[j] * W_k^T.
inline void conv_backward_input(const Matrix& dout, const Matrix& w, const KernelMap& km,
                                Matrix& dx) {
  const std::size_t cin = dx.cols(), cout = w.cols();
  sparse_detail::check_weights(w, km, cin);
  parallel_for(km.in_rows, [&](std::size_t b, std::size_t e) {
    for (std::size_t k = 0; k < km.volume(); ++k) {
      const auto& list = km.by_input[k];
      const auto [lo, hi] = sparse_detail::row_range(list, b, e, [](const KernelPair& p) {
        return static_cast<std::size_t>(p.in);
      });
      const double* wk = w.data() + k * cin * cout;
      for (std::size_t t = lo; t < hi; ++t) {
        const double* gr = dout.data() + static_cast<std::size_t>(list[t].out) * cout;
        double* xr = dx.data() + static_cast<std::size_t>(list[t].in) * cin;
        for (std::size_t c = 0; c < cin; ++c) {
          const double* wr = wk + c * cout;
          double s = 0.0;
          for (std::size_t o = 0; o < cout; ++o) s += gr[o] * wr[o];
          xr[c] += s;
        }
      }
    }
  });
}

// dW_k += sum over pairs (i, j) of x[i]^T dout[j].
inline void conv_backward_weight(const Matrix& x, const Matrix& dout, const KernelMap& km,
                                 Matrix& dw) {
  const std::size_t cin = x.cols(), cout = dout.cols();
  sparse_detail::check_weights(dw, km, cin);
  parallel_for(
      km.volume(),
      [&](std::size_t b, std::size_t e) {
        for (std::size_t k = b; k < e; ++k) {
          double* wk = dw.data() + k * cin * cout;
          for (const auto& p : km.pairs[k]) {
            const double* xr = x.data() + static_cast<std::size_t>(p.in) * cin;
            const double* gr = dout.data() + static_cast<std::size_t>(p.out) * cout;
            for (std::size_t c = 0; c < cin; ++c) {
              const double xv = xr[c];
              double* wr = wk + c * cout;
              for (std::size_t o = 0; o < cout; ++o) wr[o] += xv * gr[o];
            }
          }
        }
      },
      1);
}

inline Matrix broadcast_bias(std::size_t rows, const Matrix& bias) {
  Matrix out(rows, bias.size());
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(bias.data(), bias.data() + bias.size(), out.data() + r * bias.size());
  return out;
}

inline int kernel_size_for(const Matrix& weights, std::size_t in_channels) {
  if (in_channels == 0 || weights.rows() % in_channels != 0) {
    throw ArgumentError("sparse conv: weight rows not a multiple of input channels");
  }
  const std::size_t vol = weights.rows() / in_channels;
  for (int k = 1; k <= 7; k += 2) {
    if (static_cast<std::size_t>(k * k * k) == vol) return k;
  }
  throw ArgumentError("sparse conv: weight rows do not form a cubic kernel");
}

// Stride 1: output on the input coordinates. Stride 2: output on
// unique floor(c / 2s) * 2s. Weights are (k^3 * C_in) x C_out, bias 1 x C_out.
inline SparseTensor sparse_conv(const SparseTensor& x, const Matrix& weights, const Matrix& bias,
                                int stride = 1) {
  if (x.size() == 0) {
    return {x.coords ? (stride == 1 ? x.coords : downsample_coords(*x.coords))
                     : std::make_shared<CoordinateSet>(),
            Matrix(0, weights.cols())};
  }
  const int k = kernel_size_for(weights, x.channels());
  if (bias.size() != weights.cols()) throw ArgumentError("sparse_conv: bias size mismatch");
  CoordsPtr out_coords = stride == 1 ? x.coords : downsample_coords(*x.coords);
  const KernelMap km = build_kernel_map(*x.coords, *out_coords, k, stride, false);
  Matrix out = broadcast_bias(out_coords->size(), bias);
  conv_accumulate(x.feats, weights, km, out);
  return {out_coords, std::move(out)};
}

// Coordinate-restoring upsampling onto `target` (typically the encoder level
// the input was downsampled from).
inline SparseTensor sparse_conv_transpose(const SparseTensor& x, const Matrix& weights,
                                          const Matrix& bias, CoordsPtr target) {
  if (!target) throw ArgumentError("sparse_conv_transpose: missing target coordinates");
  if (x.stride() != target->stride() * 2 && x.stride() != target->stride()) {
    throw ArgumentError("sparse_conv_transpose: target stride " + std::to_string(target->stride()) +
                        " inconsistent with input stride " + std::to_string(x.stride()));
  }
  const int conv_stride = x.stride() / target->stride();
  if (x.size() == 0) return {target, Matrix(target->size(), weights.cols())};
  const int k = kernel_size_for(weights, x.channels());
  if (bias.size() != weights.cols()) throw ArgumentError("sparse_conv_transpose: bias size mismatch");
  const KernelMap km = build_kernel_map(*x.coords, *target, k, conv_stride, true);
  Matrix out = broadcast_bias(target->size(), bias);
  conv_accumulate(x.feats, weights, km, out);
  return {target, std::move(out)};
}

}  // namespace hapt3d
