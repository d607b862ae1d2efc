#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "hapt3d/cloud.hpp"
#include "hapt3d/error.hpp"

namespace hapt3d {

using Coord = std::array<std::int32_t, 3>;

inline constexpr std::int64_t kCoordLimit = 1 << 20;

inline Coord voxel_of(const Vec3& p, double voxel_size) {
  Coord c{};
  for (int a = 0; a < 3; ++a) {
    const double v = std::floor(p[a] / voxel_size);
    if (!(v > -static_cast<double>(kCoordLimit) && v < static_cast<double>(kCoordLimit))) {
      throw ArgumentError("voxel coordinate out of the supported range (|c| < 2^20)");
    }
    c[a] = static_cast<std::int32_t>(v);
  }
  return c;
}

// 21 bits per axis; requires |c| < 2^20.
inline std::uint64_t pack_coord(const Coord& c) {
  auto field = [](std::int32_t v) {
    return static_cast<std::uint64_t>(static_cast<std::int64_t>(v) + kCoordLimit) & 0x1FFFFFULL;
  };
  return (field(c[0]) << 42) | (field(c[1]) << 21) | field(c[2]);
}

// floor(v / d) for positive d.
inline std::int32_t floor_div(std::int32_t v, std::int32_t d) {
  std::int32_t q = v / d;
  if ((v % d != 0) && (v < 0)) --q;
  return q;
}

inline Vec3 voxel_center(const Coord& c, double voxel_size) {
  return {(c[0] + 0.5) * voxel_size, (c[1] + 0.5) * voxel_size, (c[2] + 0.5) * voxel_size};
}

}  // namespace hapt3d
