#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "petseg/volume.hpp"

namespace testing {

using petseg::Geometry;
using petseg::Shape3;
using petseg::VolumeGrid;
using petseg::VolumeKind;

inline Geometry geom(Shape3 s, double sp = 1.0) {
  Geometry g;
  g.shape = s;
  g.spacing = {sp, sp, sp};
  return g;
}

inline VolumeGrid random_mask(Shape3 s, double density, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(density);
  std::vector<float> v(s.voxels());
  for (auto& x : v) x = b(rng) ? 1.0f : 0.0f;
  return VolumeGrid(geom(s), VolumeKind::BinaryMask, std::move(v));
}

// Ball of radius r (voxels) around c.
inline VolumeGrid ball(Shape3 s, std::array<double, 3> c, double r, double sp = 1.0) {
  std::vector<float> v(s.voxels());
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x) {
        const double d2 = (x - c[0]) * (x - c[0]) + (y - c[1]) * (y - c[1]) + (z - c[2]) * (z - c[2]);
        v[s.index(x, y, z)] = d2 <= r * r ? 1.0f : 0.0f;
      }
  return VolumeGrid(geom(s, sp), VolumeKind::BinaryMask, std::move(v));
}

// Independent 26-connected labeling by breadth-first flood fill.
inline std::vector<int> bfs_labels(const VolumeGrid& m, int* count) {
  const Shape3& s = m.shape();
  std::vector<int> label(s.voxels(), 0);
  int next = 0;
  std::vector<std::array<int, 3>> queue;
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x) {
        if (m.at(x, y, z) == 0.0f || label[s.index(x, y, z)]) continue;
        ++next;
        queue.assign(1, {x, y, z});
        label[s.index(x, y, z)] = next;
        for (std::size_t q = 0; q < queue.size(); ++q) {
          const auto [px, py, pz] = queue[q];
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int nx = px + dx, ny = py + dy, nz = pz + dz;
                if (nx < 0 || ny < 0 || nz < 0 || nx >= s.nx || ny >= s.ny || nz >= s.nz) continue;
                const std::size_t i = s.index(nx, ny, nz);
                if (m[i] == 0.0f || label[i]) continue;
                label[i] = next;
                queue.push_back({nx, ny, nz});
              }
        }
      }
  *count = next;
  return label;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("petseg_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

}  // namespace testing
