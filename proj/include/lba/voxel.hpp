// Copyright 2026 The Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Voxel keys and a hashed uniform grid for radius and nearest-neighbor
// queries over world-frame points.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "lba/geometry.hpp"

namespace lba {

struct VoxelKey {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;

  bool operator==(const VoxelKey&) const = default;
  auto operator<=>(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    // Large primes from the Teschner et al. spatial hash.
    const auto h = static_cast<std::uint64_t>(k.x) * 73856093ULL ^
                   static_cast<std::uint64_t>(k.y) * 19349663ULL ^
                   static_cast<std::uint64_t>(k.z) * 83492791ULL;
    return static_cast<std::size_t>(h);
  }
};

inline VoxelKey voxel_of(const Vector3d& p, double edge) {
  return {static_cast<std::int64_t>(std::floor(p.x() / edge)),
          static_cast<std::int64_t>(std::floor(p.y() / edge)),
          static_cast<std::int64_t>(std::floor(p.z() / edge))};
}

// Uniform grid over a fixed point set. Points are referenced by their index
// in the vector passed to the constructor, which must outlive the grid.
class PointGrid {
 public:
  PointGrid(const std::vector<Vector3d>& points, double cell);

  // Indices of points within `radius` of `query`, in ascending index order.
  std::vector<std::size_t> radius_search(const Vector3d& query,
                                         double radius) const;

  // Nearest point no farther than `max_distance`.
  std::optional<std::size_t> nearest(const Vector3d& query,
                                     double max_distance) const;

  double cell() const { return cell_; }
  const std::vector<Vector3d>& points() const { return *points_; }

 private:
  const std::vector<Vector3d>* points_;
  double cell_;
  std::unordered_map<VoxelKey, std::vector<std::size_t>, VoxelKeyHash> cells_;
};

}  // namespace lba
