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

#include "lba/voxel.hpp"

#include <algorithm>
#include <limits>

namespace lba {

PointGrid::PointGrid(const std::vector<Vector3d>& points, double cell)
    : points_(&points), cell_(cell) {
  cells_.reserve(points.size() / 4 + 1);
  for (std::size_t i = 0; i < points.size(); ++i) {
    cells_[voxel_of(points[i], cell_)].push_back(i);
  }
}

std::vector<std::size_t> PointGrid::radius_search(const Vector3d& query,
                                                  double radius) const {
  std::vector<std::size_t> out;
  const auto reach = static_cast<std::int64_t>(std::ceil(radius / cell_));
  const VoxelKey c = voxel_of(query, cell_);
  const double r2 = radius * radius;
  for (std::int64_t dx = -reach; dx <= reach; ++dx) {
    for (std::int64_t dy = -reach; dy <= reach; ++dy) {
      for (std::int64_t dz = -reach; dz <= reach; ++dz) {
        const auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
        if (it == cells_.end()) continue;
        for (const std::size_t idx : it->second) {
          if (((*points_)[idx] - query).squaredNorm() <= r2) {
            out.push_back(idx);
          }
        }
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<std::size_t> PointGrid::nearest(const Vector3d& query,
                                              double max_distance) const {
  const auto reach = static_cast<std::int64_t>(std::ceil(max_distance / cell_));
  const VoxelKey c = voxel_of(query, cell_);
  double best = max_distance * max_distance;
  std::optional<std::size_t> found;
  for (std::int64_t dx = -reach; dx <= reach; ++dx) {
    for (std::int64_t dy = -reach; dy <= reach; ++dy) {
      for (std::int64_t dz = -reach; dz <= reach; ++dz) {
        const auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
        if (it == cells_.end()) continue;
        for (const std::size_t idx : it->second) {
          const double d2 = ((*points_)[idx] - query).squaredNorm();
          // Ties resolved toward the lower index for determinism.
          if (d2 < best || (d2 == best && found && idx < *found)) {
            best = d2;
            found = idx;
          }
        }
      }
    }
  }
  return found;
}

}  // namespace lba
