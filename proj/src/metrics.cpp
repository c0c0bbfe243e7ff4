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

#include "lba/metrics.hpp"

#include <cmath>
#include <string>

#include <Eigen/Geometry>

#include "lba/errors.hpp"

namespace lba::metrics {

ApeResult ape(const std::vector<Pose>& estimated,
              const std::vector<Pose>& ground_truth) {
  if (estimated.size() != ground_truth.size()) {
    throw MetricError("trajectory lengths differ: " +
                      std::to_string(estimated.size()) + " vs " +
                      std::to_string(ground_truth.size()));
  }
  if (estimated.empty()) throw MetricError("empty trajectories");
  const auto n = static_cast<Eigen::Index>(estimated.size());
  Eigen::Matrix3Xd src(3, n);
  Eigen::Matrix3Xd dst(3, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    src.col(k) = estimated[static_cast<std::size_t>(k)].translation;
    dst.col(k) = ground_truth[static_cast<std::size_t>(k)].translation;
  }
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);

  ApeResult out;
  out.alignment.rotation = t.topLeftCorner<3, 3>();
  out.alignment.translation = t.topRightCorner<3, 1>();
  double sum = 0.0;
  out.errors.reserve(estimated.size());
  for (Eigen::Index k = 0; k < n; ++k) {
    const double e =
        (apply_pose(out.alignment, src.col(k)) - dst.col(k)).norm();
    out.errors.push_back(e);
    sum += e * e;
  }
  out.rmse = std::sqrt(sum / static_cast<double>(n));
  return out;
}

}  // namespace lba::metrics
