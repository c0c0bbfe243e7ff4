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

// Shared helpers for the unit tests.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include "lba/geometry.hpp"
#include "lba/graph.hpp"

namespace lba::test {

inline Vector3d random_vector(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

inline Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector3d v(g(rng), g(rng), g(rng));
  while (v.norm() < 1e-6) v = Vector3d(g(rng), g(rng), g(rng));
  return v.normalized();
}

// Rotation angle up to `max_angle` radians, translation within `max_t` m.
inline Pose random_pose(std::mt19937_64& rng, double max_angle, double max_t) {
  std::uniform_real_distribution<double> a(0.0, max_angle);
  Pose p;
  p.rotation = exp_map(random_unit(rng) * a(rng));
  p.translation = random_vector(rng, max_t);
  return p;
}

inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

inline double deg(double d) { return d * std::numbers::pi / 180.0; }

struct RandomGraph {
  graph::RelationGraph graph;
  std::vector<Pose> poses;
};

// Random relation graph over `nodes` frames with up to `max_edges` distinct
// pairs. Each edge carries the information of 3 to 8 random correspondences.
inline RandomGraph random_graph(std::mt19937_64& rng, int nodes,
                                std::size_t max_edges) {
  RandomGraph out;
  out.graph.node_count = nodes;
  for (int f = 0; f < nodes; ++f) {
    out.poses.push_back(random_pose(rng, deg(20.0), 3.0));
  }
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < nodes; ++i) {
    for (int j = i + 1; j < nodes; ++j) pairs.emplace_back(i, j);
  }
  std::shuffle(pairs.begin(), pairs.end(), rng);
  if (pairs.size() > max_edges) pairs.resize(max_edges);
  std::sort(pairs.begin(), pairs.end());
  std::uniform_int_distribution<int> count(3, 8);
  for (const auto& [i, j] : pairs) {
    std::vector<Vector3d> pts;
    const int n = count(rng);
    for (int k = 0; k < n; ++k) pts.push_back(random_vector(rng, 4.0));
    graph::RelationEdge e;
    e.i = i;
    e.j = j;
    e.omega = graph::information_from_points(pts);
    e.lambda_min = graph::min_eigenvalue(e.omega);
    e.overlap_ratio = 1.0;
    e.relative = graph::relative_pose(out.poses[static_cast<std::size_t>(i)],
                                      out.poses[static_cast<std::size_t>(j)]);
    out.graph.edges.push_back(e);
  }
  return out;
}

// Best optimality over all subsets of exactly `size` edges.
inline double best_subset_optimality(const RandomGraph& rg, std::size_t size) {
  const std::size_t n = rg.graph.edges.size();
  double best = 0.0;
  std::vector<std::size_t> subset;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != size) continue;
    subset.clear();
    for (std::size_t k = 0; k < n; ++k) {
      if (mask >> k & 1U) subset.push_back(k);
    }
    best = std::max(best, graph::optimality(rg.graph, subset, rg.poses));
  }
  return best;
}

// Calls `visit` with every set partition of {0..n-1} as a label vector.
template <typename Visit>
void for_each_partition(int n, Visit&& visit) {
  std::vector<int> label(static_cast<std::size_t>(n), 0);
  const auto recurse = [&](auto&& self, int v, int used) -> void {
    if (v == n) {
      visit(label);
      return;
    }
    for (int c = 0; c <= used; ++c) {
      label[static_cast<std::size_t>(v)] = c;
      self(self, v + 1, std::max(used, c + 1));
    }
  };
  if (n == 0) {
    visit(label);
    return;
  }
  recurse(recurse, 0, 0);
}

inline std::size_t largest_part(const std::vector<int>& label) {
  std::vector<std::size_t> size(label.size() + 1, 0);
  std::size_t most = 0;
  for (const int l : label) most = std::max(most, ++size[static_cast<std::size_t>(l)]);
  return most;
}

}  // namespace lba::test
