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

// Relation graph between frames: voxel-overlap edges carrying a pairwise
// registration information matrix, the gauge-fixed pose-graph information
// used as an E-optimality score, stochastic-greedy edge selection and
// stochastic modularity clustering.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lba/geometry.hpp"

namespace lba::graph {

struct RelationEdge {
  int i = 0;  // i < j
  int j = 0;
  Matrix6d omega = Matrix6d::Zero();  // rotation-then-translation
  double lambda_min = 0.0;
  double overlap_ratio = 0.0;
  // Relative pose of j expressed in i, cached when the edge was built.
  Pose relative;
};

struct RelationGraph {
  int node_count = 0;
  std::vector<RelationEdge> edges;
  int anchor = 0;

  // True when every node is reachable from the anchor.
  bool connected() const;
  RelationGraph subgraph(const std::vector<std::size_t>& edge_indices) const;
};

struct GraphBuildConfig {
  double gamma = 3.0;
  double overlap_threshold = 0.30;
  std::size_t max_correspondences = 500;
};

RelationGraph build_relation_graph(const std::vector<LidarFrame>& frames,
                                   const std::vector<Pose>& poses,
                                   const GraphBuildConfig& cfg);

RelationGraph build_relation_graph(const std::vector<LidarFrame>& frames,
                                   const std::vector<Pose>& poses, double gamma);

// |Vi n Vj| / min(|Vi|, |Vj|) over world voxels of edge gamma.
double voxel_overlap(const LidarFrame& a, const Pose& pa, const LidarFrame& b,
                     const Pose& pb, double gamma);

struct RegistrationInfo {
  Matrix6d omega = Matrix6d::Zero();
  double lambda_min = 0.0;
  std::size_t correspondences = 0;
};

// Sum over matched points P (in frame i coordinates) of J^T J with
// J = [[-[P]x, 0], [0, I]].
Matrix6d information_from_points(const std::vector<Vector3d>& points_in_i);

double min_eigenvalue(const Eigen::MatrixXd& symmetric);

// Mutual nearest-neighbor correspondences within gamma / 2, at most
// max_correspondences (evenly subsampled). Throws EdgeUnderconstrained with
// fewer than 3 matches.
RegistrationInfo registration_information(const LidarFrame& frame_i,
                                          const LidarFrame& frame_j,
                                          const Pose& pose_i,
                                          const Pose& pose_j, double gamma,
                                          std::size_t max_correspondences = 500);

Pose relative_pose(const Pose& pose_i, const Pose& pose_j);

Vector6d relative_pose_residual(const RelationEdge& edge,
                                const std::vector<Pose>& poses);

// d residual / d (pose i, pose j), each 6x6 block rotation-then-translation.
Eigen::Matrix<double, 6, 12> relative_pose_jacobian(
    const RelationEdge& edge, const std::vector<Pose>& poses);

// Gauge-fixed information of the pose graph restricted to `edge_subset`,
// anchor rows/columns removed. Size 6(m-1).
Eigen::MatrixXd pose_graph_information(const RelationGraph& graph,
                                       const std::vector<std::size_t>& edge_subset,
                                       const std::vector<Pose>& poses);

// lambda_min of pose_graph_information; exactly 0 when some node is not
// connected to the anchor by the subset (structural rank deficiency).
double optimality(const RelationGraph& graph,
                  const std::vector<std::size_t>& edge_subset,
                  const std::vector<Pose>& poses);

enum class MinEigenMethod : std::uint8_t { kAuto, kDense, kRankUpdate };

struct SparsifyConfig {
  double epsilon = 0.1;
  std::size_t target_edges = 0;  // N^o
  std::uint64_t rng_seed = 0;
  MinEigenMethod method = MinEigenMethod::kAuto;
};

// Target count for a keep fraction: ceil(fraction * |E|).
std::size_t target_edge_count(std::size_t edges, double keep_fraction);

// Stochastic-greedy maximization of lambda_min(Lambda(E^o)). Returns edge
// indices in selection order.
std::vector<std::size_t> sparsify(const RelationGraph& graph,
                                  const std::vector<Pose>& poses,
                                  const SparsifyConfig& cfg);

// Smallest eigenvalue of A + B B^T given the eigendecomposition of A, where
// B is nonzero only on `rows`. Used to score candidates without a dense
// eigensolve per candidate.
class RankUpdateMinEigen {
 public:
  explicit RankUpdateMinEigen(const Eigen::MatrixXd& a);
  double with_update(const std::vector<Eigen::Index>& rows,
                     const Eigen::MatrixXd& b_rows) const;

  // C = Q^T B for B given by its nonzero rows.
  Eigen::MatrixXd project(const std::vector<Eigen::Index>& rows,
                          const Eigen::MatrixXd& b_rows) const;
  // Upper bound on the updated minimum eigenvalue from the lowest eigenpairs.
  double upper_bound(const Eigen::MatrixXd& c) const;
  double min_eigenvalue(const Eigen::MatrixXd& c) const;
  // log det(I + C^T (D + rho I)^-1 C) with a small relative ridge rho.
  double log_det_gain(const Eigen::MatrixXd& c) const;

 private:
  Eigen::VectorXd values_;   // ascending
  Eigen::MatrixXd vectors_;  // columns
};

struct WeightedEdge {
  int a = 0;
  int b = 0;
  double w = 0.0;
};

struct ClusterAssignment {
  std::vector<int> cluster_of;  // node -> cluster id
  std::vector<int> centers;     // cluster id -> node
  std::uint64_t rng_seed = 0;
  double modularity = 0.0;          // recomputed from scratch
  double tracked_modularity = 0.0;  // sum of accepted merge gains
  std::vector<double> merge_gains;

  std::size_t cluster_count() const { return centers.size(); }
  std::vector<std::vector<int>> members() const;
};

double modularity(int node_count, const std::vector<WeightedEdge>& edges,
                  const std::vector<int>& cluster_of);

ClusterAssignment stochastic_cluster(int node_count,
                                     const std::vector<WeightedEdge>& edges,
                                     std::size_t max_cluster_size,
                                     std::uint64_t rng_seed);

// Edge weights are the edges' lambda_min.
ClusterAssignment stochastic_cluster(const RelationGraph& graph,
                                     std::size_t max_cluster_size,
                                     std::uint64_t rng_seed);

// `# anchor <id>` then one `i j lambda_min overlap_ratio` line per edge.
void write_edge_list(std::ostream& os, const RelationGraph& graph);

namespace serial {
// Reference selection with a dense eigensolve per candidate and no
// threading. Same RNG stream and tie rules as lba::graph::sparsify.
std::vector<std::size_t> sparsify(const RelationGraph& graph,
                                  const std::vector<Pose>& poses,
                                  const SparsifyConfig& cfg);
}  // namespace serial

}  // namespace lba::graph
