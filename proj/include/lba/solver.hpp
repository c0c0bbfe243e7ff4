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

// Damped normal equations over PSS factors, Schur elimination, marginal
// priors, the rigid extra-cluster stage, the per-cluster intra stage and the
// outer refinement loop.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lba/geometry.hpp"
#include "lba/graph.hpp"
#include "lba/pss.hpp"

namespace lba::solver {

// Assignment of frames to unknown blocks. A block moves rigidly about the
// position of its representative frame, so a frame q in block b follows
// R_q <- Exp(dtheta) R_q, t_q <- Exp(dtheta) (t_q - t_c) + t_c + dt with c the
// representative. Frames with block -1 are held constant.
struct BlockMap {
  std::vector<int> block_of;     // frame -> block or -1
  std::vector<int> block_frame;  // block -> representative frame

  int blocks() const { return static_cast<int>(block_frame.size()); }

  // One block per listed frame, all other frames constant.
  static BlockMap PerFrame(int frame_count, const std::vector<int>& free_frames);

  // One block per cluster centered at its center frame; clusters flagged in
  // `fixed` stay constant.
  static BlockMap Rigid(const graph::ClusterAssignment& clusters,
                        const std::vector<bool>& fixed);

  // d(frame correction) / d(block correction).
  Matrix6d chain(int frame, const std::vector<Pose>& poses) const;
};

std::vector<Pose> apply_update(const BlockMap& map,
                               const std::vector<Pose>& poses,
                               const Eigen::VectorXd& delta);

struct MarginalPrior {
  std::vector<int> frames;
  Eigen::MatrixXd information;  // 6|frames| square
  Eigen::VectorXd mean;         // expected correction from the snapshot
  std::vector<Pose> snapshot;   // linearization pose per entry of `frames`

  // Residual r = pose_difference(poses, snapshot) - mean, stacked.
  Eigen::VectorXd residual(const std::vector<Pose>& poses) const;
  double cost(const std::vector<Pose>& poses) const;
};

struct BlockNormalSystem {
  std::vector<int> block_order;  // representative frame per block
  int block_dim = 6;
  Eigen::MatrixXd h;
  Eigen::VectorXd y;  // -J^T sigma
  Eigen::VectorXd d;  // sqrt(diag(h)), floored
  double lambda = 0.0;
  double cost = 0.0;  // sum of weighted squared residuals plus prior terms

  std::size_t blocks() const { return block_order.size(); }
  Eigen::MatrixXd damped() const;
  // Fills d from the current h.
  void refresh_scaling();
};

// Factor indices (ascending) into a FactorSet.
using FactorSubset = std::vector<std::uint32_t>;

FactorSubset all_factors(const pss::FactorSet& set);

// Normal equations of the weighted squared PSS residuals in `subset` plus the
// priors, over the blocks of `map`.
BlockNormalSystem assemble(const pss::FactorSet& set, const FactorSubset& subset,
                           const std::vector<MarginalPrior>& priors,
                           const std::vector<Pose>& poses, const BlockMap& map);

// Per-frame blocks for `frame_subset`; uses every factor touching it.
BlockNormalSystem assemble(const pss::FactorSet& set,
                           const std::vector<MarginalPrior>& priors,
                           const std::vector<Pose>& poses,
                           const std::vector<int>& frame_subset);

double evaluate_cost(const pss::FactorSet& set, const FactorSubset& subset,
                     const std::vector<MarginalPrior>& priors,
                     const std::vector<Pose>& poses);

// Solves (H + lambda D^2) dx = y, raising lambda tenfold up to five times when
// the factorization fails. Throws SolveFailed after that.
Eigen::VectorXd lm_solve(const BlockNormalSystem& system, double lambda);

std::vector<PoseCorrection> split_corrections(const Eigen::VectorXd& delta);

// Block indices of the two sides of an elimination.
struct Partition {
  std::vector<int> a;
  std::vector<int> b;
};

struct ReducedSystem {
  Eigen::MatrixXd h;
  Eigen::VectorXd y;
};

struct SchurContext {
  Partition partition;
  int block_dim = 6;
  Eigen::MatrixXd hbb_factor;  // lower Cholesky factor of H_bb
  Eigen::MatrixXd h_ab;
  Eigen::VectorXd y_b;
};

// Eliminates the b blocks of the damped system. Throws SchurFailed naming the
// first b block at which H_bb stops being positive definite.
std::pair<ReducedSystem, SchurContext> schur_eliminate(
    const BlockNormalSystem& system, const Partition& partition);

Eigen::VectorXd back_substitute(const SchurContext& context,
                                const Eigen::VectorXd& delta_a);

// Solves the reduced system and back-substitutes; result ordered as the
// system's blocks.
Eigen::VectorXd schur_solve(const BlockNormalSystem& system,
                            const Partition& partition);

// Marginalizes the a blocks of the damped system onto b. The prior carries the
// Schur-complement information and the expectation H_bb^-1 y_b of the b
// correction with a held at zero.
MarginalPrior marginalize(const BlockNormalSystem& system,
                          const Partition& partition,
                          const std::vector<Pose>& poses);

struct SolverConfig {
  int max_outer = 5;
  double gamma0 = 3.0;
  double t_d = 1.4;
  double keep_fraction = 0.20;
  std::size_t t_cluster = 300;
  int inner_lm_iters = 8;
  double lm_lambda0 = 1e-4;
  std::uint64_t rng_seed = 0;
  double epsilon = 0.1;
  double overlap_threshold = 0.30;
  double convergence_tol = 1e-4;
  pss::SmoothingConfig smoothing;

  // Throws ConfigError on an out-of-range value.
  void validate() const;
};

struct LmStats {
  double cost_before = 0.0;
  double cost_after = 0.0;
  int iterations = 0;
  int accepted = 0;
  double final_lambda = 0.0;
};

// Plain LM over the blocks of `map`, updating `poses` in place.
LmStats lm_optimize(const pss::FactorSet& set, const FactorSubset& subset,
                    const std::vector<MarginalPrior>& priors,
                    const BlockMap& map, std::vector<Pose>& poses,
                    int iterations, double lambda0);

// Factors whose two frames fall in different clusters.
FactorSubset cross_cluster_factors(const pss::FactorSet& set,
                                   const graph::ClusterAssignment& clusters);

// Rigid per-cluster correction over cross-cluster factors. The cluster that
// holds `anchor` stays fixed.
LmStats extra_cluster_optimize(const graph::ClusterAssignment& clusters,
                               const pss::FactorSet& set,
                               std::vector<Pose>& poses, const SolverConfig& cfg,
                               int anchor);

// Prior on each cluster's center, obtained by marginalizing every other
// cluster out of the rigid cross-cluster system at `poses`. Empty for the
// anchor's cluster and for clusters without cross-cluster factors.
std::vector<std::optional<MarginalPrior>> cluster_priors(
    const graph::ClusterAssignment& clusters, const pss::FactorSet& set,
    const std::vector<Pose>& poses, const SolverConfig& cfg, int anchor);

// LM over the frames of `cluster` with every other frame frozen at `poses`.
// Returns the full pose vector with only that cluster's frames changed.
std::vector<Pose> intra_cluster_optimize(
    int cluster, const graph::ClusterAssignment& clusters,
    const pss::FactorSet& set, const std::optional<MarginalPrior>& prior,
    const std::vector<Pose>& poses, const SolverConfig& cfg, int anchor,
    LmStats* stats = nullptr);

struct IterationRecord {
  int iter = 0;
  double gamma = 0.0;
  std::size_t n_edges_raw = 0;
  std::size_t n_edges_kept = 0;
  std::size_t n_clusters = 0;
  std::size_t n_kernels = 0;
  std::size_t n_factors = 0;
  double modularity = 0.0;
  double cost_before = 0.0;
  double cost_after = 0.0;
  double wall_ms = 0.0;
  double graph_ms = 0.0;
  double sparsify_ms = 0.0;
  double extract_ms = 0.0;  // kernel pass plus factor extraction
  double solve_ms = 0.0;    // extra plus intra stages
};

struct Report {
  std::vector<IterationRecord> iterations;
  std::vector<std::string> warnings;
  bool converged = false;
  std::string aborted;  // empty unless the loop stopped on an error
};

struct RunResult {
  std::vector<Pose> poses;
  Report report;
  // State of the last executed iteration.
  graph::RelationGraph graph;
  std::vector<std::size_t> selection;
  graph::ClusterAssignment clusters;
};

// Seed for the stochastic stages of outer iteration `iter`.
std::uint64_t iteration_seed(std::uint64_t rng_seed, int iter);

RunResult run_pss_goso(const std::vector<LidarFrame>& frames,
                       const std::vector<Pose>& initial_poses,
                       const SolverConfig& cfg);

namespace serial {
// Factor-by-factor accumulation straight into H, no grouping or threads.
BlockNormalSystem assemble(const pss::FactorSet& set, const FactorSubset& subset,
                           const std::vector<MarginalPrior>& priors,
                           const std::vector<Pose>& poses, const BlockMap& map);
}  // namespace serial

}  // namespace lba::solver
