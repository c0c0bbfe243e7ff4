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

#include "lba/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/Eigenvalues>

#include "lba/errors.hpp"
#include "lba/parallel.hpp"
#include "lba/voxel.hpp"

namespace lba::graph {

namespace {

constexpr std::size_t kMinCorrespondences = 3;
constexpr std::size_t kCandidateFactor = 4;
constexpr Eigen::Index kBoundSubspace = 12;
constexpr double kBisectionTolerance = 1e-12;
constexpr std::size_t kScoreBatch = 32;
constexpr double kScoreTieTolerance = 1e-9;
// Ridge, relative to the largest eigenvalue, that makes the log-det tie
// score finite while the selection is still rank deficient.
constexpr double kSpreadRidge = 1e-6;
constexpr double kUnreachedVariance = 1e30;
// Below this many unknowns a dense eigensolve per candidate is cheap enough.
constexpr Eigen::Index kDenseCutoff = 96;

class UnionFind {
 public:
  explicit UnionFind(int n) : parent_(static_cast<std::size_t>(n)) {
    std::iota(parent_.begin(), parent_.end(), 0);
    components_ = n;
  }
  int find(int v) {
    auto uv = static_cast<std::size_t>(v);
    while (parent_[uv] != static_cast<int>(uv)) {
      parent_[uv] = parent_[static_cast<std::size_t>(parent_[uv])];
      uv = static_cast<std::size_t>(parent_[uv]);
    }
    return static_cast<int>(uv);
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent_[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    --components_;
    return true;
  }
  int components() const { return components_; }

 private:
  std::vector<int> parent_;
  int components_ = 0;
};

struct FrameIndex {
  std::vector<Vector3d> world;
  std::vector<VoxelKey> voxels;  // sorted unique, edge gamma
};

FrameIndex index_frame(const LidarFrame& frame, const Pose& pose, double gamma) {
  FrameIndex fi;
  fi.world.reserve(frame.points.size());
  fi.voxels.reserve(frame.points.size());
  for (const auto& p : frame.points) {
    fi.world.push_back(apply_pose(pose, p));
    fi.voxels.push_back(voxel_of(fi.world.back(), gamma));
  }
  std::sort(fi.voxels.begin(), fi.voxels.end());
  fi.voxels.erase(std::unique(fi.voxels.begin(), fi.voxels.end()),
                  fi.voxels.end());
  return fi;
}

double overlap_of(const FrameIndex& a, const FrameIndex& b) {
  const std::size_t denom = std::min(a.voxels.size(), b.voxels.size());
  if (denom == 0) return 0.0;
  std::size_t shared = 0;
  auto ia = a.voxels.begin();
  auto ib = b.voxels.begin();
  while (ia != a.voxels.end() && ib != b.voxels.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++shared;
      ++ia;
      ++ib;
    }
  }
  return static_cast<double>(shared) / static_cast<double>(denom);
}

RegistrationInfo register_pair(const LidarFrame& frame_i,
                               const FrameIndex& idx_i, const PointGrid& grid_i,
                               const FrameIndex& idx_j, const PointGrid& grid_j,
                               double gamma, std::size_t max_correspondences) {
  const double cutoff = 0.5 * gamma;
  std::vector<std::size_t> shared;
  for (std::size_t u = 0; u < idx_i.world.size(); ++u) {
    if (std::binary_search(idx_j.voxels.begin(), idx_j.voxels.end(),
                           voxel_of(idx_i.world[u], gamma))) {
      shared.push_back(u);
    }
  }
  // Stride subsample of the candidates before the nearest neighbor queries.
  const std::size_t budget = kCandidateFactor * max_correspondences;
  const std::size_t tested = std::min(shared.size(), budget);
  std::vector<std::size_t> matched;
  for (std::size_t k = 0; k < tested; ++k) {
    const std::size_t u = shared[k * shared.size() / tested];
    const Vector3d& p = idx_i.world[u];
    const auto q = grid_j.nearest(p, cutoff);
    if (!q) continue;
    const auto back = grid_i.nearest(idx_j.world[*q], cutoff);
    if (back && *back == u) matched.push_back(u);
  }
  if (matched.size() < kMinCorrespondences) {
    throw EdgeUnderconstrained("only " + std::to_string(matched.size()) +
                               " correspondences");
  }
  std::vector<Vector3d> local;
  const std::size_t count = std::min(matched.size(), max_correspondences);
  local.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t pick = k * matched.size() / count;
    local.push_back(frame_i.points[matched[pick]]);
  }
  RegistrationInfo info;
  info.omega = information_from_points(local);
  info.lambda_min = std::max(0.0, min_eigenvalue(info.omega));
  info.correspondences = count;
  return info;
}

std::size_t block_of(int node, int anchor) {
  return static_cast<std::size_t>(node < anchor ? node : node - 1) * 6;
}

// Lambda_v = B B^T restricted to non-anchor columns.
struct EdgeFactor {
  std::vector<Eigen::Index> rows;
  Eigen::MatrixXd b;  // rows.size() x 6
  Eigen::Matrix<double, 6, 12> jac;
};

EdgeFactor edge_factor(const RelationGraph& g, const RelationEdge& e,
                       const std::vector<Pose>& poses) {
  const Eigen::Matrix<double, 6, 12> jac = relative_pose_jacobian(e, poses);
  const Eigen::SelfAdjointEigenSolver<Matrix6d> eig(e.omega);
  const Matrix6d root =
      eig.eigenvectors() *
      eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  EdgeFactor f;
  f.jac = jac;
  std::vector<Eigen::Index> cols;
  for (const auto& [node, offset] : {std::pair{e.i, 0}, std::pair{e.j, 6}}) {
    if (node == g.anchor) continue;
    const auto base = static_cast<Eigen::Index>(block_of(node, g.anchor));
    for (int k = 0; k < 6; ++k) {
      f.rows.push_back(base + k);
      cols.push_back(offset + k);
    }
  }
  f.b.resize(static_cast<Eigen::Index>(f.rows.size()), 6);
  for (std::size_t r = 0; r < cols.size(); ++r) {
    f.b.row(static_cast<Eigen::Index>(r)) =
        (jac.col(cols[r]).transpose() * root);
  }
  return f;
}

void add_edge_information(Eigen::MatrixXd& lambda, const EdgeFactor& f) {
  const Eigen::MatrixXd gram = f.b * f.b.transpose();
  for (std::size_t r = 0; r < f.rows.size(); ++r) {
    for (std::size_t c = 0; c < f.rows.size(); ++c) {
      lambda(f.rows[r], f.rows[c]) +=
          gram(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }
  }
}

bool all_reach_anchor(const RelationGraph& g,
                      const std::vector<std::size_t>& subset) {
  UnionFind uf(g.node_count);
  for (const std::size_t k : subset) uf.unite(g.edges[k].i, g.edges[k].j);
  return uf.components() == 1;
}

struct Candidate {
  std::size_t edge = 0;
  double score = 0.0;
  // Log-det gain of the regularized information, used when scores tie.
  double spread = 0.0;
  bool merges = false;
  bool grows_anchor = false;  // joins a new component to the anchor's
  double reach = 0.0;         // min eigenvalue of the joined node's information
  Matrix6d reach_cov = Matrix6d::Zero();
  bool pruned = false;        // provably loses on score
};

bool differs(double a, double b) {
  const double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) > kScoreTieTolerance * scale;
}

bool better(const Candidate& a, const Candidate& b, const RelationGraph& g) {
  if (differs(a.score, b.score)) return a.score > b.score;
  if (a.merges != b.merges) return a.merges;
  const RelationEdge& ea = g.edges[a.edge];
  const RelationEdge& eb = g.edges[b.edge];
  if (a.merges) {
    // Before the graph spans, grow the anchor's tree along the stiffest path.
    if (a.grows_anchor != b.grows_anchor) return a.grows_anchor;
    if (differs(a.reach, b.reach)) return a.reach > b.reach;
    if (ea.lambda_min != eb.lambda_min) return ea.lambda_min > eb.lambda_min;
  }
  if (differs(a.spread, b.spread)) return a.spread > b.spread;
  if (ea.lambda_min != eb.lambda_min) return ea.lambda_min > eb.lambda_min;
  return std::pair(ea.i, ea.j) < std::pair(eb.i, eb.j);
}

// Covariance of the outside endpoint of a tree edge given the inside endpoint's
// covariance: A C A^T + (J_o^T Omega J_o)^-1 with A = J_o^-1 J_i.
void extend_tree(const Eigen::Matrix<double, 6, 12>& jac, const Matrix6d& omega,
                 bool i_inside, const Matrix6d& inside_cov, Candidate& c) {
  const Matrix6d j_in = jac.block<6, 6>(0, i_inside ? 0 : 6);
  const Matrix6d j_out = jac.block<6, 6>(0, i_inside ? 6 : 0);
  const Matrix6d info = j_out.transpose() * omega * j_out;
  const Eigen::SelfAdjointEigenSolver<Matrix6d> es(info);
  const double top = std::max(es.eigenvalues()(5), 0.0);
  if (es.eigenvalues()(0) <= kSpreadRidge * top || top == 0.0) {
    c.reach = 0.0;
    c.reach_cov = Matrix6d::Identity() * kUnreachedVariance;
    return;
  }
  const Eigen::FullPivLU<Matrix6d> lu(j_out);
  const Matrix6d a = lu.solve(j_in);
  Matrix6d cov = a * inside_cov * a.transpose() +
                 es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                     es.eigenvectors().transpose();
  cov = 0.5 * (cov + cov.transpose()).eval();
  const Eigen::SelfAdjointEigenSolver<Matrix6d> ec(cov, Eigen::EigenvaluesOnly);
  c.reach = 1.0 / std::max(ec.eigenvalues()(5), 1.0 / kUnreachedVariance);
  c.reach_cov = cov;
}

// Exact scores in decreasing order of the subspace upper bound, a fixed-size
// batch at a time. Candidates whose bound lies below the best score beyond the
// tie tolerance cannot win and are skipped.
void score_pruned(const RelationGraph& g, const RankUpdateMinEigen& updater,
                  const std::vector<Eigen::MatrixXd>& proj, const UnionFind& uf,
                  bool parallel, std::vector<Candidate>& cands) {
  std::vector<std::size_t> live;
  for (std::size_t k = 0; k < cands.size(); ++k) {
    if (uf.components() - (cands[k].merges ? 1 : 0) == 1) live.push_back(k);
  }
  std::vector<double> bound(cands.size(), 0.0);
  const auto nl = static_cast<std::ptrdiff_t>(live.size());
#pragma omp parallel for schedule(dynamic, 8) num_threads(worker_threads()) if (parallel)
  for (std::ptrdiff_t q = 0; q < nl; ++q) {
    const std::size_t k = live[static_cast<std::size_t>(q)];
    bound[k] = std::max(0.0, updater.upper_bound(proj[k]));
  }
  std::stable_sort(live.begin(), live.end(), [&](std::size_t a, std::size_t b) {
    return bound[a] > bound[b];
  });

  bool have_best = false;
  Candidate best;
  for (std::size_t start = 0; start < live.size(); start += kScoreBatch) {
    const std::size_t stop = std::min(live.size(), start + kScoreBatch);
    if (have_best) {
      const double scale = std::max({1.0, std::abs(best.score),
                                     std::abs(bound[live[start]])});
      if (bound[live[start]] < best.score - kScoreTieTolerance * scale) {
        for (std::size_t q = start; q < live.size(); ++q) {
          cands[live[q]].pruned = true;
        }
        break;
      }
    }
    const auto nb = static_cast<std::ptrdiff_t>(stop - start);
#pragma omp parallel for schedule(dynamic, 1) num_threads(worker_threads()) if (parallel)
    for (std::ptrdiff_t q = 0; q < nb; ++q) {
      const std::size_t k = live[start + static_cast<std::size_t>(q)];
      cands[k].score = std::max(0.0, updater.min_eigenvalue(proj[k]));
    }
    for (std::size_t q = start; q < stop; ++q) {
      const Candidate& c = cands[live[q]];
      if (!have_best || better(c, best, g)) {
        best = c;
        have_best = true;
      }
    }
  }
}

std::vector<std::size_t> stochastic_greedy(const RelationGraph& g,
                                           const std::vector<Pose>& poses,
                                           const SparsifyConfig& cfg,
                                           bool parallel, MinEigenMethod method) {
  const std::size_t total = g.edges.size();
  const std::size_t target = std::min(cfg.target_edges, total);
  std::vector<std::size_t> pool(total);
  std::iota(pool.begin(), pool.end(), 0);
  if (target == total) return pool;

  const auto dim = static_cast<Eigen::Index>(6 * std::max(0, g.node_count - 1));
  if (method == MinEigenMethod::kAuto) {
    method = dim > kDenseCutoff ? MinEigenMethod::kRankUpdate
                                : MinEigenMethod::kDense;
  }

  std::vector<EdgeFactor> factors;
  factors.reserve(total);
  for (const auto& e : g.edges) factors.push_back(edge_factor(g, e, poses));

  std::mt19937_64 rng(cfg.rng_seed);
  const double per_round = std::log(1.0 / cfg.epsilon);
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(dim, dim);
  UnionFind uf(g.node_count);
  std::vector<std::size_t> selected;
  selected.reserve(target);
  // Covariance of each node of the anchor's tree, propagated along tree edges.
  std::vector<Matrix6d> tree_cov(static_cast<std::size_t>(g.node_count),
                                 Matrix6d::Zero());

  while (selected.size() < target && !pool.empty()) {
    const auto want = static_cast<std::size_t>(
        std::ceil(per_round * static_cast<double>(pool.size())));
    const std::size_t sample = std::min(want, pool.size());
    std::vector<std::size_t> shuffled = pool;
    for (std::size_t k = 0; k < sample; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, shuffled.size() - 1);
      std::swap(shuffled[k], shuffled[pick(rng)]);
    }
    shuffled.resize(sample);

    std::vector<Candidate> cands(sample);
    bool any_spanning = false;
    for (std::size_t k = 0; k < sample; ++k) {
      const auto& e = g.edges[shuffled[k]];
      cands[k].edge = shuffled[k];
      cands[k].merges = uf.find(e.i) != uf.find(e.j);
      const int root = uf.find(g.anchor);
      cands[k].grows_anchor =
          cands[k].merges && (uf.find(e.i) == root || uf.find(e.j) == root);
      if (cands[k].grows_anchor) {
        const bool i_inside = uf.find(e.i) == root;
        const int inside = i_inside ? e.i : e.j;
        extend_tree(factors[cands[k].edge].jac, e.omega, i_inside,
                    tree_cov[static_cast<std::size_t>(inside)], cands[k]);
      }
      const int after = uf.components() - (cands[k].merges ? 1 : 0);
      if (after == 1) any_spanning = true;
    }

    const RankUpdateMinEigen updater(lambda);
    std::vector<Eigen::MatrixXd> proj(sample);
    const auto np = static_cast<std::ptrdiff_t>(sample);
#pragma omp parallel for schedule(dynamic, 8) num_threads(worker_threads()) if (parallel)
    for (std::ptrdiff_t q = 0; q < np; ++q) {
      const auto k = static_cast<std::size_t>(q);
      const EdgeFactor& f = factors[cands[k].edge];
      proj[k] = updater.project(f.rows, f.b);
      cands[k].spread = updater.log_det_gain(proj[k]);
    }

    if (any_spanning) {
      if (method == MinEigenMethod::kRankUpdate) {
        score_pruned(g, updater, proj, uf, parallel, cands);
      } else {
        const auto ns = static_cast<std::ptrdiff_t>(sample);
#pragma omp parallel for schedule(dynamic, 1) num_threads(worker_threads()) if (parallel)
        for (std::ptrdiff_t k = 0; k < ns; ++k) {
          Candidate& c = cands[static_cast<std::size_t>(k)];
          const int after = uf.components() - (c.merges ? 1 : 0);
          if (after != 1) continue;
          Eigen::MatrixXd trial = lambda;
          add_edge_information(trial, factors[c.edge]);
          c.score = std::max(0.0, min_eigenvalue(trial));
        }
      }
    }

    std::size_t best = 0;
    while (cands[best].pruned) ++best;
    for (std::size_t k = best + 1; k < sample; ++k) {
      if (!cands[k].pruned && better(cands[k], cands[best], g)) best = k;
    }
    const std::size_t chosen = cands[best].edge;
    if (cands[best].grows_anchor) {
      const RelationEdge& e = g.edges[chosen];
      const int joined = uf.find(e.i) == uf.find(g.anchor) ? uf.find(e.j) : uf.find(e.i);
      for (int v = 0; v < g.node_count; ++v) {
        if (uf.find(v) == joined) {
          tree_cov[static_cast<std::size_t>(v)] = cands[best].reach_cov;
        }
      }
    }
    add_edge_information(lambda, factors[chosen]);
    uf.unite(g.edges[chosen].i, g.edges[chosen].j);
    selected.push_back(chosen);
    pool.erase(std::find(pool.begin(), pool.end(), chosen));
  }
  return selected;
}

}  // namespace

bool RelationGraph::connected() const {
  std::vector<std::size_t> all(edges.size());
  std::iota(all.begin(), all.end(), 0);
  return node_count <= 1 || all_reach_anchor(*this, all);
}

RelationGraph RelationGraph::subgraph(
    const std::vector<std::size_t>& edge_indices) const {
  RelationGraph g;
  g.node_count = node_count;
  g.anchor = anchor;
  std::vector<std::size_t> sorted = edge_indices;
  std::sort(sorted.begin(), sorted.end());
  for (const std::size_t k : sorted) g.edges.push_back(edges.at(k));
  return g;
}

double voxel_overlap(const LidarFrame& a, const Pose& pa, const LidarFrame& b,
                     const Pose& pb, double gamma) {
  return overlap_of(index_frame(a, pa, gamma), index_frame(b, pb, gamma));
}

Matrix6d information_from_points(const std::vector<Vector3d>& points_in_i) {
  Matrix6d omega = Matrix6d::Zero();
  for (const auto& p : points_in_i) {
    Matrix6d j = Matrix6d::Zero();
    j.topLeftCorner<3, 3>() = -skew(p);
    j.bottomRightCorner<3, 3>() = Matrix3d::Identity();
    omega.noalias() += j.transpose() * j;
  }
  return omega;
}

double min_eigenvalue(const Eigen::MatrixXd& symmetric) {
  if (symmetric.rows() == 0) return 0.0;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
      symmetric, Eigen::EigenvaluesOnly);
  return eig.eigenvalues()(0);
}

RegistrationInfo registration_information(const LidarFrame& frame_i,
                                          const LidarFrame& frame_j,
                                          const Pose& pose_i,
                                          const Pose& pose_j, double gamma,
                                          std::size_t max_correspondences) {
  const FrameIndex idx_i = index_frame(frame_i, pose_i, gamma);
  const FrameIndex idx_j = index_frame(frame_j, pose_j, gamma);
  const PointGrid grid_i(idx_i.world, 0.5 * gamma);
  const PointGrid grid_j(idx_j.world, 0.5 * gamma);
  return register_pair(frame_i, idx_i, grid_i, idx_j, grid_j, gamma,
                       max_correspondences);
}

RelationGraph build_relation_graph(const std::vector<LidarFrame>& frames,
                                   const std::vector<Pose>& poses,
                                   const GraphBuildConfig& cfg) {
  RelationGraph g;
  g.node_count = static_cast<int>(frames.size());
  g.anchor = 0;
  const std::size_t m = frames.size();
  std::vector<FrameIndex> index;
  index.reserve(m);
  for (std::size_t f = 0; f < m; ++f) {
    index.push_back(index_frame(frames[f], poses.at(f), cfg.gamma));
  }
  std::vector<PointGrid> grids;
  grids.reserve(m);
  for (std::size_t f = 0; f < m; ++f) {
    grids.emplace_back(index[f].world, 0.5 * cfg.gamma);
  }

  struct PairCandidate {
    int i, j;
    double ratio;
  };
  std::vector<PairCandidate> pairs;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      const double ratio = overlap_of(index[i], index[j]);
      if (ratio > cfg.overlap_threshold) {
        pairs.push_back({static_cast<int>(i), static_cast<int>(j), ratio});
      }
    }
  }

  std::vector<std::optional<RelationEdge>> slots(pairs.size());
  const auto np = static_cast<std::ptrdiff_t>(pairs.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(worker_threads())
  for (std::ptrdiff_t k = 0; k < np; ++k) {
    const auto& pc = pairs[static_cast<std::size_t>(k)];
    const auto ui = static_cast<std::size_t>(pc.i);
    const auto uj = static_cast<std::size_t>(pc.j);
    try {
      const RegistrationInfo info =
          register_pair(frames[ui], index[ui], grids[ui], index[uj], grids[uj],
                        cfg.gamma, cfg.max_correspondences);
      RelationEdge e;
      e.i = pc.i;
      e.j = pc.j;
      e.omega = info.omega;
      e.lambda_min = info.lambda_min;
      e.overlap_ratio = pc.ratio;
      e.relative = relative_pose(poses[ui], poses[uj]);
      slots[static_cast<std::size_t>(k)] = e;
    } catch (const EdgeUnderconstrained&) {
      // dropped
    }
  }
  for (auto& s : slots) {
    if (s) g.edges.push_back(std::move(*s));
  }
  return g;
}

RelationGraph build_relation_graph(const std::vector<LidarFrame>& frames,
                                   const std::vector<Pose>& poses,
                                   double gamma) {
  GraphBuildConfig cfg;
  cfg.gamma = gamma;
  return build_relation_graph(frames, poses, cfg);
}

Pose relative_pose(const Pose& pose_i, const Pose& pose_j) {
  const Matrix3d rit = pose_i.rotation.transpose();
  return {rit * pose_j.rotation,
          rit * (pose_j.translation - pose_i.translation)};
}

Vector6d relative_pose_residual(const RelationEdge& edge,
                                const std::vector<Pose>& poses) {
  const Pose& pi = poses.at(static_cast<std::size_t>(edge.i));
  const Pose& pj = poses.at(static_cast<std::size_t>(edge.j));
  const Pose current = relative_pose(pi, pj);
  Vector6d r;
  r.head<3>() = log_map(edge.relative.rotation.transpose() * current.rotation);
  r.tail<3>() = current.translation - edge.relative.translation;
  return r;
}

Eigen::Matrix<double, 6, 12> relative_pose_jacobian(
    const RelationEdge& edge, const std::vector<Pose>& poses) {
  const Pose& pi = poses.at(static_cast<std::size_t>(edge.i));
  const Pose& pj = poses.at(static_cast<std::size_t>(edge.j));
  const Vector6d r = relative_pose_residual(edge, poses);
  const Matrix3d jr_inv = right_jacobian_inverse(r.head<3>());
  const Matrix3d rit = pi.rotation.transpose();
  const Matrix3d rjt = pj.rotation.transpose();

  Eigen::Matrix<double, 6, 12> jac = Eigen::Matrix<double, 6, 12>::Zero();
  jac.block<3, 3>(0, 0) = -jr_inv * rjt;
  jac.block<3, 3>(0, 6) = jr_inv * rjt;
  jac.block<3, 3>(3, 0) = rit * skew(pj.translation - pi.translation);
  jac.block<3, 3>(3, 3) = -rit;
  jac.block<3, 3>(3, 9) = rit;
  return jac;
}

Eigen::MatrixXd pose_graph_information(const RelationGraph& graph,
                                       const std::vector<std::size_t>& edge_subset,
                                       const std::vector<Pose>& poses) {
  const auto dim =
      static_cast<Eigen::Index>(6 * std::max(0, graph.node_count - 1));
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(dim, dim);
  for (const std::size_t k : edge_subset) {
    add_edge_information(lambda, edge_factor(graph, graph.edges.at(k), poses));
  }
  return lambda;
}

double optimality(const RelationGraph& graph,
                  const std::vector<std::size_t>& edge_subset,
                  const std::vector<Pose>& poses) {
  if (graph.node_count <= 1) return 0.0;
  if (!all_reach_anchor(graph, edge_subset)) return 0.0;
  return std::max(
      0.0, min_eigenvalue(pose_graph_information(graph, edge_subset, poses)));
}

std::size_t target_edge_count(std::size_t edges, double keep_fraction) {
  const double raw = std::ceil(keep_fraction * static_cast<double>(edges) - 1e-9);
  return std::min(edges, static_cast<std::size_t>(std::max(0.0, raw)));
}

std::vector<std::size_t> sparsify(const RelationGraph& graph,
                                  const std::vector<Pose>& poses,
                                  const SparsifyConfig& cfg) {
  return stochastic_greedy(graph, poses, cfg, /*parallel=*/true, cfg.method);
}

namespace serial {
std::vector<std::size_t> sparsify(const RelationGraph& graph,
                                  const std::vector<Pose>& poses,
                                  const SparsifyConfig& cfg) {
  return stochastic_greedy(graph, poses, cfg, /*parallel=*/false,
                           MinEigenMethod::kDense);
}
}  // namespace serial

RankUpdateMinEigen::RankUpdateMinEigen(const Eigen::MatrixXd& a) {
  if (a.rows() == 0) return;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
  values_ = eig.eigenvalues();
  vectors_ = eig.eigenvectors();
}

double RankUpdateMinEigen::with_update(const std::vector<Eigen::Index>& rows,
                                       const Eigen::MatrixXd& b_rows) const {
  return min_eigenvalue(project(rows, b_rows));
}

Eigen::MatrixXd RankUpdateMinEigen::project(
    const std::vector<Eigen::Index>& rows, const Eigen::MatrixXd& b_rows) const {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(values_.size(), b_rows.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    c.noalias() += vectors_.row(rows[k]).transpose() *
                   b_rows.row(static_cast<Eigen::Index>(k));
  }
  return c;
}

double RankUpdateMinEigen::upper_bound(const Eigen::MatrixXd& c) const {
  const Eigen::Index k = std::min<Eigen::Index>(values_.size(), kBoundSubspace);
  if (k == 0) return 0.0;
  Eigen::MatrixXd m = c.topRows(k) * c.topRows(k).transpose();
  m.diagonal() += values_.head(k);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      m, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

double RankUpdateMinEigen::log_det_gain(const Eigen::MatrixXd& c) const {
  if (values_.size() == 0) return 0.0;
  const double ridge = kSpreadRidge * std::max(1.0, values_(values_.size() - 1));
  const Eigen::VectorXd inv =
      (values_.cwiseMax(0.0).array() + ridge).inverse().matrix();
  Eigen::MatrixXd m = c.transpose() * inv.asDiagonal() * c;
  m.diagonal().array() += 1.0;
  const Eigen::LLT<Eigen::MatrixXd> llt(m);
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

double RankUpdateMinEigen::min_eigenvalue(const Eigen::MatrixXd& c) const {
  const Eigen::Index n = values_.size();
  if (n == 0) return 0.0;
  const Eigen::Index r = c.cols();
  const double lo0 = values_(0);
  double hi = std::min(lo0 + c.squaredNorm(), upper_bound(c));
  if (r < n) hi = std::min(hi, values_(r));
  double lo = lo0;
  if (!(hi > lo)) return lo;

  // Number of eigenvalues of diag(d) + C C^T strictly below x, by the
  // Haynsworth inertia identity on [[D - x, C], [C^T, -I]].
  Eigen::MatrixXd s(r, r);
  const auto below = [&](double x) {
    Eigen::Index count = 0;
    s.setIdentity();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double gap = values_(i) - x;
      if (gap < 0.0) ++count;
      s.selfadjointView<Eigen::Lower>().rankUpdate(c.row(i).transpose(),
                                                    1.0 / gap);
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        s, Eigen::EigenvaluesOnly);
    for (Eigen::Index k = 0; k < r; ++k) {
      if (es.eigenvalues()(k) <= 0.0) --count;
    }
    return count;
  };

  const double tol = kBisectionTolerance * std::max(1.0, std::abs(hi));
  for (int it = 0; it < 200 && hi - lo > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (below(mid) >= 1) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return 0.5 * (lo + hi);
}

std::vector<std::vector<int>> ClusterAssignment::members() const {
  std::vector<std::vector<int>> out(centers.size());
  for (std::size_t v = 0; v < cluster_of.size(); ++v) {
    out[static_cast<std::size_t>(cluster_of[v])].push_back(static_cast<int>(v));
  }
  return out;
}

double modularity(int node_count, const std::vector<WeightedEdge>& edges,
                  const std::vector<int>& cluster_of) {
  double s = 0.0;
  std::vector<double> degree(static_cast<std::size_t>(node_count), 0.0);
  for (const auto& e : edges) {
    s += e.w;
    degree[static_cast<std::size_t>(e.a)] += e.w;
    degree[static_cast<std::size_t>(e.b)] += e.w;
  }
  if (s <= 0.0) return 0.0;
  double q = 0.0;
  for (const auto& e : edges) {
    if (cluster_of[static_cast<std::size_t>(e.a)] !=
        cluster_of[static_cast<std::size_t>(e.b)]) {
      continue;
    }
    q += e.w - degree[static_cast<std::size_t>(e.a)] *
                   degree[static_cast<std::size_t>(e.b)] / (2.0 * s);
  }
  return q / (2.0 * s);
}

ClusterAssignment stochastic_cluster(int node_count,
                                     const std::vector<WeightedEdge>& edges,
                                     std::size_t max_cluster_size,
                                     std::uint64_t rng_seed) {
  const auto m = static_cast<std::size_t>(node_count);
  ClusterAssignment out;
  out.rng_seed = rng_seed;
  std::vector<int> label(m);
  std::iota(label.begin(), label.end(), 0);
  std::vector<std::size_t> size(m, 1);

  double s = 0.0;
  std::vector<double> degree(m, 0.0);
  for (const auto& e : edges) {
    s += e.w;
    degree[static_cast<std::size_t>(e.a)] += e.w;
    degree[static_cast<std::size_t>(e.b)] += e.w;
  }

  std::mt19937_64 rng(rng_seed);
  while (s > 0.0) {
    // Merge gain per adjacent cluster pair, summed over the edges between.
    std::map<std::pair<int, int>, double> gain;
    for (const auto& e : edges) {
      int ca = label[static_cast<std::size_t>(e.a)];
      int cb = label[static_cast<std::size_t>(e.b)];
      if (ca == cb) continue;
      if (ca > cb) std::swap(ca, cb);
      gain[{ca, cb}] += (e.w - degree[static_cast<std::size_t>(e.a)] *
                                   degree[static_cast<std::size_t>(e.b)] /
                                   (2.0 * s)) /
                        (2.0 * s);
    }
    std::vector<std::pair<std::pair<int, int>, double>> admissible;
    double total = 0.0;
    for (const auto& [pair, dq] : gain) {
      if (!(dq > 0.0)) continue;
      if (size[static_cast<std::size_t>(pair.first)] +
              size[static_cast<std::size_t>(pair.second)] >
          max_cluster_size) {
        continue;
      }
      admissible.emplace_back(pair, dq);
      total += dq;
    }
    if (admissible.empty()) break;
    std::uniform_real_distribution<double> u(0.0, total);
    const double draw = u(rng);
    std::size_t pick = admissible.size() - 1;
    double acc = 0.0;
    for (std::size_t k = 0; k < admissible.size(); ++k) {
      acc += admissible[k].second;
      if (draw < acc) {
        pick = k;
        break;
      }
    }
    const auto [keep, gone] = admissible[pick].first;
    for (auto& l : label) {
      if (l == gone) l = keep;
    }
    size[static_cast<std::size_t>(keep)] += size[static_cast<std::size_t>(gone)];
    size[static_cast<std::size_t>(gone)] = 0;
    out.merge_gains.push_back(admissible[pick].second);
    out.tracked_modularity += admissible[pick].second;
  }

  // Relabel clusters by their smallest member.
  std::vector<int> remap(m, -1);
  int next = 0;
  out.cluster_of.assign(m, 0);
  for (std::size_t v = 0; v < m; ++v) {
    auto& r = remap[static_cast<std::size_t>(label[v])];
    if (r < 0) r = next++;
    out.cluster_of[v] = r;
  }

  // Center: largest internal incident weight, lowest id on ties.
  std::vector<double> internal(m, 0.0);
  for (const auto& e : edges) {
    if (out.cluster_of[static_cast<std::size_t>(e.a)] ==
        out.cluster_of[static_cast<std::size_t>(e.b)]) {
      internal[static_cast<std::size_t>(e.a)] += e.w;
      internal[static_cast<std::size_t>(e.b)] += e.w;
    }
  }
  out.centers.assign(static_cast<std::size_t>(next), -1);
  for (std::size_t v = 0; v < m; ++v) {
    int& c = out.centers[static_cast<std::size_t>(out.cluster_of[v])];
    if (c < 0 || internal[v] > internal[static_cast<std::size_t>(c)]) {
      c = static_cast<int>(v);
    }
  }
  out.modularity = modularity(node_count, edges, out.cluster_of);
  return out;
}

ClusterAssignment stochastic_cluster(const RelationGraph& graph,
                                     std::size_t max_cluster_size,
                                     std::uint64_t rng_seed) {
  std::vector<WeightedEdge> edges;
  edges.reserve(graph.edges.size());
  for (const auto& e : graph.edges) edges.push_back({e.i, e.j, e.lambda_min});
  return stochastic_cluster(graph.node_count, edges, max_cluster_size, rng_seed);
}

void write_edge_list(std::ostream& os, const RelationGraph& graph) {
  os << "# anchor " << graph.anchor << '\n';
  os.precision(9);
  for (const auto& e : graph.edges) {
    os << e.i << ' ' << e.j << ' ' << e.lambda_min << ' ' << e.overlap_ratio
       << '\n';
  }
}

}  // namespace lba::graph
