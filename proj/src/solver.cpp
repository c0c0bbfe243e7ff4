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

#include "lba/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "lba/errors.hpp"
#include "lba/parallel.hpp"

namespace lba::solver {

namespace {

using Matrix12d = Eigen::Matrix<double, 12, 12>;
using Vector12d = Eigen::Matrix<double, 12, 1>;

constexpr int kMaxEscalations = 5;
constexpr double kGradientTol = 1e-8;
constexpr double kScalingFloor = 1e-12;

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - since)
      .count();
}

// Consecutive runs of the subset sharing (kernel_frame, neighbor_frame).
std::vector<std::size_t> group_bounds(const pss::FactorSet& set,
                                      const FactorSubset& subset) {
  std::vector<std::size_t> bounds;
  bounds.push_back(0);
  for (std::size_t k = 1; k < subset.size(); ++k) {
    const auto& prev = set.factors[subset[k - 1]];
    const auto& cur = set.factors[subset[k]];
    if (prev.kernel_frame != cur.kernel_frame ||
        prev.neighbor_frame != cur.neighbor_frame) {
      bounds.push_back(k);
    }
  }
  if (!subset.empty()) bounds.push_back(subset.size());
  return bounds;
}

struct GroupTerm {
  Matrix12d h = Matrix12d::Zero();
  Vector12d y = Vector12d::Zero();
  double cost = 0.0;
  int block_k = -1;
  int block_n = -1;
};

std::vector<Eigen::Index> scalar_indices(const std::vector<int>& blocks,
                                         int block_dim) {
  std::vector<Eigen::Index> idx;
  idx.reserve(blocks.size() * static_cast<std::size_t>(block_dim));
  for (const int b : blocks) {
    for (int k = 0; k < block_dim; ++k) {
      idx.push_back(static_cast<Eigen::Index>(b) * block_dim + k);
    }
  }
  return idx;
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& m,
                       const std::vector<Eigen::Index>& rows,
                       const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          m(rows[r], cols[c]);
    }
  }
  return out;
}

Eigen::VectorXd gather(const Eigen::VectorXd& v,
                       const std::vector<Eigen::Index>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out(static_cast<Eigen::Index>(r)) = v(rows[r]);
  }
  return out;
}

// First block (in `blocks` order) at which the leading principal submatrix
// stops being positive definite.
int first_indefinite_block(const Eigen::MatrixXd& m,
                           const std::vector<int>& blocks, int block_dim) {
  for (std::size_t k = 1; k <= blocks.size(); ++k) {
    const auto n = static_cast<Eigen::Index>(k) * block_dim;
    const Eigen::LLT<Eigen::MatrixXd> llt(m.topLeftCorner(n, n));
    if (llt.info() != Eigen::Success) return blocks[k - 1];
  }
  return blocks.empty() ? -1 : blocks.back();
}

void add_priors(BlockNormalSystem& sys, const std::vector<MarginalPrior>& priors,
                const std::vector<Pose>& poses, const BlockMap& map) {
  for (const auto& p : priors) {
    const Eigen::VectorXd r = p.residual(poses);
    const Eigen::VectorXd lr = p.information * r;
    sys.cost += r.dot(lr);
    const std::size_t n = p.frames.size();
    std::vector<Matrix6d> chains(n);
    std::vector<int> blocks(n);
    for (std::size_t k = 0; k < n; ++k) {
      blocks[k] = map.block_of[static_cast<std::size_t>(p.frames[k])];
      if (blocks[k] >= 0) chains[k] = map.chain(p.frames[k], poses);
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (blocks[k] < 0) continue;
      const auto ik = static_cast<Eigen::Index>(k) * 6;
      sys.y.segment<6>(blocks[k] * 6) -=
          chains[k].transpose() * lr.segment<6>(ik);
      for (std::size_t l = 0; l < n; ++l) {
        if (blocks[l] < 0) continue;
        const auto il = static_cast<Eigen::Index>(l) * 6;
        sys.h.block<6, 6>(blocks[k] * 6, blocks[l] * 6) +=
            chains[k].transpose() * p.information.block<6, 6>(ik, il) *
            chains[l];
      }
    }
  }
}

BlockNormalSystem empty_system(const BlockMap& map) {
  BlockNormalSystem sys;
  sys.block_order = map.block_frame;
  const auto n = static_cast<Eigen::Index>(map.blocks()) * 6;
  sys.h = Eigen::MatrixXd::Zero(n, n);
  sys.y = Eigen::VectorXd::Zero(n);
  return sys;
}

std::vector<int> cluster_free_frames(const graph::ClusterAssignment& clusters,
                                     int cluster, int anchor) {
  std::vector<int> free;
  for (std::size_t v = 0; v < clusters.cluster_of.size(); ++v) {
    if (clusters.cluster_of[v] == cluster && static_cast<int>(v) != anchor) {
      free.push_back(static_cast<int>(v));
    }
  }
  return free;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

BlockMap BlockMap::PerFrame(int frame_count,
                            const std::vector<int>& free_frames) {
  BlockMap map;
  map.block_of.assign(static_cast<std::size_t>(frame_count), -1);
  for (const int f : free_frames) {
    auto& b = map.block_of.at(static_cast<std::size_t>(f));
    if (b >= 0) continue;
    b = map.blocks();
    map.block_frame.push_back(f);
  }
  return map;
}

BlockMap BlockMap::Rigid(const graph::ClusterAssignment& clusters,
                         const std::vector<bool>& fixed) {
  BlockMap map;
  map.block_of.assign(clusters.cluster_of.size(), -1);
  std::vector<int> block_of_cluster(clusters.cluster_count(), -1);
  for (std::size_t c = 0; c < clusters.cluster_count(); ++c) {
    if (c < fixed.size() && fixed[c]) continue;
    block_of_cluster[c] = map.blocks();
    map.block_frame.push_back(clusters.centers[c]);
  }
  for (std::size_t v = 0; v < clusters.cluster_of.size(); ++v) {
    map.block_of[v] =
        block_of_cluster[static_cast<std::size_t>(clusters.cluster_of[v])];
  }
  return map;
}

Matrix6d BlockMap::chain(int frame, const std::vector<Pose>& poses) const {
  Matrix6d c = Matrix6d::Identity();
  const int b = block_of[static_cast<std::size_t>(frame)];
  if (b < 0) return c;
  const int rep = block_frame[static_cast<std::size_t>(b)];
  if (rep == frame) return c;
  const Vector3d lever = poses[static_cast<std::size_t>(frame)].translation -
                         poses[static_cast<std::size_t>(rep)].translation;
  c.block<3, 3>(3, 0) = -skew(lever);
  return c;
}

std::vector<Pose> apply_update(const BlockMap& map,
                               const std::vector<Pose>& poses,
                               const Eigen::VectorXd& delta) {
  std::vector<Pose> out = poses;
  for (std::size_t f = 0; f < poses.size(); ++f) {
    const int b = map.block_of[f];
    if (b < 0) continue;
    const Vector6d d = delta.segment<6>(static_cast<Eigen::Index>(b) * 6);
    const Vector3d pivot =
        poses[static_cast<std::size_t>(map.block_frame[static_cast<std::size_t>(b)])]
            .translation;
    const Rotation r = exp_map(d.head<3>());
    out[f].rotation = r * poses[f].rotation;
    out[f].translation =
        r * (poses[f].translation - pivot) + pivot + d.tail<3>();
  }
  return out;
}

Eigen::VectorXd MarginalPrior::residual(const std::vector<Pose>& poses) const {
  Eigen::VectorXd r(static_cast<Eigen::Index>(frames.size()) * 6);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    r.segment<6>(static_cast<Eigen::Index>(k) * 6) =
        pose_difference(poses[static_cast<std::size_t>(frames[k])], snapshot[k])
            .stacked();
  }
  return r - mean;
}

double MarginalPrior::cost(const std::vector<Pose>& poses) const {
  const Eigen::VectorXd r = residual(poses);
  return r.dot(information * r);
}

Eigen::MatrixXd BlockNormalSystem::damped() const {
  Eigen::MatrixXd m = h;
  m.diagonal() += lambda * d.cwiseAbs2();
  return m;
}

void BlockNormalSystem::refresh_scaling() {
  const double top =
      h.size() == 0 ? 0.0 : std::max(0.0, h.diagonal().maxCoeff());
  const double floor = kScalingFloor * std::max(1.0, top);
  d = h.diagonal().cwiseMax(floor).cwiseSqrt();
}

FactorSubset all_factors(const pss::FactorSet& set) {
  FactorSubset s(set.factors.size());
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = static_cast<std::uint32_t>(k);
  return s;
}

BlockNormalSystem assemble(const pss::FactorSet& set, const FactorSubset& subset,
                           const std::vector<MarginalPrior>& priors,
                           const std::vector<Pose>& poses, const BlockMap& map) {
  BlockNormalSystem sys = empty_system(map);
  const std::vector<std::size_t> bounds = group_bounds(set, subset);
  const std::size_t groups = bounds.empty() ? 0 : bounds.size() - 1;
  std::vector<GroupTerm> terms(groups);

  const auto ng = static_cast<std::ptrdiff_t>(groups);
#pragma omp parallel for schedule(dynamic, 4) num_threads(worker_threads())
  for (std::ptrdiff_t g = 0; g < ng; ++g) {
    GroupTerm& t = terms[static_cast<std::size_t>(g)];
    const auto& first = set.factors[subset[bounds[static_cast<std::size_t>(g)]]];
    const int kf = first.kernel_frame;
    const int nf = first.neighbor_frame;
    t.block_k = map.block_of[static_cast<std::size_t>(kf)];
    t.block_n = map.block_of[static_cast<std::size_t>(nf)];
    const bool merged = t.block_k == t.block_n;
    const bool active = t.block_k >= 0 || t.block_n >= 0;
    const Matrix6d ck = map.chain(kf, poses);
    const Matrix6d cn = map.chain(nf, poses);
    for (std::size_t k = bounds[static_cast<std::size_t>(g)];
         k < bounds[static_cast<std::size_t>(g) + 1]; ++k) {
      const pss::PssFactor& f = set.factors[subset[k]];
      pss::PssJacobian jac;
      const double sigma = pss::pss_linearize(set.kernel_of(f), f, poses, &jac);
      t.cost += f.weight * sigma * sigma;
      if (!active) continue;
      Eigen::Matrix<double, 1, 12> row = Eigen::Matrix<double, 1, 12>::Zero();
      const RowVector6d a = jac.kernel_block * ck;
      const RowVector6d b = jac.neighbor_block * cn;
      if (merged) {
        row.head<6>() = a + b;
      } else {
        row.head<6>() = a;
        row.tail<6>() = b;
      }
      t.h.selfadjointView<Eigen::Lower>().rankUpdate(row.transpose(), f.weight);
      t.y.noalias() -= (f.weight * sigma) * row.transpose();
    }
    t.h.triangularView<Eigen::StrictlyUpper>() = t.h.transpose();
  }

  for (const GroupTerm& t : terms) {
    sys.cost += t.cost;
    const int slots[2] = {t.block_k, t.block_k == t.block_n ? -1 : t.block_n};
    for (int r = 0; r < 2; ++r) {
      if (slots[r] < 0) continue;
      sys.y.segment<6>(slots[r] * 6) += t.y.segment<6>(r * 6);
      for (int c = 0; c < 2; ++c) {
        if (slots[c] < 0) continue;
        sys.h.block<6, 6>(slots[r] * 6, slots[c] * 6) +=
            t.h.block<6, 6>(r * 6, c * 6);
      }
    }
  }
  add_priors(sys, priors, poses, map);
  sys.refresh_scaling();
  return sys;
}

BlockNormalSystem assemble(const pss::FactorSet& set,
                           const std::vector<MarginalPrior>& priors,
                           const std::vector<Pose>& poses,
                           const std::vector<int>& frame_subset) {
  const BlockMap map =
      BlockMap::PerFrame(static_cast<int>(poses.size()), frame_subset);
  FactorSubset subset;
  for (std::size_t k = 0; k < set.factors.size(); ++k) {
    const auto& f = set.factors[k];
    if (map.block_of[static_cast<std::size_t>(f.kernel_frame)] >= 0 ||
        map.block_of[static_cast<std::size_t>(f.neighbor_frame)] >= 0) {
      subset.push_back(static_cast<std::uint32_t>(k));
    }
  }
  return assemble(set, subset, priors, poses, map);
}

double evaluate_cost(const pss::FactorSet& set, const FactorSubset& subset,
                     const std::vector<MarginalPrior>& priors,
                     const std::vector<Pose>& poses) {
  const std::vector<std::size_t> bounds = group_bounds(set, subset);
  const std::size_t groups = bounds.empty() ? 0 : bounds.size() - 1;
  std::vector<double> partial(groups, 0.0);
  const auto ng = static_cast<std::ptrdiff_t>(groups);
#pragma omp parallel for schedule(dynamic, 4) num_threads(worker_threads())
  for (std::ptrdiff_t g = 0; g < ng; ++g) {
    double acc = 0.0;
    for (std::size_t k = bounds[static_cast<std::size_t>(g)];
         k < bounds[static_cast<std::size_t>(g) + 1]; ++k) {
      const pss::PssFactor& f = set.factors[subset[k]];
      const double sigma = pss::pss_residual(set.kernel_of(f), f, poses);
      acc += f.weight * sigma * sigma;
    }
    partial[static_cast<std::size_t>(g)] = acc;
  }
  double cost = 0.0;
  for (const double p : partial) cost += p;
  for (const auto& p : priors) cost += p.cost(poses);
  return cost;
}

Eigen::VectorXd lm_solve(const BlockNormalSystem& system, double lambda) {
  if (system.h.rows() == 0) return Eigen::VectorXd();
  for (int attempt = 0; attempt <= kMaxEscalations; ++attempt) {
    Eigen::MatrixXd m = system.h;
    m.diagonal() += lambda * system.d.cwiseAbs2();
    const Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) {
      Eigen::VectorXd dx = llt.solve(system.y);
      if (dx.allFinite()) return dx;
    }
    lambda = lambda > 0.0 ? lambda * 10.0 : 1e-6;
  }
  throw SolveFailed("damped normal matrix is not positive definite");
}

std::vector<PoseCorrection> split_corrections(const Eigen::VectorXd& delta) {
  std::vector<PoseCorrection> out;
  for (Eigen::Index k = 0; k + 6 <= delta.size(); k += 6) {
    out.push_back(PoseCorrection::FromStacked(delta.segment<6>(k)));
  }
  return out;
}

std::pair<ReducedSystem, SchurContext> schur_eliminate(
    const BlockNormalSystem& system, const Partition& partition) {
  const Eigen::MatrixXd m = system.damped();
  const auto ia = scalar_indices(partition.a, system.block_dim);
  const auto ib = scalar_indices(partition.b, system.block_dim);
  const Eigen::MatrixXd hbb = gather(m, ib, ib);
  const Eigen::LLT<Eigen::MatrixXd> llt(hbb);
  if (llt.info() != Eigen::Success) {
    const int block = first_indefinite_block(hbb, partition.b, system.block_dim);
    throw SchurFailed("H_bb is not positive definite at block " +
                          std::to_string(block),
                      static_cast<std::size_t>(block));
  }
  SchurContext ctx;
  ctx.partition = partition;
  ctx.block_dim = system.block_dim;
  ctx.hbb_factor = llt.matrixL();
  ctx.h_ab = gather(m, ia, ib);
  ctx.y_b = gather(system.y, ib);

  const Eigen::MatrixXd hbb_inv_hba = llt.solve(ctx.h_ab.transpose());
  ReducedSystem red;
  red.h = gather(m, ia, ia) - ctx.h_ab * hbb_inv_hba;
  red.h = 0.5 * (red.h + red.h.transpose()).eval();
  red.y = gather(system.y, ia) - hbb_inv_hba.transpose() * ctx.y_b;
  return {std::move(red), std::move(ctx)};
}

Eigen::VectorXd back_substitute(const SchurContext& context,
                                const Eigen::VectorXd& delta_a) {
  Eigen::VectorXd rhs = context.y_b;
  if (delta_a.size() > 0) rhs -= context.h_ab.transpose() * delta_a;
  const auto l = context.hbb_factor.triangularView<Eigen::Lower>();
  l.solveInPlace(rhs);
  l.transpose().solveInPlace(rhs);
  return rhs;
}

Eigen::VectorXd schur_solve(const BlockNormalSystem& system,
                            const Partition& partition) {
  auto [red, ctx] = schur_eliminate(system, partition);
  Eigen::VectorXd da;
  if (red.h.rows() > 0) {
    const Eigen::LLT<Eigen::MatrixXd> llt(red.h);
    if (llt.info() != Eigen::Success) {
      throw SolveFailed("reduced system is not positive definite");
    }
    da = llt.solve(red.y);
  } else {
    da.resize(0);
  }
  const Eigen::VectorXd db = back_substitute(ctx, da);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(system.y.size());
  const int bd = system.block_dim;
  for (std::size_t k = 0; k < partition.a.size(); ++k) {
    out.segment(static_cast<Eigen::Index>(partition.a[k]) * bd, bd) =
        da.segment(static_cast<Eigen::Index>(k) * bd, bd);
  }
  for (std::size_t k = 0; k < partition.b.size(); ++k) {
    out.segment(static_cast<Eigen::Index>(partition.b[k]) * bd, bd) =
        db.segment(static_cast<Eigen::Index>(k) * bd, bd);
  }
  return out;
}

MarginalPrior marginalize(const BlockNormalSystem& system,
                          const Partition& partition,
                          const std::vector<Pose>& poses) {
  const Eigen::MatrixXd m = system.damped();
  const auto ia = scalar_indices(partition.a, system.block_dim);
  const auto ib = scalar_indices(partition.b, system.block_dim);
  const Eigen::MatrixXd hbb = gather(m, ib, ib);
  const Eigen::VectorXd yb = gather(system.y, ib);

  MarginalPrior prior;
  prior.information = hbb;
  if (!ia.empty()) {
    const Eigen::LLT<Eigen::MatrixXd> llt_a(gather(m, ia, ia));
    if (llt_a.info() != Eigen::Success) {
      throw MarginalizeFailed("H_aa is not positive definite");
    }
    const Eigen::MatrixXd hab = gather(m, ia, ib);
    prior.information -= hab.transpose() * llt_a.solve(hab);
  }
  prior.information = 0.5 * (prior.information + prior.information.transpose()).eval();

  const Eigen::LLT<Eigen::MatrixXd> llt_b(hbb);
  if (llt_b.info() != Eigen::Success) {
    throw MarginalizeFailed("H_bb is not positive definite");
  }
  prior.mean = llt_b.solve(yb);
  for (const int b : partition.b) {
    const int frame = b < static_cast<int>(system.block_order.size())
                          ? system.block_order[static_cast<std::size_t>(b)]
                          : b;
    prior.frames.push_back(frame);
    if (static_cast<std::size_t>(frame) < poses.size()) {
      prior.snapshot.push_back(poses[static_cast<std::size_t>(frame)]);
    }
  }
  return prior;
}

void SolverConfig::validate() const {
  const auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (max_outer <= 0) fail("max_outer must be positive");
  if (!(gamma0 > 0.0)) fail("gamma0 must be positive");
  if (!(t_d > 0.0)) fail("T_D must be positive");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    fail("keep_fraction must lie in (0, 1]");
  }
  if (t_cluster == 0) fail("T_cluster must be positive");
  if (inner_lm_iters <= 0) fail("inner_lm_iters must be positive");
  if (!(lm_lambda0 > 0.0)) fail("lm_lambda0 must be positive");
  if (!(epsilon > 0.0 && epsilon < 1.0)) fail("epsilon must lie in (0, 1)");
  if (!(overlap_threshold >= 0.0 && overlap_threshold < 1.0)) {
    fail("overlap_threshold must lie in [0, 1)");
  }
  if (!(convergence_tol >= 0.0)) fail("convergence_tol must be non-negative");
}

LmStats lm_optimize(const pss::FactorSet& set, const FactorSubset& subset,
                    const std::vector<MarginalPrior>& priors,
                    const BlockMap& map, std::vector<Pose>& poses,
                    int iterations, double lambda0) {
  LmStats st;
  st.final_lambda = lambda0;
  if (map.blocks() == 0) {
    st.cost_before = st.cost_after = evaluate_cost(set, subset, priors, poses);
    return st;
  }
  BlockNormalSystem sys = assemble(set, subset, priors, poses, map);
  double cost = sys.cost;
  double lambda = lambda0;
  st.cost_before = cost;
  for (int it = 0; it < iterations; ++it) {
    if (cost <= 0.0 || sys.y.lpNorm<Eigen::Infinity>() < kGradientTol) break;
    ++st.iterations;
    const Eigen::VectorXd delta = lm_solve(sys, lambda);
    std::vector<Pose> trial = apply_update(map, poses, delta);
    const double trial_cost = evaluate_cost(set, subset, priors, trial);
    if (trial_cost < cost) {
      poses = std::move(trial);
      cost = trial_cost;
      lambda *= 0.5;
      ++st.accepted;
      if (it + 1 < iterations) sys = assemble(set, subset, priors, poses, map);
    } else {
      lambda *= 10.0;
    }
  }
  st.cost_after = cost;
  st.final_lambda = lambda;
  return st;
}

FactorSubset cross_cluster_factors(const pss::FactorSet& set,
                                   const graph::ClusterAssignment& clusters) {
  FactorSubset subset;
  for (std::size_t k = 0; k < set.factors.size(); ++k) {
    const auto& f = set.factors[k];
    if (clusters.cluster_of[static_cast<std::size_t>(f.kernel_frame)] !=
        clusters.cluster_of[static_cast<std::size_t>(f.neighbor_frame)]) {
      subset.push_back(static_cast<std::uint32_t>(k));
    }
  }
  return subset;
}

namespace {

BlockMap rigid_map(const graph::ClusterAssignment& clusters, int anchor) {
  std::vector<bool> fixed(clusters.cluster_count(), false);
  if (anchor >= 0 && static_cast<std::size_t>(anchor) < clusters.cluster_of.size()) {
    fixed[static_cast<std::size_t>(
        clusters.cluster_of[static_cast<std::size_t>(anchor)])] = true;
  }
  return BlockMap::Rigid(clusters, fixed);
}

}  // namespace

LmStats extra_cluster_optimize(const graph::ClusterAssignment& clusters,
                               const pss::FactorSet& set,
                               std::vector<Pose>& poses, const SolverConfig& cfg,
                               int anchor) {
  const FactorSubset cross = cross_cluster_factors(set, clusters);
  const BlockMap map = rigid_map(clusters, anchor);
  if (cross.empty()) {
    LmStats st;
    st.final_lambda = cfg.lm_lambda0;
    return st;
  }
  return lm_optimize(set, cross, {}, map, poses, cfg.inner_lm_iters,
                     cfg.lm_lambda0);
}

std::vector<std::optional<MarginalPrior>> cluster_priors(
    const graph::ClusterAssignment& clusters, const pss::FactorSet& set,
    const std::vector<Pose>& poses, const SolverConfig& cfg, int anchor) {
  std::vector<std::optional<MarginalPrior>> out(clusters.cluster_count());
  const FactorSubset cross = cross_cluster_factors(set, clusters);
  if (cross.empty()) return out;
  const BlockMap map = rigid_map(clusters, anchor);
  BlockNormalSystem sys = assemble(set, cross, {}, poses, map);
  sys.lambda = cfg.lm_lambda0;

  std::vector<bool> touched(clusters.cluster_count(), false);
  for (const auto k : cross) {
    const auto& f = set.factors[k];
    touched[static_cast<std::size_t>(
        clusters.cluster_of[static_cast<std::size_t>(f.kernel_frame)])] = true;
    touched[static_cast<std::size_t>(
        clusters.cluster_of[static_cast<std::size_t>(f.neighbor_frame)])] = true;
  }
  for (std::size_t c = 0; c < clusters.cluster_count(); ++c) {
    const int block =
        map.block_of[static_cast<std::size_t>(clusters.centers[c])];
    if (block < 0 || !touched[c]) continue;
    Partition part;
    for (int b = 0; b < map.blocks(); ++b) {
      if (b != block) part.a.push_back(b);
    }
    part.b.push_back(block);
    try {
      out[c] = marginalize(sys, part, poses);
    } catch (const MarginalizeFailed&) {
      out[c].reset();
    }
  }
  return out;
}

std::vector<Pose> intra_cluster_optimize(
    int cluster, const graph::ClusterAssignment& clusters,
    const pss::FactorSet& set, const std::optional<MarginalPrior>& prior,
    const std::vector<Pose>& poses, const SolverConfig& cfg, int anchor,
    LmStats* stats) {
  std::vector<Pose> out = poses;
  const std::vector<int> free = cluster_free_frames(clusters, cluster, anchor);
  const BlockMap map = BlockMap::PerFrame(static_cast<int>(poses.size()), free);
  FactorSubset subset;
  for (std::size_t k = 0; k < set.factors.size(); ++k) {
    const auto& f = set.factors[k];
    if (clusters.cluster_of[static_cast<std::size_t>(f.kernel_frame)] == cluster ||
        clusters.cluster_of[static_cast<std::size_t>(f.neighbor_frame)] ==
            cluster) {
      subset.push_back(static_cast<std::uint32_t>(k));
    }
  }
  std::vector<MarginalPrior> priors;
  if (prior) priors.push_back(*prior);
  try {
    const LmStats st = lm_optimize(set, subset, priors, map, out,
                                   cfg.inner_lm_iters, cfg.lm_lambda0);
    if (stats != nullptr) *stats = st;
  } catch (const SolveFailed& e) {
    throw SolveFailed(e.what(), cluster);
  }
  return out;
}

std::uint64_t iteration_seed(std::uint64_t rng_seed, int iter) {
  return splitmix64(rng_seed ^ splitmix64(static_cast<std::uint64_t>(iter)));
}

RunResult run_pss_goso(const std::vector<LidarFrame>& frames,
                       const std::vector<Pose>& initial_poses,
                       const SolverConfig& cfg) {
  cfg.validate();
  if (frames.size() != initial_poses.size()) {
    throw ConfigError("frame and pose counts differ");
  }
  using Clock = std::chrono::steady_clock;
  constexpr int kAnchor = 0;

  RunResult result;
  result.poses = initial_poses;
  Report& report = result.report;
  double gamma = cfg.gamma0;

  for (int iter = 1; iter <= cfg.max_outer; ++iter) {
    const auto t_iter = Clock::now();
    IterationRecord rec;
    rec.iter = iter;
    rec.gamma = gamma;
    const std::uint64_t seed = iteration_seed(cfg.rng_seed, iter);
    std::vector<Pose>& poses = result.poses;

    try {
      auto t = Clock::now();
      graph::GraphBuildConfig gcfg;
      gcfg.gamma = gamma;
      gcfg.overlap_threshold = cfg.overlap_threshold;
      result.graph = graph::build_relation_graph(frames, poses, gcfg);
      rec.graph_ms = elapsed_ms(t);
      rec.n_edges_raw = result.graph.edges.size();
      if (result.graph.edges.empty()) {
        report.warnings.push_back("iteration " + std::to_string(iter) +
                                  ": no overlapping frame pairs");
        rec.wall_ms = elapsed_ms(t_iter);
        report.iterations.push_back(rec);
        break;
      }

      t = Clock::now();
      graph::SparsifyConfig scfg;
      scfg.epsilon = cfg.epsilon;
      scfg.target_edges =
          graph::target_edge_count(result.graph.edges.size(), cfg.keep_fraction);
      scfg.rng_seed = seed;
      result.selection = graph::sparsify(result.graph, poses, scfg);
      const graph::RelationGraph sparse = result.graph.subgraph(result.selection);
      rec.sparsify_ms = elapsed_ms(t);
      rec.n_edges_kept = sparse.edges.size();
      if (!sparse.connected()) {
        report.warnings.push_back("iteration " + std::to_string(iter) +
                                  ": sparsified graph is disconnected");
      }

      t = Clock::now();
      pss::SmoothingConfig smoothing = cfg.smoothing;
      smoothing.gamma = gamma;
      const auto kernels = pss::build_kernels(frames, poses, smoothing);
      pss::EdgeList pairs;
      pairs.reserve(sparse.edges.size());
      for (const auto& e : sparse.edges) pairs.emplace_back(e.i, e.j);
      const pss::FactorSet set =
          pss::extract_factors(kernels, frames, pairs, smoothing);
      rec.extract_ms = elapsed_ms(t);
      rec.n_kernels = set.kernels.size();
      rec.n_factors = set.factors.size();

      result.clusters =
          graph::stochastic_cluster(sparse, cfg.t_cluster, splitmix64(seed));
      rec.n_clusters = result.clusters.cluster_count();
      rec.modularity = result.clusters.modularity;

      const FactorSubset everything = all_factors(set);
      rec.cost_before = evaluate_cost(set, everything, {}, poses);
      rec.cost_after = rec.cost_before;

      t = Clock::now();
      if (!set.factors.empty() && rec.cost_before > 0.0) {
        std::vector<Pose> stage = poses;
        try {
          extra_cluster_optimize(result.clusters, set, stage, cfg, kAnchor);
        } catch (const SolveFailed& e) {
          report.warnings.push_back("iteration " + std::to_string(iter) +
                                    ": extra-cluster stage failed: " + e.what());
          stage = poses;
        }

        const std::vector<Pose> snapshot = stage;
        const auto priors =
            cluster_priors(result.clusters, set, snapshot, cfg, kAnchor);
        const auto nc =
            static_cast<std::ptrdiff_t>(result.clusters.cluster_count());
        std::vector<std::vector<Pose>> solved(result.clusters.cluster_count());
        std::vector<std::string> failures(result.clusters.cluster_count());
#pragma omp parallel for schedule(dynamic, 1) num_threads(worker_threads())
        for (std::ptrdiff_t c = 0; c < nc; ++c) {
          const auto uc = static_cast<std::size_t>(c);
          try {
            solved[uc] = intra_cluster_optimize(static_cast<int>(c),
                                                result.clusters, set, priors[uc],
                                                snapshot, cfg, kAnchor);
          } catch (const Error& e) {
            failures[uc] = e.what();
          }
        }
        std::vector<Pose> merged = snapshot;
        for (std::size_t v = 0; v < merged.size(); ++v) {
          const auto c =
              static_cast<std::size_t>(result.clusters.cluster_of[v]);
          if (failures[c].empty()) merged[v] = solved[c][v];
        }
        for (std::size_t c = 0; c < failures.size(); ++c) {
          if (!failures[c].empty()) {
            report.warnings.push_back("iteration " + std::to_string(iter) +
                                      ": cluster " + std::to_string(c) +
                                      " solve failed: " + failures[c]);
          }
        }

        const double stage_cost = evaluate_cost(set, everything, {}, snapshot);
        const double merged_cost = evaluate_cost(set, everything, {}, merged);
        if (merged_cost <= stage_cost) {
          poses = std::move(merged);
          rec.cost_after = merged_cost;
        } else {
          report.warnings.push_back(
              "iteration " + std::to_string(iter) +
              ": intra-cluster results raised the joint cost; kept the "
              "extra-cluster poses");
          poses = snapshot;
          rec.cost_after = stage_cost;
        }
      }
      rec.solve_ms = elapsed_ms(t);
    } catch (const Error& e) {
      report.aborted = "iteration " + std::to_string(iter) + ": " + e.what();
      rec.wall_ms = elapsed_ms(t_iter);
      report.iterations.push_back(rec);
      break;
    }

    rec.wall_ms = elapsed_ms(t_iter);
    report.iterations.push_back(rec);
    gamma /= cfg.t_d;

    const double decrease = rec.cost_before - rec.cost_after;
    if (rec.cost_before <= 0.0 ||
        decrease < cfg.convergence_tol * rec.cost_before) {
      report.converged = true;
      break;
    }
  }
  return result;
}

namespace serial {

BlockNormalSystem assemble(const pss::FactorSet& set, const FactorSubset& subset,
                           const std::vector<MarginalPrior>& priors,
                           const std::vector<Pose>& poses, const BlockMap& map) {
  BlockNormalSystem sys = empty_system(map);
  for (const auto k : subset) {
    const pss::PssFactor& f = set.factors[k];
    pss::PssJacobian jac;
    const double sigma = pss::pss_linearize(set.kernel_of(f), f, poses, &jac);
    sys.cost += f.weight * sigma * sigma;
    const int bk = map.block_of[static_cast<std::size_t>(f.kernel_frame)];
    const int bn = map.block_of[static_cast<std::size_t>(f.neighbor_frame)];
    const RowVector6d a = jac.kernel_block * map.chain(f.kernel_frame, poses);
    const RowVector6d b = jac.neighbor_block * map.chain(f.neighbor_frame, poses);
    const std::pair<int, RowVector6d> rows[2] = {{bk, a}, {bn, b}};
    for (const auto& [br, jr] : rows) {
      if (br < 0) continue;
      sys.y.segment<6>(br * 6) -= f.weight * sigma * jr.transpose();
      for (const auto& [bc, jc] : rows) {
        if (bc < 0) continue;
        sys.h.block<6, 6>(br * 6, bc * 6) += f.weight * jr.transpose() * jc;
      }
    }
  }
  add_priors(sys, priors, poses, map);
  sys.refresh_scaling();
  return sys;
}

}  // namespace serial

}  // namespace lba::solver
