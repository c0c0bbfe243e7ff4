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

#include "lba/pss.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "lba/errors.hpp"
#include "lba/parallel.hpp"
#include "lba/voxel.hpp"

namespace lba::pss {

namespace {

constexpr double kRidge = 1e-10;
constexpr int kRefineSweeps = 2;
constexpr double kMinWeight = 1e-12;
constexpr double kCollinearRatio = 1e-9;
constexpr std::size_t kMinNormalSupport = 5;
constexpr std::size_t kCostChunk = 4096;
constexpr double kNormalRadiusRatio = 0.25;

Vector5d monomials(double x, double y) {
  Vector5d m;
  m << x * x, y * y, x * y, x, y;
  return m;
}

struct VoxelBucket {
  VoxelKey key;
  std::vector<std::size_t> members;  // flat cloud indices
};

std::vector<VoxelBucket> bucket_points(const WorldCloud& cloud, double edge) {
  std::map<VoxelKey, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    buckets[voxel_of(cloud.points[i], edge)].push_back(i);
  }
  std::vector<VoxelBucket> out;
  out.reserve(buckets.size());
  for (auto& [key, members] : buckets) out.push_back({key, std::move(members)});
  return out;
}

std::optional<SmoothingKernel> make_kernel(const WorldCloud& cloud,
                                           const PointGrid& grid,
                                           const VoxelBucket& bucket,
                                           const std::vector<LidarFrame>& frames,
                                           const std::vector<Pose>& poses,
                                           const SmoothingConfig& cfg) {
  Vector3d centroid = Vector3d::Zero();
  for (const std::size_t m : bucket.members) centroid += cloud.points[m];
  centroid /= static_cast<double>(bucket.members.size());

  std::size_t best = bucket.members.front();
  double best_d2 = (cloud.points[best] - centroid).squaredNorm();
  for (const std::size_t m : bucket.members) {
    const double d2 = (cloud.points[m] - centroid).squaredNorm();
    if (d2 < best_d2) {
      best = m;
      best_d2 = d2;
    }
  }

  SmoothingKernel k;
  k.point = cloud.points[best];
  k.source = cloud.refs[best];
  k.source_local =
      frames[static_cast<std::size_t>(k.source.frame)].points[k.source.index];

  const std::vector<std::size_t> near = grid.radius_search(k.point, cfg.gamma);
  if (near.size() < cfg.min_neighbors) return std::nullopt;

  std::vector<Vector3d> support;
  support.reserve(near.size());
  k.neighbors.reserve(near.size());
  for (const std::size_t idx : near) {
    support.push_back(cloud.points[idx]);
    k.neighbors.push_back(cloud.refs[idx]);
  }
  bool degenerate = false;
  Vector3d n = pca_normal(support, &degenerate);
  if (degenerate) return std::nullopt;
  const Vector3d& origin =
      poses[static_cast<std::size_t>(k.source.frame)].translation;
  if (n.dot(origin - k.point) < 0.0) n = -n;
  k.normal = n;
  k.tangent = build_tangent_frame(n);
  return k;
}

// PCA normals (zero vector where undefined) oriented toward the sensor of
// each point's frame. Points sharing a cell of edge radius / 2 share the
// normal taken at the cell centroid.
std::vector<Vector3d> point_normals(const WorldCloud& cloud,
                                    const PointGrid& grid, double radius,
                                    const std::vector<Pose>& poses,
                                    bool parallel) {
  const std::vector<VoxelBucket> cells = bucket_points(cloud, 0.5 * radius);
  std::vector<Vector3d> normals(cloud.points.size(), Vector3d::Zero());
  const auto n = static_cast<std::ptrdiff_t>(cells.size());
#pragma omp parallel for schedule(dynamic, 16) num_threads(worker_threads()) if (parallel)
  for (std::ptrdiff_t c = 0; c < n; ++c) {
    const auto& members = cells[static_cast<std::size_t>(c)].members;
    Vector3d centroid = Vector3d::Zero();
    for (const std::size_t m : members) centroid += cloud.points[m];
    centroid /= static_cast<double>(members.size());
    const auto near = grid.radius_search(centroid, radius);
    if (near.size() < kMinNormalSupport) continue;
    std::vector<Vector3d> support;
    support.reserve(near.size());
    for (const std::size_t idx : near) support.push_back(cloud.points[idx]);
    bool degenerate = false;
    const Vector3d nrm = pca_normal(support, &degenerate);
    if (degenerate) continue;
    for (const std::size_t m : members) {
      const Vector3d& origin =
          poses[static_cast<std::size_t>(cloud.refs[m].frame)].translation;
      normals[m] = nrm.dot(origin - cloud.points[m]) < 0.0 ? -nrm : nrm;
    }
  }
  return normals;
}

// Normal smoothing, neighbor gating and surface fit for one sampled kernel.
// Neighbors whose normal deviates from the smoothed kernel normal by more
// than the configured angle lie on another surface and are dropped. Returns
// false if the kernel should be dropped.
bool refine_kernel(SmoothingKernel& k, const WorldCloud& cloud,
                   const std::vector<Vector3d>& normals,
                   const SmoothingConfig& cfg) {
  const Vector3d own = normals[cloud.flat_index(k.source)];
  const Vector3d initial = own.squaredNorm() > 0.0 ? own : k.normal;

  std::vector<Vector3d> neighbor_normals;
  neighbor_normals.reserve(k.neighbors.size());
  for (const PointRef& r : k.neighbors) {
    const Vector3d& nj = normals[cloud.flat_index(r)];
    if (nj.squaredNorm() == 0.0) continue;
    neighbor_normals.push_back(nj);
  }
  k.normal = smooth_normal(initial, neighbor_normals, cfg);
  k.tangent = build_tangent_frame(k.normal);

  const double min_cos =
      std::cos(cfg.max_normal_deviation_deg * std::numbers::pi / 180.0);
  const auto agrees = [&](const Vector3d& nj) {
    return nj.squaredNorm() > 0.0 && nj.dot(k.normal) >= min_cos;
  };
  if (own.squaredNorm() > 0.0 && !agrees(own)) return false;

  // Normal agreement first, then distance to the tangent plane, then distance
  // to the fitted surface.
  const double tau = cfg.association_gate * cfg.gamma;
  std::vector<PointRef> kept;
  std::vector<TangentPoint> local;
  kept.reserve(k.neighbors.size());
  local.reserve(k.neighbors.size());
  for (const PointRef& r : k.neighbors) {
    const std::size_t flat = cloud.flat_index(r);
    if (!agrees(normals[flat])) continue;
    const TangentPoint tp = project_to_kernel(k, cloud.points[flat]);
    if (std::abs(tp.z) > tau) continue;
    kept.push_back(r);
    local.push_back(tp);
  }
  try {
    if (kept.size() < cfg.min_neighbors) return false;
    k.alpha = fit_surface(local, cfg.gamma);
    std::size_t w = 0;
    for (std::size_t q = 0; q < kept.size(); ++q) {
      const TangentPoint& tp = local[q];
      if (std::abs(surface_value(k.alpha, tp.x, tp.y) - tp.z) > tau) continue;
      kept[w] = kept[q];
      local[w] = tp;
      ++w;
    }
    if (w < kept.size()) {
      kept.resize(w);
      local.resize(w);
      if (kept.size() < cfg.min_neighbors) return false;
      k.alpha = fit_surface(local, cfg.gamma);
    }
  } catch (const FitUnderdetermined&) {
    return false;
  } catch (const FitDegenerate&) {
    return false;
  }
  k.neighbors = std::move(kept);
  return true;
}

std::vector<SmoothingKernel> kernel_pass(const std::vector<LidarFrame>& frames,
                                         const std::vector<Pose>& poses,
                                         const SmoothingConfig& cfg,
                                         bool parallel) {
  const WorldCloud cloud = project_frames(frames, poses);
  if (cloud.points.empty()) return {};
  const PointGrid grid(cloud.points, cfg.gamma);
  const std::vector<VoxelBucket> buckets = bucket_points(cloud, cfg.gamma);

  std::vector<std::optional<SmoothingKernel>> slots(buckets.size());
  const auto nb = static_cast<std::ptrdiff_t>(buckets.size());
#pragma omp parallel for schedule(dynamic, 16) num_threads(worker_threads()) if (parallel)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const auto ub = static_cast<std::size_t>(b);
    slots[ub] = make_kernel(cloud, grid, buckets[ub], frames, poses, cfg);
  }

  const double nr = kNormalRadiusRatio * cfg.gamma;
  const PointGrid fine(cloud.points, nr);
  const std::vector<Vector3d> normals =
      point_normals(cloud, fine, nr, poses, parallel);

#pragma omp parallel for schedule(dynamic, 16) num_threads(worker_threads()) if (parallel)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    auto& slot = slots[static_cast<std::size_t>(b)];
    if (slot && !refine_kernel(*slot, cloud, normals, cfg)) slot.reset();
  }

  std::vector<SmoothingKernel> out;
  for (auto& slot : slots) {
    if (slot) out.push_back(std::move(*slot));
  }
  return out;
}

}  // namespace

WorldCloud project_frames(const std::vector<LidarFrame>& frames,
                          const std::vector<Pose>& poses) {
  WorldCloud cloud;
  cloud.frame_offset.reserve(frames.size() + 1);
  std::size_t total = 0;
  for (const auto& f : frames) total += f.points.size();
  cloud.points.reserve(total);
  cloud.refs.reserve(total);
  for (std::size_t fi = 0; fi < frames.size(); ++fi) {
    cloud.frame_offset.push_back(cloud.points.size());
    const Pose& pose = poses.at(fi);
    const auto& pts = frames[fi].points;
    for (std::size_t k = 0; k < pts.size(); ++k) {
      cloud.points.push_back(apply_pose(pose, pts[k]));
      cloud.refs.push_back({static_cast<int>(fi), k});
    }
  }
  cloud.frame_offset.push_back(cloud.points.size());
  return cloud;
}

double surface_value(const Vector5d& alpha, double x, double y) {
  return alpha.dot(monomials(x, y));
}

double radial_weight(double d, double gamma) {
  return std::exp(-(d * d) / (gamma * gamma));
}

Vector3d pca_normal(const std::vector<Vector3d>& points, bool* degenerate) {
  *degenerate = true;
  if (points.size() < 3) return Vector3d::Zero();
  Vector3d mean = Vector3d::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Matrix3d cov = Matrix3d::Zero();
  for (const auto& p : points) {
    const Vector3d d = p - mean;
    cov.noalias() += d * d.transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Matrix3d> eig(cov);
  const Vector3d ev = eig.eigenvalues();  // ascending
  if (!(ev(2) > 0.0) || ev(1) <= kCollinearRatio * ev(2)) {
    return Vector3d::Zero();
  }
  *degenerate = false;
  return eig.eigenvectors().col(0).normalized();
}

std::vector<SmoothingKernel> sample_kernels(const std::vector<LidarFrame>& frames,
                                            const std::vector<Pose>& poses,
                                            const SmoothingConfig& cfg) {
  const WorldCloud cloud = project_frames(frames, poses);
  if (cloud.points.empty()) return {};
  const PointGrid grid(cloud.points, cfg.gamma);
  std::vector<SmoothingKernel> out;
  for (const auto& bucket : bucket_points(cloud, cfg.gamma)) {
    if (auto k = make_kernel(cloud, grid, bucket, frames, poses, cfg)) {
      out.push_back(std::move(*k));
    }
  }
  return out;
}

Vector3d smooth_normal(const Vector3d& initial,
                       const std::vector<Vector3d>& neighbor_normals,
                       const SmoothingConfig& cfg) {
  if (neighbor_normals.empty()) return initial;
  Vector3d n = initial;
  for (double beta = cfg.beta0; beta <= cfg.beta_max; beta *= 2.0) {
    const Matrix3d frame = tangent_frame(n);
    Eigen::Matrix<double, 3, 2> basis;
    basis.col(0) = frame.row(0).transpose();
    basis.col(1) = frame.row(1).transpose();

    // Data term 1 - n^T n_i == |n - n_i|^2 / 2 for unit vectors.
    Eigen::Matrix2d normal_matrix = 0.5 * Eigen::Matrix2d::Identity();
    Vector2d rhs = 0.5 * basis.transpose() * (initial - n);
    const double threshold = cfg.mu / beta;
    // The smoothness term is averaged over the neighbors so that the data
    // term keeps its weight in the early, small-beta rounds.
    const double weight =
        beta / static_cast<double>(neighbor_normals.size());
    for (const Vector3d& nj : neighbor_normals) {
      const double d = 1.0 - n.dot(nj);
      const double xi = threshold > d * d ? 0.0 : d;
      // d(D_j)/d(dphi) = -a^T
      const Vector2d a = basis.transpose() * nj;
      normal_matrix.noalias() += weight * a * a.transpose();
      rhs.noalias() += weight * a * (d - xi);
    }
    const Vector2d dphi = normal_matrix.ldlt().solve(rhs);
    n = perturb_normal(n, dphi);
  }
  if (n.dot(initial) < 0.0) n = -n;
  return n;
}

Matrix3d build_tangent_frame(const Vector3d& n) { return tangent_frame(n); }

TangentPoint project_to_kernel(const SmoothingKernel& kernel,
                               const Vector3d& p_world) {
  const Vector3d s = kernel.tangent * (p_world - kernel.point);
  return {s.x(), s.y(), s.z()};
}

Vector5d fit_surface(const std::vector<TangentPoint>& points, double gamma) {
  if (points.size() < 5) {
    throw FitUnderdetermined("surface fit needs at least 5 neighbors, got " +
                             std::to_string(points.size()));
  }
  Eigen::Matrix<double, 5, 5> a = Eigen::Matrix<double, 5, 5>::Zero();
  Vector5d b = Vector5d::Zero();
  bool any_weight = false;
  for (const auto& p : points) {
    const double d = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
    const double w = radial_weight(d, gamma);
    if (w >= kMinWeight) any_weight = true;
    const double w2 = w * w;
    const Vector5d m = monomials(p.x, p.y);
    a.noalias() += w2 * m * m.transpose();
    b.noalias() += w2 * p.z * m;
  }
  if (!any_weight) throw FitDegenerate("all neighbor weights vanish");

  Eigen::Matrix<double, 5, 5> damped = a;
  damped.diagonal().array() += kRidge * a.trace();
  const Eigen::LDLT<Eigen::Matrix<double, 5, 5>> ldlt(damped);
  if (ldlt.info() != Eigen::Success) throw FitDegenerate("normal equations");
  Vector5d alpha = ldlt.solve(b);
  // Iterative refinement removes the ridge bias on well-posed fits.
  for (int s = 0; s < kRefineSweeps; ++s) alpha += ldlt.solve(b - a * alpha);
  if (!alpha.allFinite()) throw FitDegenerate("non-finite coefficients");
  return alpha;
}

std::vector<TangentPoint> smooth_points(const SmoothingKernel& kernel,
                                        const std::vector<TangentPoint>& points) {
  std::vector<TangentPoint> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    out.push_back({p.x, p.y, surface_value(kernel.alpha, p.x, p.y)});
  }
  return out;
}

std::vector<SmoothingKernel> build_kernels(const std::vector<LidarFrame>& frames,
                                           const std::vector<Pose>& poses,
                                           const SmoothingConfig& cfg) {
  return kernel_pass(frames, poses, cfg, /*parallel=*/true);
}

namespace serial {
std::vector<SmoothingKernel> build_kernels(const std::vector<LidarFrame>& frames,
                                           const std::vector<Pose>& poses,
                                           const SmoothingConfig& cfg) {
  return kernel_pass(frames, poses, cfg, /*parallel=*/false);
}
}  // namespace serial

FactorSet extract_factors(const std::vector<SmoothingKernel>& kernels,
                          const std::vector<LidarFrame>& frames,
                          const EdgeList& sparse_edges,
                          const SmoothingConfig& cfg) {
  const std::size_t m = frames.size();
  std::vector<char> linked(m * m, 0);
  for (const auto& [a, b] : sparse_edges) {
    const auto ua = static_cast<std::size_t>(a);
    const auto ub = static_cast<std::size_t>(b);
    if (ua >= m || ub >= m) continue;
    linked[ua * m + ub] = 1;
    linked[ub * m + ua] = 1;
  }

  FactorSet set;
  set.kernels.reserve(kernels.size());
  std::vector<std::vector<PssFactor>> per_kernel(kernels.size());
  for (const auto& k : kernels) {
    set.kernels.push_back({k.source.frame, k.source_local, k.tangent, k.alpha});
  }

  const auto nk = static_cast<std::ptrdiff_t>(kernels.size());
#pragma omp parallel for schedule(dynamic, 16) num_threads(worker_threads())
  for (std::ptrdiff_t ki = 0; ki < nk; ++ki) {
    const auto& k = kernels[static_cast<std::size_t>(ki)];
    const int i = k.source.frame;
    auto& out = per_kernel[static_cast<std::size_t>(ki)];
    for (const PointRef& r : k.neighbors) {
      const int j = r.frame;
      const bool self = (i == j);
      if (!self && !linked[static_cast<std::size_t>(i) * m +
                           static_cast<std::size_t>(j)]) {
        continue;
      }
      PssFactor f;
      f.kernel = static_cast<std::uint32_t>(ki);
      f.kernel_frame = i;
      f.neighbor_frame = j;
      f.neighbor_local = frames[static_cast<std::size_t>(j)].points[r.index];
      f.weight = self ? cfg.self_factor_weight : 1.0;
      out.push_back(f);
    }
  }

  std::size_t total = 0;
  for (const auto& v : per_kernel) total += v.size();
  set.factors.reserve(total);
  for (auto& v : per_kernel) {
    set.factors.insert(set.factors.end(), v.begin(), v.end());
  }
  std::stable_sort(set.factors.begin(), set.factors.end(),
                   [](const PssFactor& a, const PssFactor& b) {
                     return std::pair(a.kernel_frame, a.neighbor_frame) <
                            std::pair(b.kernel_frame, b.neighbor_frame);
                   });
  return set;
}

double pss_linearize(const KernelGeometry& kernel, const PssFactor& factor,
                     const std::vector<Pose>& poses, PssJacobian* jacobian) {
  const Pose& pi = poses[static_cast<std::size_t>(factor.kernel_frame)];
  const Pose& pj = poses[static_cast<std::size_t>(factor.neighbor_frame)];
  const Vector3d ri = pi.rotation * kernel.local_point;
  const Vector3d rj = pj.rotation * factor.neighbor_local;
  const Vector3d s = kernel.tangent * ((rj + pj.translation) -
                                       (ri + pi.translation));
  const Vector5d& al = kernel.alpha;
  const double sigma = surface_value(al, s.x(), s.y()) - s.z();
  if (jacobian != nullptr) {
    const Eigen::RowVector3d g(2.0 * al(0) * s.x() + al(2) * s.y() + al(3),
                               2.0 * al(1) * s.y() + al(2) * s.x() + al(4),
                               -1.0);
    const Eigen::RowVector3d gm = g * kernel.tangent;
    jacobian->kernel_block << gm * skew(ri), -gm;
    jacobian->neighbor_block << -gm * skew(rj), gm;
  }
  return sigma;
}

double pss_residual(const KernelGeometry& kernel, const PssFactor& factor,
                    const std::vector<Pose>& poses) {
  return pss_linearize(kernel, factor, poses, nullptr);
}

PssJacobian pss_jacobian(const KernelGeometry& kernel, const PssFactor& factor,
                         const std::vector<Pose>& poses) {
  PssJacobian j;
  pss_linearize(kernel, factor, poses, &j);
  return j;
}

double total_cost(const FactorSet& set, const std::vector<Pose>& poses) {
  const std::size_t n = set.factors.size();
  const std::size_t chunks = (n + kCostChunk - 1) / kCostChunk;
  std::vector<double> partial(chunks, 0.0);
  const auto nc = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel for schedule(static) num_threads(worker_threads())
  for (std::ptrdiff_t c = 0; c < nc; ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * kCostChunk;
    const std::size_t end = std::min(n, begin + kCostChunk);
    double acc = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const auto& f = set.factors[k];
      const double r = pss_residual(set.kernel_of(f), f, poses);
      acc += f.weight * r * r;
    }
    partial[static_cast<std::size_t>(c)] = acc;
  }
  double total = 0.0;
  for (const double p : partial) total += p;
  return total;
}

}  // namespace lba::pss
