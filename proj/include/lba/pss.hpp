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

// Progressive spatial smoothing: smoothing-kernel sampling, L0 normal
// smoothing, tangent frames, weighted quadric fitting, point smoothing and the
// scalar surface factor linking a kernel's frame to a neighbor's frame.

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "lba/geometry.hpp"

namespace lba::pss {

struct PointRef {
  int frame = 0;
  std::size_t index = 0;

  auto operator<=>(const PointRef&) const = default;
};

struct SmoothingConfig {
  double gamma = 3.0;  // m, voxel edge and neighbor radius
  double mu = 0.02;    // L0 weight
  double beta0 = 0.01;
  double beta_max = 1e4;
  std::size_t min_neighbors = 8;
  // Weight applied to the squared residual of factors whose kernel and
  // neighbor come from the same frame.
  double self_factor_weight = 0.1;
  // Neighbors whose normal deviates more than this from the smoothed kernel
  // normal are left out of the fit and of factor association.
  double max_normal_deviation_deg = 30.0;
  // Neighbors farther than this fraction of gamma from the tangent plane or
  // from the fitted surface are left out as well.
  double association_gate = 1.0 / 6.0;
};

// Coordinates of a point in a kernel's tangent frame F^S.
struct TangentPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

struct SmoothingKernel {
  Vector3d point = Vector3d::Zero();  // world frame
  PointRef source;
  Vector3d source_local = Vector3d::Zero();  // kernel point in its frame
  Vector3d normal = Vector3d::UnitZ();
  Matrix3d tangent = Matrix3d::Identity();  // rows n0, n1, n2 (= normal)
  Vector5d alpha = Vector5d::Zero();
  std::vector<PointRef> neighbors;
};

// All frame points projected into the world frame, flattened, with the
// back-reference to (frame, index) for every entry.
struct WorldCloud {
  std::vector<Vector3d> points;
  std::vector<PointRef> refs;
  std::vector<std::size_t> frame_offset;  // size frames + 1

  std::size_t flat_index(const PointRef& r) const {
    return frame_offset[static_cast<std::size_t>(r.frame)] + r.index;
  }
};

WorldCloud project_frames(const std::vector<LidarFrame>& frames,
                          const std::vector<Pose>& poses);

// f(x, y) = alpha^T [x^2, y^2, xy, x, y].
double surface_value(const Vector5d& alpha, double x, double y);

// Gaussian radial weight exp(-d^2 / gamma^2).
double radial_weight(double d, double gamma);

// Voxel sampling at edge cfg.gamma, neighbor collection within cfg.gamma and
// the initial PCA normal. Kernels with too few neighbors or a degenerate
// (collinear) neighborhood are dropped. Output ordered by voxel key.
std::vector<SmoothingKernel> sample_kernels(const std::vector<LidarFrame>& frames,
                                            const std::vector<Pose>& poses,
                                            const SmoothingConfig& cfg);

// Unit normal from PCA over `points`; a zero vector and *degenerate set when the
// neighborhood is degenerate. Exposed for the per-point normal pass.
Vector3d pca_normal(const std::vector<Vector3d>& points, bool* degenerate);

// L0-regularized normal smoothing solved with the auxiliary-variable
// alternation: hard-threshold the differences, then a linear least-squares
// step on the 2-DoF normal, doubling beta until beta_max.
Vector3d smooth_normal(const Vector3d& initial,
                       const std::vector<Vector3d>& neighbor_normals,
                       const SmoothingConfig& cfg);

Matrix3d build_tangent_frame(const Vector3d& n);

TangentPoint project_to_kernel(const SmoothingKernel& kernel,
                               const Vector3d& p_world);

// Weighted least-squares quadric through the kernel origin. Throws
// FitUnderdetermined (< 5 points) or FitDegenerate (all weights ~ 0).
Vector5d fit_surface(const std::vector<TangentPoint>& points, double gamma);

std::vector<TangentPoint> smooth_points(const SmoothingKernel& kernel,
                                        const std::vector<TangentPoint>& points);

// Full kernel pass: sampling, per-point normals, normal smoothing, neighbor
// gating, tangent frame and surface fit. OpenMP over kernels; output order
// matches sample_kernels. Kernels whose fit fails are dropped.
std::vector<SmoothingKernel> build_kernels(const std::vector<LidarFrame>& frames,
                                           const std::vector<Pose>& poses,
                                           const SmoothingConfig& cfg);

// Kernel geometry frozen at extraction time. The kernel point follows the
// pose of its source frame; tangent frame and coefficients stay fixed.
struct KernelGeometry {
  int frame = 0;
  Vector3d local_point = Vector3d::Zero();
  Matrix3d tangent = Matrix3d::Identity();
  Vector5d alpha = Vector5d::Zero();
};

struct PssFactor {
  std::uint32_t kernel = 0;  // index into FactorSet::kernels
  int kernel_frame = 0;
  int neighbor_frame = 0;
  Vector3d neighbor_local = Vector3d::Zero();
  double weight = 1.0;

  bool self_constraining() const { return kernel_frame == neighbor_frame; }
};

struct FactorSet {
  std::vector<KernelGeometry> kernels;
  std::vector<PssFactor> factors;  // sorted by (kernel_frame, neighbor_frame)

  const KernelGeometry& kernel_of(const PssFactor& f) const {
    return kernels[f.kernel];
  }
};

// Undirected frame pairs (i < j) retained by graph sparsification.
using EdgeList = std::vector<std::pair<int, int>>;

FactorSet extract_factors(const std::vector<SmoothingKernel>& kernels,
                          const std::vector<LidarFrame>& frames,
                          const EdgeList& sparse_edges,
                          const SmoothingConfig& cfg);

double pss_residual(const KernelGeometry& kernel, const PssFactor& factor,
                    const std::vector<Pose>& poses);

struct PssJacobian {
  RowVector6d kernel_block = RowVector6d::Zero();    // d sigma / d pose i
  RowVector6d neighbor_block = RowVector6d::Zero();  // d sigma / d pose j
};

PssJacobian pss_jacobian(const KernelGeometry& kernel, const PssFactor& factor,
                         const std::vector<Pose>& poses);

// Residual and Jacobian in one pass.
double pss_linearize(const KernelGeometry& kernel, const PssFactor& factor,
                     const std::vector<Pose>& poses, PssJacobian* jacobian);

// Sum of weight * sigma^2 over all factors, in factor order.
double total_cost(const FactorSet& set, const std::vector<Pose>& poses);

namespace serial {
// Reference single-threaded kernel pass; must match lba::pss::build_kernels
// exactly.
std::vector<SmoothingKernel> build_kernels(const std::vector<LidarFrame>& frames,
                                           const std::vector<Pose>& poses,
                                           const SmoothingConfig& cfg);
}  // namespace serial

}  // namespace lba::pss
