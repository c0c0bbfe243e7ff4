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

// SE(3)/SO(3) primitives shared by the whole pipeline.
//
// Rotations are updated on the left: a correction (dtheta, dt) maps the pose
// [R, t] to [Exp(dtheta) R, t + dt]. Every Jacobian in the library is taken
// with respect to this parameterization, ordered rotation-then-translation.

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace lba {

using Vector2d = Eigen::Vector2d;
using Vector3d = Eigen::Vector3d;
using Vector5d = Eigen::Matrix<double, 5, 1>;
using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix3d = Eigen::Matrix3d;
using Matrix6d = Eigen::Matrix<double, 6, 6>;
using RowVector6d = Eigen::Matrix<double, 1, 6>;

// Orthonormal 3x3 matrix with det +1.
using Rotation = Eigen::Matrix3d;

struct Pose {
  Rotation rotation = Rotation::Identity();
  Vector3d translation = Vector3d::Zero();

  static Pose Identity() { return {}; }
};

struct PoseCorrection {
  Vector3d dtheta = Vector3d::Zero();
  Vector3d dt = Vector3d::Zero();

  Vector6d stacked() const {
    Vector6d v;
    v << dtheta, dt;
    return v;
  }
  static PoseCorrection FromStacked(const Vector6d& v) {
    return {v.head<3>(), v.tail<3>()};
  }
};

struct LidarFrame {
  int frame_id = 0;
  double timestamp = 0.0;
  std::vector<Vector3d> points;
};

Matrix3d skew(const Vector3d& v);
Vector3d vee(const Matrix3d& m);

Rotation exp_map(const Vector3d& dtheta);
Vector3d log_map(const Rotation& rotation);

Vector3d apply_pose(const Pose& pose, const Vector3d& p_local);
Pose perturb_pose(const Pose& pose, const PoseCorrection& correction);

// Inverse of the left Jacobian-free correction: the (dtheta, dt) such that
// perturb_pose(reference, result) == pose.
PoseCorrection pose_difference(const Pose& pose, const Pose& reference);

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& pose);

// Rows n0, n1, n2 of the local tangent frame around unit normal n, with
// n2 == n. Shared by the normal parameterization and surface fitting.
Matrix3d tangent_frame(const Vector3d& n);

Vector3d perturb_normal(const Vector3d& n, const Vector2d& dphi);

// Inverse right Jacobian of SO(3); maps a right-multiplied increment of a
// rotation to the increment of its log.
Matrix3d right_jacobian_inverse(const Vector3d& phi);

namespace detail {
enum class LogBranch : std::uint8_t { kSmallAngle, kGeneric, kNearPi };
LogBranch log_map_branch(const Rotation& rotation);
}  // namespace detail

}  // namespace lba
