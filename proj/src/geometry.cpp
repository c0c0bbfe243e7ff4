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

#include "lba/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace lba {

namespace {
constexpr double kTaylorCutoff = 1e-9;
constexpr double kNearPiCosine = -0.99;
constexpr double kTangentFallback = 1e-6;
}  // namespace

Matrix3d skew(const Vector3d& v) {
  Matrix3d m;
  m << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return m;
}

Vector3d vee(const Matrix3d& m) { return {m(2, 1), m(0, 2), m(1, 0)}; }

Rotation exp_map(const Vector3d& dtheta) {
  const double theta = dtheta.norm();
  double a;  // sin(theta) / theta
  double b;  // (1 - cos(theta)) / theta^2
  if (theta < kTaylorCutoff) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0;
    b = 0.5 - t2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / (theta * theta);
  }
  const Matrix3d k = skew(dtheta);
  return Matrix3d::Identity() + a * k + b * k * k;
}

namespace detail {

LogBranch log_map_branch(const Rotation& rotation) {
  const Vector3d w = 0.5 * vee(rotation - rotation.transpose());
  const double c = 0.5 * (rotation.trace() - 1.0);
  const double theta = std::atan2(w.norm(), c);
  if (theta < kTaylorCutoff) return LogBranch::kSmallAngle;
  if (c > kNearPiCosine) return LogBranch::kGeneric;
  return LogBranch::kNearPi;
}

}  // namespace detail

Vector3d log_map(const Rotation& rotation) {
  // w = sin(theta) * axis
  const Vector3d w = 0.5 * vee(rotation - rotation.transpose());
  const double s = w.norm();
  const double c = std::clamp(0.5 * (rotation.trace() - 1.0), -1.0, 1.0);
  const double theta = std::atan2(s, c);
  switch (detail::log_map_branch(rotation)) {
    case detail::LogBranch::kSmallAngle:
      return (1.0 + theta * theta / 6.0) * w;
    case detail::LogBranch::kGeneric:
      return (theta / s) * w;
    case detail::LogBranch::kNearPi:
      break;
  }
  // Symmetric part is (1 - cos) a a^T + cos I.
  const Matrix3d b =
      0.5 * (rotation + rotation.transpose()) - c * Matrix3d::Identity();
  Eigen::Index k = 0;
  b.diagonal().maxCoeff(&k);
  Vector3d axis = b.col(k).normalized();
  if (axis.dot(w) < 0.0) axis = -axis;
  return theta * axis;
}

Vector3d apply_pose(const Pose& pose, const Vector3d& p_local) {
  return pose.rotation * p_local + pose.translation;
}

Pose perturb_pose(const Pose& pose, const PoseCorrection& correction) {
  return {exp_map(correction.dtheta) * pose.rotation,
          pose.translation + correction.dt};
}

PoseCorrection pose_difference(const Pose& pose, const Pose& reference) {
  return {log_map(pose.rotation * reference.rotation.transpose()),
          pose.translation - reference.translation};
}

Pose compose(const Pose& a, const Pose& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

Pose inverse(const Pose& pose) {
  const Matrix3d rt = pose.rotation.transpose();
  return {rt, -(rt * pose.translation)};
}

Matrix3d tangent_frame(const Vector3d& n) {
  Vector3d n1(n.y(), -n.x(), 0.0);
  if (n1.norm() < kTangentFallback) n1 = Vector3d::UnitY();
  n1 -= n1.dot(n) * n;
  n1.normalize();
  const Vector3d n0 = n1.cross(n);
  Matrix3d m;
  m.row(0) = n0.transpose();
  m.row(1) = n1.transpose();
  m.row(2) = n.transpose();
  return m;
}

Vector3d perturb_normal(const Vector3d& n, const Vector2d& dphi) {
  const Matrix3d m = tangent_frame(n);
  const Vector3d moved =
      n + m.row(0).transpose() * dphi.x() + m.row(1).transpose() * dphi.y();
  return moved.normalized();
}

Matrix3d right_jacobian_inverse(const Vector3d& phi) {
  const double theta = phi.norm();
  const Matrix3d k = skew(phi);
  double coeff;
  if (theta < 1e-5) {
    coeff = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    coeff = 1.0 / (theta * theta) -
            (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Matrix3d::Identity() + 0.5 * k + coeff * k * k;
}

}  // namespace lba
