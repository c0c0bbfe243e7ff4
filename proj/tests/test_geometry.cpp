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

#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "lba/geometry.hpp"
#include "test_util.hpp"

using namespace lba;
using lba::test::random_pose;
using lba::test::random_unit;
using lba::test::random_vector;

namespace {

void check_rotation(const Rotation& r, double tol) {
  CHECK((r.transpose() * r - Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol);
  CHECK(std::abs(r.determinant() - 1.0) <= tol);
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("exp_map of zero is the identity") {
  CHECK(exp_map(Vector3d::Zero()).isApprox(Matrix3d::Identity(), 0.0));
}

TEST_CASE("exp_map quarter turn about x sends y to z") {
  const Rotation r = exp_map(Vector3d(std::numbers::pi / 2, 0, 0));
  CHECK((r * Vector3d::UnitY() - Vector3d::UnitZ()).norm() < 1e-15);
}

TEST_CASE("exp_map matches frozen Rodrigues values") {
  // Independent evaluation of the rotation vector (0.3, -0.2, 0.5).
  Matrix3d expected;
  expected << 0.8595338985586632, -0.4979915370029221, -0.11491695393636675,
      0.43986763295823095, 0.8353156052067087, -0.3297943376922552,
      0.2602267140480945, 0.23292116428443665, 0.937032437284918;
  CHECK((exp_map(Vector3d(0.3, -0.2, 0.5)) - expected).cwiseAbs().maxCoeff() <
        1e-15);
}

TEST_CASE("exp_map at tiny angles stays near identity and orthonormal") {
  const Vector3d v(1e-12, 0, 0);
  const Rotation r = exp_map(v);
  CHECK((r - Matrix3d::Identity() - skew(v)).cwiseAbs().maxCoeff() < 1e-20);
  check_rotation(r, 1e-12);
}

TEST_CASE("exp_map is orthonormal with det +1 up to angle 10") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> a(0.0, 10.0);
  for (int k = 0; k < 1000; ++k) {
    check_rotation(exp_map(random_unit(rng) * a(rng)), 1e-12);
  }
}

TEST_CASE("log_map of identity is zero") {
  CHECK(log_map(Matrix3d::Identity()).norm() == 0.0);
}

TEST_CASE("log_map inverts exp_map below pi") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> a(1e-6, std::numbers::pi - 1e-3);
  for (int k = 0; k < 1000; ++k) {
    const Vector3d v = random_unit(rng) * a(rng);
    CHECK((log_map(exp_map(v)) - v).norm() < 1e-9);
  }
}

TEST_CASE("log_map round trip for composed rotation matches frozen value") {
  const Rotation r = exp_map(Vector3d(0.3, -0.2, 0.5)) *
                     exp_map(Vector3d(1.0, 2.0, -0.5));
  const Vector3d expected(0.6485297315092629, 2.0767773408448846,
                          0.16872928990224412);
  CHECK((log_map(r) - expected).norm() < 1e-12);
}

TEST_CASE("log_map at pi about x uses the near-pi branch") {
  const Rotation r = exp_map(Vector3d(std::numbers::pi, 0, 0));
  const Vector3d v = log_map(r);
  CHECK(std::abs(v.norm() - std::numbers::pi) < 1e-9);
  CHECK(std::abs(std::abs(v.x()) - std::numbers::pi) < 1e-9);
  CHECK(detail::log_map_branch(r) == detail::LogBranch::kNearPi);
  CHECK((exp_map(v) - r).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("log_map near pi for arbitrary axes round trips") {
  std::mt19937_64 rng(13);
  for (int k = 0; k < 200; ++k) {
    const Vector3d axis = random_unit(rng);
    const Rotation r = exp_map(axis * (std::numbers::pi - 1e-7));
    CHECK((exp_map(log_map(r)) - r).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("log_map branch selection") {
  CHECK(detail::log_map_branch(exp_map(Vector3d(1e-12, 0, 0))) ==
        detail::LogBranch::kSmallAngle);
  CHECK(detail::log_map_branch(exp_map(Vector3d(0.5, 0.1, 0))) ==
        detail::LogBranch::kGeneric);
}

TEST_CASE("apply_pose examples") {
  Pose p;
  p.translation = Vector3d(1, 2, 3);
  CHECK(apply_pose(p, Vector3d::Zero()) == Vector3d(1, 2, 3));
  const Vector3d q(0.4, -1.5, 2.0);
  CHECK(apply_pose(Pose::Identity(), q) == q);
  Pose r;
  r.rotation = exp_map(Vector3d(std::numbers::pi / 2, 0, 0));
  CHECK((apply_pose(r, Vector3d::UnitY()) - Vector3d::UnitZ()).norm() < 1e-15);
}

TEST_CASE("perturb_pose examples") {
  std::mt19937_64 rng(14);
  const Pose x = random_pose(rng, 1.0, 2.0);
  const Pose same = perturb_pose(x, PoseCorrection{});
  CHECK(same.rotation == x.rotation);
  CHECK(same.translation == x.translation);

  const PoseCorrection c{Vector3d(0.1, -0.2, 0.3), Vector3d(1, 2, 3)};
  const Pose from_identity = perturb_pose(Pose::Identity(), c);
  CHECK((from_identity.rotation - exp_map(c.dtheta)).norm() < 1e-15);
  CHECK(from_identity.translation == c.dt);
}

TEST_CASE("perturb_pose updates commute to first order") {
  std::mt19937_64 rng(15);
  const Pose x = random_pose(rng, 1.0, 2.0);
  const Vector6d a = (Vector6d() << random_unit(rng), random_unit(rng)).finished();
  const Vector6d b = (Vector6d() << random_unit(rng), random_unit(rng)).finished();
  double previous_ratio = 0.0;
  for (double s : {1e-2, 1e-3, 1e-4}) {
    const auto ca = PoseCorrection::FromStacked(s * a);
    const auto cb = PoseCorrection::FromStacked(s * b);
    const Pose ab = perturb_pose(perturb_pose(x, ca), cb);
    const Pose ba = perturb_pose(perturb_pose(x, cb), ca);
    const double d = (ab.rotation - ba.rotation).norm() +
                     (ab.translation - ba.translation).norm();
    const double ratio = d / (s * s);
    CHECK(ratio < 10.0);
    if (previous_ratio > 0.0) CHECK(std::abs(ratio - previous_ratio) < 0.1);
    previous_ratio = ratio;
  }
}

TEST_CASE("perturbed point agrees with the first-order term to second order") {
  std::mt19937_64 rng(16);
  const Pose x = random_pose(rng, 1.0, 2.0);
  const Vector3d p = random_vector(rng, 3.0);
  const Vector3d dir_r = random_unit(rng);
  const Vector3d dir_t = random_unit(rng);
  for (double s : {1e-2, 1e-3, 1e-4}) {
    const PoseCorrection c{s * dir_r, s * dir_t};
    const Vector3d moved = apply_pose(perturb_pose(x, c), p) - apply_pose(x, p);
    const Vector3d linear =
        (exp_map(c.dtheta) - Matrix3d::Identity()) * x.rotation * p + c.dt;
    CHECK((moved - linear).norm() <= 1e-12 + 1e-9 * s);
    const Vector3d first_order =
        c.dtheta.cross(x.rotation * p) + c.dt;
    CHECK((moved - first_order).norm() < 10.0 * s * s);
  }
}

TEST_CASE("pose_difference inverts perturb_pose") {
  std::mt19937_64 rng(17);
  for (int k = 0; k < 100; ++k) {
    const Pose x = random_pose(rng, 2.0, 3.0);
    const Vector6d v =
        (Vector6d() << random_vector(rng, 0.5), random_vector(rng, 1.0)).finished();
    const Pose y = perturb_pose(x, PoseCorrection::FromStacked(v));
    CHECK((pose_difference(y, x).stacked() - v).norm() < 1e-10);
  }
}

TEST_CASE("compose and inverse") {
  std::mt19937_64 rng(18);
  const Pose a = random_pose(rng, 2.0, 3.0);
  const Pose b = random_pose(rng, 2.0, 3.0);
  const Vector3d p = random_vector(rng, 2.0);
  CHECK((apply_pose(compose(a, b), p) - apply_pose(a, apply_pose(b, p))).norm() <
        1e-12);
  const Pose e = compose(a, inverse(a));
  CHECK((e.rotation - Matrix3d::Identity()).norm() < 1e-12);
  CHECK(e.translation.norm() < 1e-12);
}

TEST_CASE("tangent_frame examples") {
  const Matrix3d m = tangent_frame(Vector3d::UnitX());
  CHECK((m.row(0).transpose() - Vector3d(0, 0, 1)).norm() < 1e-15);
  CHECK((m.row(1).transpose() - Vector3d(0, -1, 0)).norm() < 1e-15);
  CHECK((m.row(2).transpose() - Vector3d(1, 0, 0)).norm() < 1e-15);

  for (const Vector3d& n : {Vector3d(0, 0, 1), Vector3d(0, 0, -1),
                            Vector3d(1e-8, 0, 1).normalized()}) {
    const Matrix3d f = tangent_frame(n);
    CHECK((f * f.transpose() - Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((f.row(2).transpose() - n).norm() < 1e-15);
  }
}

TEST_CASE("tangent_frame is orthonormal and right-handed for random normals") {
  std::mt19937_64 rng(19);
  for (int k = 0; k < 1000; ++k) {
    const Vector3d n = random_unit(rng);
    const Matrix3d m = tangent_frame(n);
    CHECK((m * m.transpose() - Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    const Vector3d r0 = m.row(0).transpose();
    const Vector3d r1 = m.row(1).transpose();
    CHECK((r0.cross(r1) - m.row(2).transpose()).norm() < 1e-12);
  }
}

TEST_CASE("perturb_normal") {
  const Vector3d n(0, 0, 1);
  CHECK(perturb_normal(n, Vector2d::Zero()) == n);
  for (double s : {1e-3, 1e-4, 1e-5}) {
    const Vector2d dphi(0.6 * s, -0.8 * s);
    const Vector3d m = perturb_normal(n, dphi);
    const double deviation = (m - m.dot(n) * n).norm();
    CHECK(std::abs(deviation - s) < 2.0 * s * s);
  }
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int k = 0; k < 1000; ++k) {
    const Vector3d m = perturb_normal(random_unit(rng), Vector2d(u(rng), u(rng)));
    CHECK(std::abs(m.norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("skew and vee are inverse") {
  const Vector3d v(0.3, -1.2, 2.5);
  CHECK(vee(skew(v)) == v);
  const Vector3d w(1.0, 0.5, -0.25);
  CHECK((skew(v) * w - v.cross(w)).norm() < 1e-15);
}

}  // TEST_SUITE
