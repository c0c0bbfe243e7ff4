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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "lba/errors.hpp"
#include "lba/graph.hpp"
#include "test_util.hpp"

using namespace lba;
using namespace lba::graph;
using lba::test::deg;
using lba::test::random_graph;
using lba::test::random_pose;
using lba::test::random_vector;

namespace {

// Grid on a 4 m x 2 m plane, 0.1 m spacing.
LidarFrame plane_frame(int id) {
  LidarFrame f;
  f.frame_id = id;
  for (int a = 0; a < 40; ++a) {
    for (int b = 0; b < 20; ++b) f.points.emplace_back(0.1 * a, 0.1 * b, 0.05);
  }
  return f;
}

Pose shifted(double x) {
  Pose p;
  p.translation = Vector3d(x, 0, 0);
  return p;
}

bool is_psd(const Eigen::MatrixXd& m, double tol) {
  if (m.rows() == 0) return true;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol) return false;
  return min_eigenvalue(m) >= -tol * std::max(1.0, m.cwiseAbs().maxCoeff());
}

std::vector<std::size_t> all_edges(const RelationGraph& g) {
  std::vector<std::size_t> v(g.edges.size());
  std::iota(v.begin(), v.end(), 0);
  return v;
}

double seconds_of(const std::function<void()>& fn) {
  double best = 1e300;
  for (int rep = 0; rep < 3; ++rep) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - t0)
                              .count());
  }
  return best;
}

}  // namespace

TEST_SUITE("graph") {

TEST_CASE("identical co-located frames share an edge with full overlap") {
  const std::vector<LidarFrame> frames = {plane_frame(0), plane_frame(1)};
  const std::vector<Pose> poses(2, Pose::Identity());
  const RelationGraph g = build_relation_graph(frames, poses, 1.0);
  REQUIRE(g.edges.size() == 1);
  CHECK(g.edges[0].overlap_ratio == 1.0);
  CHECK(g.edges[0].i == 0);
  CHECK(g.edges[0].j == 1);
  CHECK(g.anchor == 0);
  CHECK(voxel_overlap(frames[0], poses[0], frames[1], poses[1], 1.0) == 1.0);
}

TEST_CASE("distant frames have no edge") {
  const std::vector<LidarFrame> frames = {plane_frame(0), plane_frame(1)};
  const RelationGraph g =
      build_relation_graph(frames, {shifted(0.0), shifted(50.0)}, 1.0);
  CHECK(g.edges.empty());
  CHECK(!g.connected());
}

TEST_CASE("three frames in a line yield exactly the consecutive edges") {
  const std::vector<LidarFrame> frames = {plane_frame(0), plane_frame(1),
                                          plane_frame(2)};
  const std::vector<Pose> poses = {shifted(0.0), shifted(2.5), shifted(5.0)};
  CHECK(voxel_overlap(frames[0], poses[0], frames[1], poses[1], 1.0) == 0.5);
  CHECK(voxel_overlap(frames[0], poses[0], frames[2], poses[2], 1.0) == 0.0);
  const RelationGraph g = build_relation_graph(frames, poses, 1.0);
  REQUIRE(g.edges.size() == 2);
  CHECK(std::pair(g.edges[0].i, g.edges[0].j) == std::pair(0, 1));
  CHECK(std::pair(g.edges[1].i, g.edges[1].j) == std::pair(1, 2));
  CHECK(g.connected());
  for (const auto& e : g.edges) {
    CHECK((e.omega - e.omega.transpose()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(e.lambda_min - std::max(0.0, min_eigenvalue(e.omega))) < 1e-9);
    CHECK(e.overlap_ratio > 0.30);
  }
}

TEST_CASE("information of a single correspondence at the origin") {
  const Matrix6d omega = information_from_points({Vector3d::Zero()});
  Matrix6d expected = Matrix6d::Zero();
  expected.diagonal() << 0, 0, 0, 1, 1, 1;
  CHECK(omega == expected);
  CHECK(std::abs(min_eigenvalue(omega)) < 1e-15);
}

TEST_CASE("non-collinear correspondences far from the origin are well posed") {
  const Matrix6d omega = information_from_points(
      {Vector3d(10, 0, 0), Vector3d(10, 1, 0), Vector3d(10, 0, 1)});
  CHECK(min_eigenvalue(omega) > 0.0);
}

TEST_CASE("duplicating correspondences doubles the information") {
  // Integer coordinates keep every sum exact.
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> coord(-5, 5);
  std::vector<Vector3d> pts;
  for (int k = 0; k < 7; ++k) pts.emplace_back(coord(rng), coord(rng), coord(rng));
  std::vector<Vector3d> twice = pts;
  twice.insert(twice.end(), pts.begin(), pts.end());
  CHECK(information_from_points(twice) == 2.0 * information_from_points(pts));
}

TEST_CASE("information is PSD and grows in Loewner order") {
  std::mt19937_64 rng(42);
  std::vector<Vector3d> pts;
  Matrix6d prev = Matrix6d::Zero();
  for (int k = 0; k < 30; ++k) {
    pts.push_back(random_vector(rng, 5.0));
    const Matrix6d next = information_from_points(pts);
    CHECK(is_psd(next, 1e-9));
    CHECK(is_psd(next - prev, 1e-9));
    prev = next;
  }
}

TEST_CASE("registration with too few correspondences throws") {
  LidarFrame a;
  a.points = {Vector3d(0, 0, 0), Vector3d(0.2, 0, 0)};
  CHECK_THROWS_AS(registration_information(a, a, Pose::Identity(),
                                           Pose::Identity(), 1.0),
                  EdgeUnderconstrained);
}

TEST_CASE("registration of an identical frame caps correspondences") {
  const LidarFrame f = plane_frame(0);
  const RegistrationInfo info = registration_information(
      f, f, Pose::Identity(), Pose::Identity(), 1.0, 100);
  CHECK(info.correspondences == 100);
  CHECK(is_psd(info.omega, 1e-9));
  CHECK(std::abs(info.lambda_min - std::max(0.0, min_eigenvalue(info.omega))) < 1e-9);
}

TEST_CASE("relative_pose_residual examples") {
  std::mt19937_64 rng(43);
  std::vector<Pose> poses = {Pose::Identity(), random_pose(rng, 0.5, 2.0)};
  RelationEdge e;
  e.i = 0;
  e.j = 1;
  e.relative = relative_pose(poses[0], poses[1]);
  CHECK(relative_pose_residual(e, poses).norm() < 1e-12);

  auto moved = poses;
  moved[1].translation += Vector3d(0.1, 0, 0);
  const Vector6d r = relative_pose_residual(e, moved);
  CHECK(r.head<3>().norm() < 1e-12);
  CHECK((r.tail<3>() - Vector3d(0.1, 0, 0)).norm() < 1e-12);

  const Vector3d dtheta(1e-3, -2e-3, 5e-4);
  auto turned = poses;
  turned[1].rotation = turned[1].rotation * exp_map(dtheta);
  const Vector6d rr = relative_pose_residual(e, turned);
  CHECK((rr.head<3>() - dtheta).norm() < 1e-5);
}

TEST_CASE("relative_pose_jacobian matches central differences") {
  std::mt19937_64 rng(44);
  for (int t = 0; t < 50; ++t) {
    std::vector<Pose> poses = {random_pose(rng, 1.0, 3.0), random_pose(rng, 1.0, 3.0)};
    RelationEdge e;
    e.i = 0;
    e.j = 1;
    e.relative = random_pose(rng, 1.0, 3.0);
    const auto jac = relative_pose_jacobian(e, poses);
    for (int side = 0; side < 2; ++side) {
      for (int c = 0; c < 6; ++c) {
        Vector6d d = Vector6d::Zero();
        d(c) = 1e-6;
        auto plus = poses, minus = poses;
        plus[side] = perturb_pose(poses[side], PoseCorrection::FromStacked(d));
        minus[side] = perturb_pose(poses[side], PoseCorrection::FromStacked(-d));
        const Vector6d numeric =
            (relative_pose_residual(e, plus) - relative_pose_residual(e, minus)) / 2e-6;
        CHECK((numeric - jac.col(6 * side + c)).norm() < 1e-6);
      }
    }
  }
}

TEST_CASE("pose_graph_information examples") {
  std::mt19937_64 rng(45);
  auto rg = random_graph(rng, 2, 1);
  REQUIRE(rg.graph.edges.size() == 1);
  CHECK(pose_graph_information(rg.graph, {}, rg.poses).isZero());
  const Eigen::MatrixXd lambda = pose_graph_information(rg.graph, {0}, rg.poses);
  REQUIRE(lambda.rows() == 6);
  const auto jac = relative_pose_jacobian(rg.graph.edges[0], rg.poses);
  const Matrix6d j1 = jac.rightCols<6>();
  const Matrix6d expected = j1.transpose() * rg.graph.edges[0].omega * j1;
  CHECK(lba::test::max_abs_diff(lambda, expected) < 1e-9);
  // J1 is invertible, so positivity follows Omega.
  CHECK((min_eigenvalue(lambda) > 1e-9) == (rg.graph.edges[0].lambda_min > 1e-9));

  for (int t = 0; t < 20; ++t) {
    auto big = random_graph(rng, 6, 12);
    std::vector<std::size_t> subset;
    for (std::size_t k = 0; k < big.graph.edges.size(); ++k) {
      if (rng() % 2) subset.push_back(k);
    }
    CHECK(is_psd(pose_graph_information(big.graph, subset, big.poses), 1e-9));
  }
}

TEST_CASE("optimality examples") {
  std::mt19937_64 rng(46);
  auto rg = random_graph(rng, 5, 10);
  CHECK(optimality(rg.graph, {}, rg.poses) == 0.0);

  // Monotone over nested subsets.
  for (int t = 0; t < 20; ++t) {
    std::vector<std::size_t> order = all_edges(rg.graph);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> subset;
    double prev = 0.0;
    for (const std::size_t k : order) {
      subset.push_back(k);
      const double now = optimality(rg.graph, subset, rg.poses);
      CHECK(now >= prev - 1e-9);
      prev = now;
    }
  }

  // Node 3 and 4 only linked to each other.
  RelationGraph split;
  split.node_count = 5;
  for (const auto& e : rg.graph.edges) {
    if ((e.i < 3) == (e.j < 3)) split.edges.push_back(e);
  }
  CHECK(optimality(split, all_edges(split), rg.poses) == 0.0);
  CHECK(std::abs(min_eigenvalue(
            pose_graph_information(split, all_edges(split), rg.poses))) < 1e-8);
}

TEST_CASE("target_edge_count rounds up") {
  CHECK(target_edge_count(10, 0.2) == 2);
  CHECK(target_edge_count(11, 0.2) == 3);
  CHECK(target_edge_count(7, 1.0) == 7);
  CHECK(target_edge_count(0, 0.2) == 0);
}

TEST_CASE("sparsify keeping every edge returns all of them") {
  std::mt19937_64 rng(47);
  auto rg = random_graph(rng, 5, 8);
  SparsifyConfig cfg;
  cfg.target_edges = rg.graph.edges.size();
  auto sel = sparsify(rg.graph, rg.poses, cfg);
  std::sort(sel.begin(), sel.end());
  CHECK(sel == all_edges(rg.graph));
}

TEST_CASE("sparsify breaks exact ties by the lowest pair") {
  RelationGraph g;
  g.node_count = 3;
  const std::vector<Pose> poses(3, Pose::Identity());
  const Matrix6d omega = information_from_points(
      {Vector3d(1, 0, 0), Vector3d(0, 1, 0), Vector3d(0, 0, 1)});
  for (const auto& [i, j] : {std::pair{1, 2}, std::pair{0, 2}, std::pair{0, 1}}) {
    RelationEdge e;
    e.i = i;
    e.j = j;
    e.omega = omega;
    e.lambda_min = min_eigenvalue(omega);
    g.edges.push_back(e);
  }
  SparsifyConfig cfg;
  cfg.target_edges = 1;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    cfg.rng_seed = seed;
    const auto sel = sparsify(g, poses, cfg);
    REQUIRE(sel.size() == 1);
    CHECK(sel[0] == 2);
  }
}

TEST_CASE("sparsify is deterministic and matches the serial reference") {
  std::mt19937_64 rng(48);
  for (int t = 0; t < 10; ++t) {
    auto rg = random_graph(rng, 8, 20);
    SparsifyConfig cfg;
    cfg.target_edges = 9;
    cfg.rng_seed = static_cast<std::uint64_t>(t);
    const auto a = sparsify(rg.graph, rg.poses, cfg);
    const auto b = sparsify(rg.graph, rg.poses, cfg);
    CHECK(a == b);
    CHECK(a == serial::sparsify(rg.graph, rg.poses, cfg));
    CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == a.size());
  }
}

TEST_CASE("rank-update and dense scoring choose the same edges") {
  std::mt19937_64 rng(49);
  for (int t = 0; t < 5; ++t) {
    auto rg = random_graph(rng, 20, 60);
    SparsifyConfig cfg;
    cfg.target_edges = 25;
    cfg.rng_seed = static_cast<std::uint64_t>(t);
    cfg.method = MinEigenMethod::kDense;
    const auto dense = sparsify(rg.graph, rg.poses, cfg);
    cfg.method = MinEigenMethod::kRankUpdate;
    const auto fast = sparsify(rg.graph, rg.poses, cfg);
    CHECK(dense == fast);
  }
}

TEST_CASE("rank-update minimum eigenvalue matches a dense solve") {
  std::mt19937_64 rng(50);
  for (int t = 0; t < 30; ++t) {
    const Eigen::Index n = 30;
    Eigen::MatrixXd a = Eigen::MatrixXd::Random(n, n);
    a = (a * a.transpose()).eval();
    if (t % 3 == 0) {
      // Rank deficient base.
      Eigen::MatrixXd low = Eigen::MatrixXd::Random(n, n - 8);
      a = low * low.transpose();
    }
    const RankUpdateMinEigen updater(a);
    std::vector<Eigen::Index> rows;
    for (Eigen::Index r = 0; r < 12; ++r) rows.push_back((r * 7 + t) % n);
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    const Eigen::MatrixXd b =
        Eigen::MatrixXd::Random(static_cast<Eigen::Index>(rows.size()), 6);
    Eigen::MatrixXd full = a;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < rows.size(); ++c) {
        full(rows[r], rows[c]) += b.row(static_cast<Eigen::Index>(r))
                                      .dot(b.row(static_cast<Eigen::Index>(c)));
      }
    }
    const double exact = min_eigenvalue(full);
    const double fast = updater.with_update(rows, b);
    CHECK(std::abs(fast - exact) < 1e-9 * std::max(1.0, std::abs(exact)));
    CHECK(updater.upper_bound(updater.project(rows, b)) >= exact - 1e-9);
  }
}

TEST_CASE("stochastic greedy stays near the exhaustive optimum") {
  std::mt19937_64 rng(51);
  const double ratio_floor = 1.0 - 1.0 / std::exp(1.0) - 0.1;
  for (int t = 0; t < 5; ++t) {
    auto rg = random_graph(rng, 4 + t % 2, 10);
    const std::size_t target = 4;
    const double optimum = lba::test::best_subset_optimality(rg, target);
    if (optimum <= 0.0) continue;
    double sum = 0.0;
    SparsifyConfig cfg;
    cfg.target_edges = target;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      cfg.rng_seed = seed;
      sum += optimality(rg.graph, sparsify(rg.graph, rg.poses, cfg), rg.poses);
    }
    CHECK(sum / 100.0 >= ratio_floor * optimum);
  }
}

TEST_CASE("sparsify time grows less than threefold when edges double") {
  std::mt19937_64 rng(52);
  auto small = random_graph(rng, 30, 60);
  auto large = random_graph(rng, 30, 120);
  SparsifyConfig cfg;
  cfg.target_edges = 10;
  const double ts = seconds_of([&] { (void)sparsify(small.graph, small.poses, cfg); });
  const double tl = seconds_of([&] { (void)sparsify(large.graph, large.poses, cfg); });
  MESSAGE("60 edges " << ts << " s, 120 edges " << tl << " s");
  CHECK(tl < 3.0 * ts);
}

TEST_CASE("two nodes with one edge form one cluster with modularity one quarter") {
  for (double w : {0.5, 1.0, 7.0}) {
    const auto c = stochastic_cluster(2, {{0, 1, w}}, 2, 3);
    CHECK(c.cluster_count() == 1);
    CHECK(std::abs(c.modularity - 0.25) < 1e-12);
  }
}

TEST_CASE("two disconnected triangles form two clusters") {
  const std::vector<WeightedEdge> edges = {{0, 1, 1.0}, {1, 2, 2.0}, {0, 2, 1.5},
                                           {3, 4, 1.0}, {4, 5, 0.5}, {3, 5, 3.0}};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto c = stochastic_cluster(6, edges, 300, seed);
    REQUIRE(c.cluster_count() == 2);
    CHECK(c.cluster_of[0] == c.cluster_of[1]);
    CHECK(c.cluster_of[1] == c.cluster_of[2]);
    CHECK(c.cluster_of[3] == c.cluster_of[4]);
    CHECK(c.cluster_of[4] == c.cluster_of[5]);
    CHECK(c.cluster_of[0] != c.cluster_of[3]);
  }
}

TEST_CASE("cluster size one keeps singletons") {
  const auto c = stochastic_cluster(4, {{0, 1, 1.0}, {1, 2, 1.0}, {2, 3, 1.0}}, 1, 9);
  CHECK(c.cluster_count() == 4);
  CHECK(c.merge_gains.empty());
}

TEST_CASE("clustering is a capped partition with consistent modularity") {
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> w(0.1, 5.0);
  for (int t = 0; t < 50; ++t) {
    const int n = 12;
    std::vector<WeightedEdge> edges;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (rng() % 3 == 0) edges.push_back({i, j, w(rng)});
      }
    }
    const std::size_t cap = 2 + static_cast<std::size_t>(t % 5);
    const auto c = stochastic_cluster(n, edges, cap, static_cast<std::uint64_t>(t));
    const auto members = c.members();
    std::size_t total = 0;
    for (std::size_t k = 0; k < members.size(); ++k) {
      total += members[k].size();
      CHECK(members[k].size() <= cap);
      CHECK(c.cluster_of[static_cast<std::size_t>(c.centers[k])] == static_cast<int>(k));
    }
    CHECK(total == static_cast<std::size_t>(n));
    for (const double g : c.merge_gains) CHECK(g > 0.0);
    CHECK(std::abs(c.modularity - c.tracked_modularity) < 1e-9);
    const auto again = stochastic_cluster(n, edges, cap, static_cast<std::uint64_t>(t));
    CHECK(again.cluster_of == c.cluster_of);
  }
}

TEST_CASE("exhaustive partition enumeration counts Bell numbers") {
  int count = 0;
  lba::test::for_each_partition(5, [&](const std::vector<int>&) { ++count; });
  CHECK(count == 52);
}

TEST_CASE("edge list export") {
  RelationGraph g;
  g.node_count = 3;
  RelationEdge e;
  e.i = 0;
  e.j = 2;
  e.lambda_min = 1.5;
  e.overlap_ratio = 0.75;
  g.edges.push_back(e);
  std::ostringstream os;
  write_edge_list(os, g);
  CHECK(os.str() == "# anchor 0\n0 2 1.5 0.75\n");
}

}  // TEST_SUITE
