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

// Command-line driver: run, synth, ape and graph-dump.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lba/errors.hpp"
#include "lba/graph.hpp"
#include "lba/io.hpp"
#include "lba/metrics.hpp"
#include "lba/solver.hpp"
#include "lba/synthetic.hpp"

namespace {

namespace fs = std::filesystem;
using namespace lba;

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kSolver = 3 };

std::vector<Pose> poses_of(const std::vector<io::TimedPose>& traj) {
  std::vector<Pose> out;
  out.reserve(traj.size());
  for (const auto& tp : traj) out.push_back(tp.pose);
  return out;
}

std::vector<io::TimedPose> with_times(const std::vector<io::TimedPose>& like,
                                      const std::vector<Pose>& poses) {
  std::vector<io::TimedPose> out = like;
  for (std::size_t k = 0; k < out.size(); ++k) out[k].pose = poses[k];
  return out;
}

metrics::ApeResult matched_ape(const std::vector<io::TimedPose>& est,
                               const std::vector<io::TimedPose>& gt) {
  if (est.size() == gt.size()) {
    for (std::size_t k = 0; k < est.size(); ++k) {
      if (std::abs(est[k].timestamp - gt[k].timestamp) > 1e-6) {
        throw MetricError("timestamps differ at pose " + std::to_string(k));
      }
    }
  }
  return metrics::ape(poses_of(est), poses_of(gt));
}

void write_graph(const fs::path& path, const graph::RelationGraph& g) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  graph::write_edge_list(out, g);
}

int cmd_run(const fs::path& config_path) {
  const io::RunConfig cfg = io::read_run_config(config_path);
  const io::Dataset ds = io::load_dataset(cfg);
  std::vector<io::TimedPose> truth;
  if (!cfg.ground_truth.empty()) truth = io::read_trajectory(cfg.ground_truth);

  const auto initial = poses_of(ds.trajectory);
  const solver::RunResult result =
      solver::run_pss_goso(ds.frames, initial, cfg.solver);

  fs::create_directories(cfg.output_dir);
  const auto optimized = with_times(ds.trajectory, result.poses);
  io::write_trajectory(cfg.output_dir / "trajectory.txt", optimized);
  LidarFrame merged;
  merged.points =
      io::merged_world_cloud(ds.frames, result.poses, cfg.output_voxel);
  io::write_cloud(cfg.output_dir / "cloud.ply", {merged},
                  io::PlyEncoding::kBinaryLittleEndian, false);
  write_graph(cfg.output_dir / "graph_raw.txt", result.graph);
  write_graph(cfg.output_dir / "graph.txt",
              result.graph.subgraph(result.selection));

  nlohmann::json report = nlohmann::json::parse(io::report_json(result.report));
  if (!truth.empty()) {
    const double before = matched_ape(ds.trajectory, truth).rmse;
    const double after = matched_ape(optimized, truth).rmse;
    report["ape"] = {{"initial", before}, {"final", after}};
    std::fprintf(stderr, "ape initial %.6f final %.6f\n", before, after);
  }
  std::ofstream(cfg.output_dir / "report.json") << report.dump(2) << '\n';

  for (const auto& w : result.report.warnings) {
    std::cerr << "warning: " << w << '\n';
  }
  if (!result.report.aborted.empty()) {
    std::cerr << "error: " << result.report.aborted << '\n';
    return kSolver;
  }
  return kOk;
}

int cmd_synth(const std::string& spec_path, const fs::path& out_dir) {
  synth::SceneSpec spec;
  if (!spec_path.empty()) {
    std::ifstream in(spec_path);
    if (!in) throw ConfigError("cannot open spec " + spec_path);
    spec = synth::parse_scene_spec(in);
  }
  const synth::SyntheticDataset ds = synth::generate(spec);
  fs::create_directories(out_dir);
  std::vector<io::TimedPose> truth, initial;
  for (std::size_t k = 0; k < ds.frames.size(); ++k) {
    truth.push_back({ds.frames[k].timestamp, ds.truth[k]});
    initial.push_back({ds.frames[k].timestamp, ds.initial[k]});
  }
  io::write_cloud(out_dir / "clouds.ply", ds.frames,
                  io::PlyEncoding::kBinaryLittleEndian, true);
  io::write_trajectory(out_dir / "trajectory.txt", initial);
  io::write_trajectory(out_dir / "groundtruth.txt", truth);
  std::ofstream cfg(out_dir / "run.cfg");
  cfg << "trajectory = trajectory.txt\n"
      << "cloud = clouds.ply\n"
      << "ground_truth = groundtruth.txt\n"
      << "output_dir = result\n";
  if (!cfg) throw FormatError("cannot write run.cfg");
  return kOk;
}

int cmd_ape(const fs::path& est, const fs::path& gt) {
  const auto result =
      matched_ape(io::read_trajectory(est), io::read_trajectory(gt));
  std::printf("%.6f\n", result.rmse);
  return kOk;
}

int cmd_graph_dump(const fs::path& config_path, const std::string& out,
                   bool sparse) {
  const io::RunConfig cfg = io::read_run_config(config_path);
  const io::Dataset ds = io::load_dataset(cfg);
  const auto poses = poses_of(ds.trajectory);
  graph::GraphBuildConfig gcfg;
  gcfg.gamma = cfg.solver.gamma0;
  gcfg.overlap_threshold = cfg.solver.overlap_threshold;
  graph::RelationGraph g = graph::build_relation_graph(ds.frames, poses, gcfg);
  if (sparse) {
    graph::SparsifyConfig scfg;
    scfg.epsilon = cfg.solver.epsilon;
    scfg.target_edges =
        graph::target_edge_count(g.edges.size(), cfg.solver.keep_fraction);
    scfg.rng_seed = solver::iteration_seed(cfg.solver.rng_seed, 1);
    g = g.subgraph(graph::sparsify(g, poses, scfg));
  }
  if (out.empty()) {
    graph::write_edge_list(std::cout, g);
  } else {
    write_graph(out, g);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR bundle adjustment with smoothed surface factors"};
  app.require_subcommand(1);

  std::string config, spec, out_dir, est, gt, graph_out;
  bool sparse = false;

  auto* run = app.add_subcommand("run", "optimize a dataset");
  run->add_option("--config", config, "key=value run configuration")->required();

  auto* syn = app.add_subcommand("synth", "write a synthetic dataset");
  syn->add_option("--spec", spec, "key=value scene description");
  syn->add_option("--out", out_dir, "output directory")->required();

  auto* ape = app.add_subcommand("ape", "aligned absolute position error");
  ape->add_option("--est", est, "estimated trajectory (TUM)")->required();
  ape->add_option("--gt", gt, "ground-truth trajectory (TUM)")->required();

  auto* dump = app.add_subcommand("graph-dump", "write the relation graph");
  dump->add_option("--config", config, "key=value run configuration")
      ->required();
  dump->add_option("--out", graph_out, "output file (default stdout)");
  dump->add_flag("--sparse", sparse, "keep only the sparsified edges");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run) return cmd_run(config);
    if (*syn) return cmd_synth(spec, out_dir);
    if (*ape) return cmd_ape(est, gt);
    if (*dump) return cmd_graph_dump(config, graph_out, sparse);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const SolveFailed& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSolver;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
