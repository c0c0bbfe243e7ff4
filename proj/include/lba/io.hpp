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

// File formats and configuration: TUM trajectories, a PLY subset for point
// clouds, the flat key=value run configuration and the JSON run report.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "lba/geometry.hpp"
#include "lba/solver.hpp"

namespace lba::io {

struct TimedPose {
  double timestamp = 0.0;
  Pose pose;
};

// `timestamp tx ty tz qx qy qz qw` per line, '#' starts a comment.
std::vector<TimedPose> parse_trajectory(std::istream& in);
std::vector<TimedPose> read_trajectory(const std::filesystem::path& path);

// Round-trip precision per value.
void format_trajectory(std::ostream& out, const std::vector<TimedPose>& poses);
void write_trajectory(const std::filesystem::path& path,
                      const std::vector<TimedPose>& poses);

enum class PlyEncoding { kAscii, kBinaryLittleEndian };

// Frames of a PLY file. With an integer `frame_id` vertex property the points
// are grouped by id (ascending); otherwise the file is a single frame with
// id `default_frame_id`.
std::vector<LidarFrame> parse_cloud(std::istream& in, int default_frame_id = 0);
std::vector<LidarFrame> read_cloud(const std::filesystem::path& path,
                                   int default_frame_id = 0);

// Writes x, y, z as float32, plus `int frame_id` when `with_frame_id`.
void format_cloud(std::ostream& out, const std::vector<LidarFrame>& frames,
                  PlyEncoding encoding, bool with_frame_id);
void write_cloud(const std::filesystem::path& path,
                 const std::vector<LidarFrame>& frames, PlyEncoding encoding,
                 bool with_frame_id);

// Flat `key = value` lines, '#' comments, blank lines ignored. Duplicate keys
// raise ConfigError.
std::map<std::string, std::string> parse_key_values(std::istream& in);

struct RunConfig {
  solver::SolverConfig solver;
  std::filesystem::path trajectory;
  std::vector<std::filesystem::path> clouds;
  std::filesystem::path ground_truth;  // optional
  std::filesystem::path output_dir = "lba_out";
  double output_voxel = 0.05;
};

// Relative paths resolve against `base_dir`. Unknown keys and out-of-range
// values raise ConfigError.
RunConfig parse_run_config(std::istream& in,
                           const std::filesystem::path& base_dir = {});
RunConfig read_run_config(const std::filesystem::path& path);

// Trajectory and frames of a run configuration, frames ordered by id and
// matched to trajectory lines in order.
struct Dataset {
  std::vector<LidarFrame> frames;
  std::vector<TimedPose> trajectory;
};
Dataset load_dataset(const RunConfig& cfg);

// All frames merged into the world frame and thinned to one point (the
// centroid) per voxel of edge `voxel`.
std::vector<Vector3d> merged_world_cloud(const std::vector<LidarFrame>& frames,
                                         const std::vector<Pose>& poses,
                                         double voxel);

std::string report_json(const solver::Report& report, int indent = 2);

}  // namespace lba::io
