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

// Synthetic indoor scenes with known poses for end-to-end checks.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lba/geometry.hpp"

namespace lba::synth {

enum class Layout {
  kRoom,     // closed room with furniture and curved panels around a loop
  kPatches,  // isolated planar squares, farther apart than the kernel radius
};

struct SceneSpec {
  Layout layout = Layout::kRoom;
  int frames = 20;
  double step = 0.8;          // m between consecutive frames
  double visibility = 9.0;    // m, sensing radius
  double density = 12.0;      // points per m^2 per frame
  double noise_sigma = 0.0;   // m, per point and axis
  double rot_sigma_deg = 2.0;
  double trans_sigma = 0.1;   // m, per axis
  std::uint64_t seed = 1;
};

// Keys mirror the SceneSpec fields; layout is `room` or `patches`.
SceneSpec parse_scene_spec(std::istream& in);

struct SyntheticDataset {
  std::vector<LidarFrame> frames;
  std::vector<Pose> truth;
  std::vector<Pose> initial;  // truth with the pose perturbation applied
};

SyntheticDataset generate(const SceneSpec& spec);

}  // namespace lba::synth
