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

// Absolute position error after closed-form rigid alignment.

#pragma once

#include <vector>

#include "lba/geometry.hpp"

namespace lba::metrics {

struct ApeResult {
  double rmse = 0.0;
  std::vector<double> errors;  // per frame, meters
  Pose alignment;              // maps the estimate onto the ground truth
};

// Throws MetricError on a length mismatch or an empty input.
ApeResult ape(const std::vector<Pose>& estimated,
              const std::vector<Pose>& ground_truth);

}  // namespace lba::metrics
