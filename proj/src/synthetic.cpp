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

#include "lba/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "lba/errors.hpp"
#include "lba/io.hpp"

namespace lba::synth {

namespace {

// Patch origin + u e_u + v e_v + f(u, v) e_n over a rectangle in (u, v).
struct Surface {
  Vector3d origin = Vector3d::Zero();
  Matrix3d axes = Matrix3d::Identity();  // columns e_u, e_v, e_n
  double u0 = 0, u1 = 0, v0 = 0, v1 = 0;
  Vector5d alpha = Vector5d::Zero();

  double area() const { return (u1 - u0) * (v1 - v0); }
  Vector3d at(double u, double v) const {
    const double h = alpha(0) * u * u + alpha(1) * v * v + alpha(2) * u * v +
                     alpha(3) * u + alpha(4) * v;
    return origin + axes * Vector3d(u, v, h);
  }
  // Bounding radius about the origin, curvature ignored.
  double radius() const {
    return std::hypot(std::max(std::abs(u0), std::abs(u1)),
                      std::max(std::abs(v0), std::abs(v1))) +
           0.5;
  }
};

Matrix3d axes_from(const Vector3d& eu, const Vector3d& ev) {
  Matrix3d m;
  m.col(0) = eu.normalized();
  m.col(1) = ev.normalized();
  m.col(2) = m.col(0).cross(m.col(1));
  return m;
}

Surface rect(const Vector3d& center, const Vector3d& eu, const Vector3d& ev,
             double half_u, double half_v) {
  Surface s;
  s.origin = center;
  s.axes = axes_from(eu, ev);
  s.u0 = -half_u;
  s.u1 = half_u;
  s.v0 = -half_v;
  s.v1 = half_v;
  return s;
}

// Axis-aligned box without its bottom face.
void add_box(std::vector<Surface>& out, const Vector3d& lo, const Vector3d& hi) {
  const Vector3d c = 0.5 * (lo + hi);
  const Vector3d h = 0.5 * (hi - lo);
  const Vector3d ex = Vector3d::UnitX(), ey = Vector3d::UnitY(),
                 ez = Vector3d::UnitZ();
  out.push_back(rect({lo.x(), c.y(), c.z()}, ey, ez, h.y(), h.z()));
  out.push_back(rect({hi.x(), c.y(), c.z()}, ey, ez, h.y(), h.z()));
  out.push_back(rect({c.x(), lo.y(), c.z()}, ex, ez, h.x(), h.z()));
  out.push_back(rect({c.x(), hi.y(), c.z()}, ex, ez, h.x(), h.z()));
  out.push_back(rect({c.x(), c.y(), hi.z()}, ex, ey, h.x(), h.y()));
}

Rotation euler_zyx(double yaw, double pitch, double roll) {
  return exp_map(Vector3d(0, 0, yaw)) * exp_map(Vector3d(0, pitch, 0)) *
         exp_map(Vector3d(roll, 0, 0));
}

constexpr int kFramesPerLap = 20;

int lap_count(const SceneSpec& spec) {
  return std::max(1, (spec.frames + kFramesPerLap - 1) / kFramesPerLap);
}

int frames_per_lap(const SceneSpec& spec) {
  const int laps = lap_count(spec);
  return (spec.frames + laps - 1) / laps;
}

// Base loop radius; consecutive frames of one lap stay spec.step apart.
double loop_radius(const SceneSpec& spec) {
  return std::max(2.0, frames_per_lap(spec) * spec.step / (2.0 * std::numbers::pi));
}

double lap_radius(const SceneSpec& spec, int lap) {
  return loop_radius(spec) * (1.0 + 0.15 * lap);
}

// Repeated closed loops around the room center, each lap slightly wider,
// higher and phase-shifted.
std::vector<Pose> trajectory(const SceneSpec& spec) {
  const int per_lap = frames_per_lap(spec);
  std::vector<Pose> out;
  for (int k = 0; k < spec.frames; ++k) {
    const double s = static_cast<double>(k);
    const int lap = k / per_lap;
    const double r = lap_radius(spec, lap);
    const double theta = 2.0 * std::numbers::pi * (k % per_lap + 0.5 * lap) / per_lap;
    Pose p;
    p.translation = Vector3d(r * std::cos(theta), 0.8 * r * std::sin(theta),
                             1.3 + 0.15 * lap + 0.1 * std::sin(0.5 * s));
    p.rotation = euler_zyx(theta + 0.5 * std::numbers::pi + 0.2 * std::sin(0.23 * s),
                           0.03 * std::sin(0.41 * s), 0.03 * std::cos(0.37 * s));
    out.push_back(p);
  }
  return out;
}

// Distance from (x, y) to any lap, approximated on dense polylines.
double loop_distance(const SceneSpec& spec, double x, double y) {
  double best = std::numeric_limits<double>::infinity();
  for (int lap = 0; lap < lap_count(spec); ++lap) {
    const double r = lap_radius(spec, lap);
    for (int k = 0; k < 360; ++k) {
      const double theta = 2.0 * std::numbers::pi * k / 360.0;
      best = std::min(best, std::hypot(x - r * std::cos(theta),
                                       y - 0.8 * r * std::sin(theta)));
    }
  }
  return best;
}

std::vector<Surface> room(const SceneSpec& spec) {
  const double r = lap_radius(spec, lap_count(spec) - 1);
  const double hx = r + 4.0, hy = 0.8 * r + 4.0, hz = 3.5;
  const Vector3d ex = Vector3d::UnitX(), ey = Vector3d::UnitY(),
                 ez = Vector3d::UnitZ();
  std::vector<Surface> s;
  s.push_back(rect({0, 0, 0}, ex, ey, hx, hy));
  s.push_back(rect({0, 0, hz}, ex, ey, hx, hy));
  s.push_back(rect({0, -hy, 0.5 * hz}, ex, ez, hx, 0.5 * hz));
  s.push_back(rect({0, hy, 0.5 * hz}, ex, ez, hx, 0.5 * hz));
  s.push_back(rect({-hx, 0, 0.5 * hz}, ey, ez, hy, 0.5 * hz));
  s.push_back(rect({hx, 0, 0.5 * hz}, ey, ez, hy, 0.5 * hz));

  // Partitions, cabinets and pillars on a 3.5 m grid, clear of the path.
  int n = 0;
  for (double x = -hx + 1.75; x < hx - 1.0; x += 3.5) {
    for (double y = -hy + 1.75; y < hy - 1.0; y += 3.5, ++n) {
      if (loop_distance(spec, x, y) < 2.0) continue;
      switch (n % 4) {
        case 0:
          add_box(s, {x - 1.25, y - 0.2, 0.0}, {x + 1.25, y + 0.2, hz});
          break;
        case 1:
          add_box(s, {x - 0.4, y - 0.8, 0.0}, {x + 0.4, y + 0.8, 2.0});
          break;
        case 2:
          add_box(s, {x - 0.2, y - 1.25, 0.0}, {x + 0.2, y + 1.25, hz});
          break;
        default:
          add_box(s, {x - 0.3, y - 0.3, 0.0}, {x + 0.3, y + 0.3, hz});
          break;
      }
    }
  }
  // Curved panels in front of the long walls.
  n = 0;
  for (double x = -hx + 3.0; x < hx - 2.0; x += 5.0, ++n) {
    const double side = (n % 2 == 0) ? 1.0 : -1.0;
    Surface panel = rect({x, side * (hy - 0.4), 1.9}, ex, ez, 1.5, 0.9);
    panel.alpha << 0.08, -0.06, 0.03, 0.0, 0.0;
    s.push_back(panel);
  }
  return s;
}

// Tilted 2 m squares: floor patches on an inner ring below the loop and wall
// patches on an outer ring, with gaps wider than the largest kernel radius.
std::vector<Surface> patches(const SceneSpec& spec, std::mt19937_64& rng) {
  constexpr double kPitch = 7.0;
  constexpr double kRingGap = 6.0;
  std::normal_distribution<double> tilt(0.0, 0.35);
  const double r = lap_radius(spec, lap_count(spec) - 1);
  std::vector<Surface> s;
  const auto add = [&](const Vector3d& c, const Vector3d& n) {
    const Rotation rot = exp_map(Vector3d(tilt(rng), tilt(rng), tilt(rng)));
    Vector3d eu = rot * n.unitOrthogonal();
    Vector3d nn = rot * n;
    s.push_back(rect(c, eu, nn.cross(eu), 1.0, 1.0));
  };
  const double squash = 0.8;
  const int floor_count = std::max(
      3, static_cast<int>(std::floor(squash * 2.0 * std::numbers::pi * r / kPitch)));
  const double rf =
      std::max(r, kPitch * floor_count / (squash * 2.0 * std::numbers::pi));
  for (int k = 0; k < floor_count; ++k) {
    const double phi = 2.0 * std::numbers::pi * (k + 0.5) / floor_count;
    add(Vector3d(rf * std::cos(phi), squash * rf * std::sin(phi), -2.0),
        Vector3d::UnitZ());
  }
  const double rw = rf + kRingGap;
  const int wall_count = std::max(6, static_cast<int>(std::ceil(
                                         2.0 * std::numbers::pi * rw / kPitch)));
  for (int k = 0; k < wall_count; ++k) {
    const double theta = 2.0 * std::numbers::pi * k / wall_count;
    const Vector3d dir(std::cos(theta), squash * std::sin(theta), 0.0);
    const double z = (k % 2 == 0) ? 0.0 : 3.0;
    add(Vector3d(0, 0, z) + rw * dir, -dir.normalized());
  }
  return s;
}

}  // namespace

SceneSpec parse_scene_spec(std::istream& in) {
  SceneSpec spec;
  const auto num = [](const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
      out = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size() || !std::isfinite(out)) {
      throw ConfigError("key '" + key + "' expects a number");
    }
    return out;
  };
  for (const auto& [key, value] : io::parse_key_values(in)) {
    if (key == "layout") {
      if (value == "room") {
        spec.layout = Layout::kRoom;
      } else if (value == "patches") {
        spec.layout = Layout::kPatches;
      } else {
        throw ConfigError("layout must be 'room' or 'patches'");
      }
    } else if (key == "frames") {
      const double v = num(key, value);
      if (v < 1 || v != std::floor(v)) throw ConfigError("frames must be >= 1");
      spec.frames = static_cast<int>(v);
    } else if (key == "step") {
      spec.step = num(key, value);
    } else if (key == "visibility") {
      spec.visibility = num(key, value);
      if (!(spec.visibility > 0)) throw ConfigError("visibility must be positive");
    } else if (key == "density") {
      spec.density = num(key, value);
      if (!(spec.density > 0)) throw ConfigError("density must be positive");
    } else if (key == "noise_sigma") {
      spec.noise_sigma = num(key, value);
    } else if (key == "rot_sigma_deg") {
      spec.rot_sigma_deg = num(key, value);
    } else if (key == "trans_sigma") {
      spec.trans_sigma = num(key, value);
    } else if (key == "seed") {
      const double v = num(key, value);
      if (v < 0 || v != std::floor(v)) throw ConfigError("seed must be >= 0");
      spec.seed = static_cast<std::uint64_t>(v);
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  }
  if (spec.noise_sigma < 0 || spec.rot_sigma_deg < 0 || spec.trans_sigma < 0) {
    throw ConfigError("sigmas must be non-negative");
  }
  return spec;
}

SyntheticDataset generate(const SceneSpec& spec) {
  std::mt19937_64 scene_rng(spec.seed);
  std::mt19937_64 pose_rng(spec.seed ^ 0x5DEECE66DULL);
  SyntheticDataset ds;
  ds.truth = trajectory(spec);
  const std::vector<Surface> surfaces = spec.layout == Layout::kRoom
                                            ? room(spec)
                                            : patches(spec, scene_rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int k = 0; k < spec.frames; ++k) {
    const Pose& pose = ds.truth[static_cast<std::size_t>(k)];
    LidarFrame frame;
    frame.frame_id = k;
    frame.timestamp = 0.1 * k;
    const Rotation rt = pose.rotation.transpose();
    for (const Surface& s : surfaces) {
      if ((s.origin - pose.translation).norm() > spec.visibility + s.radius()) {
        continue;
      }
      const auto count =
          static_cast<std::size_t>(std::lround(spec.density * s.area()));
      for (std::size_t n = 0; n < count; ++n) {
        const double u = s.u0 + (s.u1 - s.u0) * unit(scene_rng);
        const double v = s.v0 + (s.v1 - s.v0) * unit(scene_rng);
        const Vector3d w = s.at(u, v);
        if ((w - pose.translation).norm() > spec.visibility) continue;
        Vector3d local = rt * (w - pose.translation);
        if (spec.noise_sigma > 0.0) {
          local += spec.noise_sigma *
                   Vector3d(gauss(scene_rng), gauss(scene_rng), gauss(scene_rng));
        }
        frame.points.push_back(local);
      }
    }
    ds.frames.push_back(std::move(frame));
  }

  const double rot_sigma = spec.rot_sigma_deg * std::numbers::pi / 180.0;
  for (const Pose& p : ds.truth) {
    const bool anchor = ds.initial.empty();
    PoseCorrection c;
    c.dtheta = rot_sigma *
               Vector3d(gauss(pose_rng), gauss(pose_rng), gauss(pose_rng));
    c.dt = spec.trans_sigma *
           Vector3d(gauss(pose_rng), gauss(pose_rng), gauss(pose_rng));
    ds.initial.push_back(anchor ? p : perturb_pose(p, c));
  }
  return ds;
}

}  // namespace lba::synth
