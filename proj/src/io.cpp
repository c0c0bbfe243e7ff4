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

#include "lba/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "lba/errors.hpp"
#include "lba/voxel.hpp"

namespace lba::io {

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary PLY support assumes a little-endian host");

constexpr double kQuaternionNormTol = 1e-3;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream ss(s);
  std::vector<std::string> out;
  for (std::string tok; ss >> tok;) out.push_back(tok);
  return out;
}

bool parse_double(const std::string& tok, double* out) {
  const char* begin = tok.data();
  const char* end = begin + tok.size();
  if (begin != end && *begin == '+') ++begin;
  const auto res = std::from_chars(begin, end, *out);
  return res.ec == std::errc() && res.ptr == end && std::isfinite(*out);
}

std::ifstream open_in(const std::filesystem::path& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::in | std::ios::binary : std::ios::in);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path, bool binary) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, binary ? std::ios::out | std::ios::binary
                                 : std::ios::out);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

enum class ScalarType { kI8, kU8, kI16, kU16, kI32, kU32, kF32, kF64 };

std::optional<ScalarType> scalar_type(const std::string& name) {
  static const std::unordered_map<std::string, ScalarType> kTypes = {
      {"char", ScalarType::kI8},    {"int8", ScalarType::kI8},
      {"uchar", ScalarType::kU8},   {"uint8", ScalarType::kU8},
      {"short", ScalarType::kI16},  {"int16", ScalarType::kI16},
      {"ushort", ScalarType::kU16}, {"uint16", ScalarType::kU16},
      {"int", ScalarType::kI32},    {"int32", ScalarType::kI32},
      {"uint", ScalarType::kU32},   {"uint32", ScalarType::kU32},
      {"float", ScalarType::kF32},  {"float32", ScalarType::kF32},
      {"double", ScalarType::kF64}, {"float64", ScalarType::kF64},
  };
  const auto it = kTypes.find(name);
  if (it == kTypes.end()) return std::nullopt;
  return it->second;
}

std::size_t type_size(ScalarType t) {
  switch (t) {
    case ScalarType::kI8:
    case ScalarType::kU8:
      return 1;
    case ScalarType::kI16:
    case ScalarType::kU16:
      return 2;
    case ScalarType::kI32:
    case ScalarType::kU32:
    case ScalarType::kF32:
      return 4;
    case ScalarType::kF64:
      return 8;
  }
  return 0;
}

bool is_integer(ScalarType t) {
  return t != ScalarType::kF32 && t != ScalarType::kF64;
}

template <typename T>
double load_as(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return static_cast<double>(v);
}

double decode(ScalarType t, const char* p) {
  switch (t) {
    case ScalarType::kI8:
      return load_as<std::int8_t>(p);
    case ScalarType::kU8:
      return load_as<std::uint8_t>(p);
    case ScalarType::kI16:
      return load_as<std::int16_t>(p);
    case ScalarType::kU16:
      return load_as<std::uint16_t>(p);
    case ScalarType::kI32:
      return load_as<std::int32_t>(p);
    case ScalarType::kU32:
      return load_as<std::uint32_t>(p);
    case ScalarType::kF32:
      return load_as<float>(p);
    case ScalarType::kF64:
      return load_as<double>(p);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  ScalarType type;
};

struct PlyHeader {
  PlyEncoding encoding = PlyEncoding::kAscii;
  std::size_t vertices = 0;
  std::vector<PlyProperty> properties;
  int x = -1, y = -1, z = -1, frame_id = -1;
};

PlyHeader parse_ply_header(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != "ply") {
    throw FormatError("missing 'ply' magic");
  }
  PlyHeader h;
  bool have_format = false;
  bool in_vertex = false;
  bool vertex_seen = false;
  bool done = false;
  while (std::getline(in, line)) {
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "end_header") {
      done = true;
      break;
    }
    if (tok[0] == "format") {
      if (tok.size() < 2) throw FormatError("bad format line");
      if (tok[1] == "ascii") {
        h.encoding = PlyEncoding::kAscii;
      } else if (tok[1] == "binary_little_endian") {
        h.encoding = PlyEncoding::kBinaryLittleEndian;
      } else {
        throw FormatError("unsupported PLY encoding " + tok[1]);
      }
      have_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw FormatError("bad element line");
      if (tok[1] == "vertex") {
        if (vertex_seen) throw FormatError("duplicate vertex element");
        double count = 0.0;
        if (!parse_double(tok[2], &count) || count < 0 ||
            count != std::floor(count)) {
          throw FormatError("bad vertex count");
        }
        h.vertices = static_cast<std::size_t>(count);
        in_vertex = true;
        vertex_seen = true;
      } else {
        if (!vertex_seen) {
          throw FormatError("vertex element must come first");
        }
        in_vertex = false;
      }
    } else if (tok[0] == "property") {
      if (!in_vertex) continue;
      if (tok.size() != 3) throw FormatError("unsupported vertex property");
      const auto type = scalar_type(tok[1]);
      if (!type) throw FormatError("unknown property type " + tok[1]);
      const int idx = static_cast<int>(h.properties.size());
      h.properties.push_back({tok[2], *type});
      if (tok[2] == "x") h.x = idx;
      if (tok[2] == "y") h.y = idx;
      if (tok[2] == "z") h.z = idx;
      if (tok[2] == "frame_id") h.frame_id = idx;
    } else {
      throw FormatError("unexpected header line: " + trim(line));
    }
  }
  if (!done) throw FormatError("missing end_header");
  if (!have_format) throw FormatError("missing format line");
  if (h.x < 0 || h.y < 0 || h.z < 0) {
    throw FormatError("vertex element lacks x, y or z");
  }
  for (const int c : {h.x, h.y, h.z}) {
    if (h.properties[static_cast<std::size_t>(c)].type != ScalarType::kF32) {
      throw FormatError("x, y and z must be float32");
    }
  }
  if (h.frame_id >= 0 &&
      !is_integer(h.properties[static_cast<std::size_t>(h.frame_id)].type)) {
    throw FormatError("frame_id must be an integer property");
  }
  return h;
}

std::vector<LidarFrame> group_frames(const std::vector<Vector3d>& points,
                                     const std::vector<int>& ids) {
  std::map<int, LidarFrame> by_id;
  for (std::size_t k = 0; k < points.size(); ++k) {
    LidarFrame& f = by_id[ids[k]];
    f.frame_id = ids[k];
    f.points.push_back(points[k]);
  }
  std::vector<LidarFrame> out;
  out.reserve(by_id.size());
  for (auto& [id, f] : by_id) out.push_back(std::move(f));
  return out;
}

double to_number(const std::string& key, const std::string& value) {
  double v = 0.0;
  if (!parse_double(value, &v)) {
    throw ConfigError("key '" + key + "' expects a number, got '" + value + "'");
  }
  return v;
}

long long to_integer(const std::string& key, const std::string& value) {
  const double v = to_number(key, value);
  if (v != std::floor(v)) {
    throw ConfigError("key '" + key + "' expects an integer");
  }
  return static_cast<long long>(v);
}

std::uint64_t to_seed(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto res =
      std::from_chars(value.data(), value.data() + value.size(), v);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
    throw ConfigError("key '" + key + "' expects an unsigned integer");
  }
  return v;
}

}  // namespace

std::vector<TimedPose> parse_trajectory(std::istream& in) {
  std::vector<TimedPose> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 8) {
      throw ParseError("expected 8 values, got " + std::to_string(tok.size()),
                       line_no);
    }
    std::array<double, 8> v{};
    for (std::size_t k = 0; k < 8; ++k) {
      if (!parse_double(tok[k], &v[k])) {
        throw ParseError("not a number: '" + tok[k] + "'", line_no);
      }
    }
    Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    const double norm = q.norm();
    if (std::abs(norm - 1.0) > kQuaternionNormTol) {
      throw ParseError("quaternion norm " + std::to_string(norm), line_no);
    }
    q.normalize();
    if (!out.empty() && !(v[0] > out.back().timestamp)) {
      throw OrderError("timestamps must increase", line_no);
    }
    TimedPose tp;
    tp.timestamp = v[0];
    tp.pose.rotation = q.toRotationMatrix();
    tp.pose.translation = Vector3d(v[1], v[2], v[3]);
    out.push_back(tp);
  }
  return out;
}

std::vector<TimedPose> read_trajectory(const std::filesystem::path& path) {
  auto in = open_in(path, false);
  return parse_trajectory(in);
}

void format_trajectory(std::ostream& out, const std::vector<TimedPose>& poses) {
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& tp : poses) {
    Eigen::Quaterniond q(tp.pose.rotation);
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    const Vector3d& t = tp.pose.translation;
    out << tp.timestamp << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' '
        << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
  out.flags(flags);
  out.precision(prec);
}

void write_trajectory(const std::filesystem::path& path,
                      const std::vector<TimedPose>& poses) {
  auto out = open_out(path, false);
  format_trajectory(out, poses);
  if (!out) throw FormatError("write failed: " + path.string());
}

std::vector<LidarFrame> parse_cloud(std::istream& in, int default_frame_id) {
  const PlyHeader h = parse_ply_header(in);
  const std::size_t np = h.properties.size();
  std::vector<Vector3d> points;
  std::vector<int> ids;
  points.reserve(h.vertices);
  ids.reserve(h.vertices);

  std::vector<double> values(np);
  if (h.encoding == PlyEncoding::kAscii) {
    std::string line;
    std::size_t read = 0;
    while (read < h.vertices) {
      if (!std::getline(in, line)) {
        throw FormatError("body has " + std::to_string(read) + " of " +
                          std::to_string(h.vertices) + " vertices");
      }
      const auto tok = split_ws(line);
      if (tok.empty()) continue;
      if (tok.size() < np) throw FormatError("short vertex line");
      for (std::size_t k = 0; k < np; ++k) {
        if (!parse_double(tok[k], &values[k])) {
          throw FormatError("bad vertex value '" + tok[k] + "'");
        }
      }
      points.emplace_back(
          static_cast<float>(values[static_cast<std::size_t>(h.x)]),
          static_cast<float>(values[static_cast<std::size_t>(h.y)]),
          static_cast<float>(values[static_cast<std::size_t>(h.z)]));
      ids.push_back(h.frame_id >= 0 ? static_cast<int>(
                                          values[static_cast<std::size_t>(h.frame_id)])
                                    : default_frame_id);
      ++read;
    }
  } else {
    std::vector<std::size_t> offset(np);
    std::size_t stride = 0;
    for (std::size_t k = 0; k < np; ++k) {
      offset[k] = stride;
      stride += type_size(h.properties[k].type);
    }
    std::vector<char> record(stride);
    for (std::size_t v = 0; v < h.vertices; ++v) {
      if (!in.read(record.data(), static_cast<std::streamsize>(stride))) {
        throw FormatError("body has " + std::to_string(v) + " of " +
                          std::to_string(h.vertices) + " vertices");
      }
      const auto at = [&](int idx) {
        const auto u = static_cast<std::size_t>(idx);
        return decode(h.properties[u].type, record.data() + offset[u]);
      };
      points.emplace_back(at(h.x), at(h.y), at(h.z));
      ids.push_back(h.frame_id >= 0 ? static_cast<int>(at(h.frame_id))
                                    : default_frame_id);
    }
  }
  return group_frames(points, ids);
}

std::vector<LidarFrame> read_cloud(const std::filesystem::path& path,
                                   int default_frame_id) {
  auto in = open_in(path, true);
  return parse_cloud(in, default_frame_id);
}

void format_cloud(std::ostream& out, const std::vector<LidarFrame>& frames,
                  PlyEncoding encoding, bool with_frame_id) {
  std::size_t count = 0;
  for (const auto& f : frames) count += f.points.size();
  out << "ply\n"
      << (encoding == PlyEncoding::kAscii ? "format ascii 1.0\n"
                                          : "format binary_little_endian 1.0\n")
      << "element vertex " << count << '\n'
      << "property float x\nproperty float y\nproperty float z\n";
  if (with_frame_id) out << "property int frame_id\n";
  out << "end_header\n";
  if (encoding == PlyEncoding::kAscii) {
    const auto prec = out.precision();
    out << std::setprecision(9);
    for (const auto& f : frames) {
      for (const auto& p : f.points) {
        out << static_cast<float>(p.x()) << ' ' << static_cast<float>(p.y())
            << ' ' << static_cast<float>(p.z());
        if (with_frame_id) out << ' ' << f.frame_id;
        out << '\n';
      }
    }
    out.precision(prec);
    return;
  }
  for (const auto& f : frames) {
    const auto id = static_cast<std::int32_t>(f.frame_id);
    for (const auto& p : f.points) {
      const std::array<float, 3> xyz = {static_cast<float>(p.x()),
                                        static_cast<float>(p.y()),
                                        static_cast<float>(p.z())};
      out.write(reinterpret_cast<const char*>(xyz.data()), sizeof(xyz));
      if (with_frame_id) {
        out.write(reinterpret_cast<const char*>(&id), sizeof(id));
      }
    }
  }
}

void write_cloud(const std::filesystem::path& path,
                 const std::vector<LidarFrame>& frames, PlyEncoding encoding,
                 bool with_frame_id) {
  auto out = open_out(path, encoding == PlyEncoding::kBinaryLittleEndian);
  format_cloud(out, frames, encoding, with_frame_id);
  if (!out) throw FormatError("write failed: " + path.string());
}

std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    }
    if (!out.emplace(key, value).second) {
      throw ConfigError("duplicate key '" + key + "'");
    }
  }
  return out;
}

RunConfig parse_run_config(std::istream& in,
                           const std::filesystem::path& base_dir) {
  RunConfig cfg;
  solver::SolverConfig& s = cfg.solver;
  const auto resolve = [&](const std::string& v) {
    const std::filesystem::path p(v);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };
  for (const auto& [key, value] : parse_key_values(in)) {
    if (key == "max_outer") {
      s.max_outer = static_cast<int>(to_integer(key, value));
    } else if (key == "gamma0") {
      s.gamma0 = to_number(key, value);
    } else if (key == "T_D") {
      s.t_d = to_number(key, value);
    } else if (key == "keep_fraction") {
      s.keep_fraction = to_number(key, value);
    } else if (key == "T_cluster") {
      const long long v = to_integer(key, value);
      if (v <= 0) throw ConfigError("T_cluster must be positive");
      s.t_cluster = static_cast<std::size_t>(v);
    } else if (key == "inner_lm_iters") {
      s.inner_lm_iters = static_cast<int>(to_integer(key, value));
    } else if (key == "lm_lambda0") {
      s.lm_lambda0 = to_number(key, value);
    } else if (key == "rng_seed") {
      s.rng_seed = to_seed(key, value);
    } else if (key == "epsilon") {
      s.epsilon = to_number(key, value);
    } else if (key == "overlap_threshold") {
      s.overlap_threshold = to_number(key, value);
    } else if (key == "convergence_tol") {
      s.convergence_tol = to_number(key, value);
    } else if (key == "mu") {
      s.smoothing.mu = to_number(key, value);
      if (!(s.smoothing.mu > 0.0)) throw ConfigError("mu must be positive");
    } else if (key == "min_neighbors") {
      const long long v = to_integer(key, value);
      if (v < 5) throw ConfigError("min_neighbors must be at least 5");
      s.smoothing.min_neighbors = static_cast<std::size_t>(v);
    } else if (key == "self_factor_weight") {
      s.smoothing.self_factor_weight = to_number(key, value);
      if (s.smoothing.self_factor_weight < 0.0) {
        throw ConfigError("self_factor_weight must be non-negative");
      }
    } else if (key == "trajectory") {
      cfg.trajectory = resolve(value);
    } else if (key == "cloud") {
      for (const auto& tok : split_ws(value)) cfg.clouds.push_back(resolve(tok));
    } else if (key == "ground_truth") {
      cfg.ground_truth = resolve(value);
    } else if (key == "output_dir") {
      cfg.output_dir = resolve(value);
    } else if (key == "output_voxel") {
      cfg.output_voxel = to_number(key, value);
      if (!(cfg.output_voxel > 0.0)) {
        throw ConfigError("output_voxel must be positive");
      }
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  }
  s.validate();
  return cfg;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_run_config(in, path.parent_path());
}

Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.trajectory.empty()) throw ConfigError("config lacks 'trajectory'");
  if (cfg.clouds.empty()) throw ConfigError("config lacks 'cloud'");
  Dataset ds;
  ds.trajectory = read_trajectory(cfg.trajectory);
  for (std::size_t k = 0; k < cfg.clouds.size(); ++k) {
    auto frames = read_cloud(cfg.clouds[k], static_cast<int>(k));
    for (auto& f : frames) ds.frames.push_back(std::move(f));
  }
  std::stable_sort(ds.frames.begin(), ds.frames.end(),
                   [](const LidarFrame& a, const LidarFrame& b) {
                     return a.frame_id < b.frame_id;
                   });
  for (std::size_t k = 1; k < ds.frames.size(); ++k) {
    if (ds.frames[k].frame_id == ds.frames[k - 1].frame_id) {
      throw FormatError("duplicate frame id " +
                        std::to_string(ds.frames[k].frame_id));
    }
  }
  if (ds.frames.size() != ds.trajectory.size()) {
    throw FormatError(std::to_string(ds.frames.size()) + " frames but " +
                      std::to_string(ds.trajectory.size()) + " poses");
  }
  for (std::size_t k = 0; k < ds.frames.size(); ++k) {
    ds.frames[k].timestamp = ds.trajectory[k].timestamp;
  }
  return ds;
}

std::vector<Vector3d> merged_world_cloud(const std::vector<LidarFrame>& frames,
                                         const std::vector<Pose>& poses,
                                         double voxel) {
  struct Acc {
    Vector3d sum = Vector3d::Zero();
    std::size_t n = 0;
  };
  std::map<VoxelKey, Acc> cells;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (const auto& p : frames[f].points) {
      const Vector3d w = apply_pose(poses[f], p);
      Acc& a = cells[voxel_of(w, voxel)];
      a.sum += w;
      ++a.n;
    }
  }
  std::vector<Vector3d> out;
  out.reserve(cells.size());
  for (const auto& [key, a] : cells) {
    out.push_back(a.sum / static_cast<double>(a.n));
  }
  return out;
}

std::string report_json(const solver::Report& report, int indent) {
  nlohmann::json j;
  j["iterations"] = nlohmann::json::array();
  for (const auto& r : report.iterations) {
    j["iterations"].push_back({
        {"iter", r.iter},
        {"gamma", r.gamma},
        {"n_edges_raw", r.n_edges_raw},
        {"n_edges_kept", r.n_edges_kept},
        {"n_clusters", r.n_clusters},
        {"n_kernels", r.n_kernels},
        {"n_factors", r.n_factors},
        {"modularity", r.modularity},
        {"cost_before", r.cost_before},
        {"cost_after", r.cost_after},
        {"wall_ms", r.wall_ms},
        {"graph_ms", r.graph_ms},
        {"sparsify_ms", r.sparsify_ms},
        {"extract_ms", r.extract_ms},
        {"solve_ms", r.solve_ms},
    });
  }
  j["warnings"] = report.warnings;
  j["converged"] = report.converged;
  if (!report.aborted.empty()) j["aborted"] = report.aborted;
  return j.dump(indent);
}

}  // namespace lba::io
