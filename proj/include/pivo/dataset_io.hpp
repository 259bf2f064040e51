#pragma once

// File formats: EuRoC IMU CSV, key-value calibration, JSON-lines track files
// and TUM trajectories.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pivo/augmentation.hpp"
#include "pivo/camera.hpp"
#include "pivo/errors.hpp"
#include "pivo/imu.hpp"
#include "pivo/tracks.hpp"
#include "pivo/trajectory.hpp"
#include "pivo/visual_update.hpp"

namespace pivo {

namespace io_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Parse, "cannot open '" + path + "'");
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::InvalidInput, "cannot write '" + path + "'");
  return out;
}

inline double parse_double(const std::string& tok, const std::string& where) {
  const std::string t = trim(tok);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    throw Error(ErrorKind::Parse, where + ": not a number '" + t + "'");
  }
  if (used != t.size()) throw Error(ErrorKind::Parse, where + ": not a number '" + t + "'");
  if (!std::isfinite(v)) throw Error(ErrorKind::Parse, where + ": non-finite value '" + t + "'");
  return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(s);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  return out;
}

}  // namespace io_detail

// ---------------------------------------------------------------- EuRoC IMU

struct ImuLoadStats {
  std::size_t rows = 0;
  std::size_t duplicates_dropped = 0;
  std::size_t reordered = 0;
};

/// Nanosecond timestamp to seconds, splitting off whole seconds first so the
/// fractional part keeps full precision.
inline double ns_to_seconds(std::int64_t ns) {
  const std::int64_t sec = ns / 1000000000;
  const std::int64_t rem = ns % 1000000000;
  return static_cast<double>(sec) + static_cast<double>(rem) * 1e-9;
}

inline std::int64_t seconds_to_ns(double t) {
  const double sec = std::floor(t);
  return static_cast<std::int64_t>(sec) * 1000000000 + std::llround((t - sec) * 1e9);
}

/// Reads `timestamp[ns], w_x, w_y, w_z, a_x, a_y, a_z` rows. Rows that arrive
/// out of order by at most `reorder_tolerance` seconds are sorted; exact
/// duplicate timestamps are dropped.
inline std::vector<ImuSample> load_euroc_imu(const std::string& path, ImuLoadStats* stats = nullptr,
                                             double reorder_tolerance = 0.01) {
  auto in = io_detail::open_in(path);
  std::vector<std::pair<std::int64_t, ImuSample>> rows;
  std::string line;
  long lineno = 0;
  std::int64_t max_ns = 0;
  ImuLoadStats st;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = io_detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = path + ":" + std::to_string(lineno);
    if (lineno == 1 && !(std::isdigit(static_cast<unsigned char>(t[0])))) continue;  // header
    const auto cols = io_detail::split(t, ',');
    if (cols.size() != 7) throw Error(ErrorKind::Parse, where + ": expected 7 columns, got " + std::to_string(cols.size()));
    std::int64_t ns = 0;
    try {
      std::size_t used = 0;
      const std::string ts = io_detail::trim(cols[0]);
      ns = std::stoll(ts, &used);
      if (used != ts.size() || ns < 0) throw std::invalid_argument("ts");
    } catch (const std::exception&) {
      throw Error(ErrorKind::Parse, where + ": bad timestamp '" + cols[0] + "'");
    }
    ImuSample s;
    s.t = ns_to_seconds(ns);
    for (int j = 0; j < 3; ++j) s.w[j] = io_detail::parse_double(cols[1 + j], where);
    for (int j = 0; j < 3; ++j) s.a[j] = io_detail::parse_double(cols[4 + j], where);
    if (!rows.empty() && ns < max_ns) {
      if (static_cast<double>(max_ns - ns) * 1e-9 > reorder_tolerance) {
        throw Error(ErrorKind::Stream, where + ": timestamp jumps back by " +
                                           std::to_string(static_cast<double>(max_ns - ns) * 1e-9) + " s");
      }
      ++st.reordered;
    }
    max_ns = std::max(max_ns, ns);
    rows.emplace_back(ns, s);
    ++st.rows;
  }
  if (rows.empty()) throw Error(ErrorKind::Parse, path + ": no IMU rows");
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<ImuSample> out;
  out.reserve(rows.size());
  std::int64_t last = -1;
  for (const auto& [ns, s] : rows) {
    if (ns == last) {
      ++st.duplicates_dropped;
      continue;
    }
    last = ns;
    out.push_back(s);
  }
  if (stats) *stats = st;
  return out;
}

inline void write_euroc_imu(const std::string& path, const std::vector<ImuSample>& imu) {
  auto out = io_detail::open_out(path);
  out << "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
         "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n";
  char buf[512];
  for (const auto& s : imu) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(seconds_to_ns(s.t)), s.w.x(), s.w.y(), s.w.z(), s.a.x(), s.a.y(),
                  s.a.z());
    out << buf;
  }
}

// -------------------------------------------------------------- calibration

struct CalibrationConfig {
  CameraModel camera;
  ProcessNoiseConfig noise;
  AugmentationConfig augmentation;
  VisualUpdateConfig visual;
};

/// Flat `key: value` / `key = value` document, `#` comments. Vectors are
/// whitespace- or comma-separated. Quaternions are scalar-first.
class KeyValueDocument {
 public:
  static KeyValueDocument parse(std::istream& in, const std::string& name) {
    KeyValueDocument doc;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string t = io_detail::trim(line);
      if (t.empty()) continue;
      const auto sep = t.find_first_of(":=");
      if (sep == std::string::npos) {
        throw Error(ErrorKind::Parse, name + ":" + std::to_string(lineno) + ": expected 'key: value'");
      }
      const std::string key = io_detail::trim(t.substr(0, sep));
      std::string val = io_detail::trim(t.substr(sep + 1));
      std::replace(val.begin(), val.end(), ',', ' ');
      val.erase(std::remove(val.begin(), val.end(), '['), val.end());
      val.erase(std::remove(val.begin(), val.end(), ']'), val.end());
      doc.values_[key] = {val, name + ":" + std::to_string(lineno)};
    }
    return doc;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::vector<double> numbers(const std::string& key, std::size_t count) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error(ErrorKind::Config, "missing calibration key '" + key + "'");
    std::istringstream ss(it->second.first);
    std::vector<double> out;
    std::string tok;
    while (ss >> tok) out.push_back(io_detail::parse_double(tok, it->second.second + " (" + key + ")"));
    if (out.size() != count) {
      throw Error(ErrorKind::Config, "key '" + key + "' expects " + std::to_string(count) + " values");
    }
    return out;
  }

  double number(const std::string& key) const { return numbers(key, 1)[0]; }
  double number_or(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

 private:
  std::map<std::string, std::pair<std::string, std::string>> values_;
};

inline CalibrationConfig parse_calibration(std::istream& in, const std::string& name = "calibration") {
  const KeyValueDocument doc = KeyValueDocument::parse(in, name);
  CalibrationConfig c;
  CameraModel& cam = c.camera;
  cam.fx = doc.number("fx");
  cam.fy = doc.number("fy");
  cam.cx = doc.number("cx");
  cam.cy = doc.number("cy");
  cam.width = static_cast<int>(doc.number("width"));
  cam.height = static_cast<int>(doc.number("height"));
  cam.k1 = doc.number_or("k1", 0.0);
  cam.k2 = doc.number_or("k2", 0.0);
  cam.k3 = doc.number_or("k3", 0.0);
  cam.p1 = doc.number_or("p1", 0.0);
  cam.p2 = doc.number_or("p2", 0.0);
  const auto q = doc.numbers("q_ic", 4);
  cam.q_ic = Vec4(q[0], q[1], q[2], q[3]);
  if (std::abs(cam.q_ic.norm() - 1.0) > 1e-6) throw Error(ErrorKind::Config, "key 'q_ic' is not a unit quaternion");
  cam.q_ic = quat::normalized(cam.q_ic);
  const auto p = doc.numbers("p_ic", 3);
  cam.p_ic = Vec3(p[0], p[1], p[2]);
  cam.validate();

  auto vec3_or = [&](const std::string& key, const Vec3& fallback) {
    if (!doc.has(key)) return fallback;
    const auto v = doc.numbers(key, 3);
    return Vec3(v[0], v[1], v[2]);
  };
  c.noise.sigma_a = vec3_or("sigma_a", c.noise.sigma_a);
  c.noise.sigma_w = vec3_or("sigma_w", c.noise.sigma_w);
  c.noise.g = vec3_or("gravity", c.noise.g);
  c.noise.bias_walk_a = doc.number_or("bias_walk_a", c.noise.bias_walk_a);
  c.noise.bias_walk_w = doc.number_or("bias_walk_w", c.noise.bias_walk_w);
  c.augmentation.n_a = static_cast<int>(doc.number_or("n_a", c.augmentation.n_a));
  c.augmentation.sigma_p_prior = doc.number_or("sigma_p_prior", c.augmentation.sigma_p_prior);
  c.augmentation.sigma_q_prior = doc.number_or("sigma_q_prior", c.augmentation.sigma_q_prior);
  c.augmentation.sigma_star = doc.number_or("sigma_star", c.augmentation.sigma_star);
  c.visual.sigma_uv = doc.number_or("sigma_uv", c.visual.sigma_uv);
  c.visual.m_min = static_cast<int>(doc.number_or("m_min", c.visual.m_min));
  c.visual.gate_confidence = doc.number_or("gate_confidence", c.visual.gate_confidence);
  if ((c.noise.sigma_a.array() <= 0.0).any() || (c.noise.sigma_w.array() <= 0.0).any()) {
    throw Error(ErrorKind::Config, "noise standard deviations must be positive");
  }
  if (c.augmentation.n_a < 2) throw Error(ErrorKind::Config, "n_a must be at least 2");
  if (!(c.visual.gate_confidence > 0.0 && c.visual.gate_confidence < 1.0)) {
    throw Error(ErrorKind::Config, "gate_confidence must lie in (0, 1)");
  }
  return c;
}

inline CalibrationConfig load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open calibration file '" + path + "'");
  try {
    return parse_calibration(in, path);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Parse) throw Error(ErrorKind::Config, e.message());
    throw;
  }
}

inline void write_calibration(const std::string& path, const CalibrationConfig& c) {
  auto out = io_detail::open_out(path);
  const CameraModel& cam = c.camera;
  char buf[256];
  auto line = [&](const char* key, const std::string& v) { out << key << ": " << v << "\n"; };
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  auto vec = [&](const auto& v) {
    std::string s;
    for (int i = 0; i < v.size(); ++i) s += (i ? " " : "") + num(v[i]);
    return s;
  };
  out << "# camera intrinsics (px), distortion, body->camera rotation (w x y z), camera centre in body (m)\n";
  line("fx", num(cam.fx));
  line("fy", num(cam.fy));
  line("cx", num(cam.cx));
  line("cy", num(cam.cy));
  line("width", std::to_string(cam.width));
  line("height", std::to_string(cam.height));
  line("k1", num(cam.k1));
  line("k2", num(cam.k2));
  line("k3", num(cam.k3));
  line("p1", num(cam.p1));
  line("p2", num(cam.p2));
  line("q_ic", vec(cam.q_ic));
  line("p_ic", vec(cam.p_ic));
  out << "# filter\n";
  line("sigma_a", vec(c.noise.sigma_a));
  line("sigma_w", vec(c.noise.sigma_w));
  line("gravity", vec(c.noise.g));
  line("n_a", std::to_string(c.augmentation.n_a));
  line("sigma_star", num(c.augmentation.sigma_star));
  line("sigma_uv", num(c.visual.sigma_uv));
  line("m_min", std::to_string(c.visual.m_min));
  line("gate_confidence", num(c.visual.gate_confidence));
}

// -------------------------------------------------------------- track files

/// One JSON object per line: {"t": seconds, "obs": [[id, u, v], ...]}.
inline std::vector<FrameEvent> parse_tracks(std::istream& in, const std::string& name = "tracks") {
  std::vector<FrameEvent> frames;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (io_detail::trim(line).empty()) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    FrameEvent f;
    try {
      const auto j = nlohmann::json::parse(line);
      f.t = j.at("t").get<double>();
      for (const auto& o : j.at("obs")) {
        if (!o.is_array() || o.size() != 3 || !o[0].is_number_integer() || o[0].get<std::int64_t>() < 0) {
          throw Error(ErrorKind::Parse, where + ": observation must be [id, u, v] with id >= 0");
        }
        f.obs.push_back({o[0].get<std::uint64_t>(), o[1].get<double>(), o[2].get<double>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Parse, where + ": " + e.what());
    }
    if (!std::isfinite(f.t)) throw Error(ErrorKind::Parse, where + ": non-finite time");
    for (const auto& o : f.obs) {
      if (!std::isfinite(o.u) || !std::isfinite(o.v)) throw Error(ErrorKind::Parse, where + ": non-finite pixel");
    }
    if (!frames.empty() && f.t < frames.back().t) {
      throw Error(ErrorKind::Stream, where + ": frame time goes backwards");
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

inline std::vector<FrameEvent> load_tracks(const std::string& path) {
  auto in = io_detail::open_in(path);
  return parse_tracks(in, path);
}

inline void write_tracks(std::ostream& out, const std::vector<FrameEvent>& frames) {
  for (const auto& f : frames) {
    nlohmann::json j;
    j["t"] = f.t;
    j["obs"] = nlohmann::json::array();
    for (const auto& o : f.obs) j["obs"].push_back({o.feature_id, o.u, o.v});
    out << j.dump() << "\n";
  }
}

inline void write_tracks(const std::string& path, const std::vector<FrameEvent>& frames) {
  auto out = io_detail::open_out(path);
  write_tracks(out, frames);
}

// ---------------------------------------------------------- TUM trajectories

inline std::string tum_line(const TimedPose& p) {
  // stored scalar-first, written scalar-last
  char buf[512];
  auto z = [](double x) { return x + 0.0; };  // no "-0"
  std::snprintf(buf, sizeof(buf), "%.9f %.9g %.9g %.9g %.9g %.9g %.9g %.9g", z(p.t), z(p.p.x()), z(p.p.y()),
                z(p.p.z()), z(p.q[1]), z(p.q[2]), z(p.q[3]), z(p.q[0]));
  return buf;
}

inline void write_trajectory(std::ostream& out, const std::vector<TimedPose>& poses) {
  for (const auto& p : poses) out << tum_line(p) << "\n";
}

inline void write_trajectory(const std::string& path, const std::vector<TimedPose>& poses) {
  auto out = io_detail::open_out(path);
  write_trajectory(out, poses);
}

inline std::vector<TimedPose> parse_trajectory(std::istream& in, const std::string& name = "trajectory") {
  std::vector<TimedPose> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = io_detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ss(t);
    std::vector<std::string> tok;
    std::string s;
    while (ss >> s) tok.push_back(s);
    const std::string where = name + ":" + std::to_string(lineno);
    if (tok.size() != 8) throw Error(ErrorKind::Parse, where + ": expected 8 columns");
    double v[8];
    for (int i = 0; i < 8; ++i) v[i] = io_detail::parse_double(tok[i], where);
    TimedPose p;
    p.t = v[0];
    p.p = Vec3(v[1], v[2], v[3]);
    p.q = Vec4(v[7], v[4], v[5], v[6]);
    out.push_back(p);
  }
  return out;
}

inline std::vector<TimedPose> load_trajectory(const std::string& path) {
  auto in = io_detail::open_in(path);
  return parse_trajectory(in, path);
}

}  // namespace pivo
