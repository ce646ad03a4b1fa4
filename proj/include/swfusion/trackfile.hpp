#ifndef SWFUSION_TRACKFILE_HPP
#define SWFUSION_TRACKFILE_HPP

// Line-oriented text format for a recorded stereo sequence.
//
//   SWFTRACK 1
//   CAM fx fy cx cy baseline width height sigma
//   FRAME id px py pz qw qx qy qz
//   LM id x y z
//   OBS frame landmark uL vL uR vR
//   GT id px py pz qw qx qy qz
//
// Blank lines and text after '#' are ignored. Observation ids follow file order.

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "swfusion/error.hpp"
#include "swfusion/problem.hpp"
#include "swfusion/sequence.hpp"

namespace swfusion {

inline constexpr int kTrackFileVersion = 1;

struct TrackFile {
  StereoCamera camera;
  std::map<FrameId, Pose> frames;
  std::map<LandmarkId, Landmark> landmarks;
  std::vector<Observation> observations;
  std::map<FrameId, Pose> ground_truth;

  bool operator==(const TrackFile&) const = default;

  Sequence sequence() const {
    Sequence s;
    s.camera = camera;
    s.frames = frames;
    s.landmarks = landmarks;
    s.observations = observations;
    return s;
  }
};

struct TrackSummary {
  std::size_t frames = 0;
  std::size_t landmarks = 0;
  std::size_t observations = 0;
  std::size_t ground_truth = 0;
  double mean_track_length = 0.0;  // observations per observed landmark
};

namespace detail {

struct Token {
  std::string text;
  int column = 0;  // 1-based
};

inline std::vector<Token> tokenize(const std::string& line) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t end = line.find('#');
  const std::size_t n = end == std::string::npos ? line.size() : end;
  while (i < n) {
    while (i < n && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i >= n) break;
    const std::size_t start = i;
    while (i < n && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    out.push_back({line.substr(start, i - start), static_cast<int>(start) + 1});
  }
  return out;
}

inline double parse_double(const Token& t, int line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t.text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != t.text.size() || !std::isfinite(v)) {
    throw ParseError(line, t.column, "expected a finite number, got '" + t.text + "'");
  }
  return v;
}

inline std::int64_t parse_int(const Token& t, int line) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(t.text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != t.text.size()) {
    throw ParseError(line, t.column, "expected an integer, got '" + t.text + "'");
  }
  return v;
}

inline Pose parse_pose(const std::vector<Token>& f, int line) {
  Pose p;
  p.position = {parse_double(f[2], line), parse_double(f[3], line), parse_double(f[4], line)};
  Eigen::Quaterniond q(parse_double(f[5], line), parse_double(f[6], line),
                       parse_double(f[7], line), parse_double(f[8], line));
  // Accept rounding in hand-written files, reject anything that is not a rotation.
  if (std::abs(q.norm() - 1.0) > 1e-6) {
    throw ParseError(line, f[5].column, "quaternion is not unit norm");
  }
  p.attitude = std::abs(q.norm() - 1.0) > 1e-12 ? q.normalized() : q;
  return p;
}

inline void expect_fields(const std::vector<Token>& f, std::size_t n, int line) {
  if (f.size() != n) {
    const int col = f.size() > n ? f[n].column : f.back().column;
    throw ParseError(line, col,
                     f[0].text + " expects " + std::to_string(n - 1) + " fields, got " +
                         std::to_string(f.size() - 1));
  }
}

}  // namespace detail

/// Cross-reference checks; every unknown id is named in the message.
inline void validate(const TrackFile& t) {
  t.camera.validate();
  if (t.frames.empty()) throw Error(ErrorKind::kValidationError, "track file has no frames");
  std::set<std::pair<FrameId, LandmarkId>> seen;
  for (const auto& o : t.observations) {
    if (!t.frames.contains(o.frame)) {
      throw Error(ErrorKind::kValidationError, "observation " + std::to_string(o.id) +
                                                   " references unknown frame " +
                                                   std::to_string(o.frame));
    }
    if (!t.landmarks.contains(o.landmark)) {
      throw Error(ErrorKind::kValidationError, "observation " + std::to_string(o.id) +
                                                   " references unknown landmark " +
                                                   std::to_string(o.landmark));
    }
    if (!seen.emplace(o.frame, o.landmark).second) {
      throw Error(ErrorKind::kValidationError, "frame " + std::to_string(o.frame) +
                                                   " observes landmark " +
                                                   std::to_string(o.landmark) + " twice");
    }
  }
  for (const auto& [id, _] : t.ground_truth) {
    if (!t.frames.contains(id)) {
      throw Error(ErrorKind::kValidationError,
                  "ground truth for unknown frame " + std::to_string(id));
    }
  }
}

inline TrackFile parse_trackfile(std::istream& in) {
  TrackFile t;
  bool header = false;
  bool camera = false;
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    const auto f = detail::tokenize(text);
    if (f.empty()) continue;
    const std::string& tag = f[0].text;
    if (!header) {
      if (tag != "SWFTRACK") throw ParseError(line, f[0].column, "missing SWFTRACK header");
      detail::expect_fields(f, 2, line);
      if (detail::parse_int(f[1], line) != kTrackFileVersion) {
        throw ParseError(line, f[1].column, "unsupported version " + f[1].text);
      }
      header = true;
      continue;
    }
    if (tag == "CAM") {
      if (camera) throw ParseError(line, f[0].column, "duplicate CAM record");
      detail::expect_fields(f, 9, line);
      StereoCamera& c = t.camera;
      c.fx = detail::parse_double(f[1], line);
      c.fy = detail::parse_double(f[2], line);
      c.cx = detail::parse_double(f[3], line);
      c.cy = detail::parse_double(f[4], line);
      c.baseline = detail::parse_double(f[5], line);
      c.width = static_cast<int>(detail::parse_int(f[6], line));
      c.height = static_cast<int>(detail::parse_int(f[7], line));
      c.pixel_sigma = detail::parse_double(f[8], line);
      camera = true;
    } else if (tag == "FRAME" || tag == "GT") {
      detail::expect_fields(f, 9, line);
      const FrameId id = detail::parse_int(f[1], line);
      auto& target = tag == "FRAME" ? t.frames : t.ground_truth;
      if (!target.emplace(id, detail::parse_pose(f, line)).second) {
        throw ParseError(line, f[1].column, "duplicate " + tag + " id " + f[1].text);
      }
    } else if (tag == "LM") {
      detail::expect_fields(f, 5, line);
      const LandmarkId id = detail::parse_int(f[1], line);
      Landmark lm{{detail::parse_double(f[2], line), detail::parse_double(f[3], line),
                   detail::parse_double(f[4], line)}};
      if (!t.landmarks.emplace(id, lm).second) {
        throw ParseError(line, f[1].column, "duplicate LM id " + f[1].text);
      }
    } else if (tag == "OBS") {
      detail::expect_fields(f, 7, line);
      Observation o;
      o.id = static_cast<MeasurementId>(t.observations.size());
      o.frame = detail::parse_int(f[1], line);
      o.landmark = detail::parse_int(f[2], line);
      for (int k = 0; k < 4; ++k) o.z[k] = detail::parse_double(f[3 + k], line);
      t.observations.push_back(o);
    } else {
      throw ParseError(line, f[0].column, "unknown record type '" + tag + "'");
    }
  }
  if (!header) throw ParseError(line + 1, 1, "missing SWFTRACK header");
  if (!camera) throw ParseError(line + 1, 1, "missing CAM record");
  validate(t);
  return t;
}

inline TrackFile parse_trackfile(const std::string& text) {
  std::istringstream in(text);
  return parse_trackfile(in);
}

inline TrackFile read_trackfile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIoError, "cannot open " + path);
  return parse_trackfile(in);
}

namespace detail {
inline std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_pose(std::ostream& out, const char* tag, FrameId id, const Pose& p) {
  out << tag << ' ' << id;
  for (int k = 0; k < 3; ++k) out << ' ' << g17(p.position[k]);
  const auto& q = p.attitude;
  out << ' ' << g17(q.w()) << ' ' << g17(q.x()) << ' ' << g17(q.y()) << ' ' << g17(q.z()) << '\n';
}
}  // namespace detail

/// Writes records in a canonical order; parsing the output reproduces `t` exactly.
inline void write_trackfile(std::ostream& out, const TrackFile& t, const std::string& comment = {}) {
  out << "SWFTRACK " << kTrackFileVersion << '\n';
  if (!comment.empty()) out << "# " << comment << '\n';
  const StereoCamera& c = t.camera;
  out << "CAM " << detail::g17(c.fx) << ' ' << detail::g17(c.fy) << ' ' << detail::g17(c.cx) << ' '
      << detail::g17(c.cy) << ' ' << detail::g17(c.baseline) << ' ' << c.width << ' ' << c.height
      << ' ' << detail::g17(c.pixel_sigma) << '\n';
  for (const auto& [id, p] : t.frames) detail::write_pose(out, "FRAME", id, p);
  for (const auto& [id, lm] : t.landmarks) {
    out << "LM " << id;
    for (int k = 0; k < 3; ++k) out << ' ' << detail::g17(lm.point[k]);
    out << '\n';
  }
  for (const auto& o : t.observations) {
    out << "OBS " << o.frame << ' ' << o.landmark;
    for (int k = 0; k < 4; ++k) out << ' ' << detail::g17(o.z[k]);
    out << '\n';
  }
  for (const auto& [id, p] : t.ground_truth) detail::write_pose(out, "GT", id, p);
}

inline TrackSummary summarize(const TrackFile& t) {
  TrackSummary s;
  s.frames = t.frames.size();
  s.landmarks = t.landmarks.size();
  s.observations = t.observations.size();
  s.ground_truth = t.ground_truth.size();
  std::set<LandmarkId> observed;
  for (const auto& o : t.observations) observed.insert(o.landmark);
  if (!observed.empty()) {
    s.mean_track_length =
        static_cast<double>(t.observations.size()) / static_cast<double>(observed.size());
  }
  return s;
}

}  // namespace swfusion

#endif  // SWFUSION_TRACKFILE_HPP
