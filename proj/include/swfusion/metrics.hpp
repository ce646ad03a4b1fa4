#ifndef SWFUSION_METRICS_HPP
#define SWFUSION_METRICS_HPP

// Per-frame discrepancy between two estimates, RMSE against truth and
// log10 summary statistics. Landmarks are ignored throughout.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "swfusion/error.hpp"
#include "swfusion/problem.hpp"

namespace swfusion {

inline constexpr double kLogClamp = 1e-16;

struct DiscrepancySeries {
  std::vector<FrameId> frames;
  std::vector<double> translation;   // m
  std::vector<double> attitude_deg;  // deg

  std::size_t size() const { return frames.size(); }
};

inline double attitude_angle_deg(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  return rotation_angle(a * b.conjugate()) * 180.0 / std::numbers::pi;
}

namespace detail {
inline void check_same_frames(const NominalState& a, const NominalState& b) {
  if (a.frames.size() != b.frames.size()) {
    throw Error(ErrorKind::kFrameMismatch, "estimates cover different frame counts");
  }
  for (auto ia = a.frames.begin(), ib = b.frames.begin(); ia != a.frames.end(); ++ia, ++ib) {
    if (ia->first != ib->first) {
      throw Error(ErrorKind::kFrameMismatch, "frame " + std::to_string(ia->first) +
                                                 " has no counterpart in the other estimate");
    }
  }
}
}  // namespace detail

inline DiscrepancySeries discrepancy(const NominalState& a, const NominalState& b) {
  detail::check_same_frames(a, b);
  DiscrepancySeries s;
  for (const auto& [id, pa] : a.frames) {
    const Pose& pb = b.frames.at(id);
    s.frames.push_back(id);
    s.translation.push_back((pa.position - pb.position).norm());
    s.attitude_deg.push_back(attitude_angle_deg(pa.attitude, pb.attitude));
  }
  return s;
}

struct Rmse {
  double position = 0.0;      // m
  double attitude_deg = 0.0;  // deg
};

inline Rmse rmse(const NominalState& est, const NominalState& truth) {
  const DiscrepancySeries s = discrepancy(est, truth);
  if (s.size() == 0) return {};
  double sp = 0.0;
  double sa = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    sp += s.translation[i] * s.translation[i];
    sa += s.attitude_deg[i] * s.attitude_deg[i];
  }
  const double n = static_cast<double>(s.size());
  return {std::sqrt(sp / n), std::sqrt(sa / n)};
}

/// log10 of the max and of the arithmetic mean; mean_log is the mean of logs.
struct LogStats {
  double max = 0.0;
  double mean = 0.0;
  double mean_log = 0.0;
};

struct LogStatsPair {
  LogStats translation;
  LogStats attitude;
};

inline double clamped_log10(double v) { return std::log10(std::max(v, kLogClamp)); }

inline LogStats log10_stats(const std::vector<double>& v) {
  if (v.empty()) throw Error(ErrorKind::kValidationError, "log10_stats of an empty series");
  double mx = 0.0;
  double sum = 0.0;
  double sum_log = 0.0;
  for (double x : v) {
    mx = std::max(mx, x);
    sum += x;
    sum_log += clamped_log10(x);
  }
  const double n = static_cast<double>(v.size());
  return {clamped_log10(mx), clamped_log10(sum / n), sum_log / n};
}

inline LogStatsPair log10_stats(const DiscrepancySeries& s) {
  return {log10_stats(s.translation), log10_stats(s.attitude_deg)};
}

/// Mean over trials at each frame; every series must cover the same frames.
inline DiscrepancySeries averaged_discrepancy(const std::vector<DiscrepancySeries>& trials) {
  DiscrepancySeries out;
  if (trials.empty()) return out;
  out.frames = trials.front().frames;
  out.translation.assign(out.frames.size(), 0.0);
  out.attitude_deg.assign(out.frames.size(), 0.0);
  for (const auto& s : trials) {
    if (s.frames != out.frames) {
      throw Error(ErrorKind::kFrameMismatch, "trials cover different frames");
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      out.translation[i] += s.translation[i];
      out.attitude_deg[i] += s.attitude_deg[i];
    }
  }
  const double n = static_cast<double>(trials.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.translation[i] /= n;
    out.attitude_deg[i] /= n;
  }
  return out;
}

inline double max_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
}

}  // namespace swfusion

#endif  // SWFUSION_METRICS_HPP
