#ifndef SWFUSION_SEQUENCE_HPP
#define SWFUSION_SEQUENCE_HPP

// A stereo sequence as consumed by every estimator: camera, initial frame
// poses, optional landmark seeds and the raw observations.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "swfusion/error.hpp"
#include "swfusion/estimators.hpp"
#include "swfusion/problem.hpp"

namespace swfusion {

/// Information on the first frame's pose that fixes the gauge.
inline constexpr double kGaugeInformation = 1e6;

struct Sequence {
  StereoCamera camera;
  std::map<FrameId, Pose> frames;            // initial linearization values
  std::map<LandmarkId, Landmark> landmarks;  // seeds; missing ones are triangulated
  std::vector<Observation> observations;     // ascending id
  double gauge_information = kGaugeInformation;

  void validate() const {
    camera.validate();
    if (frames.empty()) throw Error(ErrorKind::kValidationError, "sequence has no frames");
    std::set<MeasurementId> ids;
    std::set<std::pair<FrameId, LandmarkId>> pairs;
    for (const auto& o : observations) {
      if (!frames.contains(o.frame)) {
        throw Error(ErrorKind::kValidationError,
                    "observation " + std::to_string(o.id) + " references unknown frame " +
                        std::to_string(o.frame));
      }
      if (!ids.insert(o.id).second) {
        throw Error(ErrorKind::kValidationError,
                    "duplicate observation id " + std::to_string(o.id));
      }
      if (!pairs.emplace(o.frame, o.landmark).second) {
        throw Error(ErrorKind::kValidationError,
                    "frame " + std::to_string(o.frame) + " observes landmark " +
                        std::to_string(o.landmark) + " twice");
      }
    }
  }

  FrameId first_frame() const { return frames.begin()->first; }
};

/// Initial value for a landmark: its seed, else the midpoint of its first two observations.
inline std::optional<Landmark> initial_landmark(const Sequence& seq, LandmarkId id,
                                                const std::vector<const Observation*>& track,
                                                const std::map<FrameId, Pose>& poses) {
  if (const auto it = seq.landmarks.find(id); it != seq.landmarks.end()) return it->second;
  if (track.size() < 2) return std::nullopt;
  const auto p = triangulate_midpoint(poses.at(track[0]->frame), track[0]->z,
                                      poses.at(track[1]->frame), track[1]->z, seq.camera);
  if (!p) return std::nullopt;
  return Landmark{*p};
}

/// Full-state problem over every frame and every landmark seen by at least two frames.
inline EstimationProblem build_full_problem(const Sequence& seq) {
  seq.validate();
  std::map<LandmarkId, std::vector<const Observation*>> tracks;
  for (const auto& o : seq.observations) tracks[o.landmark].push_back(&o);

  EstimationProblem p;
  p.initial.frames = seq.frames;
  for (auto& [id, track] : tracks) {
    std::sort(track.begin(), track.end(),
              [](const Observation* a, const Observation* b) { return a->id < b->id; });
    if (track.size() < 2) continue;
    if (auto lm = initial_landmark(seq, id, track, seq.frames)) p.initial.landmarks.emplace(id, *lm);
  }
  for (const auto& o : seq.observations) {
    if (p.initial.landmarks.contains(o.landmark)) {
      p.measurements.push_back(make_stereo_source(o, seq.camera));
    }
  }
  p.prior = diagonal_information_prior(ErrorLayout::from_state(p.initial),
                                       {{frame_state(seq.first_frame()), seq.gauge_information}},
                                       kUnconstrainedInformation);
  return p;
}

}  // namespace swfusion

#endif  // SWFUSION_SEQUENCE_HPP
