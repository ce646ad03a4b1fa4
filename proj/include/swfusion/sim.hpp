#ifndef SWFUSION_SIM_HPP
#define SWFUSION_SIM_HPP

// Circular-trajectory stereo world, Monte-Carlo trial generation and the
// per-trial strategy runner.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <exception>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "swfusion/error.hpp"
#include "swfusion/estimators.hpp"
#include "swfusion/problem.hpp"
#include "swfusion/sequence.hpp"
#include "swfusion/sliding.hpp"

namespace swfusion {

struct SimConfig {
  int n_frames = 72;
  double circle_radius = 10.0;                        // m
  double angular_step = 2.0 * std::numbers::pi / 72;  // rad per frame
  int n_landmarks = 300;
  Eigen::Vector3d region_min{-15.0, -15.0, -5.0};
  Eigen::Vector3d region_max{15.0, 15.0, 5.0};
  StereoCamera camera;
  double init_perturb_pos = 0.1;                             // m, frames and landmarks
  double init_perturb_att = 0.5 * std::numbers::pi / 180.0;  // rad
  int n_trials = 50;
  std::uint64_t master_seed = 1;
  int min_landmarks_per_frame = 8;
  int max_resamples = 10;

  void validate() const {
    if (n_frames < 2 || n_landmarks < 1 || n_trials < 1) {
      throw Error(ErrorKind::kConfigError, "frame, landmark and trial counts must be positive");
    }
    if (!(circle_radius > 0.0) || !(angular_step > 0.0)) {
      throw Error(ErrorKind::kConfigError, "circle radius and angular step must be positive");
    }
    if (!(region_max.array() > region_min.array()).all()) {
      throw Error(ErrorKind::kConfigError, "landmark region is empty");
    }
    if (!(camera.pixel_sigma >= 0.0) || init_perturb_pos < 0.0 || init_perturb_att < 0.0) {
      throw Error(ErrorKind::kConfigError, "noise magnitudes must be non-negative");
    }
    if (!(camera.fx > 0 && camera.fy > 0 && camera.baseline > 0 && camera.width > 0 &&
          camera.height > 0)) {
      throw Error(ErrorKind::kConfigError, "stereo camera parameters must be positive");
    }
  }
};

struct Trial {
  int index = 0;
  std::uint64_t seed = 0;
  StereoCamera camera;
  NominalState truth;
  NominalState initials;
  std::vector<Observation> observations;

  Sequence sequence() const {
    Sequence s;
    s.camera = camera;
    // A zero-noise camera still needs a finite weight.
    if (!(s.camera.pixel_sigma > 0.0)) s.camera.pixel_sigma = 1.0;
    s.frames = initials.frames;
    s.landmarks = initials.landmarks;
    s.observations = observations;
    return s;
  }
};

// ---------------------------------------------------------------------------
// Deterministic random streams.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

enum class StreamPurpose : std::uint64_t { kWorld = 1, kNoise = 2, kInitials = 3 };

inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t trial, StreamPurpose purpose,
                                 std::uint64_t attempt = 0) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ trial);
  h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
  return splitmix64(h ^ attempt);
}

/// FNV-1a over every number that determines a trial.
class ContentHash {
 public:
  void add(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001B3ULL;
    }
  }
  void add(double v) { add(&v, sizeof v); }
  void add(std::int64_t v) { add(&v, sizeof v); }
  void add(const Eigen::Vector3d& v) {
    for (int i = 0; i < 3; ++i) add(v(i));
  }
  void add(const Pose& p) {
    add(p.position);
    for (int i = 0; i < 4; ++i) add(p.attitude.coeffs()(i));
  }
  void add(const NominalState& x) {
    for (const auto& [id, pose] : x.frames) {
      add(static_cast<std::int64_t>(id));
      add(pose);
    }
    for (const auto& [id, lm] : x.landmarks) {
      add(static_cast<std::int64_t>(id));
      add(lm.point);
    }
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

inline std::uint64_t sequence_hash(const Sequence& s) {
  ContentHash h;
  const double cam[] = {s.camera.fx, s.camera.fy, s.camera.cx, s.camera.cy, s.camera.baseline,
                        static_cast<double>(s.camera.width), static_cast<double>(s.camera.height),
                        s.camera.pixel_sigma, s.gauge_information};
  for (double v : cam) h.add(v);
  NominalState x;
  x.frames = s.frames;
  x.landmarks = s.landmarks;
  h.add(x);
  for (const auto& o : s.observations) {
    h.add(static_cast<std::int64_t>(o.id));
    h.add(static_cast<std::int64_t>(o.frame));
    h.add(static_cast<std::int64_t>(o.landmark));
    for (int i = 0; i < 4; ++i) h.add(o.z(i));
  }
  return h.value();
}

inline std::uint64_t trial_hash(const Trial& t) {
  ContentHash h;
  h.add(t.truth);
  h.add(static_cast<std::int64_t>(sequence_hash(t.sequence())));
  return h.value();
}

// ---------------------------------------------------------------------------
// World generation.

/// Pose on the circle at angle θ with the optical axis along the direction of travel.
inline Pose circle_pose(double radius, double theta) {
  Pose p;
  p.position = Eigen::Vector3d(radius * std::cos(theta), radius * std::sin(theta), 0.0);
  Eigen::Matrix3d r;
  r.col(0) = Eigen::Vector3d(std::cos(theta), std::sin(theta), 0.0);
  r.col(1) = Eigen::Vector3d(0.0, 0.0, -1.0);
  r.col(2) = Eigen::Vector3d(-std::sin(theta), std::cos(theta), 0.0);
  p.attitude = Eigen::Quaterniond(r).normalized();
  return p;
}

inline Trial generate_trial(const SimConfig& cfg, int trial_index) {
  cfg.validate();
  const auto ti = static_cast<std::uint64_t>(trial_index);
  for (int attempt = 0; attempt < cfg.max_resamples; ++attempt) {
    Trial t;
    t.index = trial_index;
    t.seed = stream_seed(cfg.master_seed, ti, StreamPurpose::kWorld, attempt);
    t.camera = cfg.camera;

    std::mt19937_64 world(t.seed);
    std::mt19937_64 noise(stream_seed(cfg.master_seed, ti, StreamPurpose::kNoise, attempt));
    std::mt19937_64 init(stream_seed(cfg.master_seed, ti, StreamPurpose::kInitials, attempt));

    for (int k = 0; k < cfg.n_frames; ++k) {
      t.truth.frames.emplace(k, circle_pose(cfg.circle_radius, k * cfg.angular_step));
    }
    std::map<LandmarkId, Landmark> all;
    for (int j = 0; j < cfg.n_landmarks; ++j) {
      Eigen::Vector3d p;
      for (int a = 0; a < 3; ++a) {
        p(a) = std::uniform_real_distribution<double>(cfg.region_min(a), cfg.region_max(a))(world);
      }
      all.emplace(j, Landmark{p});
    }

    std::map<LandmarkId, int> seen;
    std::vector<std::pair<FrameId, LandmarkId>> visible;
    for (const auto& [f, pose] : t.truth.frames) {
      for (const auto& [l, lm] : all) {
        if (stereo_observe(pose, lm, cfg.camera)) {
          visible.emplace_back(f, l);
          seen[l] += 1;
        }
      }
    }
    std::normal_distribution<double> pixel(0.0, 1.0);
    std::map<FrameId, int> per_frame;
    MeasurementId next_id = 0;
    for (const auto& [f, l] : visible) {
      if (seen[l] < 2) continue;
      const auto z = *stereo_observe(t.truth.frames.at(f), all.at(l), cfg.camera);
      Observation o{next_id++, f, l, z};
      for (int i = 0; i < 4; ++i) o.z(i) += cfg.camera.pixel_sigma * pixel(noise);
      t.observations.push_back(o);
      per_frame[f] += 1;
    }
    for (const auto& [l, lm] : all) {
      if (seen[l] >= 2) t.truth.landmarks.emplace(l, lm);
    }
    bool degenerate = false;
    for (const auto& [f, _] : t.truth.frames) {
      if (per_frame[f] < cfg.min_landmarks_per_frame) degenerate = true;
    }
    if (degenerate) continue;

    std::normal_distribution<double> unit(0.0, 1.0);
    const auto draw3 = [&](double scale) {
      return Eigen::Vector3d(scale * unit(init), scale * unit(init), scale * unit(init));
    };
    t.initials = t.truth;
    for (auto& [f, pose] : t.initials.frames) {
      // The first frame carries the gauge and starts at its true value.
      if (f == t.initials.frames.begin()->first) continue;
      pose.position += draw3(cfg.init_perturb_pos);
      pose.attitude = (so3_exp(draw3(cfg.init_perturb_att)) * pose.attitude).normalized();
    }
    for (auto& [_, lm] : t.initials.landmarks) lm.point += draw3(cfg.init_perturb_pos);
    return t;
  }
  throw Error(ErrorKind::kDegenerateWorld,
              "trial " + std::to_string(trial_index) + ": some frame observes fewer than " +
                  std::to_string(cfg.min_landmarks_per_frame) + " landmarks after " +
                  std::to_string(cfg.max_resamples) + " resamples");
}

// ---------------------------------------------------------------------------
// Strategy runner.

enum class Estimator { kBatch, kSequential, kSequentialNaive, kSwo, kSwf, kSwfSa, kSwfFej, kSwfFull };

inline constexpr Estimator kAllEstimators[] = {
    Estimator::kBatch, Estimator::kSequential, Estimator::kSequentialNaive, Estimator::kSwo,
    Estimator::kSwf,   Estimator::kSwfSa,      Estimator::kSwfFej,          Estimator::kSwfFull};

constexpr std::string_view to_string(Estimator e) {
  switch (e) {
    case Estimator::kBatch: return "batch";
    case Estimator::kSequential: return "sequential";
    case Estimator::kSequentialNaive: return "sequential_naive";
    case Estimator::kSwo: return "swo";
    case Estimator::kSwf: return "swf";
    case Estimator::kSwfSa: return "swf_sa";
    case Estimator::kSwfFej: return "swf_fej";
    case Estimator::kSwfFull: return "swf_full";
  }
  return "unknown";
}

inline std::optional<Estimator> parse_estimator(std::string_view name) {
  for (Estimator e : kAllEstimators) {
    if (to_string(e) == name) return e;
  }
  return std::nullopt;
}

inline std::optional<Strategy> sliding_strategy(Estimator e) {
  switch (e) {
    case Estimator::kSwo: return Strategy::kSwo;
    case Estimator::kSwf: return Strategy::kSwf;
    case Estimator::kSwfSa: return Strategy::kSwfSa;
    case Estimator::kSwfFej: return Strategy::kSwfFej;
    case Estimator::kSwfFull: return Strategy::kSwfFull;
    default: return std::nullopt;
  }
}

struct RunOptions {
  SolverOptions solver;
  SlidePolicy policy;
  int workers = 1;
  bool record_priors = false;
};

struct StrategyResult {
  Estimator estimator = Estimator::kBatch;
  bool ok = false;
  bool converged = false;
  int iterations = 0;
  NominalState estimates;
  std::optional<SlidingRun> sliding;
  std::string error_kind;
  std::string error;
  double seconds = 0.0;
  std::uint64_t input_hash = 0;
};

struct TrialResult {
  int index = 0;
  std::uint64_t seed = 0;
  std::uint64_t hash = 0;
  bool failed = false;
  std::string error_kind;
  std::string error;
  NominalState truth;
  std::vector<StrategyResult> results;

  const StrategyResult* find(Estimator e) const {
    for (const auto& r : results) {
      if (r.estimator == e) return &r;
    }
    return nullptr;
  }
};

/// Runs one estimator on a sequence, turning library errors into a failed result.
inline StrategyResult run_strategy(Estimator e, const Sequence& seq, const RunOptions& opts) {
  StrategyResult r;
  r.estimator = e;
  r.input_hash = sequence_hash(seq);
  const auto start = std::chrono::steady_clock::now();
  try {
    if (const auto s = sliding_strategy(e)) {
      SlidingOptions so{opts.policy, opts.solver, opts.record_priors};
      SlidingRun run = run_sliding(*s, seq, so);
      r.estimates = run.estimates;
      r.converged = run.converged;
      r.iterations = run.iterations;
      r.sliding = std::move(run);
    } else {
      const EstimationProblem p = build_full_problem(seq);
      EstimatorReport rep;
      if (e == Estimator::kBatch) {
        rep = batch_solve(p, opts.solver);
      } else if (e == Estimator::kSequential) {
        rep = sequential_pass(p, opts.solver);
      } else {
        rep = sequential_naive(p, opts.solver);
      }
      r.estimates = std::move(rep.estimates);
      r.converged = rep.converged;
      r.iterations = rep.iterations;
      if (!rep.converged) r.error = rep.failure;
    }
    r.ok = true;
  } catch (const Error& err) {
    r.error_kind = std::string(to_string(err.kind()));
    r.error = err.detail();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline int resolve_workers(int requested) {
  if (const char* env = std::getenv("SWFUSION_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1, requested);
}

/// Every strategy sees the identical Trial per index; results keep trial order.
inline std::vector<TrialResult> run_monte_carlo(const SimConfig& cfg,
                                                const std::vector<Estimator>& strategies,
                                                const RunOptions& opts) {
  if (strategies.empty()) throw Error(ErrorKind::kConfigError, "strategy set is empty");
  cfg.validate();
  std::vector<TrialResult> out(cfg.n_trials);
  std::atomic<int> next{0};
  const auto work = [&] {
    for (int i = next++; i < cfg.n_trials; i = next++) {
      TrialResult& tr = out[i];
      tr.index = i;
      try {
        const Trial t = generate_trial(cfg, i);
        tr.seed = t.seed;
        tr.hash = trial_hash(t);
        tr.truth = t.truth;
        const Sequence seq = t.sequence();
        for (Estimator e : strategies) tr.results.push_back(run_strategy(e, seq, opts));
      } catch (const Error& err) {
        tr.failed = true;
        tr.error_kind = std::string(to_string(err.kind()));
        tr.error = err.detail();
      }
    }
  };
  const int n = std::min(resolve_workers(opts.workers), cfg.n_trials);
  std::vector<std::thread> pool;
  for (int k = 1; k < n; ++k) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  return out;
}

}  // namespace swfusion

#endif  // SWFUSION_SIM_HPP
