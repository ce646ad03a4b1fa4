#ifndef SWFUSION_SLIDING_HPP
#define SWFUSION_SLIDING_HPP

// Sliding-window strategies. SWO solves the window with normal equations and
// converts Z_m into a prior by Schur complement; the SWF family runs Kalman
// sweeps and transfers a covariance-form prior.
//
// A window carries two kinds of prior:
//  - the converted prior from earlier slides, a linear factor fixed at FEJ
//    anchors and corrected by Δx = current − anchor;
//  - static priors (ε, or the gauge prior on the first frame) attached to
//    states when they enter, centred on their insertion values.
// At every slide the static priors are folded into the conversion, so the new
// converted prior covers every state left in the window.

#include <Eigen/Core>

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "swfusion/blockmat.hpp"
#include "swfusion/error.hpp"
#include "swfusion/estimators.hpp"
#include "swfusion/problem.hpp"
#include "swfusion/sequence.hpp"

namespace swfusion {

enum class Strategy { kSwo, kSwf, kSwfSa, kSwfFej, kSwfFull };

constexpr std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kSwo: return "swo";
    case Strategy::kSwf: return "swf";
    case Strategy::kSwfSa: return "swf_sa";
    case Strategy::kSwfFej: return "swf_fej";
    case Strategy::kSwfFull: return "swf_full";
  }
  return "unknown";
}

enum class MarginalSelector { kOldestFrame, kMsckf };

struct SlidePolicy {
  int window_length = 20;  // frames
  MarginalSelector selector = MarginalSelector::kOldestFrame;
  int min_track = 2;  // observations before a landmark joins the window

  void validate() const {
    if (window_length < 2) throw Error(ErrorKind::kConfigError, "window_length must be >= 2");
    if (min_track < 2) throw Error(ErrorKind::kConfigError, "min_track must be >= 2");
  }
};

struct SlidingOptions {
  SlidePolicy policy;
  SolverOptions solver;
  bool record_priors = false;  // keep every transferred prior in the step reports
};

/// States and measurements entering the window at one step.
struct WindowInput {
  std::map<FrameId, Pose> frames;
  std::map<LandmarkId, Landmark> landmarks;
  std::vector<MeasurementSource> measurements;
  std::map<StateId, double> prior_information;  // default kUnconstrainedInformation
};

struct WindowState {
  NominalState active;
  NominalState static_means;
  std::map<StateId, double> static_information;
  GaussianBelief prior = GaussianBelief::information(ErrorLayout{}, MatrixXd(0, 0), VectorXd(0));
  NominalState fej_anchors;
  std::vector<MeasurementSource> live;  // ascending id
  std::set<MeasurementId> converted_ids;
  std::map<LandmarkId, std::set<FrameId>> observers;  // active frames seeing each landmark

  std::size_t frame_count() const { return active.frames.size(); }

  void check_invariants() const {
    for (const auto& m : live) {
      if (converted_ids.contains(m.id)) {
        throw Error(ErrorKind::kValidationError,
                    "measurement " + std::to_string(m.id) + " is both live and converted");
      }
    }
    for (const auto& s : prior.layout.states()) {
      if (!fej_anchors.contains(s)) {
        throw Error(ErrorKind::kMissingAnchor, "no anchor for prior-constrained " + s.str());
      }
      if (!active.contains(s)) {
        throw Error(ErrorKind::kValidationError, "prior covers inactive " + s.str());
      }
    }
  }
};

struct StepReport {
  int step = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> step_norms;
  NominalState estimates;  // window after compensation, before the slide
  std::vector<StateId> marginalized;
  std::vector<MeasurementId> converted;
  std::optional<GaussianBelief> transferred;
};

struct StepResult {
  StepReport report;
  WindowState state;
};

// ---------------------------------------------------------------------------
// Window bookkeeping.

/// x_m: the oldest frame and every landmark none of whose remaining observers
/// survives the slide. Empty while the window is not full.
inline std::vector<StateId> select_marginal(const WindowState& w, const SlidePolicy& p) {
  std::vector<StateId> xm;
  if (w.frame_count() < static_cast<std::size_t>(p.window_length) || w.active.frames.empty()) {
    return xm;
  }
  const FrameId oldest = w.active.frames.begin()->first;
  const FrameId newest = w.active.frames.rbegin()->first;
  xm.push_back(frame_state(oldest));
  for (const auto& [lm, _] : w.active.landmarks) {
    const auto it = w.observers.find(lm);
    bool leaves = true;
    if (it != w.observers.end()) {
      for (FrameId f : it->second) {
        if (f != oldest) leaves = false;
      }
      if (p.selector == MarginalSelector::kMsckf && !it->second.contains(newest)) leaves = true;
    }
    if (leaves) xm.push_back(landmark_state(lm));
  }
  return xm;
}

/// (Z_m, Z_r): live measurements touching x_m, and the rest.
inline std::pair<std::vector<MeasurementSource>, std::vector<MeasurementSource>>
partition_measurements(const WindowState& w, const std::vector<StateId>& xm) {
  const std::set<StateId> marked(xm.begin(), xm.end());
  std::vector<MeasurementSource> zm;
  std::vector<MeasurementSource> zr;
  for (const auto& m : w.live) {
    const bool hits = std::any_of(m.touched.begin(), m.touched.end(),
                                  [&](const StateId& s) { return marked.contains(s); });
    (hits ? zm : zr).push_back(m);
  }
  return {std::move(zm), std::move(zr)};
}

/// Δx = current − anchor for every state the prior constrains.
inline ErrorState fej_compensation(const GaussianBelief& prior, const NominalState& anchors,
                                   const NominalState& current) {
  for (const auto& s : prior.layout.states()) {
    if (!anchors.contains(s)) {
      throw Error(ErrorKind::kMissingAnchor, "no anchor for prior-constrained " + s.str());
    }
  }
  return difference(current, anchors, prior.layout);
}

/// Δb = N Δx for an information-form prior.
inline VectorXd fej_information_correction(const GaussianBelief& prior, const ErrorState& dx) {
  if (prior.form != BeliefForm::kInformation || !(dx.layout == prior.layout)) {
    throw Error(ErrorKind::kDimensionMismatch, "Δb needs an information prior over Δx's layout");
  }
  return prior.matrix * dx.values;
}

namespace detail {

inline VectorXd state_difference(const NominalState& a, const NominalState& b, StateId s) {
  if (s.kind == StateKind::kFrame) return difference(a.frames.at(s.id), b.frames.at(s.id));
  return a.landmarks.at(s.id).point - b.landmarks.at(s.id).point;
}

inline WindowState insert(const WindowState& w_in, const WindowInput& in) {
  WindowState w = w_in;
  const auto add_static = [&](StateId s) {
    const auto it = in.prior_information.find(s);
    w.static_information[s] = it == in.prior_information.end() ? kUnconstrainedInformation
                                                               : it->second;
  };
  for (const auto& [id, pose] : in.frames) {
    if (w.active.frames.contains(id)) {
      throw Error(ErrorKind::kValidationError, "frame " + std::to_string(id) + " already active");
    }
    if (!w.active.frames.empty() && id <= w.active.frames.rbegin()->first) {
      throw Error(ErrorKind::kValidationError, "frame ids must increase");
    }
    w.active.frames.emplace(id, pose);
    w.static_means.frames.emplace(id, pose);
    add_static(frame_state(id));
  }
  for (const auto& [id, lm] : in.landmarks) {
    if (w.active.landmarks.contains(id)) {
      throw Error(ErrorKind::kValidationError, "landmark " + std::to_string(id) + " already active");
    }
    w.active.landmarks.emplace(id, lm);
    w.static_means.landmarks.emplace(id, lm);
    add_static(landmark_state(id));
  }
  for (const auto& m : in.measurements) {
    if (w.converted_ids.contains(m.id)) {
      throw Error(ErrorKind::kValidationError,
                  "measurement " + std::to_string(m.id) + " was already converted");
    }
    for (const auto& s : m.touched) {
      if (!w.active.contains(s)) {
        throw Error(ErrorKind::kValidationError,
                    "measurement " + std::to_string(m.id) + " touches inactive " + s.str());
      }
    }
    w.live.push_back(m);
    for (const auto& lm : m.touched) {
      if (lm.kind != StateKind::kLandmark) continue;
      for (const auto& f : m.touched) {
        if (f.kind == StateKind::kFrame) w.observers[lm.id].insert(f.id);
      }
    }
  }
  std::sort(w.live.begin(), w.live.end(),
            [](const MeasurementSource& a, const MeasurementSource& b) { return a.id < b.id; });
  if (std::adjacent_find(w.live.begin(), w.live.end(),
                         [](const MeasurementSource& a, const MeasurementSource& b) {
                           return a.id == b.id;
                         }) != w.live.end()) {
    throw Error(ErrorKind::kValidationError, "duplicate live measurement id");
  }
  return w;
}

// Normal-equation contribution of every prior piece at linearization point x.
inline void add_prior_information(MatrixXd& n, VectorXd& b, const WindowState& w,
                                  const ErrorLayout& layout, const NominalState& x,
                                  const GaussianBelief& converted, bool use_delta_x) {
  for (const auto& [s, info] : w.static_information) {
    const int o = layout.offset(s);
    const VectorXd r = state_difference(x, w.static_means, s);
    for (int k = 0; k < s.dim(); ++k) {
      n(o + k, o + k) += info;
      b(o + k) += info * r(k);
    }
  }
  if (converted.dim() == 0) return;
  const auto idx = layout.indices(converted.layout.states());
  VectorXd bc = converted.vector;
  if (use_delta_x) {
    bc += fej_information_correction(converted, fej_compensation(converted, w.fej_anchors, x));
  }
  for (std::size_t j = 0; j < idx.size(); ++j) {
    b(idx[j]) += bc(j);
    for (std::size_t i = 0; i < idx.size(); ++i) n(idx[i], idx[j]) += converted.matrix(i, j);
  }
}

// Covariance-form seed of the same prior pieces at linearization point x.
inline std::pair<MatrixXd, VectorXd> prior_covariance(const WindowState& w,
                                                      const ErrorLayout& layout,
                                                      const NominalState& x,
                                                      const GaussianBelief& converted,
                                                      bool use_delta_x) {
  const int n = layout.dim();
  MatrixXd p = MatrixXd::Zero(n, n);
  VectorXd mean = VectorXd::Zero(n);
  for (const auto& [s, info] : w.static_information) {
    const int o = layout.offset(s);
    mean.segment(o, s.dim()) = state_difference(x, w.static_means, s);
    for (int k = 0; k < s.dim(); ++k) p(o + k, o + k) = 1.0 / info;
  }
  if (converted.dim() == 0) return {std::move(p), std::move(mean)};
  const auto idx = layout.indices(converted.layout.states());
  VectorXd seed = converted.vector;
  if (use_delta_x) seed += fej_compensation(converted, w.fej_anchors, x).values;
  for (std::size_t j = 0; j < idx.size(); ++j) {
    mean(idx[j]) = seed(j);
    for (std::size_t i = 0; i < idx.size(); ++i) p(idx[i], idx[j]) = converted.matrix(i, j);
  }
  return {std::move(p), std::move(mean)};
}

inline std::vector<StateId> remaining_states(const ErrorLayout& layout,
                                             const std::vector<StateId>& xm) {
  return layout.without(std::set<StateId>(xm.begin(), xm.end())).states();
}

// Removes x_m and the converted measurements, installs the new prior and anchors.
inline void slide(WindowState& w, const std::vector<StateId>& xm, GaussianBelief new_prior,
                  const NominalState& anchor_source, const std::vector<MeasurementId>& converted) {
  for (const auto& s : xm) {
    if (s.kind == StateKind::kFrame) {
      w.active.frames.erase(s.id);
      for (auto& [_, fs] : w.observers) fs.erase(s.id);
    } else {
      w.active.landmarks.erase(s.id);
      w.observers.erase(s.id);
    }
  }
  w.static_means = NominalState{};
  w.static_information.clear();
  w.fej_anchors = anchor_source.subset(new_prior.layout.states());
  w.prior = std::move(new_prior);
  const std::set<MeasurementId> gone(converted.begin(), converted.end());
  w.converted_ids.insert(converted.begin(), converted.end());
  std::erase_if(w.live, [&](const MeasurementSource& m) { return gone.contains(m.id); });
  for (const auto& m : w.live) {
    for (const auto& s : m.touched) {
      if (!w.active.contains(s)) {
        throw Error(ErrorKind::kValidationError,
                    "live measurement " + std::to_string(m.id) + " touches marginalized " +
                        s.str());
      }
    }
  }
}

inline std::vector<MeasurementId> ids_of(const std::vector<MeasurementSource>& ms) {
  std::vector<MeasurementId> ids;
  ids.reserve(ms.size());
  for (const auto& m : ms) ids.push_back(m.id);
  return ids;
}

inline void finish_iteration(StepReport& r, double step_norm) {
  r.step_norms.push_back(step_norm);
  r.iterations += 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Strategies.

/// Sliding-window optimization with Schur-complement marginalization and FEJ.
inline StepResult swo_step(const WindowState& w_in, const WindowInput& in,
                           const SlidingOptions& opts) {
  WindowState w = detail::insert(w_in, in);
  const ErrorLayout layout = ErrorLayout::from_state(w.active);
  const int n = layout.dim();
  const GaussianBelief converted = w.prior.dim() == 0 ? w.prior : w.prior.to_information();
  const auto xm = select_marginal(w, opts.policy);

  StepResult out;
  StepReport& rep = out.report;
  NominalState x = w.active;
  NominalState x_lin = x;
  for (int it = 0; it < opts.solver.max_iterations; ++it) {
    x_lin = x;
    MatrixXd info = MatrixXd::Zero(n, n);
    VectorXd rhs = VectorXd::Zero(n);
    detail::add_prior_information(info, rhs, w, layout, x, converted, true);
    for (const auto& m : w.live) detail::accumulate(info, rhs, m.linearize(x), layout);
    VectorXd delta;
    try {
      delta = SpdFactor(symmetrize(info), "window normal matrix").solve_vector(rhs);
    } catch (const Error& e) {
      throw Error(ErrorKind::kSingularSystem, e.detail());
    }
    const double step_norm = delta.lpNorm<Eigen::Infinity>();
    detail::finish_iteration(rep, step_norm);
    x = compensate(x, ErrorState{layout, delta});
    if (step_norm <= opts.solver.tolerance) {
      rep.converged = true;
      break;
    }
  }
  w.active = x;
  rep.estimates = x;

  if (!xm.empty()) {
    const auto [zm, zr] = partition_measurements(w, xm);
    MatrixXd info = MatrixXd::Zero(n, n);
    VectorXd rhs = VectorXd::Zero(n);
    detail::add_prior_information(info, rhs, w, layout, x_lin, converted, true);
    for (const auto& m : zm) detail::accumulate(info, rhs, m.linearize(x_lin), layout);
    const auto kept = detail::remaining_states(layout, xm);
    std::vector<int> order = layout.indices(xm);
    const int dim_m = static_cast<int>(order.size());
    const auto idx_b = layout.indices(kept);
    order.insert(order.end(), idx_b.begin(), idx_b.end());
    const auto part = PartitionedSpd::split(gather(info, order, order), dim_m,
                                            VectorXd(gather(rhs, order)));
    Marginal mg = schur_marginalize(part);
    auto prior = GaussianBelief::information(ErrorLayout(kept), std::move(mg.information),
                                             std::move(mg.vector));
    if (opts.record_priors) rep.transferred = prior;
    rep.marginalized = xm;
    rep.converted = detail::ids_of(zm);
    detail::slide(w, xm, std::move(prior), x_lin, rep.converted);
  }
  w.check_invariants();
  out.state = std::move(w);
  return out;
}

namespace detail {

struct FilterFlavor {
  bool two_step = true;       // Step 1 on Z_m, Step 2 on Z_r
  bool use_delta_x = true;    // FEJ compensation of the converted prior
  bool keep_mean = true;      // transfer δx̂ rather than zero
};

inline StepResult filter_step(const WindowState& w_in, const WindowInput& in,
                              const SlidingOptions& opts, FilterFlavor flavor) {
  WindowState w = insert(w_in, in);
  const ErrorLayout layout = ErrorLayout::from_state(w.active);
  const GaussianBelief converted = w.prior.dim() == 0 ? w.prior : w.prior.to_covariance();
  const auto xm = select_marginal(w, opts.policy);
  const auto [zm, zr] = partition_measurements(w, xm);

  StepResult out;
  StepReport& rep = out.report;
  NominalState x = w.active;
  NominalState x_lin = x;
  std::optional<KalmanSweep> transfer;
  std::vector<StateId> order = touch_order(flavor.two_step ? zm : w.live);
  if (flavor.two_step) {
    const auto rest = touch_order(zr);
    order.insert(order.end(), rest.begin(), rest.end());
  }
  for (int it = 0; it < opts.solver.max_iterations; ++it) {
    x_lin = x;
    const auto [p0, seed] = prior_covariance(w, layout, x, converted, flavor.use_delta_x);
    KalmanSweep step1(p0, seed, layout, order);
    VectorXd delta;
    if (flavor.two_step) {
      for (const auto& m : zm) step1.update(m.linearize(x));
      KalmanSweep step2 = step1;
      for (const auto& m : zr) step2.update(m.linearize(x));
      delta = step2.mean();
    } else {
      for (const auto& m : w.live) step1.update(m.linearize(x));
      delta = step1.mean();
    }
    const double step_norm = delta.lpNorm<Eigen::Infinity>();
    finish_iteration(rep, step_norm);
    x = compensate(x, ErrorState{layout, delta});
    transfer = std::move(step1);
    if (step_norm <= opts.solver.tolerance) {
      rep.converged = true;
      break;
    }
  }
  w.active = x;
  rep.estimates = x;

  if (!xm.empty()) {
    const auto kept = remaining_states(layout, xm);
    const auto idx_b = layout.indices(kept);
    MatrixXd p_b = gather(transfer->covariance(), idx_b, idx_b);
    VectorXd mean_b = flavor.keep_mean ? VectorXd(gather(transfer->mean(), idx_b))
                                       : VectorXd(VectorXd::Zero(idx_b.size()));
    auto prior = GaussianBelief::covariance(ErrorLayout(kept), std::move(p_b), std::move(mean_b));
    if (opts.record_priors) rep.transferred = prior;
    rep.marginalized = xm;
    // The baseline filter converts everything it used; the two-step family only Z_m.
    rep.converted = flavor.two_step ? ids_of(zm) : ids_of(w.live);
    detail::slide(w, xm, std::move(prior), flavor.two_step ? x_lin : x, rep.converted);
  }
  w.check_invariants();
  out.state = std::move(w);
  return out;
}

}  // namespace detail

/// Baseline filter: one sweep over every live measurement, zeroed transferred
/// mean, no Δx, and every used measurement converted at the slide.
inline StepResult swf_step(const WindowState& w, const WindowInput& in, const SlidingOptions& opts) {
  return detail::filter_step(w, in, opts, {false, false, false});
}

/// Two-step filter: Z_m seeds the prior to transfer, Z_r refines the estimate only.
inline StepResult swf_sa_step(const WindowState& w, const WindowInput& in,
                              const SlidingOptions& opts) {
  return detail::filter_step(w, in, opts, {true, true, true});
}

/// Two-step filter that drops the transferred mean.
inline StepResult swf_fej_step(const WindowState& w, const WindowInput& in,
                               const SlidingOptions& opts) {
  return detail::filter_step(w, in, opts, {true, true, false});
}

/// Two-step filter without Δx compensation of the converted prior.
inline StepResult swf_full_step(const WindowState& w, const WindowInput& in,
                                const SlidingOptions& opts) {
  return detail::filter_step(w, in, opts, {true, false, true});
}

inline StepResult window_step(Strategy s, const WindowState& w, const WindowInput& in,
                              const SlidingOptions& opts) {
  switch (s) {
    case Strategy::kSwo: return swo_step(w, in, opts);
    case Strategy::kSwf: return swf_step(w, in, opts);
    case Strategy::kSwfSa: return swf_sa_step(w, in, opts);
    case Strategy::kSwfFej: return swf_fej_step(w, in, opts);
    case Strategy::kSwfFull: return swf_full_step(w, in, opts);
  }
  throw Error(ErrorKind::kConfigError, "unknown strategy");
}

// ---------------------------------------------------------------------------
// Whole-sequence driver.

struct SlidingRun {
  Strategy strategy = Strategy::kSwo;
  NominalState estimates;  // frames as marginalized, then the final window
  std::vector<StepReport> steps;
  std::set<MeasurementId> converted_ids;
  bool converged = true;
  int iterations = 0;
};

/// Feeds a sequence through one strategy: W frames first, then one per step.
inline SlidingRun run_sliding(Strategy strategy, const Sequence& seq, const SlidingOptions& opts) {
  seq.validate();
  opts.policy.validate();
  std::map<FrameId, std::vector<const Observation*>> by_frame;
  for (const auto& o : seq.observations) by_frame[o.frame].push_back(&o);
  for (auto& [_, v] : by_frame) {
    std::sort(v.begin(), v.end(),
              [](const Observation* a, const Observation* b) { return a->id < b->id; });
  }

  SlidingRun run;
  run.strategy = strategy;
  WindowState w;
  std::set<LandmarkId> promoted;
  std::set<LandmarkId> retired;
  std::map<LandmarkId, std::vector<const Observation*>> pending;

  std::vector<FrameId> frames;
  for (const auto& [id, _] : seq.frames) frames.push_back(id);
  std::size_t next = 0;
  int step_index = 0;
  while (next < frames.size()) {
    const std::size_t take =
        step_index == 0 ? std::min<std::size_t>(opts.policy.window_length, frames.size()) : 1;
    WindowInput in;
    for (std::size_t k = next; k < next + take; ++k) {
      const FrameId f = frames[k];
      in.frames.emplace(f, seq.frames.at(f));
      if (f == seq.first_frame()) in.prior_information[frame_state(f)] = seq.gauge_information;
    }
    const auto pose_of = [&](FrameId f) -> const Pose& {
      const auto it = in.frames.find(f);
      return it != in.frames.end() ? it->second : w.active.frames.at(f);
    };
    for (std::size_t k = next; k < next + take; ++k) {
      for (const Observation* o : by_frame[frames[k]]) {
        if (retired.contains(o->landmark)) continue;
        if (promoted.contains(o->landmark)) {
          in.measurements.push_back(make_stereo_source(*o, seq.camera));
          continue;
        }
        auto& track = pending[o->landmark];
        track.push_back(o);
        if (static_cast<int>(track.size()) < opts.policy.min_track) continue;
        std::optional<Landmark> lm;
        if (const auto it = seq.landmarks.find(o->landmark); it != seq.landmarks.end()) {
          lm = it->second;
        } else if (const auto p = triangulate_midpoint(pose_of(track[0]->frame), track[0]->z,
                                                       pose_of(track[1]->frame), track[1]->z,
                                                       seq.camera)) {
          lm = Landmark{*p};
        }
        if (!lm) continue;
        in.landmarks.emplace(o->landmark, *lm);
        for (const Observation* t : track) {
          in.measurements.push_back(make_stereo_source(*t, seq.camera));
        }
        promoted.insert(o->landmark);
        pending.erase(o->landmark);
      }
    }
    next += take;

    StepResult r = window_step(strategy, w, in, opts);
    r.report.step = step_index++;
    for (const auto& s : r.report.marginalized) {
      if (s.kind == StateKind::kFrame) {
        run.estimates.frames[s.id] = r.report.estimates.frames.at(s.id);
      } else {
        run.estimates.landmarks[s.id] = r.report.estimates.landmarks.at(s.id);
        retired.insert(s.id);
      }
    }
    for (auto it = pending.begin(); it != pending.end();) {
      std::erase_if(it->second,
                    [&](const Observation* o) { return !r.state.active.frames.contains(o->frame); });
      it = it->second.empty() ? pending.erase(it) : std::next(it);
    }
    run.iterations += r.report.iterations;
    run.converged = run.converged && r.report.converged;
    w = std::move(r.state);
    run.steps.push_back(std::move(r.report));
  }
  for (const auto& [id, pose] : w.active.frames) run.estimates.frames[id] = pose;
  for (const auto& [id, lm] : w.active.landmarks) run.estimates.landmarks[id] = lm;
  run.converted_ids = w.converted_ids;
  return run;
}

}  // namespace swfusion

#endif  // SWFUSION_SLIDING_HPP
