#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "fixtures.hpp"
#include "swfusion/sequence.hpp"
#include "swfusion/sim.hpp"
#include "swfusion/sliding.hpp"

using namespace swfusion;

namespace {

WindowState toy_window() {
  WindowState w;
  for (FrameId f : {0, 1, 2}) w.active.frames.emplace(f, Pose{});
  for (LandmarkId l : {10, 11, 12}) w.active.landmarks.emplace(l, Landmark{});
  w.observers[10] = {0};
  w.observers[11] = {0, 1};
  w.observers[12] = {2};
  return w;
}

MeasurementSource touching(MeasurementId id, std::vector<StateId> touched) {
  MeasurementSource m;
  m.id = id;
  m.touched = std::move(touched);
  return m;
}

SlidingOptions with_window(int w, bool record = false) {
  SlidingOptions o;
  o.policy.window_length = w;
  o.record_priors = record;
  return o;
}

std::vector<Strategy> all_strategies() {
  return {Strategy::kSwo, Strategy::kSwf, Strategy::kSwfSa, Strategy::kSwfFej, Strategy::kSwfFull};
}

}  // namespace

TEST(SelectMarginal, OldestFrameAndItsExclusiveLandmarks) {
  const WindowState w = toy_window();
  SlidePolicy p;
  p.window_length = 3;
  const auto xm = select_marginal(w, p);
  const std::vector<StateId> expect{frame_state(0), landmark_state(10)};
  EXPECT_EQ(xm, expect);
}

TEST(SelectMarginal, MsckfAlsoDropsLandmarksUnseenByTheNewestFrame) {
  const WindowState w = toy_window();
  SlidePolicy p;
  p.window_length = 3;
  p.selector = MarginalSelector::kMsckf;
  const auto xm = select_marginal(w, p);
  const std::vector<StateId> expect{frame_state(0), landmark_state(10), landmark_state(11)};
  EXPECT_EQ(xm, expect);
}

TEST(SelectMarginal, NothingLeavesBeforeTheWindowFills) {
  SlidePolicy p;
  p.window_length = 4;
  EXPECT_TRUE(select_marginal(toy_window(), p).empty());
}

TEST(PartitionMeasurements, MatchesBruteForce) {
  WindowState w = toy_window();
  std::mt19937_64 rng(17);
  const std::vector<StateId> states{frame_state(0),     frame_state(1),      frame_state(2),
                                    landmark_state(10), landmark_state(11), landmark_state(12)};
  for (MeasurementId id = 0; id < 40; ++id) {
    w.live.push_back(touching(id, {states[rng() % 3], states[3 + rng() % 3]}));
  }
  const std::vector<StateId> xm{frame_state(0), landmark_state(10)};
  const auto [zm, zr] = partition_measurements(w, xm);
  EXPECT_EQ(zm.size() + zr.size(), w.live.size());
  std::size_t im = 0;
  std::size_t ir = 0;
  for (const auto& m : w.live) {
    bool hit = false;
    for (const auto& s : m.touched) {
      for (const auto& x : xm) hit = hit || s == x;
    }
    if (hit) {
      ASSERT_LT(im, zm.size());
      EXPECT_EQ(zm[im++].id, m.id);
    } else {
      ASSERT_LT(ir, zr.size());
      EXPECT_EQ(zr[ir++].id, m.id);
    }
  }
}

TEST(FejCorrection, InformationShiftIsNTimesDeltaX) {
  std::mt19937_64 rng(3);
  const ErrorLayout layout({frame_state(1), landmark_state(4)});
  const MatrixXd n = fixtures::random_spd(9, rng);
  const auto prior = GaussianBelief::information(layout, n, fixtures::random_vector(9, rng));
  NominalState anchors;
  anchors.frames.emplace(1, circle_pose(10.0, 0.2));
  anchors.landmarks.emplace(4, Landmark{{1.0, 2.0, 3.0}});
  NominalState current = anchors;
  current.frames.at(1).position += Eigen::Vector3d(0.01, -0.02, 0.03);
  current.frames.at(1).attitude =
      so3_exp(Eigen::Vector3d(0.001, 0.002, -0.003)) * current.frames.at(1).attitude;
  current.landmarks.at(4).point += Eigen::Vector3d(-0.1, 0.0, 0.2);

  const ErrorState dx = fej_compensation(prior, anchors, current);
  VectorXd expect_dx(9);
  expect_dx << 0.01, -0.02, 0.03, 0.001, 0.002, -0.003, -0.1, 0.0, 0.2;
  EXPECT_LT((dx.values - expect_dx).norm(), 1e-12);
  EXPECT_LT((fej_information_correction(prior, dx) - n * expect_dx).norm(), 1e-12);
}

TEST(FejCorrection, MissingAnchorIsReported) {
  const ErrorLayout layout({landmark_state(4)});
  const auto prior = GaussianBelief::information(layout, MatrixXd::Identity(3, 3), VectorXd::Zero(3));
  NominalState current;
  current.landmarks.emplace(4, Landmark{});
  try {
    fej_compensation(prior, NominalState{}, current);
    FAIL() << "expected MissingAnchor";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingAnchor);
  }
  WindowState w;
  w.active = current;
  w.prior = prior;
  EXPECT_THROW(w.check_invariants(), Error);
}

TEST(SlidingRun, SingleWindowEqualsBatch) {
  const Trial t = generate_trial(fixtures::small_world(6), 0);
  const Sequence seq = t.sequence();
  const auto batch = batch_solve(build_full_problem(seq));
  ASSERT_TRUE(batch.converged);
  for (Strategy s : all_strategies()) {
    const SlidingRun run = run_sliding(s, seq, with_window(20));
    ASSERT_EQ(run.steps.size(), 1u) << to_string(s);
    EXPECT_TRUE(run.converged) << to_string(s);
    EXPECT_TRUE(run.converted_ids.empty());
    EXPECT_LT(fixtures::max_frame_gap(run.estimates, batch.estimates), 1e-9) << to_string(s);
    EXPECT_LT(fixtures::max_landmark_gap(run.estimates, batch.estimates), 1e-9) << to_string(s);
  }
}

TEST(SwoStep, TransferredPriorIsTheMarginalOfZm) {
  const Trial t = generate_trial(fixtures::small_world(3), 0);
  const Sequence seq = t.sequence();
  // Two frames in a full window with unit static priors keep the system well conditioned.
  WindowInput in;
  for (FrameId f : {0, 1}) in.frames.emplace(f, seq.frames.at(f));
  std::map<LandmarkId, int> count;
  for (const auto& o : seq.observations) {
    if (o.frame <= 1) count[o.landmark] += 1;
  }
  for (const auto& o : seq.observations) {
    if (o.frame > 1 || count[o.landmark] < 1) continue;
    in.landmarks.emplace(o.landmark, seq.landmarks.at(o.landmark));
    in.measurements.push_back(make_stereo_source(o, seq.camera));
  }
  for (const auto& [f, _] : in.frames) in.prior_information[frame_state(f)] = 1.0;
  for (const auto& [l, _] : in.landmarks) in.prior_information[landmark_state(l)] = 1.0;

  const SlidingOptions opts = with_window(2, true);
  const StepResult r = swo_step(WindowState{}, in, opts);
  ASSERT_TRUE(r.report.converged);
  ASSERT_TRUE(r.report.transferred.has_value());
  const auto& xm = r.report.marginalized;
  ASSERT_FALSE(xm.empty());
  EXPECT_EQ(xm.front(), frame_state(0));

  // Oracle: normal matrix of the unit priors plus Z_m at the converged window,
  // then the kept block of its dense inverse.
  const NominalState& x = r.report.estimates;
  const ErrorLayout layout = ErrorLayout::from_state(x);
  const int n = layout.dim();
  MatrixXd info = MatrixXd::Identity(n, n);
  const std::set<StateId> marked(xm.begin(), xm.end());
  std::vector<MeasurementId> zm_ids;
  for (const auto& m : in.measurements) {
    if (!marked.contains(m.touched[0]) && !marked.contains(m.touched[1])) continue;
    zm_ids.push_back(m.id);
    const MeasurementBlock b = m.linearize(x);
    const std::vector<int> idx = layout.indices(b.touched);
    const MatrixXd jtwj = b.jacobian.transpose() * b.weight * b.jacobian;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < idx.size(); ++j) info(idx[i], idx[j]) += jtwj(i, j);
    }
  }
  const GaussianBelief& prior = *r.report.transferred;
  const std::vector<int> kept = layout.indices(prior.layout.states());
  const MatrixXd cov = info.inverse();
  MatrixXd cov_b(kept.size(), kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (std::size_t j = 0; j < kept.size(); ++j) cov_b(i, j) = cov(kept[i], kept[j]);
  }
  const MatrixXd expect = cov_b.inverse();
  EXPECT_LT((prior.matrix - expect).norm(), 1e-6 * expect.norm());

  // Ledger: exactly Z_m moved into the prior and left the live set.
  EXPECT_EQ(r.report.converted, zm_ids);
  for (const auto& m : r.state.live) {
    EXPECT_FALSE(r.state.converted_ids.contains(m.id));
  }
  EXPECT_EQ(r.state.converted_ids.size(), zm_ids.size());
  for (const auto& s : prior.layout.states()) EXPECT_TRUE(r.state.fej_anchors.contains(s));
}

TEST(SlidingRun, ConvertedMeasurementsAreNeverReused) {
  const Trial t = generate_trial(fixtures::small_world(9), 0);
  const Sequence seq = t.sequence();
  const SlidingRun run = run_sliding(Strategy::kSwo, seq, with_window(5));
  ASSERT_EQ(run.steps.size(), 5u);
  std::set<MeasurementId> seen;
  std::map<MeasurementId, const Observation*> by_id;
  for (const auto& o : seq.observations) by_id[o.id] = &o;
  for (const auto& step : run.steps) {
    const std::set<StateId> marked(step.marginalized.begin(), step.marginalized.end());
    for (MeasurementId id : step.converted) {
      EXPECT_TRUE(seen.insert(id).second) << "measurement " << id << " converted twice";
      const Observation* o = by_id.at(id);
      EXPECT_TRUE(marked.contains(frame_state(o->frame)) ||
                  marked.contains(landmark_state(o->landmark)));
    }
  }
  EXPECT_EQ(seen, run.converted_ids);
  EXPECT_EQ(run.estimates.frames.size(), seq.frames.size());

  // Re-inserting a converted measurement into a window is rejected.
  WindowState w;
  w.converted_ids = {*seen.begin()};
  WindowInput in;
  in.frames.emplace(by_id.at(*seen.begin())->frame, Pose{});
  in.landmarks.emplace(by_id.at(*seen.begin())->landmark, Landmark{});
  in.measurements.push_back(make_stereo_source(*by_id.at(*seen.begin()), seq.camera));
  try {
    window_step(Strategy::kSwo, w, in, with_window(5));
    FAIL() << "expected ValidationError";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidationError);
  }
}

TEST(SlidingRun, OptimizerAndTwoStepFilterTransferEquivalentPriors) {
  const Trial t = generate_trial(fixtures::small_world(8), 0);
  const Sequence seq = t.sequence();
  const auto opts = with_window(5, true);
  const SlidingRun swo = run_sliding(Strategy::kSwo, seq, opts);
  const SlidingRun sa = run_sliding(Strategy::kSwfSa, seq, opts);
  ASSERT_EQ(swo.steps.size(), sa.steps.size());
  int compared = 0;
  for (std::size_t k = 0; k < swo.steps.size(); ++k) {
    const auto& a = swo.steps[k].transferred;
    const auto& b = sa.steps[k].transferred;
    ASSERT_EQ(a.has_value(), b.has_value());
    if (!a) continue;
    ASSERT_EQ(a->layout, b->layout);
    const GaussianBelief ac = a->to_covariance();
    EXPECT_LT((ac.matrix - b->matrix).norm(), 1e-9 * b->matrix.norm()) << "step " << k;
    EXPECT_LT((ac.vector - b->vector).norm(), 1e-9 * (1.0 + b->vector.norm())) << "step " << k;
    ++compared;
  }
  EXPECT_GT(compared, 0);
  EXPECT_LT(fixtures::max_frame_gap(swo.estimates, sa.estimates), 1e-9);
}

TEST(SlidingRun, EveryStrategyCoversEveryFrame) {
  const Trial t = generate_trial(fixtures::small_world(8), 0);
  const Sequence seq = t.sequence();
  for (Strategy s : all_strategies()) {
    const SlidingRun run = run_sliding(s, seq, with_window(5));
    EXPECT_EQ(run.estimates.frames.size(), seq.frames.size()) << to_string(s);
    EXPECT_EQ(run.steps.size(), 4u) << to_string(s);
    for (const auto& step : run.steps) {
      ASSERT_FALSE(step.marginalized.empty());
      EXPECT_EQ(step.marginalized.front(), frame_state(step.step)) << to_string(s);
    }
  }
}

TEST(SlidePolicy, RejectsDegenerateSettings) {
  SlidePolicy p;
  p.window_length = 1;
  EXPECT_THROW(p.validate(), Error);
  p.window_length = 5;
  p.min_track = 1;
  EXPECT_THROW(p.validate(), Error);
}
