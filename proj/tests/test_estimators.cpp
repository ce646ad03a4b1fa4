#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "fixtures.hpp"
#include "swfusion/estimators.hpp"
#include "swfusion/sequence.hpp"

using namespace swfusion;

namespace {

MeasurementBlock random_block(std::mt19937_64& rng, const std::vector<StateId>& touched, int rows) {
  int cols = 0;
  for (const auto& s : touched) cols += s.dim();
  MeasurementBlock b;
  b.touched = touched;
  b.jacobian = MatrixXd(rows, cols);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) b.jacobian(i, j) = g(rng);
  }
  b.residual = fixtures::random_vector(rows, rng);
  b.weight = fixtures::random_spd(rows, rng);
  b.z = b.residual;
  return b;
}

// Three landmarks tied by absolute and relative position measurements.
struct LinearWorld {
  EstimationProblem problem;
  VectorXd oracle;  // stacked landmark positions solving the normal equations directly
};

LinearWorld linear_world() {
  LinearWorld w;
  auto& p = w.problem;
  p.initial.landmarks = {{0, Landmark{{0.1, 0.2, 0.3}}},
                         {1, Landmark{{1.2, -0.1, 0.0}}},
                         {2, Landmark{{2.5, 0.4, -0.2}}}};
  p.prior = GaussianBelief::information(p.layout(), MatrixXd::Identity(9, 9), VectorXd::Zero(9));
  p.measurements.push_back(fixtures::point_source(0, 0, {0.0, 0.0, 0.0}, 4.0));
  p.measurements.push_back(fixtures::offset_source(1, 0, 1, {1.0, 0.0, 0.0}, 9.0));
  p.measurements.push_back(fixtures::offset_source(2, 1, 2, {1.0, 0.5, 0.0}, 9.0));
  p.measurements.push_back(fixtures::point_source(3, 2, {2.0, 0.4, 0.1}, 1.0));

  // Least squares in absolute coordinates: Σ w‖A_k p − z_k‖² + ‖p − p0‖².
  MatrixXd a = MatrixXd::Identity(9, 9);
  VectorXd rhs(9);
  for (int i = 0; i < 3; ++i) rhs.segment<3>(3 * i) = p.initial.landmarks.at(i).point;
  const auto add = [&](const MatrixXd& sel, const Eigen::Vector3d& z, double info) {
    a += info * sel.transpose() * sel;
    rhs += info * sel.transpose() * z;
  };
  MatrixXd s0 = MatrixXd::Zero(3, 9);
  s0.block<3, 3>(0, 0).setIdentity();
  add(s0, {0.0, 0.0, 0.0}, 4.0);
  MatrixXd s01 = MatrixXd::Zero(3, 9);
  s01.block<3, 3>(0, 0) = -Eigen::Matrix3d::Identity();
  s01.block<3, 3>(0, 3).setIdentity();
  add(s01, {1.0, 0.0, 0.0}, 9.0);
  MatrixXd s12 = MatrixXd::Zero(3, 9);
  s12.block<3, 3>(0, 3) = -Eigen::Matrix3d::Identity();
  s12.block<3, 3>(0, 6).setIdentity();
  add(s12, {1.0, 0.5, 0.0}, 9.0);
  MatrixXd s2 = MatrixXd::Zero(3, 9);
  s2.block<3, 3>(0, 6).setIdentity();
  add(s2, {2.0, 0.4, 0.1}, 1.0);
  w.oracle = a.ldlt().solve(rhs);
  return w;
}

VectorXd stacked_landmarks(const NominalState& x) {
  VectorXd v(3 * x.landmarks.size());
  int i = 0;
  for (const auto& [_, lm] : x.landmarks) v.segment<3>(3 * i++) = lm.point;
  return v;
}

}  // namespace

TEST(SingleUpdate, ScalarExampleByHand) {
  // Prior variance 4, unit-variance measurement of the first axis with residual 2:
  // posterior variance 4·1/(4+1) = 0.8, mean 4/(4+1)·2 = 1.6.
  const ErrorLayout layout({landmark_state(0)});
  const auto prior = GaussianBelief::covariance(layout, 4.0 * MatrixXd::Identity(3, 3),
                                                VectorXd::Zero(3));
  MeasurementBlock m;
  m.touched = {landmark_state(0)};
  m.jacobian = MatrixXd::Zero(1, 3);
  m.jacobian(0, 0) = 1.0;
  m.residual = VectorXd::Constant(1, 2.0);
  m.weight = MatrixXd::Identity(1, 1);

  const auto kfr = kfr_update(prior, m);
  EXPECT_NEAR(kfr.matrix(0, 0), 0.8, 1e-15);
  EXPECT_NEAR(kfr.vector(0), 1.6, 1e-15);
  EXPECT_NEAR(kfr.matrix(1, 1), 4.0, 1e-15);

  const auto ifr = ifr_update(prior, m);
  EXPECT_NEAR(ifr.matrix(0, 0), 1.25, 1e-15);
  EXPECT_NEAR(ifr.vector(0), 2.0, 1e-15);
  EXPECT_NEAR(ifr.mean()(0), 1.6, 1e-15);
}

TEST(SingleUpdate, InformationAndKalmanFormsAreDual) {
  std::mt19937_64 rng(21);
  const ErrorLayout layout({frame_state(0), landmark_state(0), landmark_state(1)});
  for (int trial = 0; trial < 5; ++trial) {
    const auto prior = GaussianBelief::covariance(layout, fixtures::random_spd(12, rng),
                                                  fixtures::random_vector(12, rng));
    auto m = random_block(rng, {landmark_state(1), frame_state(0)}, 4);
    const auto ifr = ifr_update(prior, m).to_covariance();
    const auto kfr = kfr_update(prior, m);
    EXPECT_LT((ifr.matrix - kfr.matrix).norm(), 1e-9 * kfr.matrix.norm());
    EXPECT_LT((ifr.vector - kfr.vector).norm(), 1e-9 * (1.0 + kfr.vector.norm()));
  }
}

TEST(SingleUpdate, InformationUpdatesAreAdditive) {
  std::mt19937_64 rng(8);
  const ErrorLayout layout({landmark_state(0), landmark_state(1)});
  auto belief = GaussianBelief::information(layout, MatrixXd::Identity(6, 6), VectorXd::Zero(6));
  MatrixXd expected = MatrixXd::Identity(6, 6);
  VectorXd expected_b = VectorXd::Zero(6);
  for (int k = 0; k < 3; ++k) {
    const auto m = random_block(rng, {landmark_state(k % 2)}, 2);
    belief = ifr_update(belief, m);
    const int o = 3 * (k % 2);
    expected.block(o, o, 3, 3) += m.jacobian.transpose() * m.weight * m.jacobian;
    expected_b.segment(o, 3) += m.jacobian.transpose() * m.weight * m.residual;
  }
  EXPECT_LT((belief.matrix - expected).norm(), 1e-12);
  EXPECT_LT((belief.vector - expected_b).norm(), 1e-12);
}

TEST(SingleUpdate, SingularInnovationIsReported) {
  const ErrorLayout layout({landmark_state(0)});
  const auto prior = GaussianBelief::covariance(layout, MatrixXd::Identity(3, 3), VectorXd::Zero(3));
  MeasurementBlock m;
  m.touched = {landmark_state(0)};
  m.jacobian = MatrixXd::Identity(3, 3);
  m.residual = VectorXd::Zero(3);
  m.weight = MatrixXd::Zero(3, 3);
  try {
    kfr_update(prior, m);
    FAIL() << "expected SingularBlock";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kSingularBlock);
  }
}

TEST(BatchSolve, LinearProblemConvergesAfterOneStep) {
  const LinearWorld w = linear_world();
  const auto r = batch_solve(w.problem);
  ASSERT_TRUE(r.converged);
  EXPECT_LE(r.iterations, 2);
  ASSERT_FALSE(r.step_norms.empty());
  if (r.iterations == 2) {
    EXPECT_LT(r.step_norms[1], 1e-12);
  }
  EXPECT_LT((stacked_landmarks(r.estimates) - w.oracle).norm(), 1e-12);
}

TEST(SequentialPass, LinearProblemMatchesOracle) {
  const LinearWorld w = linear_world();
  const auto r = sequential_pass(w.problem);
  ASSERT_TRUE(r.converged);
  EXPECT_LE(r.iterations, 2);
  EXPECT_LT((stacked_landmarks(r.estimates) - w.oracle).norm(), 1e-12);
  // The posterior covariance is the inverse of the stacked normal matrix.
  const auto b = batch_solve(w.problem);
  const MatrixXd p = b.posterior.to_covariance().matrix;
  EXPECT_LT((r.posterior.matrix - p).norm(), 1e-10 * p.norm());
}

TEST(BatchSolve, MatchesStackedDenseOracle) {
  const Trial t = generate_trial(fixtures::small_world(4), 0);
  const Sequence seq = t.sequence();
  const EstimationProblem p = build_full_problem(seq);
  const auto r = batch_solve(p);
  ASSERT_TRUE(r.converged);

  // Independent Gauss-Newton: whitened stacked system with finite-difference
  // Jacobians solved by Householder QR.
  const ErrorLayout layout = p.layout();
  const int n = layout.dim();
  const MatrixXd prior_sqrt = p.prior.matrix.llt().matrixU();
  std::vector<Observation> obs;
  for (const auto& o : seq.observations) {
    if (p.initial.landmarks.contains(o.landmark)) obs.push_back(o);
  }
  const double sqrt_w = 1.0 / seq.camera.pixel_sigma;
  const auto predict = [&](const NominalState& x, const Observation& o) {
    return project_camera_point(to_camera(x.frames.at(o.frame), x.landmarks.at(o.landmark)),
                                seq.camera);
  };
  NominalState x = p.initial;
  for (int it = 0; it < 50; ++it) {
    const int rows = n + 4 * static_cast<int>(obs.size());
    MatrixXd a = MatrixXd::Zero(rows, n);
    VectorXd l(rows);
    a.topRows(n) = prior_sqrt;
    l.head(n) = prior_sqrt * difference(x, p.initial, layout).values;
    for (std::size_t k = 0; k < obs.size(); ++k) {
      const auto& o = obs[k];
      const int row = n + 4 * static_cast<int>(k);
      l.segment<4>(row) = sqrt_w * (o.z - predict(x, o));
      for (const StateId s : {frame_state(o.frame), landmark_state(o.landmark)}) {
        const int off = layout.offset(s);
        for (int c = 0; c < s.dim(); ++c) {
          VectorXd d = VectorXd::Zero(n);
          d(off + c) = 1e-6;
          const auto fp = predict(compensate(x, ErrorState{layout, d}), o);
          const auto fm = predict(compensate(x, ErrorState{layout, -d}), o);
          a.block<4, 1>(row, off + c) = sqrt_w * (fp - fm) / 2e-6;
        }
      }
    }
    const VectorXd delta = a.householderQr().solve(l);
    x = compensate(x, ErrorState{layout, delta});
    if (delta.lpNorm<Eigen::Infinity>() <= 1e-10) break;
  }
  EXPECT_LT(fixtures::max_frame_gap(r.estimates, x), 1e-6);
  EXPECT_LT(fixtures::max_landmark_gap(r.estimates, x), 1e-6);
}

TEST(BatchSolve, RecoversNoiselessTruth) {
  SimConfig c = fixtures::small_world(5);
  c.camera.pixel_sigma = 0.0;
  const Trial t = generate_trial(c, 0);
  const auto r = batch_solve(build_full_problem(t.sequence()));
  ASSERT_TRUE(r.converged);
  EXPECT_LT(fixtures::max_frame_gap(r.estimates, t.truth), 1e-6);
  EXPECT_LT(fixtures::max_landmark_gap(r.estimates, t.truth), 1e-6);
}

TEST(SequentialPass, MatchesBatchOnStereoProblem) {
  const Trial t = generate_trial(fixtures::small_world(6), 0);
  const EstimationProblem p = build_full_problem(t.sequence());
  const auto b = batch_solve(p);
  const auto s = sequential_pass(p);
  ASSERT_TRUE(b.converged);
  ASSERT_TRUE(s.converged);
  EXPECT_FALSE(s.inconsistent);
  EXPECT_LT(fixtures::max_frame_gap(b.estimates, s.estimates), 1e-9);
  EXPECT_LT(fixtures::max_landmark_gap(b.estimates, s.estimates), 1e-9);
}

TEST(SequentialNaive, DepartsFromBatchAndIsFlagged) {
  const Trial t = generate_trial(fixtures::small_world(6), 0);
  const EstimationProblem p = build_full_problem(t.sequence());
  const auto b = batch_solve(p);
  const auto n = sequential_naive(p);
  EXPECT_TRUE(n.inconsistent);
  EXPECT_GT(fixtures::max_frame_gap(b.estimates, n.estimates), 1e-9);
}

TEST(InconsistencyEffect, MatchesPerturbedSolve) {
  // With H X̂ = y and square invertible H + ΔH, (H + ΔH)(X̂ + ΔX) = y.
  std::mt19937_64 rng(13);
  const MatrixXd h = fixtures::random_spd(5, rng);
  const VectorXd x = fixtures::random_vector(5, rng);
  MatrixXd dh = 0.01 * fixtures::random_spd(5, rng);
  const VectorXd y = h * x;
  const VectorXd shifted = (h + dh).fullPivLu().solve(y);
  EXPECT_LT((inconsistency_effect(h, dh, x) - (shifted - x)).norm(), 1e-10);
  EXPECT_THROW(inconsistency_effect(h, dh.leftCols(3), x), Error);
}

TEST(EstimationProblem, RejectsUnknownStatesAndDuplicateIds) {
  LinearWorld w = linear_world();
  auto p = w.problem;
  p.measurements.push_back(fixtures::point_source(9, 42, {0, 0, 0}));
  try {
    batch_solve(p);
    FAIL() << "expected ValidationError";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidationError);
    EXPECT_NE(e.detail().find("42"), std::string::npos);
  }
  auto q = w.problem;
  q.measurements.push_back(fixtures::point_source(0, 1, {0, 0, 0}));
  EXPECT_THROW(batch_solve(q), Error);
  auto r = w.problem;
  r.prior = GaussianBelief::information(ErrorLayout({landmark_state(0)}), MatrixXd::Identity(3, 3),
                                        VectorXd::Zero(3));
  try {
    batch_solve(r);
    FAIL() << "expected DimensionMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimensionMismatch);
  }
}
