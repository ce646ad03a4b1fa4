#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "swfusion/metrics.hpp"

using namespace swfusion;

namespace {

NominalState two_frames(const Eigen::Vector3d& p1, const Eigen::Quaterniond& q1) {
  NominalState x;
  x.frames.emplace(0, Pose{});
  x.frames.emplace(1, Pose{p1, q1});
  return x;
}

}  // namespace

TEST(Discrepancy, TranslationAndAttitudeByHand) {
  const NominalState a = two_frames({3.0, 4.0, 0.0}, Eigen::Quaterniond::Identity());
  const Eigen::Quaterniond quarter(Eigen::AngleAxisd(std::numbers::pi / 2, Eigen::Vector3d::UnitZ()));
  const NominalState b = two_frames({0.0, 0.0, 0.0}, quarter);
  const auto d = discrepancy(a, b);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_DOUBLE_EQ(d.translation[0], 0.0);
  EXPECT_DOUBLE_EQ(d.translation[1], 5.0);
  EXPECT_NEAR(d.attitude_deg[1], 90.0, 1e-12);
}

TEST(Discrepancy, MismatchedFramesAreRejected) {
  NominalState a = two_frames({0, 0, 0}, Eigen::Quaterniond::Identity());
  NominalState b = a;
  b.frames.erase(1);
  b.frames.emplace(2, Pose{});
  try {
    discrepancy(a, b);
    FAIL() << "expected FrameMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFrameMismatch);
  }
  b.frames.erase(2);
  EXPECT_THROW(discrepancy(a, b), Error);
}

TEST(Rmse, ExampleByHand) {
  // Errors 0 and 2 m: sqrt((0 + 4) / 2) = sqrt(2).
  const NominalState est = two_frames({2.0, 0.0, 0.0}, Eigen::Quaterniond::Identity());
  const NominalState truth = two_frames({0.0, 0.0, 0.0}, Eigen::Quaterniond::Identity());
  const Rmse r = rmse(est, truth);
  EXPECT_DOUBLE_EQ(r.position, std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(r.attitude_deg, 0.0);
}

TEST(LogStats, ExampleByHand) {
  const auto s = log10_stats(std::vector<double>{1.0, 10.0, 100.0});
  EXPECT_DOUBLE_EQ(s.max, 2.0);
  EXPECT_NEAR(s.mean, std::log10(37.0), 1e-15);
  EXPECT_NEAR(s.mean_log, 1.0, 1e-15);
}

TEST(LogStats, ZeroIsClamped) {
  const auto s = log10_stats(std::vector<double>{0.0, 0.0});
  EXPECT_DOUBLE_EQ(s.max, -16.0);
  EXPECT_DOUBLE_EQ(s.mean, -16.0);
  EXPECT_DOUBLE_EQ(s.mean_log, -16.0);
  EXPECT_THROW(log10_stats(std::vector<double>{}), Error);
}

TEST(AveragedDiscrepancy, MeanPerFrame) {
  DiscrepancySeries a{{0, 1}, {1.0, 2.0}, {0.0, 4.0}};
  DiscrepancySeries b{{0, 1}, {3.0, 4.0}, {2.0, 0.0}};
  const auto m = averaged_discrepancy({a, b});
  EXPECT_EQ(m.frames, (std::vector<FrameId>{0, 1}));
  EXPECT_DOUBLE_EQ(m.translation[0], 2.0);
  EXPECT_DOUBLE_EQ(m.translation[1], 3.0);
  EXPECT_DOUBLE_EQ(m.attitude_deg[0], 1.0);
  EXPECT_DOUBLE_EQ(m.attitude_deg[1], 2.0);
  DiscrepancySeries c{{0, 2}, {0.0, 0.0}, {0.0, 0.0}};
  EXPECT_THROW(averaged_discrepancy({a, c}), Error);
}
