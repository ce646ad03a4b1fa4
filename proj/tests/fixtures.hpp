#ifndef SWFUSION_TESTS_FIXTURES_HPP
#define SWFUSION_TESTS_FIXTURES_HPP

#include <Eigen/Dense>

#include <numbers>
#include <random>

#include "swfusion/estimators.hpp"
#include "swfusion/sequence.hpp"
#include "swfusion/sim.hpp"

namespace fixtures {

using namespace swfusion;

inline MatrixXd random_spd(int n, std::mt19937_64& rng, double ridge = 1.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXd a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a(i, j) = g(rng);
  }
  return a * a.transpose() + ridge * MatrixXd::Identity(n, n);
}

inline VectorXd random_vector(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

/// Small circle world: a handful of frames seeing a dense box of landmarks.
inline SimConfig small_world(int n_frames = 6, int n_trials = 1) {
  SimConfig c;
  c.n_frames = n_frames;
  c.angular_step = 12.0 * std::numbers::pi / 180.0;
  c.n_landmarks = 300;
  c.region_min = {-12.0, -12.0, -2.0};
  c.region_max = {12.0, 12.0, 2.0};
  c.n_trials = n_trials;
  return c;
}

/// Direct position measurement of one landmark: z = l + n.
inline MeasurementSource point_source(MeasurementId id, LandmarkId lm, const Eigen::Vector3d& z,
                                      double information = 1.0) {
  MeasurementSource src;
  src.id = id;
  src.touched = {landmark_state(lm)};
  src.linearize = [=](const NominalState& x) {
    MeasurementBlock b;
    b.id = id;
    b.touched = {landmark_state(lm)};
    b.z = z;
    b.residual = z - x.landmarks.at(lm).point;
    b.jacobian = -MatrixXd::Identity(3, 3);
    b.weight = information * MatrixXd::Identity(3, 3);
    return b;
  };
  return src;
}

/// Relative position of two landmarks: z = l_b − l_a + n.
inline MeasurementSource offset_source(MeasurementId id, LandmarkId a, LandmarkId b,
                                       const Eigen::Vector3d& z, double information = 1.0) {
  MeasurementSource src;
  src.id = id;
  src.touched = {landmark_state(a), landmark_state(b)};
  src.linearize = [=](const NominalState& x) {
    MeasurementBlock blk;
    blk.id = id;
    blk.touched = {landmark_state(a), landmark_state(b)};
    blk.z = z;
    blk.residual = z - (x.landmarks.at(b).point - x.landmarks.at(a).point);
    blk.jacobian.resize(3, 6);
    blk.jacobian << MatrixXd::Identity(3, 3), -MatrixXd::Identity(3, 3);
    blk.weight = information * MatrixXd::Identity(3, 3);
    return blk;
  };
  return src;
}

inline double max_frame_gap(const NominalState& a, const NominalState& b) {
  double m = 0.0;
  for (const auto& [id, pa] : a.frames) {
    const Pose& pb = b.frames.at(id);
    m = std::max(m, difference(pa, pb).lpNorm<Eigen::Infinity>());
  }
  return m;
}

inline double max_landmark_gap(const NominalState& a, const NominalState& b) {
  double m = 0.0;
  for (const auto& [id, la] : a.landmarks) {
    m = std::max(m, (la.point - b.landmarks.at(id).point).lpNorm<Eigen::Infinity>());
  }
  return m;
}

}  // namespace fixtures

#endif  // SWFUSION_TESTS_FIXTURES_HPP
