#ifndef SWFUSION_PROBLEM_HPP
#define SWFUSION_PROBLEM_HPP

// State manifold, error-state convention, dynamic model and the stereo
// measurement model.
//
// Error convention: δx = x_lin − x_true, so an estimate is recovered as
// x̂ = x_lin ⊟ δx̂. Positions and points subtract; attitudes use a world-frame
// small-angle vector applied on the left, R̂ = Exp(−δθ) R.
// Per-frame error block: [δp (m), δθ (rad)]; per-landmark block: [δl (m)].

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "swfusion/blockmat.hpp"
#include "swfusion/error.hpp"

namespace swfusion {

using FrameId = std::int64_t;
using LandmarkId = std::int64_t;
using MeasurementId = std::int64_t;

inline constexpr int kPoseDim = 6;
inline constexpr int kPointDim = 3;
inline constexpr int kStereoDim = 4;

// ---------------------------------------------------------------------------
// SO(3) helpers on unit quaternions.

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

inline Eigen::Quaterniond so3_exp(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  const double half = 0.5 * theta;
  // sin(θ/2)/θ with a Taylor branch near zero.
  const double k = theta < 1e-8 ? 0.5 - theta * theta / 48.0 : std::sin(half) / theta;
  Eigen::Quaterniond q(std::cos(half), k * w.x(), k * w.y(), k * w.z());
  q.normalize();
  return q;
}

inline Eigen::Vector3d so3_log(const Eigen::Quaterniond& q_in) {
  Eigen::Quaterniond q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Eigen::Vector3d v = q.vec();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v / q.w();
  const double theta = 2.0 * std::atan2(s, q.w());
  return theta / s * v;
}

/// Rotation angle (rad) of a unit quaternion, stable for tiny angles.
inline double rotation_angle(const Eigen::Quaterniond& q) {
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
}

// ---------------------------------------------------------------------------
// Domain types.

/// Camera pose: world-frame position and world-from-camera attitude.
struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond attitude = Eigen::Quaterniond::Identity();

  Eigen::Matrix3d rotation() const { return attitude.toRotationMatrix(); }
  bool operator==(const Pose& o) const {
    return position == o.position && attitude.coeffs() == o.attitude.coeffs();
  }
};

struct Landmark {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  bool operator==(const Landmark& o) const { return point == o.point; }
};

enum class StateKind : std::uint8_t { kFrame = 0, kLandmark = 1 };

struct StateId {
  StateKind kind = StateKind::kFrame;
  std::int64_t id = 0;

  auto operator<=>(const StateId&) const = default;
  int dim() const { return kind == StateKind::kFrame ? kPoseDim : kPointDim; }
  std::string str() const {
    return (kind == StateKind::kFrame ? "frame:" : "landmark:") + std::to_string(id);
  }
};

inline StateId frame_state(FrameId id) { return {StateKind::kFrame, id}; }
inline StateId landmark_state(LandmarkId id) { return {StateKind::kLandmark, id}; }

/// Linearization point: ordered frames and landmarks.
struct NominalState {
  std::map<FrameId, Pose> frames;
  std::map<LandmarkId, Landmark> landmarks;

  bool contains(StateId s) const {
    return s.kind == StateKind::kFrame ? frames.contains(s.id) : landmarks.contains(s.id);
  }
  bool operator==(const NominalState&) const = default;

  /// Copy of the listed states only.
  NominalState subset(const std::vector<StateId>& ids) const {
    NominalState out;
    for (const auto& s : ids) {
      if (s.kind == StateKind::kFrame) {
        out.frames.emplace(s.id, frames.at(s.id));
      } else {
        out.landmarks.emplace(s.id, landmarks.at(s.id));
      }
    }
    return out;
  }
};

/// Ordered map from state id to a contiguous offset in the stacked error vector.
class ErrorLayout {
 public:
  ErrorLayout() = default;
  explicit ErrorLayout(std::vector<StateId> order) : order_(std::move(order)) {
    offsets_.reserve(order_.size());
    for (const auto& s : order_) {
      if (index_.contains(s)) {
        throw Error(ErrorKind::kDimensionMismatch, "duplicate state " + s.str() + " in layout");
      }
      index_.emplace(s, static_cast<int>(offsets_.size()));
      offsets_.push_back(dim_);
      dim_ += s.dim();
    }
  }

  /// Frames in ascending id, then landmarks in ascending id.
  static ErrorLayout from_state(const NominalState& x) {
    std::vector<StateId> order;
    order.reserve(x.frames.size() + x.landmarks.size());
    for (const auto& [id, _] : x.frames) order.push_back(frame_state(id));
    for (const auto& [id, _] : x.landmarks) order.push_back(landmark_state(id));
    return ErrorLayout(std::move(order));
  }

  int dim() const { return dim_; }
  std::size_t size() const { return order_.size(); }
  const std::vector<StateId>& states() const { return order_; }
  bool contains(StateId s) const { return index_.contains(s); }

  int offset(StateId s) const {
    const auto it = index_.find(s);
    if (it == index_.end()) {
      throw Error(ErrorKind::kDimensionMismatch, "state " + s.str() + " not in layout");
    }
    return offsets_[it->second];
  }

  /// Scalar indices of the listed states, in list order.
  std::vector<int> indices(const std::vector<StateId>& ids) const {
    std::vector<int> idx;
    for (const auto& s : ids) {
      const int o = offset(s);
      for (int k = 0; k < s.dim(); ++k) idx.push_back(o + k);
    }
    return idx;
  }

  ErrorLayout without(const std::set<StateId>& removed) const {
    std::vector<StateId> kept;
    for (const auto& s : order_) {
      if (!removed.contains(s)) kept.push_back(s);
    }
    return ErrorLayout(std::move(kept));
  }

  bool operator==(const ErrorLayout& o) const { return order_ == o.order_; }

 private:
  std::vector<StateId> order_;
  std::vector<int> offsets_;
  std::map<StateId, int> index_;
  int dim_ = 0;
};

struct ErrorState {
  ErrorLayout layout;
  VectorXd values;

  static ErrorState zero(const ErrorLayout& layout) {
    return {layout, VectorXd::Zero(layout.dim())};
  }
};

// ---------------------------------------------------------------------------
// Manifold operations.

namespace detail {
inline void check_layout_covers(const NominalState& x, const ErrorLayout& layout) {
  for (const auto& s : layout.states()) {
    if (!x.contains(s)) {
      throw Error(ErrorKind::kDimensionMismatch, "state " + s.str() + " missing from nominal");
    }
  }
}
}  // namespace detail

inline Pose compensate(const Pose& pose, const Eigen::Ref<const VectorXd>& delta) {
  Pose out;
  out.position = pose.position - delta.head<3>();
  out.attitude = (so3_exp(-delta.segment<3>(3)) * pose.attitude).normalized();
  return out;
}

/// Folds an estimated error back into the linearization point: x̂ = x ⊟ δx̂.
/// States absent from the layout are copied unchanged.
inline NominalState compensate(const NominalState& x, const ErrorState& delta) {
  if (delta.values.size() != delta.layout.dim()) {
    throw Error(ErrorKind::kDimensionMismatch, "error vector does not match its layout");
  }
  detail::check_layout_covers(x, delta.layout);
  NominalState out = x;
  for (const auto& s : delta.layout.states()) {
    const int o = delta.layout.offset(s);
    if (s.kind == StateKind::kFrame) {
      auto& pose = out.frames.at(s.id);
      pose = compensate(pose, delta.values.segment<kPoseDim>(o));
    } else {
      out.landmarks.at(s.id).point -= delta.values.segment<kPointDim>(o);
    }
  }
  return out;
}

/// Error-state difference of `a` relative to `b`: the δ with compensate(a, δ) == b.
inline Eigen::Matrix<double, 6, 1> difference(const Pose& a, const Pose& b) {
  Eigen::Matrix<double, 6, 1> d;
  d.head<3>() = a.position - b.position;
  d.tail<3>() = so3_log(a.attitude * b.attitude.conjugate());
  return d;
}

inline ErrorState difference(const NominalState& a, const NominalState& b,
                             const ErrorLayout& layout) {
  detail::check_layout_covers(a, layout);
  detail::check_layout_covers(b, layout);
  ErrorState d = ErrorState::zero(layout);
  for (const auto& s : layout.states()) {
    const int o = layout.offset(s);
    if (s.kind == StateKind::kFrame) {
      d.values.segment<kPoseDim>(o) = difference(a.frames.at(s.id), b.frames.at(s.id));
    } else {
      d.values.segment<kPointDim>(o) = a.landmarks.at(s.id).point - b.landmarks.at(s.id).point;
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Gaussian beliefs over an error state.

enum class BeliefForm { kInformation, kCovariance };

/// Information form holds (N, b) with N δx̂ = b; covariance form holds (P, δx̂).
struct GaussianBelief {
  BeliefForm form = BeliefForm::kCovariance;
  ErrorLayout layout;
  MatrixXd matrix;
  VectorXd vector;

  static GaussianBelief information(ErrorLayout layout, MatrixXd n, VectorXd b) {
    check(layout, n, b);
    return {BeliefForm::kInformation, std::move(layout), symmetrize(n), std::move(b)};
  }
  static GaussianBelief covariance(ErrorLayout layout, MatrixXd p, VectorXd mean) {
    check(layout, p, mean);
    return {BeliefForm::kCovariance, std::move(layout), symmetrize(p), std::move(mean)};
  }

  int dim() const { return layout.dim(); }

  GaussianBelief to_information() const {
    if (form == BeliefForm::kInformation) return *this;
    const SpdFactor f(matrix, "covariance", 0.0);
    const MatrixXd n = f.inverse();
    return information(layout, n, n * vector);
  }

  GaussianBelief to_covariance() const {
    if (form == BeliefForm::kCovariance) return *this;
    const SpdFactor f(matrix, "information", 0.0);
    return covariance(layout, f.inverse(), f.solve_vector(vector));
  }

  VectorXd mean() const {
    if (form == BeliefForm::kCovariance) return vector;
    return SpdFactor(matrix, "information", 0.0).solve_vector(vector);
  }

 private:
  static void check(const ErrorLayout& layout, const MatrixXd& m, const VectorXd& v) {
    if (m.rows() != layout.dim() || m.cols() != layout.dim() || v.size() != layout.dim()) {
      throw Error(ErrorKind::kDimensionMismatch, "belief dimensions do not match layout");
    }
  }
};

/// Isotropic per-kind information prior, e.g. the ε-prior for unconstrained states.
inline GaussianBelief diagonal_information_prior(const ErrorLayout& layout,
                                                 const std::map<StateId, double>& overrides,
                                                 double default_information) {
  VectorXd diag(layout.dim());
  for (const auto& s : layout.states()) {
    const auto it = overrides.find(s);
    diag.segment(layout.offset(s), s.dim()).setConstant(
        it == overrides.end() ? default_information : it->second);
  }
  return GaussianBelief::information(layout, diag.asDiagonal().toDenseMatrix(),
                                     VectorXd::Zero(layout.dim()));
}

// ---------------------------------------------------------------------------
// Dynamic model.

struct DynamicModel {
  MatrixXd transition;  // Φ
  MatrixXd process_noise;  // Q

  static DynamicModel identity(int dim) {
    return {MatrixXd::Identity(dim, dim), MatrixXd::Zero(dim, dim)};
  }
};

/// P ← Φ P Φᵀ + Q, δx ← Φ δx.
inline GaussianBelief propagate(const GaussianBelief& belief, const DynamicModel& dyn) {
  if (belief.form != BeliefForm::kCovariance) {
    throw Error(ErrorKind::kDimensionMismatch, "propagate expects a covariance-form belief");
  }
  const auto n = belief.dim();
  if (dyn.transition.rows() != n || dyn.transition.cols() != n ||
      dyn.process_noise.rows() != n || dyn.process_noise.cols() != n) {
    throw Error(ErrorKind::kDimensionMismatch, "dynamic model does not match belief");
  }
  return GaussianBelief::covariance(
      belief.layout,
      dyn.transition * belief.matrix * dyn.transition.transpose() + dyn.process_noise,
      dyn.transition * belief.vector);
}

// ---------------------------------------------------------------------------
// Stereo measurement model.

struct StereoCamera {
  double fx = 460.0;
  double fy = 460.0;
  double cx = 320.0;
  double cy = 240.0;
  double baseline = 0.5;  // m, right camera sits at +x in the left camera frame
  int width = 640;
  int height = 480;
  double pixel_sigma = 2.0;

  static constexpr double kMinDepth = 0.1;

  void validate() const {
    if (!(fx > 0 && fy > 0 && cx > 0 && cy > 0 && baseline > 0 && width > 0 && height > 0 &&
          pixel_sigma > 0)) {
      throw Error(ErrorKind::kValidationError, "stereo camera parameters must be positive");
    }
  }
  bool operator==(const StereoCamera&) const = default;
};

using PixelPair = Eigen::Vector4d;  // (u_left, v_left, u_right, v_right)

struct Observation {
  MeasurementId id = 0;
  FrameId frame = 0;
  LandmarkId landmark = 0;
  PixelPair z = PixelPair::Zero();
  bool operator==(const Observation& o) const {
    return id == o.id && frame == o.frame && landmark == o.landmark && z == o.z;
  }
};

inline Eigen::Vector3d to_camera(const Pose& pose, const Landmark& lm) {
  return pose.rotation().transpose() * (lm.point - pose.position);
}

inline PixelPair project_camera_point(const Eigen::Vector3d& pc, const StereoCamera& cam) {
  const double inv_z = 1.0 / pc.z();
  PixelPair z;
  z << cam.fx * pc.x() * inv_z + cam.cx, cam.fy * pc.y() * inv_z + cam.cy,
      cam.fx * (pc.x() - cam.baseline) * inv_z + cam.cx, cam.fy * pc.y() * inv_z + cam.cy;
  return z;
}

/// Left and right pinhole projection, or nullopt when behind the camera or out of frame.
inline std::optional<PixelPair> stereo_observe(const Pose& pose, const Landmark& lm,
                                               const StereoCamera& cam) {
  const Eigen::Vector3d pc = to_camera(pose, lm);
  if (!(pc.z() > StereoCamera::kMinDepth)) return std::nullopt;
  const PixelPair z = project_camera_point(pc, cam);
  const auto inside = [&](double u, double v) {
    return u >= 0.0 && u < cam.width && v >= 0.0 && v < cam.height;
  };
  if (!inside(z(0), z(1)) || !inside(z(2), z(3))) return std::nullopt;
  return z;
}

/// One linearized measurement: l ≈ h δx + n with n ~ N(0, Λ⁻¹).
/// Jacobian columns follow `touched` in order, each state contributing its dim.
struct MeasurementBlock {
  MeasurementId id = 0;
  std::vector<StateId> touched;
  VectorXd residual;
  MatrixXd jacobian;
  MatrixXd weight;
  VectorXd z;
};

/// Re-linearizable measurement: identity plus a closure over the raw observation.
struct MeasurementSource {
  MeasurementId id = 0;
  std::vector<StateId> touched;
  std::function<MeasurementBlock(const NominalState&)> linearize;
};

/// Jacobians of the stereo projection under the error convention above.
/// Columns 0..5 are the pose error [δp, δθ], 6..8 the landmark error.
inline MeasurementBlock stereo_measurement_block(const Pose& pose_lin, const Landmark& lm_lin,
                                                 const PixelPair& z, const StereoCamera& cam,
                                                 MeasurementId id, FrameId frame,
                                                 LandmarkId landmark) {
  const Eigen::Matrix3d rt = pose_lin.rotation().transpose();
  const Eigen::Vector3d rel = lm_lin.point - pose_lin.position;
  const Eigen::Vector3d pc = rt * rel;
  if (!(pc.z() > StereoCamera::kMinDepth)) {
    throw Error(ErrorKind::kNotVisible, "landmark " + std::to_string(landmark) +
                                            " behind frame " + std::to_string(frame));
  }
  const double inv_z = 1.0 / pc.z();
  const double inv_z2 = inv_z * inv_z;
  Eigen::Matrix<double, 4, 3> d_proj;
  d_proj << cam.fx * inv_z, 0.0, -cam.fx * pc.x() * inv_z2,  //
      0.0, cam.fy * inv_z, -cam.fy * pc.y() * inv_z2,         //
      cam.fx * inv_z, 0.0, -cam.fx * (pc.x() - cam.baseline) * inv_z2,  //
      0.0, cam.fy * inv_z, -cam.fy * pc.y() * inv_z2;

  // pc(δ) = Rᵀ Exp(δθ) (l − δl − p + δp)
  Eigen::Matrix<double, 4, 9> h;
  h.block<4, 3>(0, 0) = d_proj * rt;
  h.block<4, 3>(0, 3) = -d_proj * rt * skew(rel);
  h.block<4, 3>(0, 6) = -d_proj * rt;

  MeasurementBlock blk;
  blk.id = id;
  blk.touched = {frame_state(frame), landmark_state(landmark)};
  blk.z = z;
  blk.residual = z - project_camera_point(pc, cam);
  blk.jacobian = h;
  const double w = 1.0 / (cam.pixel_sigma * cam.pixel_sigma);
  blk.weight = w * MatrixXd::Identity(kStereoDim, kStereoDim);
  return blk;
}

inline MeasurementSource make_stereo_source(const Observation& obs, const StereoCamera& cam) {
  MeasurementSource src;
  src.id = obs.id;
  src.touched = {frame_state(obs.frame), landmark_state(obs.landmark)};
  src.linearize = [obs, cam](const NominalState& x) {
    return stereo_measurement_block(x.frames.at(obs.frame), x.landmarks.at(obs.landmark), obs.z,
                                    cam, obs.id, obs.frame, obs.landmark);
  };
  return src;
}

/// Back-projects a left pixel with its stereo disparity into the world.
inline std::optional<Eigen::Vector3d> stereo_backproject(const Pose& pose, const PixelPair& z,
                                                         const StereoCamera& cam) {
  const double disparity = z(0) - z(2);
  if (!(disparity > 1e-6)) return std::nullopt;
  const double depth = cam.fx * cam.baseline / disparity;
  const Eigen::Vector3d pc((z(0) - cam.cx) / cam.fx * depth, (z(1) - cam.cy) / cam.fy * depth,
                           depth);
  return pose.rotation() * pc + pose.position;
}

/// Midpoint of the closest approach between the left-camera rays of two observations.
inline std::optional<Eigen::Vector3d> triangulate_midpoint(const Pose& a, const PixelPair& za,
                                                           const Pose& b, const PixelPair& zb,
                                                           const StereoCamera& cam) {
  const auto ray = [&](const Pose& p, const PixelPair& z) {
    const Eigen::Vector3d d((z(0) - cam.cx) / cam.fx, (z(1) - cam.cy) / cam.fy, 1.0);
    return Eigen::Vector3d(p.rotation() * d.normalized());
  };
  const Eigen::Vector3d da = ray(a, za);
  const Eigen::Vector3d db = ray(b, zb);
  const Eigen::Vector3d w0 = a.position - b.position;
  const double bdot = da.dot(db);
  const double denom = 1.0 - bdot * bdot;
  if (denom < 1e-10) {
    // Near-parallel rays: fall back to stereo depth.
    return stereo_backproject(a, za, cam);
  }
  const double s = (bdot * db.dot(w0) - da.dot(w0)) / denom;
  const double t = (db.dot(w0) - bdot * da.dot(w0)) / denom;
  if (s <= 0.0 || t <= 0.0) return stereo_backproject(a, za, cam);
  return 0.5 * ((a.position + s * da) + (b.position + t * db));
}

}  // namespace swfusion

#endif  // SWFUSION_PROBLEM_HPP
