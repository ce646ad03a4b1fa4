#ifndef SWFUSION_ESTIMATORS_HPP
#define SWFUSION_ESTIMATORS_HPP

// Full-state estimators: single-block information/Kalman updates, batch
// Gauss-Newton, the consistent sequential pass and the naive per-measurement
// iterated filter that breaks Jacobian consistency.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <type_traits>
#include <string>
#include <vector>

#include "swfusion/blockmat.hpp"
#include "swfusion/error.hpp"
#include "swfusion/problem.hpp"

namespace swfusion {

/// Information assigned to states nothing else constrains.
inline constexpr double kUnconstrainedInformation = 1e-8;

struct SolverOptions {
  double tolerance = 1e-8;  // on ‖δx̂‖∞
  int max_iterations = 50;
  double cost_increase_tolerance = 1e-9;  // relative
};

struct EstimatorReport {
  NominalState estimates;
  GaussianBelief posterior;
  int iterations = 0;
  bool converged = false;
  bool inconsistent = false;
  std::vector<double> step_norms;
  std::vector<double> costs;
  std::string failure;
};

struct EstimationProblem {
  NominalState initial;
  GaussianBelief prior;  // over ErrorLayout::from_state(initial)
  std::vector<MeasurementSource> measurements;
  std::optional<DynamicModel> dynamic;

  ErrorLayout layout() const { return ErrorLayout::from_state(initial); }

  void validate() const {
    if (!(prior.layout == layout())) {
      throw Error(ErrorKind::kDimensionMismatch, "prior layout does not cover the initial state");
    }
    std::vector<MeasurementId> ids;
    ids.reserve(measurements.size());
    for (const auto& m : measurements) {
      ids.push_back(m.id);
      for (const auto& s : m.touched) {
        if (!initial.contains(s)) {
          throw Error(ErrorKind::kValidationError,
                      "measurement " + std::to_string(m.id) + " touches unknown " + s.str());
        }
      }
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
      throw Error(ErrorKind::kValidationError, "measurement ids are not unique");
    }
  }
};

// ---------------------------------------------------------------------------
// Dense accumulation and the in-place Kalman update.

namespace detail {

inline std::vector<int> block_indices(const MeasurementBlock& blk, const ErrorLayout& layout) {
  std::vector<int> idx = layout.indices(blk.touched);
  if (static_cast<Eigen::Index>(idx.size()) != blk.jacobian.cols()) {
    throw Error(ErrorKind::kDimensionMismatch,
                "jacobian columns of measurement " + std::to_string(blk.id) +
                    " do not match its touched states");
  }
  return idx;
}

inline void accumulate(MatrixXd& n, VectorXd& b, const MeasurementBlock& blk,
                       const ErrorLayout& layout) {
  const auto idx = block_indices(blk, layout);
  const MatrixXd ht_w = blk.jacobian.transpose() * blk.weight;
  const MatrixXd hh = ht_w * blk.jacobian;
  const VectorXd hl = ht_w * blk.residual;
  for (std::size_t j = 0; j < idx.size(); ++j) {
    b(idx[j]) += hl(j);
    for (std::size_t i = 0; i < idx.size(); ++i) n(idx[i], idx[j]) += hh(i, j);
  }
}

inline double weighted_square(const MeasurementBlock& blk) {
  return blk.residual.dot(blk.weight * blk.residual);
}

}  // namespace detail

/// Covariance-form state updated one measurement block at a time. P is held
/// as U·diag(d)·Uᵀ with U unit upper triangular; each block is whitened and
/// applied row by row, which avoids the cancellation of P − K h P when prior
/// variances are many orders above posterior ones.
///
/// Internally states are ordered as: states absent from `touch_order` first,
/// then by first appearance in it. An update then only visits factor columns
/// from its earliest touched state on; untouched later columns stay zero.
class KalmanSweep {
 public:
  KalmanSweep(const MatrixXd& covariance, const VectorXd& mean, const ErrorLayout& layout,
              const std::vector<StateId>& touch_order = {})
      : layout_(&layout) {
    const auto n = covariance.rows();
    if (n != layout.dim() || covariance.cols() != n || mean.size() != n) {
      throw Error(ErrorKind::kDimensionMismatch, "Kalman state does not match layout");
    }
    build_permutation(layout, touch_order);
    MatrixXd p(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) p(i, j) = covariance(perm_[i], perm_[j]);
    }
    x_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) x_(i) = mean(perm_[i]);
    // Reversed Cholesky gives an upper-triangular square root.
    const Eigen::LLT<MatrixXd> llt(MatrixXd(symmetrize(p).reverse()));
    if (n > 0 && llt.info() != Eigen::Success) {
      throw Error(ErrorKind::kSingularBlock, "prior covariance is not positive definite");
    }
    u_ = MatrixXd(llt.matrixL()).reverse();
    d_ = u_.diagonal().array().square();
    for (Eigen::Index j = 0; j < n; ++j) u_.col(j).head(j + 1) /= u_(j, j);
    work_.resize(n);
    gain_.resize(n);
    f_.resize(n);
  }

  /// δx ← δx + K(l − hδx), P ← (I − Kh)P with K = P hᵀ(Λ⁻¹ + h P hᵀ)⁻¹.
  void update(const MeasurementBlock& blk) {
    const auto idx = detail::block_indices(blk, *layout_);
    std::vector<int> local(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) local[k] = inverse_[idx[k]];
    const Eigen::LLT<MatrixXd> w(blk.weight);
    if (w.info() != Eigen::Success) {
      throw Error(ErrorKind::kSingularBlock,
                  "weight of measurement " + std::to_string(blk.id) + " is not invertible");
    }
    // Cᵀ with Λ = C Cᵀ turns the block into unit-variance rows.
    const MatrixXd ct = w.matrixU();
    const MatrixXd h = ct * blk.jacobian;
    const VectorXd l = ct * blk.residual;
    for (Eigen::Index r = 0; r < h.rows(); ++r) {
      if (!scalar_update(h.row(r).transpose(), local, l(r))) {
        throw Error(ErrorKind::kSingularBlock, "innovation covariance of measurement " +
                                                   std::to_string(blk.id) + " is singular");
      }
    }
  }

  /// Mean after `blk` starting from `seed`, leaving this sweep untouched.
  VectorXd mean_after(const MeasurementBlock& blk, const VectorXd& seed) const {
    KalmanSweep trial = *this;
    trial.set_mean(seed);
    trial.update(blk);
    return trial.mean();
  }

  VectorXd mean() const {
    VectorXd out(x_.size());
    for (Eigen::Index i = 0; i < x_.size(); ++i) out(perm_[i]) = x_(i);
    return out;
  }

  void set_mean(const VectorXd& mean) {
    if (mean.size() != x_.size()) {
      throw Error(ErrorKind::kDimensionMismatch, "Kalman mean does not match layout");
    }
    for (Eigen::Index i = 0; i < x_.size(); ++i) x_(i) = mean(perm_[i]);
  }

  MatrixXd covariance() const {
    const MatrixXd ud = u_ * d_.asDiagonal();
    const MatrixXd p = ud * u_.transpose();
    const auto n = p.rows();
    MatrixXd out(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) out(perm_[i], perm_[j]) = p(i, j);
    }
    return symmetrize(out);
  }

 private:
  void build_permutation(const ErrorLayout& layout, const std::vector<StateId>& touch_order) {
    std::vector<StateId> order;
    std::set<StateId> seen;
    std::vector<StateId> touched;
    for (const auto& s : touch_order) {
      if (layout.contains(s) && seen.insert(s).second) touched.push_back(s);
    }
    for (const auto& s : layout.states()) {
      if (!seen.contains(s)) order.push_back(s);
    }
    order.insert(order.end(), touched.begin(), touched.end());
    perm_ = layout.indices(order);
    inverse_.assign(perm_.size(), 0);
    for (std::size_t i = 0; i < perm_.size(); ++i) inverse_[perm_[i]] = static_cast<int>(i);
  }

  // Rank-one update for one whitened row a (nonzero at local indices) with unit noise.
  bool scalar_update(const VectorXd& a, const std::vector<int>& local, double y) {
    const Eigen::Index n = d_.size();
    double innovation = y;
    int j0 = static_cast<int>(n);
    for (std::size_t k = 0; k < local.size(); ++k) {
      innovation -= a(k) * x_(local[k]);
      j0 = std::min(j0, local[k]);
    }
    // f = Uᵀ a, zero before the first touched index.
    auto f = f_.tail(n - j0);
    f.setZero();
    for (std::size_t k = 0; k < local.size(); ++k) {
      const int i = local[k];
      f.tail(n - i).noalias() += a(k) * u_.row(i).tail(n - i).transpose();
    }
    gain_.setZero();
    double alpha = 1.0;
    for (Eigen::Index j = j0; j < n; ++j) {
      const double fj = f_(j);
      if (fj == 0.0) continue;
      const double vj = d_(j) * fj;
      const double prev = alpha;
      alpha += fj * vj;
      if (!(alpha > 0.0) || !std::isfinite(alpha)) return false;
      d_(j) *= prev / alpha;
      const double lambda = -fj / prev;
      auto col = u_.col(j).head(j);
      auto old = work_.head(j);
      old = col;
      col.noalias() += lambda * gain_.head(j);
      gain_.head(j).noalias() += vj * old;
      gain_(j) = vj;
    }
    x_.noalias() += (innovation / alpha) * gain_;
    return true;
  }

  MatrixXd u_;
  VectorXd d_;
  VectorXd x_;  // internal order
  VectorXd work_;
  VectorXd gain_;
  VectorXd f_;
  std::vector<int> perm_;     // internal index -> layout index
  std::vector<int> inverse_;  // layout index -> internal index
  const ErrorLayout* layout_;
};

/// States in first-touch order of a measurement sequence.
template <typename Range>
std::vector<StateId> touch_order(const Range& measurements) {
  std::vector<StateId> out;
  for (const auto& m : measurements) {
    if constexpr (std::is_pointer_v<std::decay_t<decltype(m)>>) {
      out.insert(out.end(), m->touched.begin(), m->touched.end());
    } else {
      out.insert(out.end(), m.touched.begin(), m.touched.end());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Single-block dual updates.

/// Information-filter update; returns the posterior in information form.
inline GaussianBelief ifr_update(const GaussianBelief& prior, const MeasurementBlock& m) {
  GaussianBelief post = prior.to_information();
  detail::accumulate(post.matrix, post.vector, m, post.layout);
  post.matrix = symmetrize(post.matrix);
  return post;
}

/// Kalman-filter update; returns the posterior in covariance form.
inline GaussianBelief kfr_update(const GaussianBelief& prior, const MeasurementBlock& m) {
  const GaussianBelief cov = prior.to_covariance();
  KalmanSweep sweep(cov.matrix, cov.vector, cov.layout);
  sweep.update(m);
  return GaussianBelief::covariance(cov.layout, sweep.covariance(), sweep.mean());
}

// ---------------------------------------------------------------------------
// Full-state solvers.

namespace detail {

struct PreparedProblem {
  ErrorLayout layout;
  NominalState prior_mean;
  MatrixXd prior_information;
  std::vector<const MeasurementSource*> order;  // ascending id
};

inline PreparedProblem prepare(const EstimationProblem& p) {
  p.validate();
  PreparedProblem out;
  out.layout = p.layout();
  GaussianBelief prior = p.prior;
  if (p.dynamic) prior = propagate(prior.to_covariance(), *p.dynamic);
  const GaussianBelief info = prior.to_information();
  out.prior_information = info.matrix;
  out.prior_mean = compensate(p.initial, ErrorState{out.layout, prior.mean()});
  for (const auto& m : p.measurements) out.order.push_back(&m);
  std::sort(out.order.begin(), out.order.end(),
            [](const MeasurementSource* a, const MeasurementSource* b) { return a->id < b->id; });
  return out;
}

inline double prior_cost(const PreparedProblem& pp, const VectorXd& residual) {
  return residual.dot(pp.prior_information * residual);
}

// Bookkeeping shared by the iterated solvers: monotone cost check and stopping.
enum class IterationVerdict { kContinue, kConverged, kCostIncreased };

inline IterationVerdict record_iteration(EstimatorReport& r, double cost, double step,
                                         const SolverOptions& opts) {
  if (!r.costs.empty()) {
    const double prev = r.costs.back();
    if (cost > prev + opts.cost_increase_tolerance * std::max(prev, 1.0)) {
      r.costs.push_back(cost);
      r.failure = "NotConverged: weighted residual cost increased";
      return IterationVerdict::kCostIncreased;
    }
  }
  r.costs.push_back(cost);
  r.step_norms.push_back(step);
  r.iterations += 1;
  return step <= opts.tolerance ? IterationVerdict::kConverged : IterationVerdict::kContinue;
}

}  // namespace detail

/// Batch Gauss-Newton: every block is re-linearized at the same state each iteration.
inline EstimatorReport batch_solve(const EstimationProblem& problem, const SolverOptions& opts = {}) {
  const auto pp = detail::prepare(problem);
  const int n = pp.layout.dim();
  EstimatorReport report;
  NominalState x = problem.initial;

  for (int it = 0; it < opts.max_iterations; ++it) {
    const VectorXd prior_residual = difference(x, pp.prior_mean, pp.layout).values;
    MatrixXd info = pp.prior_information;
    VectorXd rhs = pp.prior_information * prior_residual;
    double cost = detail::prior_cost(pp, prior_residual);
    for (const auto* m : pp.order) {
      const MeasurementBlock blk = m->linearize(x);
      detail::accumulate(info, rhs, blk, pp.layout);
      cost += detail::weighted_square(blk);
    }
    info = symmetrize(info);
    if (!report.costs.empty() &&
        cost > report.costs.back() + opts.cost_increase_tolerance * std::max(report.costs.back(), 1.0)) {
      report.failure = "NotConverged: weighted residual cost increased";
      report.costs.push_back(cost);
      break;
    }
    VectorXd step;
    try {
      step = SpdFactor(info, "normal matrix").solve_vector(rhs);
    } catch (const Error& e) {
      throw Error(ErrorKind::kSingularSystem, e.detail());
    }
    const double step_norm = step.lpNorm<Eigen::Infinity>();
    report.costs.push_back(cost);
    report.step_norms.push_back(step_norm);
    report.iterations += 1;
    report.posterior = GaussianBelief::information(pp.layout, info, rhs);
    report.estimates = compensate(x, ErrorState{pp.layout, step});
    x = report.estimates;
    if (step_norm <= opts.tolerance) {
      report.converged = true;
      break;
    }
  }
  if (report.iterations == 0) {
    report.estimates = x;
    report.posterior = GaussianBelief::information(pp.layout, pp.prior_information,
                                                   VectorXd::Zero(n));
  }
  if (!report.converged && report.failure.empty()) {
    report.failure = "NotConverged: iteration limit reached";
  }
  return report;
}

/// Consistent sequential update: each outer iteration sweeps every measurement
/// through the Kalman update with Jacobians at one fixed state, then
/// compensates once.
inline EstimatorReport sequential_pass(const EstimationProblem& problem,
                                       const SolverOptions& opts = {}) {
  const auto pp = detail::prepare(problem);
  const MatrixXd prior_cov = SpdFactor(pp.prior_information, "prior information", 0.0).inverse();
  EstimatorReport report;
  NominalState x = problem.initial;
  std::optional<KalmanSweep> last;

  for (int it = 0; it < opts.max_iterations; ++it) {
    const VectorXd prior_residual = difference(x, pp.prior_mean, pp.layout).values;
    double cost = detail::prior_cost(pp, prior_residual);
    KalmanSweep sweep(prior_cov, prior_residual, pp.layout, touch_order(pp.order));
    for (const auto* m : pp.order) {
      const MeasurementBlock blk = m->linearize(x);
      cost += detail::weighted_square(blk);
      sweep.update(blk);
    }
    if (!report.costs.empty() &&
        cost > report.costs.back() + opts.cost_increase_tolerance * std::max(report.costs.back(), 1.0)) {
      report.failure = "NotConverged: weighted residual cost increased";
      report.costs.push_back(cost);
      break;
    }
    const VectorXd& step = sweep.mean();
    const double step_norm = step.lpNorm<Eigen::Infinity>();
    report.costs.push_back(cost);
    report.step_norms.push_back(step_norm);
    report.iterations += 1;
    report.estimates = compensate(x, ErrorState{pp.layout, step});
    x = report.estimates;
    last = std::move(sweep);
    if (step_norm <= opts.tolerance) {
      report.converged = true;
      break;
    }
  }
  if (last) {
    report.posterior = GaussianBelief::covariance(pp.layout, last->covariance(), last->mean());
  } else {
    report.estimates = x;
    report.posterior = GaussianBelief::covariance(pp.layout, prior_cov,
                                                  VectorXd::Zero(pp.layout.dim()));
  }
  if (!report.converged && report.failure.empty()) {
    report.failure = "NotConverged: iteration limit reached";
  }
  return report;
}

/// Per-measurement iterated filter: iterates each measurement to convergence and
/// compensates before moving on, so later Jacobians see different
/// linearization points than earlier ones. Kept as the inconsistent reference.
inline EstimatorReport sequential_naive(const EstimationProblem& problem,
                                        const SolverOptions& opts = {}) {
  const auto pp = detail::prepare(problem);
  MatrixXd prior_cov = SpdFactor(pp.prior_information, "prior information", 0.0).inverse();
  EstimatorReport report;
  report.inconsistent = true;
  report.converged = true;

  NominalState estimate = pp.prior_mean;
  KalmanSweep filter(prior_cov, VectorXd::Zero(pp.layout.dim()), pp.layout,
                     touch_order(pp.order));
  for (const auto* m : pp.order) {
    NominalState x = estimate;
    bool inner_converged = false;
    MeasurementBlock last;
    VectorXd last_prior_residual;
    for (int it = 0; it < opts.max_iterations; ++it) {
      const VectorXd prior_residual = difference(x, estimate, pp.layout).values;
      MeasurementBlock blk = m->linearize(x);
      const VectorXd step = filter.mean_after(blk, prior_residual);
      const double step_norm = step.lpNorm<Eigen::Infinity>();
      report.iterations += 1;
      last = std::move(blk);
      last_prior_residual = prior_residual;
      x = compensate(x, ErrorState{pp.layout, step});
      if (step_norm <= opts.tolerance) {
        inner_converged = true;
        break;
      }
    }
    report.step_norms.push_back(0.0);
    if (!inner_converged) report.converged = false;
    // Commit the covariance with the final linearization of this measurement.
    filter.set_mean(VectorXd::Zero(pp.layout.dim()));
    filter.update(last);
    estimate = x;
  }
  report.estimates = estimate;
  report.posterior = GaussianBelief::covariance(pp.layout, filter.covariance(),
                                                VectorXd::Zero(pp.layout.dim()));
  if (!report.converged) report.failure = "NotConverged: inner iteration limit reached";
  return report;
}

/// Estimate shift caused by a Jacobian perturbation: ΔX = −(H + ΔH)⁺ ΔH X̂.
inline VectorXd inconsistency_effect(const MatrixXd& h, const MatrixXd& dh, const VectorXd& x) {
  if (h.rows() != dh.rows() || h.cols() != dh.cols() || h.cols() != x.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "inconsistency_effect operands are not conformal");
  }
  const Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(h + dh);
  return -cod.pseudoInverse() * (dh * x);
}

}  // namespace swfusion

#endif  // SWFUSION_ESTIMATORS_HPP
