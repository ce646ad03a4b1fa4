#ifndef SWFUSION_BLOCKMAT_HPP
#define SWFUSION_BLOCKMAT_HPP

// Two-block symmetric matrix algebra: Schur-complement marginalization and
// the explicit block inverse. Everything here is a pure function of its inputs.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swfusion/error.hpp"

namespace swfusion {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Relative pivot threshold below which a symmetric block counts as singular.
inline constexpr double kConditioningThreshold = 1e-12;

inline MatrixXd symmetrize(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

/// Cholesky factor of an SPD matrix, rejecting blocks whose squared pivots span
/// more than 1/threshold. A threshold of 0 only requires positive definiteness.
class SpdFactor {
 public:
  SpdFactor(const MatrixXd& a, std::string_view what = "block",
            double threshold = kConditioningThreshold)
      : llt_(a) {
    if (a.rows() != a.cols()) {
      throw Error(ErrorKind::kDimensionMismatch, std::string(what) + " is not square");
    }
    if (a.rows() == 0) return;
    if (llt_.info() != Eigen::Success) {
      throw Error(ErrorKind::kSingularBlock, std::string(what) + " is not positive definite");
    }
    const VectorXd pivots = llt_.matrixLLT().diagonal().array().square();
    if (!(pivots.minCoeff() > threshold * pivots.maxCoeff())) {
      throw Error(ErrorKind::kSingularBlock,
                  std::string(what) + " fails the conditioning threshold (pivot ratio " +
                      std::to_string(pivots.minCoeff() / pivots.maxCoeff()) + ")");
    }
  }

  template <typename Rhs>
  MatrixXd solve(const Eigen::MatrixBase<Rhs>& rhs) const {
    return llt_.solve(rhs);
  }
  VectorXd solve_vector(const VectorXd& rhs) const { return llt_.solve(rhs); }

  MatrixXd inverse() const {
    const auto n = llt_.matrixLLT().rows();
    return symmetrize(llt_.solve(MatrixXd::Identity(n, n)));
  }

  const Eigen::LLT<MatrixXd>& llt() const { return llt_; }

 private:
  Eigen::LLT<MatrixXd> llt_;
};

/// Symmetric matrix split as [mm, mb; mbᵀ, bb] with an optional right-hand side.
struct PartitionedSpd {
  MatrixXd mm;
  MatrixXd mb;
  MatrixXd bb;
  std::optional<VectorXd> b_m;
  std::optional<VectorXd> b_b;

  Eigen::Index dim_m() const { return mm.rows(); }
  Eigen::Index dim_b() const { return bb.rows(); }

  MatrixXd assembled() const {
    const auto m = dim_m();
    const auto b = dim_b();
    MatrixXd full(m + b, m + b);
    full.topLeftCorner(m, m) = mm;
    full.topRightCorner(m, b) = mb;
    full.bottomLeftCorner(b, m) = mb.transpose();
    full.bottomRightCorner(b, b) = bb;
    return full;
  }

  void check_shapes() const {
    if (mm.rows() != mm.cols() || bb.rows() != bb.cols() || mb.rows() != mm.rows() ||
        mb.cols() != bb.rows()) {
      throw Error(ErrorKind::kDimensionMismatch, "partitioned blocks are not conformal");
    }
    if (b_m && b_m->size() != mm.rows()) {
      throw Error(ErrorKind::kDimensionMismatch, "b_m does not match N_mm");
    }
    if (b_b && b_b->size() != bb.rows()) {
      throw Error(ErrorKind::kDimensionMismatch, "b_b does not match N_bb");
    }
  }

  /// Splits `full` (and optionally `rhs`) so that the first `dim_m` rows form the m block.
  static PartitionedSpd split(const MatrixXd& full, Eigen::Index dim_m,
                              const std::optional<VectorXd>& rhs = std::nullopt) {
    const auto n = full.rows();
    const auto b = n - dim_m;
    PartitionedSpd p{full.topLeftCorner(dim_m, dim_m), full.topRightCorner(dim_m, b),
                     full.bottomRightCorner(b, b), std::nullopt, std::nullopt};
    if (rhs) {
      p.b_m = rhs->head(dim_m);
      p.b_b = rhs->tail(b);
    }
    return p;
  }
};

struct Marginal {
  MatrixXd information;
  VectorXd vector;
};

/// Eliminates the m block: N_b = N_bb − N_mbᵀ N_mm⁻¹ N_mb, b_b' = b_b − N_mbᵀ N_mm⁻¹ b_m.
inline Marginal schur_marginalize(const PartitionedSpd& p) {
  p.check_shapes();
  if (!p.b_m || !p.b_b) {
    throw Error(ErrorKind::kDimensionMismatch, "schur_marginalize needs a right-hand side");
  }
  if (p.dim_m() == 0) return {symmetrize(p.bb), *p.b_b};
  const SpdFactor mm(p.mm, "N_mm");
  const MatrixXd mm_inv_mb = mm.solve(p.mb);
  const VectorXd mm_inv_bm = mm.solve_vector(*p.b_m);
  return {symmetrize(p.bb - p.mb.transpose() * mm_inv_mb), *p.b_b - p.mb.transpose() * mm_inv_bm};
}

/// Full inverse assembled from the four blocks A, B, C, D of the two-block formula.
inline MatrixXd block_inverse(const PartitionedSpd& p) {
  p.check_shapes();
  const auto m = p.dim_m();
  const auto b = p.dim_b();
  if (m == 0) return SpdFactor(p.bb, "N_bb").inverse();
  if (b == 0) return SpdFactor(p.mm, "N_mm").inverse();

  const SpdFactor mm(p.mm, "N_mm");
  const SpdFactor bb(p.bb, "N_bb");
  const MatrixXd schur_b = p.bb - p.mb.transpose() * mm.solve(p.mb);
  const MatrixXd schur_m = p.mm - p.mb * bb.solve(p.mb.transpose());
  const MatrixXd d = SpdFactor(schur_b, "Schur complement of N_mm").inverse();
  const MatrixXd a = SpdFactor(schur_m, "Schur complement of N_bb").inverse();
  // C = −D N_mbᵀ N_mm⁻¹
  const MatrixXd c = -d * mm.solve(p.mb).transpose();

  MatrixXd inv(m + b, m + b);
  inv.topLeftCorner(m, m) = a;
  inv.topRightCorner(m, b) = c.transpose();
  inv.bottomLeftCorner(b, m) = c;
  inv.bottomRightCorner(b, b) = d;
  return symmetrize(inv);
}

// Index-set helpers used to pull a sub-system out of a dense matrix in a fixed order.

inline MatrixXd gather(const MatrixXd& m, std::span<const int> rows, std::span<const int> cols) {
  MatrixXd out(rows.size(), cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) {
    for (std::size_t i = 0; i < rows.size(); ++i) out(i, j) = m(rows[i], cols[j]);
  }
  return out;
}

inline MatrixXd gather_rows(const MatrixXd& m, std::span<const int> rows) {
  MatrixXd out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = m.row(rows[i]);
  return out;
}

// Rows of a matrix go through gather_rows; this keeps them from decaying to a vector.
MatrixXd gather(const MatrixXd& m, std::span<const int> idx) = delete;

inline VectorXd gather(const VectorXd& v, std::span<const int> idx) {
  VectorXd out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out(i) = v(idx[i]);
  return out;
}

}  // namespace swfusion

#endif  // SWFUSION_BLOCKMAT_HPP
