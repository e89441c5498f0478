#pragma once

#include <Eigen/Cholesky>

#include <memory>
#include <vector>

#include "dinewton/loss.hpp"
#include "dinewton/types.hpp"

namespace dinewton {

/// P = shift * I + C * C^T with C a dim x tau matrix of curvature-scaled
/// sample columns (column i = sqrt(phi''_i / tau) * x_i). Solves P s = r
/// exactly through the low-rank identity: with y = r / shift and
/// Z = C / shift, solve (I + C^T Z) v = C^T y once per right-hand side and
/// return s = y - Z v. The tau x tau Gram factor is computed at build time,
/// so a solve costs O(dim * tau + tau^2).
class WoodburyPreconditioner {
 public:
  WoodburyPreconditioner(Real shift, SpMat scaled_columns);

  /// s with P s = r.
  Vector solve(const Vector& r) const;

  /// P * s (used by residual checks).
  Vector apply(const Vector& s) const;

  Real shift() const { return shift_; }
  Index dim() const { return cols_.rows(); }
  Index tau() const { return cols_.cols(); }

 private:
  Real shift_;
  SpMat cols_;
  Eigen::LLT<Matrix> gram_llt_;  // I + C^T C / shift
};

/// Stochastic-Hessian preconditioner from the first tau columns of `samples`
/// (a dim x k sparse matrix, k >= tau): shift = lambda + mu, column i scaled
/// by sqrt(phi''(margin_i, label_i) / tau). `margins` and `labels` are
/// indexed like the columns of `samples`.
WoodburyPreconditioner build_preconditioner(const SpMat& samples,
                                            const Vector& margins,
                                            const Vector& labels,
                                            const LossModel& loss, Real lambda,
                                            Real mu, Index tau);

/// The feature-block variant: the diagonal block of the d x d preconditioner
/// covering rows [row_begin, row_begin + row_count), built from the same tau
/// samples and curvature coefficients. Entry (a, b) of P depends only on
/// features a and b, so this equals the corresponding block of the global P.
WoodburyPreconditioner build_block_preconditioner(
    const SpMat& samples, const Vector& margins, const Vector& labels,
    const LossModel& loss, Real lambda, Real mu, Index tau, Index row_begin,
    Index row_count);

/// Minimal solver interface the PCG loop sees.
struct Preconditioner {
  virtual ~Preconditioner() = default;
  virtual Vector solve(const Vector& r) const = 0;
};

struct IdentityPreconditioner final : Preconditioner {
  Vector solve(const Vector& r) const override { return r; }
};

struct WoodburyOp final : Preconditioner {
  explicit WoodburyOp(WoodburyPreconditioner p) : p(std::move(p)) {}
  Vector solve(const Vector& r) const override { return p.solve(r); }
  WoodburyPreconditioner p;
};

/// Block-diagonal composition of Woodbury blocks over contiguous coordinate
/// ranges; applying it equals solving with blockdiag(P_1, ..., P_m).
struct BlockDiagPreconditioner final : Preconditioner {
  BlockDiagPreconditioner(std::vector<WoodburyPreconditioner> blocks,
                          std::vector<Index> offsets)
      : blocks(std::move(blocks)), offsets(std::move(offsets)) {}

  Vector solve(const Vector& r) const override;

  std::vector<WoodburyPreconditioner> blocks;
  std::vector<Index> offsets;  // block j covers [offsets[j], offsets[j+1])
};

}  // namespace dinewton
