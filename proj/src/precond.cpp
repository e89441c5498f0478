#include "dinewton/precond.hpp"

#include <cmath>

namespace dinewton {

WoodburyPreconditioner::WoodburyPreconditioner(Real shift, SpMat scaled_columns)
    : shift_(shift), cols_(std::move(scaled_columns)) {
  if (!(shift_ > 0)) throw ConfigError("preconditioner shift must be positive");
  Matrix gram = Matrix::Identity(cols_.cols(), cols_.cols());
  gram += Matrix(SpMat(cols_.transpose() * cols_)) / shift_;
  gram_llt_.compute(gram);
  if (gram_llt_.info() != Eigen::Success) {
    throw SolverError("preconditioner Gram factorization failed");
  }
}

Vector WoodburyPreconditioner::solve(const Vector& r) const {
  if (r.size() != dim()) throw DimensionError("rhs length != preconditioner dim");
  const Vector y = r / shift_;
  const Vector v = gram_llt_.solve(cols_.transpose() * y);
  return y - (cols_ * v) / shift_;
}

Vector WoodburyPreconditioner::apply(const Vector& s) const {
  if (s.size() != dim()) throw DimensionError("vector length != preconditioner dim");
  return shift_ * s + cols_ * (cols_.transpose() * s);
}

namespace {

SpMat scaled_sample_columns(const SpMat& samples, const Vector& margins,
                            const Vector& labels, const LossModel& loss,
                            Index tau) {
  if (tau < 1) throw ConfigError("tau must be >= 1");
  if (tau > samples.cols() || tau > margins.size() || tau > labels.size()) {
    throw ConfigError("tau exceeds the available sample count");
  }
  SpMat cols = samples.leftCols(tau);
  cols.makeCompressed();
  for (Index i = 0; i < tau; ++i) {
    const Real curv = loss_second_derivative(loss, margins[i], labels[i]);
    const Real scale = std::sqrt(curv / static_cast<Real>(tau));
    for (SpMat::InnerIterator it(cols, i); it; ++it) {
      it.valueRef() *= scale;
    }
  }
  return cols;
}

}  // namespace

WoodburyPreconditioner build_preconditioner(const SpMat& samples,
                                            const Vector& margins,
                                            const Vector& labels,
                                            const LossModel& loss, Real lambda,
                                            Real mu, Index tau) {
  if (mu < 0) throw ConfigError("mu must be nonnegative");
  return WoodburyPreconditioner(
      lambda + mu, scaled_sample_columns(samples, margins, labels, loss, tau));
}

WoodburyPreconditioner build_block_preconditioner(
    const SpMat& samples, const Vector& margins, const Vector& labels,
    const LossModel& loss, Real lambda, Real mu, Index tau, Index row_begin,
    Index row_count) {
  if (mu < 0) throw ConfigError("mu must be nonnegative");
  SpMat block = samples.middleRows(row_begin, row_count);
  return WoodburyPreconditioner(
      lambda + mu, scaled_sample_columns(block, margins, labels, loss, tau));
}

Vector BlockDiagPreconditioner::solve(const Vector& r) const {
  Vector s(r.size());
  for (size_t j = 0; j < blocks.size(); ++j) {
    const Index lo = offsets[j];
    const Index len = offsets[j + 1] - lo;
    s.segment(lo, len) = blocks[j].solve(r.segment(lo, len));
  }
  return s;
}

}  // namespace dinewton
