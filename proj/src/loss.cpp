#include "dinewton/loss.hpp"

namespace dinewton {

namespace {

void check_dims(const Objective& obj, const SpMat& X, const Vector& y,
                const Vector& w) {
  if (X.rows() != obj.d || X.cols() != obj.n || y.size() != obj.n ||
      w.size() != obj.d) {
    throw DimensionError("objective/data dimension mismatch");
  }
}

}  // namespace

Real objective_value(const Objective& obj, const SpMat& X, const Vector& y,
                     const Vector& w) {
  check_dims(obj, X, y, w);
  const Vector margins = X.transpose() * w;
  Real sum = 0.0;
  for (Index i = 0; i < obj.n; ++i) {
    sum += loss_value(obj.loss, margins[i], y[i]);
  }
  return sum / static_cast<Real>(obj.n) + 0.5 * obj.lambda * w.squaredNorm();
}

Vector full_gradient(const Objective& obj, const SpMat& X, const Vector& y,
                     const Vector& w) {
  check_dims(obj, X, y, w);
  const Vector margins = X.transpose() * w;
  Vector coeffs(obj.n);
  for (Index i = 0; i < obj.n; ++i) {
    coeffs[i] = loss_derivative(obj.loss, margins[i], y[i]);
  }
  return (X * coeffs) / static_cast<Real>(obj.n) + obj.lambda * w;
}

Vector hessian_vec(const Objective& obj, const SpMat& X, const Vector& y,
                   const Vector& w, const Vector& u,
                   std::optional<std::span<const Index>> sample_subset) {
  check_dims(obj, X, y, w);
  if (u.size() != obj.d) throw DimensionError("direction length != d");

  if (!sample_subset) {
    const Vector margins = X.transpose() * w;
    const Vector t = X.transpose() * u;
    Vector z(obj.n);
    for (Index i = 0; i < obj.n; ++i) {
      z[i] = loss_second_derivative(obj.loss, margins[i], y[i]) * t[i];
    }
    return (X * z) / static_cast<Real>(obj.n) + obj.lambda * u;
  }

  const auto& subset = *sample_subset;
  if (subset.empty()) throw DimensionError("empty sample subset");
  Vector acc = Vector::Zero(obj.d);
  for (Index i : subset) {
    if (i < 0 || i >= obj.n) throw DimensionError("subset index out of range");
    Real margin = 0.0, dot_u = 0.0;
    for (SpMat::InnerIterator it(X, i); it; ++it) {
      margin += it.value() * w[it.row()];
      dot_u += it.value() * u[it.row()];
    }
    const Real c = loss_second_derivative(obj.loss, margin, y[i]) * dot_u;
    for (SpMat::InnerIterator it(X, i); it; ++it) {
      acc[it.row()] += c * it.value();
    }
  }
  return acc / static_cast<Real>(subset.size()) + obj.lambda * u;
}

}  // namespace dinewton
