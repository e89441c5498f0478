#pragma once

#include <cmath>
#include <optional>
#include <span>

#include "dinewton/types.hpp"

namespace dinewton {

enum class LossFamily { Quadratic, SquaredHinge, Logistic };

/// One of the smooth convex per-sample losses phi(margin, label), together
/// with its self-concordance constant M (0 for the two quadratic-type losses,
/// 1 for logistic).
struct LossModel {
  LossFamily family = LossFamily::Quadratic;
  Real self_concordance_M = 0.0;

  static LossModel quadratic() { return {LossFamily::Quadratic, 0.0}; }
  static LossModel squared_hinge() { return {LossFamily::SquaredHinge, 0.0}; }
  static LossModel logistic() { return {LossFamily::Logistic, 1.0}; }
};

namespace detail {

// Logistic kernels fold the label into the margin (m = y * margin) and never
// exponentiate a positive argument; raw margins beyond +-700 overflow double.
template <typename Scalar>
Scalar logistic_value(Scalar margin, Scalar label) {
  const Scalar m = label * margin;
  if (m >= Scalar(0)) {
    return std::log1p(std::exp(-m));
  }
  return -m + std::log1p(std::exp(m));
}

// d/d(margin) log(1 + exp(-y*margin)) = -y * (1 - sigmoid(y*margin))
template <typename Scalar>
Scalar logistic_derivative(Scalar margin, Scalar label) {
  const Scalar m = label * margin;
  if (m >= Scalar(0)) {
    const Scalar e = std::exp(-m);  // <= 1
    return -label * e / (Scalar(1) + e);
  }
  const Scalar e = std::exp(m);  // <= 1
  return -label / (Scalar(1) + e);
}

// d^2/d(margin)^2 = y^2 * sigmoid'(y*margin); sigmoid' is symmetric, so for
// +-1 labels this equals exp(-margin)/(1+exp(-margin))^2 either way.
template <typename Scalar>
Scalar logistic_second_derivative(Scalar margin, Scalar label) {
  const Scalar m = label * margin;
  const Scalar e = std::exp(m >= Scalar(0) ? -m : m);  // <= 1
  const Scalar s = Scalar(1) / (Scalar(1) + e);
  return label * label * s * s * e;
}

}  // namespace detail

/// phi(margin, y) where margin = w.x.
template <typename Scalar>
Scalar loss_value(const LossModel& model, Scalar margin, Scalar label) {
  switch (model.family) {
    case LossFamily::Quadratic: {
      const Scalar r = label - margin;
      return r * r;
    }
    case LossFamily::SquaredHinge: {
      const Scalar r = std::max(Scalar(0), label - margin);
      return r * r;
    }
    case LossFamily::Logistic:
      return detail::logistic_value(margin, label);
  }
  return Scalar(0);
}

/// d phi / d margin.
template <typename Scalar>
Scalar loss_derivative(const LossModel& model, Scalar margin, Scalar label) {
  switch (model.family) {
    case LossFamily::Quadratic:
      return Scalar(2) * (margin - label);
    case LossFamily::SquaredHinge:
      return Scalar(-2) * std::max(Scalar(0), label - margin);
    case LossFamily::Logistic:
      return detail::logistic_derivative(margin, label);
  }
  return Scalar(0);
}

/// d^2 phi / d margin^2. Convexity gives >= 0 for every family; the squared
/// hinge takes the inactive-side limit (0) exactly at its kink.
template <typename Scalar>
Scalar loss_second_derivative(const LossModel& model, Scalar margin,
                              Scalar label) {
  switch (model.family) {
    case LossFamily::Quadratic:
      return Scalar(2);
    case LossFamily::SquaredHinge:
      return label - margin > Scalar(0) ? Scalar(2) : Scalar(0);
    case LossFamily::Logistic:
      return detail::logistic_second_derivative(margin, label);
  }
  return Scalar(0);
}

/// The L2-regularized empirical risk f(w) = (1/n) sum_i phi(w.x_i, y_i)
/// + (lambda/2) ||w||^2 over an n-sample, d-feature dataset.
struct Objective {
  Real lambda;
  LossModel loss;
  Index n;
  Index d;

  Objective(Real lambda, LossModel loss, Index n, Index d)
      : lambda(lambda), loss(loss), n(n), d(d) {
    if (!(lambda > 0)) throw ConfigError("lambda must be positive");
    if (n < 1 || d < 1) throw ConfigError("need n >= 1 and d >= 1");
  }
};

/// f(w). X is d x n with one sample per column.
Real objective_value(const Objective& obj, const SpMat& X, const Vector& y,
                     const Vector& w);

/// grad f(w) = (1/n) sum_i phi'(w.x_i) x_i + lambda w.
Vector full_gradient(const Objective& obj, const SpMat& X, const Vector& y,
                     const Vector& w);

/// Hessian-vector product without forming the d x d Hessian:
/// (1/|S|) sum_{i in S} phi''(w.x_i) (x_i.u) x_i + lambda u,
/// with S = sample_subset (ascending global indices) or all samples.
Vector hessian_vec(const Objective& obj, const SpMat& X, const Vector& y,
                   const Vector& w, const Vector& u,
                   std::optional<std::span<const Index>> sample_subset = {});

}  // namespace dinewton
