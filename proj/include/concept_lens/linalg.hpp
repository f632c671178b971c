#pragma once

#include <cmath>

#include <Eigen/Dense>

namespace clens {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Cosine similarity; zero when either side has zero norm.
template <typename A, typename B>
double cosine(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

// d cosine(a, b) / d a. Zero at a == 0, matching the zero-score convention.
template <typename A, typename B>
Vector cosine_grad(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return Vector::Zero(a.size());
  const double c = a.dot(b) / (na * nb);
  return b / (na * nb) - c * a / (na * na);
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace clens
