#pragma once

// Dense least squares and sandwich variance estimators on Eigen types.
// Everything is templated on the scalar so tests can run the same code in
// long double.

#include <Eigen/Dense>
#include <algorithm>
#include <span>
#include <vector>

#include "copilot/error.hpp"

namespace copilot::stats {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Carries the design columns that made X'X singular.
class RankDeficient : public Error {
 public:
  RankDeficient(const std::string& what, std::vector<Eigen::Index> columns)
      : Error(what), columns_(std::move(columns)) {}
  const std::vector<Eigen::Index>& columns() const { return columns_; }

 private:
  std::vector<Eigen::Index> columns_;
};

template <typename Scalar>
struct LeastSquares {
  Vector<Scalar> beta;
  Vector<Scalar> fitted;
  Vector<Scalar> residuals;
  Matrix<Scalar> bread;  // (X'X)^-1
};

// Columns that pivoted QR places past the numerical rank, in ascending
// order. Empty when X has full column rank.
template <typename Derived>
std::vector<Eigen::Index> collinear_columns(const Eigen::MatrixBase<Derived>& X,
                                            typename Derived::RealScalar rel_tol = 1e-9) {
  using Scalar = typename Derived::Scalar;
  Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(X);
  qr.setThreshold(rel_tol);
  std::vector<Eigen::Index> out;
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index k = qr.rank(); k < X.cols(); ++k) out.push_back(perm[k]);
  std::sort(out.begin(), out.end());
  return out;
}

// Solves min |y - X b| by pivoted QR; rank deficiency throws RankDeficient.
template <typename DerivedX, typename DerivedY>
LeastSquares<typename DerivedX::Scalar> solve_least_squares(const Eigen::MatrixBase<DerivedX>& X,
                                                            const Eigen::MatrixBase<DerivedY>& y) {
  using Scalar = typename DerivedX::Scalar;
  if (X.rows() != y.rows()) throw InvalidArgument("design and outcome row counts differ");
  if (X.rows() < X.cols()) throw InvalidArgument("fewer observations than design columns");
  Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(X);
  qr.setThreshold(Scalar(1e-9));
  if (qr.rank() < X.cols()) {
    throw RankDeficient("design matrix is rank deficient", collinear_columns(X));
  }
  LeastSquares<Scalar> out;
  out.beta = qr.solve(y);
  out.fitted = X * out.beta;
  out.residuals = y - out.fitted;
  // (X'X)^-1 = P R^-1 R^-T P'
  const Eigen::Index k = X.cols();
  Matrix<Scalar> R = qr.matrixR().topLeftCorner(k, k).template triangularView<Eigen::Upper>();
  Matrix<Scalar> Rinv = Matrix<Scalar>::Identity(k, k);
  R.template triangularView<Eigen::Upper>().solveInPlace(Rinv);
  const Matrix<Scalar> inner = Rinv * Rinv.transpose();
  out.bread = qr.colsPermutation() * inner * qr.colsPermutation().transpose();
  return out;
}

// Cluster-robust sandwich bread * meat * bread with the CR1 factor
// G/(G-1) * (N-1)/(N-K). `cluster` holds ids in [0, G).
// `Xs` is the matrix whose rows form the scores: the design for OLS, the
// first-stage fitted regressors for 2SLS.
template <typename DerivedX, typename DerivedU, typename DerivedB>
Matrix<typename DerivedX::Scalar> cluster_robust_vcov(const Eigen::MatrixBase<DerivedX>& Xs,
                                                      const Eigen::MatrixBase<DerivedU>& u,
                                                      const Eigen::MatrixBase<DerivedB>& bread,
                                                      std::span<const int> cluster) {
  using Scalar = typename DerivedX::Scalar;
  const Eigen::Index n = Xs.rows(), k = Xs.cols();
  if (static_cast<Eigen::Index>(cluster.size()) != n) throw InvalidArgument("cluster ids size mismatch");
  const int g = cluster.empty() ? 0 : *std::max_element(cluster.begin(), cluster.end()) + 1;
  if (g < 2) throw InvalidArgument("cluster-robust variance needs at least two clusters");
  if (n <= k) throw InvalidArgument("no residual degrees of freedom");
  Matrix<Scalar> sums = Matrix<Scalar>::Zero(g, k);
  for (Eigen::Index i = 0; i < n; ++i) sums.row(cluster[static_cast<std::size_t>(i)]) += u(i) * Xs.row(i);
  const Matrix<Scalar> meat = sums.transpose() * sums;
  const Scalar c = Scalar(g) / Scalar(g - 1) * Scalar(n - 1) / Scalar(n - k);
  return c * (bread * meat * bread);
}

// Heteroskedasticity-robust HC1: N/(N-K) * bread * X' diag(u^2) X * bread.
template <typename DerivedX, typename DerivedU, typename DerivedB>
Matrix<typename DerivedX::Scalar> hc1_vcov(const Eigen::MatrixBase<DerivedX>& Xs,
                                           const Eigen::MatrixBase<DerivedU>& u,
                                           const Eigen::MatrixBase<DerivedB>& bread) {
  using Scalar = typename DerivedX::Scalar;
  const Eigen::Index n = Xs.rows(), k = Xs.cols();
  if (n <= k) throw InvalidArgument("no residual degrees of freedom");
  const Matrix<Scalar> scores = Xs.derived().array().colwise() * u.derived().array();
  const Matrix<Scalar> meat = scores.transpose() * scores;
  return Scalar(n) / Scalar(n - k) * (bread * meat * bread);
}

// Wald statistic (Rb)' (R V R')^-1 (Rb).
template <typename DerivedR, typename DerivedB, typename DerivedV>
typename DerivedB::Scalar wald_statistic(const Eigen::MatrixBase<DerivedR>& R,
                                         const Eigen::MatrixBase<DerivedB>& b,
                                         const Eigen::MatrixBase<DerivedV>& V) {
  using Scalar = typename DerivedB::Scalar;
  const Vector<Scalar> rb = R * b;
  const Matrix<Scalar> rvr = R * V * R.transpose();
  return rb.dot(rvr.ldlt().solve(rb));
}

}  // namespace copilot::stats
