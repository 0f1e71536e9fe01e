#include "ndae/linsolve.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "ndae/errors.hpp"

namespace ndae {

void SymmetricSolver::analyze(int n, const std::vector<Eigen::Triplet<double>>& entries) {
  n_ = n;
  dense_ = n < dense_threshold_;
  lower_.resize(n, n);
  lower_.setFromTriplets(entries.begin(), entries.end());
  if (!dense_) ldlt_.analyzePattern(lower_);
  analyzed_ = true;
}

bool SymmetricSolver::factorize(const std::vector<Eigen::Triplet<double>>& entries) {
  if (!analyzed_) fail(Errc::SingularSystem, "factorize before analyze");
  lower_.setZero();
  lower_.setFromTriplets(entries.begin(), entries.end());
  inertia_ = {};
  if (dense_) {
    Eigen::MatrixXd full = Eigen::MatrixXd(lower_);
    full = full.selfadjointView<Eigen::Lower>();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(full);
    if (es.info() != Eigen::Success) return false;
    evals_ = es.eigenvalues();
    evecs_ = es.eigenvectors();
    // strict sign counting: a dual/primal shift pivot of 1e-9 is a real pivot
    for (int i = 0; i < n_; ++i) {
      if (!std::isfinite(evals_[i])) return false;
      if (evals_[i] > 0.0)
        ++inertia_.pos;
      else if (evals_[i] < 0.0)
        ++inertia_.neg;
      else
        ++inertia_.zero;
    }
    return true;
  }
  ldlt_.factorize(lower_);
  if (ldlt_.info() != Eigen::Success) return false;
  const Eigen::VectorXd& d = ldlt_.vectorD();
  for (int i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) return false;
    if (d[i] > 0.0)
      ++inertia_.pos;
    else if (d[i] < 0.0)
      ++inertia_.neg;
    else
      ++inertia_.zero;
  }
  return true;
}

Eigen::VectorXd SymmetricSolver::solve(const Eigen::VectorXd& rhs) const {
  if (dense_) {
    Eigen::VectorXd y = evecs_.transpose() * rhs;
    for (int i = 0; i < n_; ++i) y[i] = evals_[i] != 0.0 ? y[i] / evals_[i] : 0.0;
    return evecs_ * y;
  }
  return ldlt_.solve(rhs);
}

Eigen::VectorXd SymmetricSolver::multiply(const Eigen::VectorXd& x) const {
  return lower_.selfadjointView<Eigen::Lower>() * x;
}

Eigen::VectorXd SymmetricSolver::solve_refined(const Eigen::VectorXd& rhs, int steps) const {
  Eigen::VectorXd x = solve(rhs);
  for (int s = 0; s < steps; ++s) {
    Eigen::VectorXd r = rhs - multiply(x);
    x += solve(r);
  }
  return x;
}

}  // namespace ndae
