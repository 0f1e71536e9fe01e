#pragma once

#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

namespace ndae {

struct Inertia {
  int pos = 0, neg = 0, zero = 0;
};

/// Symmetric indefinite LDL^T with inertia reporting: sparse simplicial
/// factorization with an AMD ordering for large systems, dense
/// eigendecomposition below `dense_threshold` unknowns. Entries are given as
/// lower-triangle triplets; duplicate entries are summed. The sparsity
/// pattern must stay fixed between analyze() and subsequent factorize()
/// calls.
class SymmetricSolver {
 public:
  explicit SymmetricSolver(int dense_threshold = 500) : dense_threshold_(dense_threshold) {}

  void analyze(int n, const std::vector<Eigen::Triplet<double>>& entries);

  /// Returns false on numerical breakdown (non-finite pivots).
  bool factorize(const std::vector<Eigen::Triplet<double>>& entries);

  const Inertia& inertia() const { return inertia_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;

  /// Solve with a few rounds of iterative refinement against the assembled
  /// matrix.
  Eigen::VectorXd solve_refined(const Eigen::VectorXd& rhs, int steps) const;

  /// Residual-producing matrix-vector product with the assembled symmetric
  /// matrix.
  Eigen::VectorXd multiply(const Eigen::VectorXd& x) const;

  bool dense_mode() const { return dense_; }
  int size() const { return n_; }

 private:
  int dense_threshold_;
  int n_ = 0;
  bool dense_ = false;
  bool analyzed_ = false;
  Eigen::SparseMatrix<double> lower_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower> ldlt_;
  Eigen::MatrixXd evecs_;
  Eigen::VectorXd evals_;
  Inertia inertia_;
};

}  // namespace ndae
