#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "ndae/mlp.hpp"
#include "ndae/ocp.hpp"

namespace ndae {

/// Radau IIA collocation abscissae on (0, 1], last point exactly 1.
/// Computed once per order from the companion-matrix root oracle and verified
/// against quadrature exactness before caching. Supported orders 1..5.
Eigen::VectorXd radau_points(int K);

/// dl_j/dtau(pts[k]) for the Lagrange basis over `pts`, evaluated at
/// pts[1..end]: rows j = 0..K, columns k = 1..K.
Eigen::MatrixXd basis_derivative_matrix(const Eigen::VectorXd& pts);

/// General barycentric derivative matrix: entry (j, k) = dl_j/dtau(at[k]).
Eigen::MatrixXd lagrange_derivative_matrix(const Eigen::VectorXd& pts,
                                           const Eigen::VectorXd& at);

/// Lagrange basis values l_j(tau) over the given interpolation points.
Eigen::VectorXd lagrange_values(const Eigen::VectorXd& pts, double tau);

/// Finite-element/Radau layout with the basis matrices used by transcription.
struct CollocationScheme {
  int n_fe = 0;
  int K = 0;
  double t0 = 0.0, tf = 0.0;
  std::vector<double> h;      // element lengths, sum == tf - t0
  Eigen::VectorXd tau;        // [0, tau_1..tau_K]
  Eigen::MatrixXd D;          // (K+1) x K, dl_j/dtau at tau_k (state basis)
  Eigen::MatrixXd Dbar;       // K x K, reduced basis derivative (algebraics)
  Eigen::VectorXd ell_at_one; // l_j(1), j = 0..K

  static CollocationScheme make(int n_fe, int K, double t0, double tf,
                                std::vector<double> lengths = {});

  double element_start(int i) const;  // 0-based element
  /// Element containing t; boundaries attribute to the left element.
  int element_of(double t) const;
  double local_tau(int elem, double t) const;
};

enum class RowClass : std::uint8_t {
  Collocation,
  Algebraic,
  Neural,
  Continuity,
  InitialCondition,
  PathInequality,
};

struct TranscribeOptions {
  bool data_objective = true;   // observation loss in the objective
  double lambda_r = 0.0;        // theta regularization (needs network variables)
  double lambda_s = 0.0;        // smoothing penalty on dz/dtau
  const MlpSpec* network = nullptr;
  const Eigen::VectorXd* theta_values = nullptr;  // fix weights as constants
  bool couple_neural = false;   // add z = f_NN rows (requires network)
  // > 0 relaxes the neural rows with l1-penalized slacks (downstream
  // infeasibility recovery)
  double neural_slack_penalty = 0.0;
};

/// Fully discretized NLP. Decision layout: per trajectory [x | y | z], then
/// free static parameters, then theta (when network variables are attached).
class DiscretizedNlp {
 public:
  int n_vars() const { return n_vars_; }
  int n_eq() const;
  int n_ineq() const;
  int n_traj() const { return n_traj_; }

  int ix(int traj, int elem, int j, int d) const;  // j = 0..K
  int iy(int traj, int elem, int k, int d) const;  // k = 1..K
  int iz(int traj, int elem, int k, int d) const;
  int itheta(int t) const;
  int n_theta() const { return n_theta_; }
  bool has_theta() const { return n_theta_ > 0; }
  int ip_free(int free_idx) const { return p_offset_ + free_idx; }
  int n_free_params() const { return n_free_p_; }

  const Eigen::VectorXd& lower() const { return lb_; }
  const Eigen::VectorXd& upper() const { return ub_; }

  const expr::Function& objective() const { return *objective_; }
  const expr::Function& equalities() const { return *equalities_; }
  const expr::Function* inequalities() const {
    return inequalities_ ? &*inequalities_ : nullptr;
  }
  const std::vector<RowClass>& eq_classes() const { return eq_classes_; }

  const CollocationScheme& scheme() const { return scheme_; }
  const ContinuousModel& model() const { return model_; }

  /// Plain starting point: states constant at x0, algebraics/outputs 0,
  /// params at value, theta 0.
  Eigen::VectorXd default_initial_point() const;

  /// Evaluates the stored polynomial trajectories of a solution vector.
  void interpolate(const Eigen::VectorXd& w, int traj, double t, Eigen::VectorXd* x,
                   Eigen::VectorXd* y, Eigen::VectorXd* z) const;

  /// x/y/z values at all collocation points (k = 1..K), one row per point in
  /// element-major order; used for normalization samples and warm starts.
  Eigen::MatrixXd collocation_states(const Eigen::VectorXd& w, int traj) const;
  Eigen::MatrixXd collocation_outputs(const Eigen::VectorXd& w, int traj) const;
  Eigen::MatrixXd collocation_algebraics(const Eigen::VectorXd& w, int traj) const;

  /// Writes trajectory values from `other` (same model, any scheme) into this
  /// NLP's variable block as an initial guess.
  void seed_from_interpolation(Eigen::VectorXd& w, const DiscretizedNlp& other,
                               const Eigen::VectorXd& w_other) const;

  friend DiscretizedNlp transcribe(const ContinuousModel& model, const CollocationScheme& scheme,
                                   const TranscribeOptions& options);

 private:
  int n_traj_ = 0, n_x_ = 0, n_y_ = 0, n_z_ = 0;
  int traj_stride_ = 0, x_block_ = 0, y_block_ = 0, z_block_ = 0;
  int p_offset_ = 0, n_free_p_ = 0, theta_offset_ = 0, n_theta_ = 0;
  int n_vars_ = 0;
  Eigen::VectorXd lb_, ub_;
  std::optional<expr::Function> objective_, equalities_, inequalities_;
  std::vector<RowClass> eq_classes_;
  CollocationScheme scheme_;
  ContinuousModel model_;
};

DiscretizedNlp transcribe(const ContinuousModel& model, const CollocationScheme& scheme,
                          const TranscribeOptions& options);

}  // namespace ndae
