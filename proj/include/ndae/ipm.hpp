#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ndae/colloc.hpp"
#include "ndae/linsolve.hpp"

namespace ndae {

/// NLP in standard form after slack conversion: equality constraints and box
/// bounds only.
class StandardNlp {
 public:
  virtual ~StandardNlp() = default;
  virtual int n() const = 0;
  virtual int m() const = 0;
  virtual const Eigen::VectorXd& lower() const = 0;
  virtual const Eigen::VectorXd& upper() const = 0;
  virtual double eval_f(const Eigen::VectorXd& w) = 0;
  virtual void eval_grad_f(const Eigen::VectorXd& w, Eigen::VectorXd& g) = 0;
  virtual void eval_c(const Eigen::VectorXd& w, Eigen::VectorXd& c) = 0;
  virtual const std::vector<std::pair<int, int>>& jac_pattern() const = 0;  // (row, col)
  virtual void eval_jac(const Eigen::VectorXd& w, std::span<double> values) = 0;
  /// Lower-triangle Hessian of sigma*f + lam'c at fixed pattern.
  virtual const std::vector<std::pair<int, int>>& hess_pattern() const = 0;  // (row, col)
  virtual void eval_hess(const Eigen::VectorXd& w, double sigma, const Eigen::VectorXd& lam,
                         std::span<double> values) = 0;
  virtual std::span<const RowClass> row_classes() const { return {}; }
};

/// Wraps a DiscretizedNlp as a StandardNlp, appending one bounded slack per
/// inequality row (g + s = 0, s >= 0).
class ExprNlp final : public StandardNlp {
 public:
  explicit ExprNlp(const DiscretizedNlp& nlp);

  int n() const override { return n_; }
  int m() const override { return m_; }
  const Eigen::VectorXd& lower() const override { return lb_; }
  const Eigen::VectorXd& upper() const override { return ub_; }
  double eval_f(const Eigen::VectorXd& w) override;
  void eval_grad_f(const Eigen::VectorXd& w, Eigen::VectorXd& g) override;
  void eval_c(const Eigen::VectorXd& w, Eigen::VectorXd& c) override;
  const std::vector<std::pair<int, int>>& jac_pattern() const override { return jac_pattern_; }
  void eval_jac(const Eigen::VectorXd& w, std::span<double> values) override;
  const std::vector<std::pair<int, int>>& hess_pattern() const override { return hess_pattern_; }
  void eval_hess(const Eigen::VectorXd& w, double sigma, const Eigen::VectorXd& lam,
                 std::span<double> values) override;
  std::span<const RowClass> row_classes() const override { return row_classes_; }

  /// Extends a base-variable point with consistent slack values.
  Eigen::VectorXd extend_point(const Eigen::VectorXd& w_base);
  Eigen::VectorXd base_point(const Eigen::VectorXd& w_full) const;
  int n_base() const { return nb_; }

 private:
  const DiscretizedNlp& nlp_;
  int nb_ = 0, n_ = 0, m_ = 0, m_eq_ = 0, m_ineq_ = 0;
  Eigen::VectorXd lb_, ub_;
  std::vector<std::pair<int, int>> jac_pattern_, hess_pattern_;
  std::vector<RowClass> row_classes_;
  std::optional<expr::LagrangianHessian> lagr_hess_;
  expr::Workspace ws_;
  std::vector<double> jac_buf_eq_, jac_buf_ineq_, grad_buf_;
};

/// Small adapter for analytic test problems given as callbacks with dense
/// derivatives.
class DenseCallbackNlp final : public StandardNlp {
 public:
  using F = std::function<double(const Eigen::VectorXd&)>;
  using G = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
  using C = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
  using J = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;
  using H = std::function<Eigen::MatrixXd(const Eigen::VectorXd&, double, const Eigen::VectorXd&)>;

  DenseCallbackNlp(int n, int m, Eigen::VectorXd lb, Eigen::VectorXd ub, F f, G g, C c, J j, H h);

  int n() const override { return n_; }
  int m() const override { return m_; }
  const Eigen::VectorXd& lower() const override { return lb_; }
  const Eigen::VectorXd& upper() const override { return ub_; }
  double eval_f(const Eigen::VectorXd& w) override { return f_(w); }
  void eval_grad_f(const Eigen::VectorXd& w, Eigen::VectorXd& g) override { g = g_(w); }
  void eval_c(const Eigen::VectorXd& w, Eigen::VectorXd& c) override {
    c = m_ > 0 ? c_(w) : Eigen::VectorXd(0);
  }
  const std::vector<std::pair<int, int>>& jac_pattern() const override { return jac_pattern_; }
  void eval_jac(const Eigen::VectorXd& w, std::span<double> values) override;
  const std::vector<std::pair<int, int>>& hess_pattern() const override { return hess_pattern_; }
  void eval_hess(const Eigen::VectorXd& w, double sigma, const Eigen::VectorXd& lam,
                 std::span<double> values) override;

 private:
  int n_, m_;
  Eigen::VectorXd lb_, ub_;
  F f_;
  G g_;
  C c_;
  J j_;
  H h_;
  std::vector<std::pair<int, int>> jac_pattern_, hess_pattern_;
};

enum class HessianMode { Exact, Lbfgs };

/// Compact limited-memory BFGS model H ~ xi*I + B*M*B' (damped pairs are
/// discarded; xi tracks the latest accepted pair).
class LbfgsMemory {
 public:
  LbfgsMemory(int n, int memory) : n_(n), memory_(memory) {}

  /// Appends the pair if ds'dy > eps_curv*|ds||dy|, else discards it.
  void update(const Eigen::VectorXd& ds, const Eigen::VectorXd& dy, double eps_curv = 1e-8);

  bool empty() const { return pairs_.empty(); }
  int count() const { return static_cast<int>(pairs_.size()); }
  double xi() const { return xi_; }
  /// n x 2k compact factor [xi*S, Y].
  const Eigen::MatrixXd& factor() const { return B_; }
  /// Inverse of the middle matrix: -[[xi S'S, L],[L', -D]].
  const Eigen::MatrixXd& middle_inverse() const { return Minv_; }

  /// H*v for tests and diagnostics.
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;

 private:
  void update_raw(const Eigen::VectorXd& ds, const Eigen::VectorXd& dy);
  void rebuild();
  int n_, memory_;
  double xi_ = 1.0;
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> pairs_;  // (s, y)
  Eigen::MatrixXd B_, Minv_;
};

struct IpmOptions {
  double tol = 1e-8;
  int max_iter = 3000;
  HessianMode hessian_mode = HessianMode::Exact;
  int lbfgs_memory = 6;
  double mu_init = 0.1;
  double kappa_mu = 0.2;
  double theta_mu = 1.5;
  double kappa_eps = 10.0;
  double tau_min = 0.99;
  double bound_push = 1e-2;
  double bound_relax = 1e-8;
  double obj_scale_max_grad = 100.0;  // 0 disables gradient-based objective scaling
  double dual_init_clip = 1e3;
  double delta_h_scale = 1e-4;
  double delta_h_growth = 8.0;
  double delta_h_max = 1e40;
  double delta_c_scale = 1e-8;
  double kkt_accept_residual = 1e-8;
  double kappa_sigma = 1e10;
  double gamma_theta = 1e-5;
  double gamma_phi = 1e-5;
  double eta_phi = 1e-4;
  int max_line_search = 40;
  int max_refine = 3;
  int max_restoration_iters = 40;
  bool verbose = false;
};

struct IterationRecord {
  int iter = 0;
  double mu = 0, f = 0, theta = 0;  // theta: ||c||_1
  double stat = 0, comp = 0;
  double alpha_p = 0, alpha_d = 0;
  int inertia_corrections = 0;
  double delta_h = 0;
  double seconds = 0;  // wall time since solve start; excluded from determinism checks
};

enum class IpmStatus { Optimal, MaxIter, Infeasible, EvalError };

const char* ipm_status_name(IpmStatus s);

struct IpmSolution {
  Eigen::VectorXd w, lam, gam_lo, gam_up;
  IpmStatus status = IpmStatus::MaxIter;
  double kkt_residual = 0;
  double f = 0;
  double mu = 0;
  int iterations = 0;
  std::vector<IterationRecord> log;
  std::string message;
};

struct KktResidual {
  double stationarity = 0;
  double feasibility = 0;
  double complementarity = 0;
  double total() const { return std::max({stationarity, feasibility, complementarity}); }
};

/// Primal-dual interior point solver with filter line search, inertia
/// correction and exact or limited-memory Hessians.
class IpmSolver {
 public:
  IpmSolver(StandardNlp& nlp, IpmOptions options);

  IpmSolution solve(const Eigen::VectorXd& w0, const Eigen::VectorXd* lam0 = nullptr,
                    const Eigen::VectorXd* gam_lo0 = nullptr,
                    const Eigen::VectorXd* gam_up0 = nullptr, double mu0 = -1.0);

  /// Scaled KKT residual components at an interior iterate (IPOPT-style
  /// multiplier scaling, mu-perturbed complementarity).
  KktResidual kkt_residual(const Eigen::VectorXd& w, const Eigen::VectorXd& lam,
                           const Eigen::VectorXd& gam_lo, const Eigen::VectorXd& gam_up,
                           double mu);

 private:
  struct Impl;
  StandardNlp& nlp_;
  IpmOptions opt_;
};

}  // namespace ndae
