#include "ndae/ipm.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace ndae {

// ---------------------------------------------------------------------------
// ExprNlp

ExprNlp::ExprNlp(const DiscretizedNlp& nlp) : nlp_(nlp) {
  nb_ = nlp.n_vars();
  m_eq_ = nlp.n_eq();
  m_ineq_ = nlp.n_ineq();
  n_ = nb_ + m_ineq_;
  m_ = m_eq_ + m_ineq_;

  lb_.resize(n_);
  ub_.resize(n_);
  lb_.head(nb_) = nlp.lower();
  ub_.head(nb_) = nlp.upper();
  lb_.tail(m_ineq_).setZero();
  ub_.tail(m_ineq_).setConstant(kInf);

  const auto& jeq = nlp.equalities().jac_sparsity();
  for (int r = 0; r < m_eq_; ++r) {
    for (std::int32_t k = jeq.row_ptr[r]; k < jeq.row_ptr[r + 1]; ++k) {
      jac_pattern_.emplace_back(r, jeq.cols[k]);
    }
  }
  jac_buf_eq_.resize(jeq.nnz());
  if (m_ineq_ > 0) {
    const auto& jin = nlp.inequalities()->jac_sparsity();
    for (int r = 0; r < m_ineq_; ++r) {
      for (std::int32_t k = jin.row_ptr[r]; k < jin.row_ptr[r + 1]; ++k) {
        jac_pattern_.emplace_back(m_eq_ + r, jin.cols[k]);
      }
      jac_pattern_.emplace_back(m_eq_ + r, nb_ + r);  // slack column
    }
    jac_buf_ineq_.resize(jin.nnz());
  }

  std::vector<const expr::Function*> funs{&nlp.objective(), &nlp.equalities()};
  if (m_ineq_ > 0) funs.push_back(nlp.inequalities());
  lagr_hess_.emplace(std::move(funs));
  for (std::size_t e = 0; e < lagr_hess_->pattern().nnz(); ++e) {
    hess_pattern_.emplace_back(lagr_hess_->pattern().rows[e], lagr_hess_->pattern().cols[e]);
  }

  row_classes_.assign(nlp.eq_classes().begin(), nlp.eq_classes().end());
  row_classes_.insert(row_classes_.end(), m_ineq_, RowClass::PathInequality);

  const auto& jobj = nlp.objective().jac_sparsity();
  grad_buf_.resize(jobj.nnz());
}

double ExprNlp::eval_f(const Eigen::VectorXd& w) {
  Eigen::VectorXd base = w.head(nb_);
  return nlp_.objective().eval(base, ws_)[0];
}

void ExprNlp::eval_grad_f(const Eigen::VectorXd& w, Eigen::VectorXd& g) {
  Eigen::VectorXd base = w.head(nb_);
  g.setZero(n_);
  const auto& sp = nlp_.objective().jac_sparsity();
  nlp_.objective().gradient({base.data(), static_cast<std::size_t>(base.size())}, 0, grad_buf_,
                            ws_);
  for (std::int32_t k = sp.row_ptr[0]; k < sp.row_ptr[1]; ++k) g[sp.cols[k]] = grad_buf_[k];
}

void ExprNlp::eval_c(const Eigen::VectorXd& w, Eigen::VectorXd& c) {
  Eigen::VectorXd base = w.head(nb_);
  c.resize(m_);
  Eigen::VectorXd ceq = nlp_.equalities().eval(base, ws_);
  c.head(m_eq_) = ceq;
  if (m_ineq_ > 0) {
    Eigen::VectorXd g = nlp_.inequalities()->eval(base, ws_);
    c.tail(m_ineq_) = g + w.tail(m_ineq_);
  }
}

void ExprNlp::eval_jac(const Eigen::VectorXd& w, std::span<double> values) {
  Eigen::VectorXd base = w.head(nb_);
  nlp_.equalities().jacobian({base.data(), static_cast<std::size_t>(base.size())}, jac_buf_eq_,
                             ws_);
  std::size_t out = 0;
  for (double v : jac_buf_eq_) values[out++] = v;
  if (m_ineq_ > 0) {
    nlp_.inequalities()->jacobian({base.data(), static_cast<std::size_t>(base.size())},
                                  jac_buf_ineq_, ws_);
    const auto& jin = nlp_.inequalities()->jac_sparsity();
    std::size_t in_pos = 0;
    for (int r = 0; r < m_ineq_; ++r) {
      const int row_nnz = jin.row_ptr[r + 1] - jin.row_ptr[r];
      for (int k = 0; k < row_nnz; ++k) values[out++] = jac_buf_ineq_[in_pos++];
      values[out++] = 1.0;  // slack
    }
  }
}

void ExprNlp::eval_hess(const Eigen::VectorXd& w, double sigma, const Eigen::VectorXd& lam,
                        std::span<double> values) {
  Eigen::VectorXd base = w.head(nb_);
  std::vector<std::span<const double>> weights;
  std::span<const double> so{&sigma, 1};
  weights.push_back(so);
  weights.emplace_back(lam.data(), static_cast<std::size_t>(m_eq_));
  if (m_ineq_ > 0) weights.emplace_back(lam.data() + m_eq_, static_cast<std::size_t>(m_ineq_));
  lagr_hess_->eval({base.data(), static_cast<std::size_t>(base.size())}, weights, values, ws_);
}

Eigen::VectorXd ExprNlp::extend_point(const Eigen::VectorXd& w_base) {
  Eigen::VectorXd w(n_);
  w.head(nb_) = w_base;
  if (m_ineq_ > 0) {
    Eigen::VectorXd g = nlp_.inequalities()->eval(w_base, ws_);
    for (int r = 0; r < m_ineq_; ++r) w[nb_ + r] = std::max(-g[r], 1e-2);
  }
  return w;
}

Eigen::VectorXd ExprNlp::base_point(const Eigen::VectorXd& w_full) const {
  return w_full.head(nb_);
}

// ---------------------------------------------------------------------------
// DenseCallbackNlp

DenseCallbackNlp::DenseCallbackNlp(int n, int m, Eigen::VectorXd lb, Eigen::VectorXd ub, F f,
                                   G g, C c, J j, H h)
    : n_(n),
      m_(m),
      lb_(std::move(lb)),
      ub_(std::move(ub)),
      f_(std::move(f)),
      g_(std::move(g)),
      c_(std::move(c)),
      j_(std::move(j)),
      h_(std::move(h)) {
  for (int r = 0; r < m_; ++r) {
    for (int cidx = 0; cidx < n_; ++cidx) jac_pattern_.emplace_back(r, cidx);
  }
  for (int i = 0; i < n_; ++i) {
    for (int jdx = 0; jdx <= i; ++jdx) hess_pattern_.emplace_back(i, jdx);
  }
}

void DenseCallbackNlp::eval_jac(const Eigen::VectorXd& w, std::span<double> values) {
  if (m_ == 0) return;
  Eigen::MatrixXd J = j_(w);
  std::size_t k = 0;
  for (int r = 0; r < m_; ++r) {
    for (int c = 0; c < n_; ++c) values[k++] = J(r, c);
  }
}

void DenseCallbackNlp::eval_hess(const Eigen::VectorXd& w, double sigma,
                                 const Eigen::VectorXd& lam, std::span<double> values) {
  Eigen::MatrixXd H = h_(w, sigma, lam);
  std::size_t k = 0;
  for (int i = 0; i < n_; ++i) {
    for (int j = 0; j <= i; ++j) values[k++] = H(i, j);
  }
}

// ---------------------------------------------------------------------------
// LbfgsMemory

void LbfgsMemory::update(const Eigen::VectorXd& ds, const Eigen::VectorXd& dy, double eps_curv) {
  double sy = ds.dot(dy);
  if (!std::isfinite(sy)) return;
  if (!(sy > eps_curv * ds.norm() * dy.norm())) {
    if (pairs_.empty()) return;  // nothing to damp against yet
    // Powell damping: blend the gradient difference with the model curvature
    // so the pair stays usable instead of being discarded
    Eigen::VectorXd bs = apply(ds);
    const double sbs = ds.dot(bs);
    if (!(sbs > 0.0) || !bs.allFinite()) return;
    if (sy < 0.2 * sbs) {
      const double phi = 0.8 * sbs / (sbs - sy);
      Eigen::VectorXd damped = phi * dy + (1.0 - phi) * bs;
      return update_raw(ds, damped);
    }
  }
  update_raw(ds, dy);
}

void LbfgsMemory::update_raw(const Eigen::VectorXd& ds, const Eigen::VectorXd& dy) {
  const double sy = ds.dot(dy);
  if (!(sy > 0.0)) return;
  // borderline pairs would produce an absurd base curvature and freeze the
  // primal step; keep xi in a sane band
  const double xi_new = dy.dot(dy) / sy;
  if (!std::isfinite(xi_new)) return;
  pairs_.emplace_back(ds, dy);
  if (static_cast<int>(pairs_.size()) > memory_) pairs_.pop_front();
  xi_ = std::clamp(xi_new, 1e-6, 1e6);
  rebuild();
}

void LbfgsMemory::rebuild() {
  const int k = count();
  Eigen::MatrixXd S(n_, k), Y(n_, k);
  for (int i = 0; i < k; ++i) {
    S.col(i) = pairs_[i].first;
    Y.col(i) = pairs_[i].second;
  }
  Eigen::MatrixXd StY = S.transpose() * Y;
  Eigen::MatrixXd L = StY.triangularView<Eigen::StrictlyLower>();
  Eigen::VectorXd D = StY.diagonal();
  B_.resize(n_, 2 * k);
  B_.leftCols(k) = xi_ * S;
  B_.rightCols(k) = Y;
  Minv_.resize(2 * k, 2 * k);
  Minv_.topLeftCorner(k, k) = xi_ * (S.transpose() * S);
  Minv_.topRightCorner(k, k) = L;
  Minv_.bottomLeftCorner(k, k) = L.transpose();
  Minv_.bottomRightCorner(k, k) = -Eigen::MatrixXd(D.asDiagonal());
  Minv_ = -Minv_;
}

Eigen::VectorXd LbfgsMemory::apply(const Eigen::VectorXd& v) const {
  if (pairs_.empty()) return xi_ * v;
  Eigen::VectorXd t = B_.transpose() * v;
  Eigen::VectorXd q = Minv_.fullPivLu().solve(t);
  return xi_ * v + B_ * q;
}

// ---------------------------------------------------------------------------
// IpmSolver

const char* ipm_status_name(IpmStatus s) {
  switch (s) {
    case IpmStatus::Optimal: return "Optimal";
    case IpmStatus::MaxIter: return "MaxIter";
    case IpmStatus::Infeasible: return "Infeasible";
    case IpmStatus::EvalError: return "EvalError";
  }
  return "?";
}

namespace {

struct Bounds {
  Eigen::VectorXd lo, up;          // relaxed bounds used internally
  std::vector<int> lo_idx, up_idx; // bounded components
};

struct EvalPoint {
  double f = 0;  // scaled objective
  Eigen::VectorXd grad;  // scaled
  Eigen::VectorXd c;
  std::vector<double> jac;
  bool ok = false;
};

}  // namespace

struct IpmSolver::Impl {
  StandardNlp& nlp;
  const IpmOptions& opt;
  int n, m;
  Bounds bnd;
  double s_f = 1.0;
  std::vector<std::pair<int, int>> jac_pat, hess_pat;
  std::vector<double> hess_vals;
  // KKT assembly
  std::vector<Eigen::Triplet<double>> kkt;
  int kkt_hess_begin = 0, kkt_sigma_begin = 0, kkt_jac_begin = 0, kkt_deltac_begin = 0;
  SymmetricSolver solver;
  bool analyzed = false;
  double delta_h_last = 0.0;  // successful shift of the previous iteration
  std::optional<LbfgsMemory> lbfgs;
  // restoration solver
  SymmetricSolver resto_solver;
  bool resto_analyzed = false;
  // augmented least-squares solver for multiplier estimation
  SymmetricSolver aug_solver;
  bool aug_analyzed = false;

  Eigen::VectorXd dual_ls(const EvalPoint& at, const Eigen::VectorXd& gle,
                          const Eigen::VectorXd& gue, double clip) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(m);
    if (m == 0) return out;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(n + m + jac_pat.size());
    for (int i = 0; i < n; ++i) trip.emplace_back(i, i, 1.0);
    for (std::size_t k = 0; k < jac_pat.size(); ++k) {
      trip.emplace_back(n + jac_pat[k].first, jac_pat[k].second, at.jac[k]);
    }
    for (int r = 0; r < m; ++r) trip.emplace_back(n + r, n + r, -1e-10);
    if (!aug_analyzed) {
      aug_solver.analyze(n + m, trip);
      aug_analyzed = true;
    }
    if (aug_solver.factorize(trip)) {
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + m);
      rhs.head(n) = -at.grad;
      for (int i : bnd.lo_idx) rhs[i] += gle[i];
      for (int i : bnd.up_idx) rhs[i] -= gue[i];
      Eigen::VectorXd sol_aug = aug_solver.solve_refined(rhs, 2);
      if (sol_aug.allFinite()) {
        out = sol_aug.tail(m);
        const double lmax = out.lpNorm<Eigen::Infinity>();
        if (lmax > clip) out *= clip / lmax;
      }
    }
    if (!out.allFinite()) out.setZero();
    return out;
  }

  Impl(StandardNlp& nlp_, const IpmOptions& opt_) : nlp(nlp_), opt(opt_) {
    n = nlp.n();
    m = nlp.m();
    jac_pat = nlp.jac_pattern();
    hess_pat = nlp.hess_pattern();
    hess_vals.resize(hess_pat.size());
    bnd.lo = nlp.lower();
    bnd.up = nlp.upper();
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(bnd.lo[i]))
        bnd.lo[i] -= opt.bound_relax * std::max(1.0, std::abs(bnd.lo[i]));
      if (std::isfinite(bnd.up[i]))
        bnd.up[i] += opt.bound_relax * std::max(1.0, std::abs(bnd.up[i]));
      if (std::isfinite(bnd.lo[i])) bnd.lo_idx.push_back(i);
      if (std::isfinite(bnd.up[i])) bnd.up_idx.push_back(i);
    }
    if (opt.hessian_mode == HessianMode::Lbfgs) lbfgs.emplace(n, opt.lbfgs_memory);
  }

  void push_interior(Eigen::VectorXd& w) const {
    const double k1 = opt.bound_push, k2 = opt.bound_push;
    for (int i = 0; i < n; ++i) {
      const bool L = std::isfinite(bnd.lo[i]), U = std::isfinite(bnd.up[i]);
      if (L && U) {
        const double span = bnd.up[i] - bnd.lo[i];
        const double pl = std::min(k1 * std::max(1.0, std::abs(bnd.lo[i])), k2 * span);
        const double pu = std::min(k1 * std::max(1.0, std::abs(bnd.up[i])), k2 * span);
        w[i] = std::clamp(w[i], bnd.lo[i] + pl, bnd.up[i] - pu);
      } else if (L) {
        w[i] = std::max(w[i], bnd.lo[i] + k1 * std::max(1.0, std::abs(bnd.lo[i])));
      } else if (U) {
        w[i] = std::min(w[i], bnd.up[i] - k1 * std::max(1.0, std::abs(bnd.up[i])));
      }
    }
  }

  bool eval_point(const Eigen::VectorXd& w, EvalPoint& out, bool with_derivs) {
    try {
      out.f = s_f * nlp.eval_f(w);
      nlp.eval_c(w, out.c);
      if (with_derivs) {
        nlp.eval_grad_f(w, out.grad);
        out.grad *= s_f;
        out.jac.resize(jac_pat.size());
        nlp.eval_jac(w, out.jac);
      }
      out.ok = out.c.allFinite() && std::isfinite(out.f);
      if (with_derivs && out.ok) out.ok = out.grad.allFinite();
    } catch (const Error&) {
      out.ok = false;
    }
    return out.ok;
  }

  Eigen::VectorXd jac_t_mul(const std::vector<double>& vals, const Eigen::VectorXd& lam) const {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k < jac_pat.size(); ++k) {
      r[jac_pat[k].second] += vals[k] * lam[jac_pat[k].first];
    }
    return r;
  }

  Eigen::VectorXd jac_mul(const std::vector<double>& vals, const Eigen::VectorXd& dw) const {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(m);
    for (std::size_t k = 0; k < jac_pat.size(); ++k) {
      r[jac_pat[k].first] += vals[k] * dw[jac_pat[k].second];
    }
    return r;
  }

  // barrier objective phi_mu(w) given scaled f
  double barrier_phi(const Eigen::VectorXd& w, double f, double mu) const {
    double phi = f;
    for (int i : bnd.lo_idx) {
      const double s = w[i] - bnd.lo[i];
      if (s <= 0) return std::numeric_limits<double>::infinity();
      phi -= mu * std::log(s);
    }
    for (int i : bnd.up_idx) {
      const double s = bnd.up[i] - w[i];
      if (s <= 0) return std::numeric_limits<double>::infinity();
      phi -= mu * std::log(s);
    }
    return phi;
  }

  // gradient of the barrier objective (scaled f part included)
  Eigen::VectorXd barrier_grad(const Eigen::VectorXd& w, const Eigen::VectorXd& grad,
                               double mu) const {
    Eigen::VectorXd g = grad;
    for (int i : bnd.lo_idx) g[i] -= mu / (w[i] - bnd.lo[i]);
    for (int i : bnd.up_idx) g[i] += mu / (bnd.up[i] - w[i]);
    return g;
  }

  struct Residual {
    double stat = 0, feas = 0, comp = 0;
    double total() const { return std::max({stat, feas, comp}); }
  };

  Residual scaled_residual(const Eigen::VectorXd& w, const EvalPoint& ev,
                           const Eigen::VectorXd& lam, const Eigen::VectorXd& gl,
                           const Eigen::VectorXd& gu, double mu) const {
    const double s_max = 100.0;
    const int n_bnd = static_cast<int>(bnd.lo_idx.size() + bnd.up_idx.size());
    double mult_sum = gl.lpNorm<1>() + gu.lpNorm<1>();
    double s_d = 1.0, s_c = 1.0;
    if (m + n_bnd > 0)
      s_d = std::max(s_max, (lam.lpNorm<1>() + mult_sum) / (m + n_bnd)) / s_max;
    if (n_bnd > 0) s_c = std::max(s_max, mult_sum / n_bnd) / s_max;

    Eigen::VectorXd stat = ev.grad + jac_t_mul(ev.jac, lam);
    for (int i : bnd.lo_idx) stat[i] -= gl[i];
    for (int i : bnd.up_idx) stat[i] += gu[i];
    Residual r;
    r.stat = stat.lpNorm<Eigen::Infinity>() / s_d;
    r.feas = m > 0 ? ev.c.lpNorm<Eigen::Infinity>() : 0.0;
    double comp = 0;
    for (int i : bnd.lo_idx) comp = std::max(comp, std::abs((w[i] - bnd.lo[i]) * gl[i] - mu));
    for (int i : bnd.up_idx) comp = std::max(comp, std::abs((bnd.up[i] - w[i]) * gu[i] - mu));
    r.comp = comp / s_c;
    return r;
  }

  void build_kkt_structure() {
    kkt.clear();
    kkt_hess_begin = 0;
    if (opt.hessian_mode == HessianMode::Exact) {
      for (const auto& [i, j] : hess_pat) kkt.emplace_back(i, j, 0.0);
    }
    kkt_sigma_begin = static_cast<int>(kkt.size());
    for (int i = 0; i < n; ++i) kkt.emplace_back(i, i, 0.0);
    kkt_jac_begin = static_cast<int>(kkt.size());
    for (const auto& [r, c] : jac_pat) kkt.emplace_back(n + r, c, 0.0);
    kkt_deltac_begin = static_cast<int>(kkt.size());
    for (int r = 0; r < m; ++r) kkt.emplace_back(n + r, n + r, 0.0);
    solver.analyze(n + m, kkt);
    analyzed = true;
  }

  struct StepResult {
    Eigen::VectorXd dw, dlam;
    int corrections = 0;
    double delta_h = 0, delta_c = 0;
    bool ok = false;
  };

  // Solve the primal-dual KKT system with inertia correction. `sigma_diag`
  // holds the bound terms Sigma_ii; rhs = -[grad_phi + J'lam; c].
  StepResult solve_step(const Eigen::VectorXd& w, const EvalPoint& ev,
                        const Eigen::VectorXd& lam, const Eigen::VectorXd& sigma_diag,
                        const Eigen::VectorXd& rhs, double mu) {
    if (!analyzed) build_kkt_structure();
    StepResult res;

    double hess_max = 1.0;
    if (opt.hessian_mode == HessianMode::Exact) {
      nlp.eval_hess(w, s_f, lam, hess_vals);
      for (std::size_t k = 0; k < hess_vals.size(); ++k) {
        kkt[kkt_hess_begin + k] = Eigen::Triplet<double>(
            hess_pat[k].first, hess_pat[k].second, hess_vals[k]);
        hess_max = std::max(hess_max, std::abs(hess_vals[k]));
      }
    }
    for (std::size_t k = 0; k < jac_pat.size(); ++k) {
      kkt[kkt_jac_begin + k] =
          Eigen::Triplet<double>(n + jac_pat[k].first, jac_pat[k].second, ev.jac[k]);
    }

    const double xi = (opt.hessian_mode == HessianMode::Lbfgs && lbfgs) ? lbfgs->xi() : 0.0;
    double delta_h = 0.0, delta_c = 0.0;
    bool tried_zero = false;
    int soft_failures = 0;
    const int max_attempts = 60;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
      for (int i = 0; i < n; ++i) {
        const double base = opt.hessian_mode == HessianMode::Lbfgs ? xi : 0.0;
        kkt[kkt_sigma_begin + i] =
            Eigen::Triplet<double>(i, i, base + sigma_diag[i] + delta_h);
      }
      for (int r = 0; r < m; ++r) {
        kkt[kkt_deltac_begin + r] = Eigen::Triplet<double>(n + r, n + r, -delta_c);
      }
      const bool ok = solver.factorize(kkt);
      const Inertia in = solver.inertia();
      const bool inertia_ok = ok && in.pos == n && in.neg == m && in.zero == 0;
      bool solve_bad = false;
      if (inertia_ok) {
        // The dual shift exists only to make the factorization possible;
        // refine against the unshifted system so the constraint rows are
        // never silently relaxed by delta_c * dlam.
        auto solve_once = [&](const Eigen::VectorXd& b) {
          return (opt.hessian_mode == HessianMode::Lbfgs && lbfgs && !lbfgs->empty())
                     ? smw_solve(b)
                     : solver.solve(b);
        };
        auto target_residual = [&](const Eigen::VectorXd& x) {
          Eigen::VectorXd r = rhs - kkt_multiply(x);
          if (delta_c > 0.0) r.tail(m) -= delta_c * x.tail(m);
          return r;
        };
        // Acceptance: the stationarity rows to solver accuracy, the
        // constraint rows accurate enough that the violation still contracts
        // (the dual shift may absorb at most a 5% fraction of c).
        const double c_norm = m > 0 ? rhs.tail(m).lpNorm<Eigen::Infinity>() : 0.0;
        const double c_allow = std::max(
            {0.05 * c_norm, 0.2 * opt.tol, opt.kkt_accept_residual * std::max(1.0, c_norm)});
        auto acceptable = [&](const Eigen::VectorXd& r, double* score) {
          const double rel_x = r.head(n).lpNorm<Eigen::Infinity>() /
                               std::max(1.0, rhs.head(n).lpNorm<Eigen::Infinity>());
          const double abs_c = m > 0 ? r.tail(m).lpNorm<Eigen::Infinity>() : 0.0;
          *score = std::max(rel_x, abs_c / std::max(c_allow, 1e-300));
          return rel_x <= opt.kkt_accept_residual && abs_c <= c_allow;
        };
        Eigen::VectorXd sol = solve_once(rhs);
        if (sol.allFinite()) {
          double score = 0.0;
          bool good = acceptable(target_residual(sol), &score);
          for (int ref = 0; ref < 50 && !good; ++ref) {
            Eigen::VectorXd corr = solve_once(target_residual(sol));
            if (!corr.allFinite()) break;
            Eigen::VectorXd trial = sol + corr;
            double score_new = 0.0;
            const bool good_new = acceptable(target_residual(trial), &score_new);
            if (!good_new && !(score_new < 0.9 * score)) break;  // stalled
            sol = std::move(trial);
            score = score_new;
            good = good_new;
          }
          if (good) {
            res.dw = sol.head(n);
            res.dlam = sol.tail(m);
            res.corrections = attempt;
            res.delta_h = delta_h;
            res.delta_c = delta_c;
            res.ok = true;
            delta_h_last = delta_h;
            return res;
          }
        }
        solve_bad = true;
      }
      // regularize and retry. The dual shift stays at its tiny mu-based value
      // (growing it would silently relax the constraint rows); everything
      // else escalates the primal shift.
      (void)soft_failures;
      if ((!ok || in.zero > 0 || solve_bad) && delta_c == 0.0) {
        delta_c = opt.delta_c_scale * std::pow(std::max(mu, 1e-20), 0.25);
        continue;  // retry with the dual shift alone first
      }
      if (delta_h == 0.0 && !tried_zero) tried_zero = true;
      if (delta_h == 0.0) {
        // start from a third of the previous shift so the damping can decay
        // toward the factorization stability floor across iterations
        delta_h = delta_h_last > 0.0 ? std::max(1e-20, delta_h_last / 3.0)
                                     : opt.delta_h_scale * hess_max;
      } else {
        delta_h *= opt.delta_h_growth;
      }
      if (delta_h > opt.delta_h_max) break;
    }
    return res;  // ok == false
  }

  // matrix-vector product with the L-BFGS low-rank term included when active
  Eigen::VectorXd kkt_multiply(const Eigen::VectorXd& x) {
    Eigen::VectorXd y = solver.multiply(x);
    if (opt.hessian_mode == HessianMode::Lbfgs && lbfgs && !lbfgs->empty()) {
      const Eigen::MatrixXd& B = lbfgs->factor();
      const Eigen::MatrixXd& Minv = lbfgs->middle_inverse();
      Eigen::VectorXd t = B.transpose() * x.head(n);
      y.head(n) += B * Minv.fullPivLu().solve(t);
    }
    return y;
  }

  // Sherman-Morrison-Woodbury correction for the L-BFGS low-rank term: only
  // the sparse left matrix is factorized.
  Eigen::VectorXd smw_solve(const Eigen::VectorXd& rhs) {
    const Eigen::MatrixXd& B = lbfgs->factor();
    const Eigen::MatrixXd& Minv = lbfgs->middle_inverse();
    const int twok = static_cast<int>(B.cols());
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(n + m, twok);
    U.topRows(n) = B;
    Eigen::VectorXd x0 = solver.solve_refined(rhs, 1);
    Eigen::MatrixXd Z(n + m, twok);
    for (int c = 0; c < twok; ++c) Z.col(c) = solver.solve_refined(U.col(c), 0);
    Eigen::MatrixXd C = Minv + U.transpose() * Z;
    return x0 - Z * C.fullPivLu().solve(U.transpose() * x0);
  }

  // Feasibility restoration: projected Levenberg-Marquardt on 0.5||c||^2.
  // Trial points are clamped slightly inside the bounds (no barrier here, so
  // the iterates may slide along an active bound instead of jamming).
  Eigen::VectorXd interior_clamp(Eigen::VectorXd v) const {
    for (int i : bnd.lo_idx) {
      v[i] = std::max(v[i], bnd.lo[i] + 1e-8 * std::max(1.0, std::abs(bnd.lo[i])));
    }
    for (int i : bnd.up_idx) {
      v[i] = std::min(v[i], bnd.up[i] - 1e-8 * std::max(1.0, std::abs(bnd.up[i])));
    }
    return v;
  }

  bool restore(Eigen::VectorXd& w, EvalPoint& ev, double /*mu*/, double theta_target) {
    double zeta = 1e-6;
    std::vector<Eigen::Triplet<double>> trip;
    auto build = [&](const EvalPoint& e) {
      trip.clear();
      for (int i = 0; i < n; ++i) trip.emplace_back(i, i, zeta);
      for (std::size_t k = 0; k < jac_pat.size(); ++k) {
        trip.emplace_back(n + jac_pat[k].first, jac_pat[k].second, e.jac[k]);
      }
      for (int r = 0; r < m; ++r) trip.emplace_back(n + r, n + r, -1.0);
    };
    build(ev);
    if (!resto_analyzed) {
      resto_solver.analyze(n + m, trip);
      resto_analyzed = true;
    }
    for (int it = 0; it < opt.max_restoration_iters; ++it) {
      const double theta = ev.c.lpNorm<1>();
      if (theta <= theta_target) return true;
      build(ev);
      if (!resto_solver.factorize(trip)) {
        zeta *= 10.0;
        if (zeta > 1e12) return false;
        continue;
      }
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + m);
      rhs.tail(m) = -ev.c;
      Eigen::VectorXd sol = resto_solver.solve_refined(rhs, 1);
      Eigen::VectorXd dw = sol.head(n);
      if (!dw.allFinite()) {
        zeta *= 10.0;
        if (zeta > 1e12) return false;
        continue;
      }
      const double t2 = 0.5 * ev.c.squaredNorm();
      bool accepted = false;
      double alpha = 1.0;
      for (int ls = 0; ls < 25; ++ls) {
        Eigen::VectorXd wt = interior_clamp(w + alpha * dw);
        if ((wt - w).lpNorm<Eigen::Infinity>() == 0.0) break;
        EvalPoint et;
        if (eval_point(wt, et, true) && 0.5 * et.c.squaredNorm() < t2 * (1.0 - 1e-4 * alpha)) {
          w = std::move(wt);
          ev = et;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (accepted) {
        zeta = std::max(1e-8, zeta / 3.0);
      } else {
        zeta *= 10.0;
        if (zeta > 1e12) return false;
      }
    }
    return ev.c.lpNorm<1>() <= theta_target;
  }

  double fraction_to_boundary(const Eigen::VectorXd& w, const Eigen::VectorXd& dw,
                              double tau) const {
    double alpha = 1.0;
    for (int i : bnd.lo_idx) {
      if (dw[i] < 0) alpha = std::min(alpha, -tau * (w[i] - bnd.lo[i]) / dw[i]);
    }
    for (int i : bnd.up_idx) {
      if (dw[i] > 0) alpha = std::min(alpha, tau * (bnd.up[i] - w[i]) / dw[i]);
    }
    return alpha;
  }
};

IpmSolver::IpmSolver(StandardNlp& nlp, IpmOptions options) : nlp_(nlp), opt_(std::move(options)) {}

KktResidual IpmSolver::kkt_residual(const Eigen::VectorXd& w, const Eigen::VectorXd& lam,
                                    const Eigen::VectorXd& gam_lo, const Eigen::VectorXd& gam_up,
                                    double mu) {
  Impl impl(nlp_, opt_);
  impl.s_f = 1.0;  // the public residual is reported for the unscaled problem
  EvalPoint ev;
  if (!impl.eval_point(w, ev, true)) fail(Errc::DomainError, "evaluation error at iterate");
  auto r = impl.scaled_residual(w, ev, lam, gam_lo, gam_up, mu);
  return {r.stat, r.feas, r.comp};
}

IpmSolution IpmSolver::solve(const Eigen::VectorXd& w0, const Eigen::VectorXd* lam0,
                             const Eigen::VectorXd* gam_lo0, const Eigen::VectorXd* gam_up0,
                             double mu0) {
  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };

  Impl impl(nlp_, opt_);
  const int n = impl.n, m = impl.m;
  IpmSolution sol;

  Eigen::VectorXd w = w0;
  if (static_cast<int>(w.size()) != n) fail(Errc::DimensionMismatch, "start point size");
  impl.push_interior(w);

  double mu = mu0 > 0 ? mu0 : opt_.mu_init;
  const double mu_min = opt_.tol / 10.0;
  mu = std::max(mu, mu_min);
  double tau = std::max(opt_.tau_min, 1.0 - mu);

  EvalPoint ev;
  if (!impl.eval_point(w, ev, true)) {
    sol.status = IpmStatus::EvalError;
    sol.message = "evaluation failed at the start point";
    sol.w = w;
    return sol;
  }

  // gradient-based objective scaling
  if (opt_.obj_scale_max_grad > 0) {
    const double gmax = ev.grad.lpNorm<Eigen::Infinity>();
    if (gmax > opt_.obj_scale_max_grad) {
      impl.s_f = opt_.obj_scale_max_grad / gmax;
      ev.f *= impl.s_f;
      ev.grad *= impl.s_f;
    }
  }

  // bound multipliers
  Eigen::VectorXd gl = Eigen::VectorXd::Zero(n), gu = Eigen::VectorXd::Zero(n);
  for (int i : impl.bnd.lo_idx) gl[i] = mu / (w[i] - impl.bnd.lo[i]);
  for (int i : impl.bnd.up_idx) gu[i] = mu / (impl.bnd.up[i] - w[i]);
  if (gam_lo0 != nullptr && gam_lo0->size() == n) gl = gam_lo0->cwiseMax(0.0);
  if (gam_up0 != nullptr && gam_up0->size() == n) gu = gam_up0->cwiseMax(0.0);

  // equality multipliers: least-squares stationarity solve via the augmented
  // system [[I, J'],[J, -eps I]], rescaled when too large
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(m);
  auto dual_least_squares = [&](const EvalPoint& at, const Eigen::VectorXd& gle,
                                const Eigen::VectorXd& gue) {
    return impl.dual_ls(at, gle, gue, opt_.dual_init_clip);
  };
  if (lam0 != nullptr && lam0->size() == m) {
    lam = *lam0;
  } else if (m > 0) {
    lam = dual_least_squares(ev, gl, gu);
  }
  if (opt_.verbose && m > 0) {
    auto r_init = impl.scaled_residual(w, ev, lam, gl, gu, mu);
    std::printf("  dual-init: |lam|=%.3e stat=%.3e feas=%.3e\n",
                lam.lpNorm<Eigen::Infinity>(), r_init.stat, r_init.feas);
  }

  const double theta0 = ev.c.lpNorm<1>();
  const double theta_max = 1e4 * std::max(1.0, theta0);
  double nu = 1.0;  // merit penalty, monotone within a barrier phase
  std::vector<std::pair<double, double>> filter;  // (theta, phi) upper bounds
  auto reset_filter = [&] {
    filter.clear();
    filter.emplace_back(theta_max, -std::numeric_limits<double>::infinity());
  };
  reset_filter();

  int restoration_count = 0;
  bool dual_reset_tried = false;
  int tiny_step_streak = 0;

  const bool ls_multipliers = opt_.hessian_mode == HessianMode::Lbfgs;
  if (ls_multipliers && m > 0) lam = dual_least_squares(ev, gl, gu);
  for (int iter = 0; iter < opt_.max_iter; ++iter) {
    // convergence at mu -> 0
    auto r0 = impl.scaled_residual(w, ev, lam, gl, gu, 0.0);
    if (r0.total() <= opt_.tol) {
      sol.status = IpmStatus::Optimal;
      sol.kkt_residual = r0.total();
      break;
    }
    // barrier subproblem convergence: tighten mu
    for (;;) {
      auto rmu = impl.scaled_residual(w, ev, lam, gl, gu, mu);
      if (rmu.total() <= opt_.kappa_eps * mu && mu > mu_min) {
        mu = std::max(mu_min, std::min(opt_.kappa_mu * mu, std::pow(mu, opt_.theta_mu)));
        tau = std::max(opt_.tau_min, 1.0 - mu);
        reset_filter();
        // recalibrate the merit penalty: transient multiplier spikes from the
        // previous barrier phase should not poison later line searches
        nu = std::min(nu, std::max(1.0, 10.0 * lam.lpNorm<Eigen::Infinity>()));
        continue;
      }
      break;
    }

    // assemble and solve the step equations
    Eigen::VectorXd sigma_diag = Eigen::VectorXd::Zero(n);
    for (int i : impl.bnd.lo_idx) sigma_diag[i] += gl[i] / (w[i] - impl.bnd.lo[i]);
    for (int i : impl.bnd.up_idx) sigma_diag[i] += gu[i] / (impl.bnd.up[i] - w[i]);
    Eigen::VectorXd grad_phi = impl.barrier_grad(w, ev.grad, mu);
    Eigen::VectorXd rhs(n + m);
    rhs.head(n) = -(grad_phi + impl.jac_t_mul(ev.jac, lam));
    rhs.tail(m) = -ev.c;

    auto step = impl.solve_step(w, ev, lam, sigma_diag, rhs, mu);
    if (!step.ok) {
      // regularization exhausted: try restoration once, else give up
      if (++restoration_count > 3) {
        sol.status = IpmStatus::Infeasible;
        sol.message = "KKT regularization exhausted";
        break;
      }
      EvalPoint er = ev;
      if (!impl.restore(w, er, mu, 0.5 * ev.c.lpNorm<1>() + opt_.tol)) {
        sol.status = IpmStatus::Infeasible;
        sol.message = "feasibility restoration failed";
        break;
      }
      ev = er;
      for (int i : impl.bnd.lo_idx) gl[i] = mu / (w[i] - impl.bnd.lo[i]);
      for (int i : impl.bnd.up_idx) gu[i] = mu / (impl.bnd.up[i] - w[i]);
      continue;
    }
    const Eigen::VectorXd& dw = step.dw;
    const Eigen::VectorXd& dlam = step.dlam;

    // dual directions from linearized complementarity
    Eigen::VectorXd dgl = Eigen::VectorXd::Zero(n), dgu = Eigen::VectorXd::Zero(n);
    for (int i : impl.bnd.lo_idx) {
      const double sl = w[i] - impl.bnd.lo[i];
      dgl[i] = mu / sl - gl[i] - gl[i] / sl * dw[i];
    }
    for (int i : impl.bnd.up_idx) {
      const double su = impl.bnd.up[i] - w[i];
      dgu[i] = mu / su - gu[i] + gu[i] / su * dw[i];
    }

    const double alpha_max = impl.fraction_to_boundary(w, dw, tau);
    if (opt_.verbose) {
      int binder = -1;
      double amin = 1.0;
      for (int i : impl.bnd.lo_idx) {
        if (dw[i] < 0) {
          double a = -tau * (w[i] - impl.bnd.lo[i]) / dw[i];
          if (a < amin) { amin = a; binder = i; }
        }
      }
      for (int i : impl.bnd.up_idx) {
        if (dw[i] > 0) {
          double a = tau * (impl.bnd.up[i] - w[i]) / dw[i];
          if (a < amin) { amin = a; binder = i; }
        }
      }
      if (binder >= 0)
        std::printf("  ftb: amax=%.3e var=%d w=%.6e lo=%.3e dw=%.3e\n", alpha_max, binder,
                    w[binder], impl.bnd.lo[binder], dw[binder]);
    }
    double alpha_d = 1.0;
    for (int i : impl.bnd.lo_idx) {
      if (dgl[i] < 0) alpha_d = std::min(alpha_d, -tau * gl[i] / dgl[i]);
    }
    for (int i : impl.bnd.up_idx) {
      if (dgu[i] < 0) alpha_d = std::min(alpha_d, -tau * gu[i] / dgu[i]);
    }

    // backtracking line search on the barrier merit phi_mu + nu ||c||_1, with
    // a pure feasibility-progress escape guarded by the filter memory
    const double theta_cur = ev.c.lpNorm<1>();
    const double phi_cur = impl.barrier_phi(w, ev.f, mu);
    const double dphi = grad_phi.dot(dw);
    // feasibility below this level is indistinguishable from roundoff in the
    // constraint evaluations
    const double theta_floor = 4.0 * std::numeric_limits<double>::epsilon() *
                               static_cast<double>(std::max(m, 1)) *
                               std::max(1.0, w.lpNorm<Eigen::Infinity>());
    // penalty weight keeping the quadratic merit model descending
    if (theta_cur > theta_floor) {
      const double curv = std::max(0.0, -dphi + ev.c.dot(lam + dlam));
      const double req = (dphi + 0.5 * curv) / (0.9 * theta_cur);
      if (req > nu) nu = req;
    }
    const double merit_cur = phi_cur + nu * theta_cur;
    const double dmerit = std::min(dphi - nu * theta_cur, 0.0);
    double alpha = alpha_max;
    bool accepted = false, armijo_case = false;
    EvalPoint et;
    Eigen::VectorXd wt;
    // tiny search direction: the primal cannot move measurably, accept the
    // full step so the multipliers can still converge
    const bool tiny_step = alpha_max * dw.lpNorm<Eigen::Infinity>() <=
                           10.0 * std::numeric_limits<double>::epsilon() *
                               std::max(1.0, w.lpNorm<Eigen::Infinity>());
    if (tiny_step) {
      wt = w + alpha * dw;
      if (impl.eval_point(wt, et, false)) {
        accepted = true;
        armijo_case = true;
      }
    }
    for (int ls = 0; ls < opt_.max_line_search && !accepted; ++ls) {
      wt = w + alpha * dw;
      if (!impl.eval_point(wt, et, false)) {
        if (opt_.verbose) std::printf("    ls a=%.3e eval-fail\n", alpha);
        alpha *= 0.5;
        continue;
      }
      const double theta_t = et.c.lpNorm<1>();
      const double phi_t = impl.barrier_phi(wt, et.f, mu);
      if (!std::isfinite(phi_t)) {
        if (opt_.verbose) std::printf("    ls a=%.3e phi-inf\n", alpha);
        alpha *= 0.5;
        continue;
      }
      const double merit_t = phi_t + nu * theta_t;
      if (opt_.verbose)
        std::printf("    ls a=%.3e th_t=%.6e phi_t=%.6e mer_t=%.6e vs mer=%.6e dmer=%.3e nu=%.2e\n",
                    alpha, theta_t, phi_t, merit_t, merit_cur, dmerit, nu);
      if (theta_cur <= theta_floor && theta_t <= theta_floor) {
        // feasibility is at the noise floor: compare the barrier objective
        const double slop_phi =
            10.0 * std::numeric_limits<double>::epsilon() * std::abs(phi_cur);
        if (phi_t <= phi_cur + opt_.eta_phi * alpha * std::min(dphi, 0.0) + slop_phi) {
          accepted = true;
          armijo_case = true;
          break;
        }
      } else {
        const double slop = 10.0 * std::numeric_limits<double>::epsilon() *
                            (std::abs(merit_cur) + nu * theta_cur);
        if (merit_t <= merit_cur + opt_.eta_phi * alpha * dmerit + slop) {
          accepted = true;
          armijo_case = true;
          break;
        }
      }
      bool filter_ok = true;
      for (const auto& [tf, pf] : filter) {
        if (theta_t >= tf && phi_t >= pf) {
          filter_ok = false;
          break;
        }
      }
      if (filter_ok && theta_t <= (1.0 - opt_.gamma_theta) * theta_cur) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }

    if (!accepted && !dual_reset_tried && m > 0) {
      // refresh the multipliers by least squares at the current point: a
      // poisoned dual estimate ruins both the Hessian and the step quality
      lam = dual_least_squares(ev, gl, gu);
      for (int i : impl.bnd.lo_idx) gl[i] = mu / (w[i] - impl.bnd.lo[i]);
      for (int i : impl.bnd.up_idx) gu[i] = mu / (impl.bnd.up[i] - w[i]);
      nu = std::max(1.0, std::min(nu, 10.0 * lam.lpNorm<Eigen::Infinity>()));
      reset_filter();
      dual_reset_tried = true;
      continue;
    }
    if (!accepted && theta_cur <= std::max(theta_floor, opt_.tol)) {
      // the primal is effectively feasible and cannot move; take the dual
      // step alone so the multipliers can still converge
      const double dli = m > 0 ? dlam.lpNorm<Eigen::Infinity>() : 0.0;
      const double budget = 10.0 * std::max(1.0, lam.lpNorm<Eigen::Infinity>());
      lam += (dli > budget ? budget / dli : 1.0) * dlam;
      for (int i : impl.bnd.lo_idx) {
        gl[i] = std::clamp(gl[i] + dgl[i], mu / (opt_.kappa_sigma * (w[i] - impl.bnd.lo[i])),
                           opt_.kappa_sigma * mu / (w[i] - impl.bnd.lo[i]));
      }
      for (int i : impl.bnd.up_idx) {
        gu[i] = std::clamp(gu[i] + dgu[i], mu / (opt_.kappa_sigma * (impl.bnd.up[i] - w[i])),
                           opt_.kappa_sigma * mu / (impl.bnd.up[i] - w[i]));
      }
      IterationRecord rec;
      rec.iter = iter;
      rec.mu = mu;
      rec.f = ev.f / impl.s_f;
      rec.theta = theta_cur;
      rec.alpha_p = 0.0;
      rec.alpha_d = 1.0;
      rec.inertia_corrections = step.corrections;
      rec.delta_h = step.delta_h;
      rec.seconds = elapsed();
      sol.log.push_back(rec);
      sol.iterations = iter + 1;
      continue;
    }
    if (!accepted) {
      if (++restoration_count > 6) {
        sol.status = IpmStatus::Infeasible;
        sol.message = "line search failed repeatedly";
        break;
      }
      EvalPoint er = ev;
      if (!impl.restore(w, er, mu, std::max(0.1 * theta_cur, opt_.tol))) {
        sol.status = IpmStatus::Infeasible;
        sol.message = "feasibility restoration failed";
        break;
      }
      ev = er;
      for (int i : impl.bnd.lo_idx) gl[i] = mu / (w[i] - impl.bnd.lo[i]);
      for (int i : impl.bnd.up_idx) gu[i] = mu / (impl.bnd.up[i] - w[i]);
      reset_filter();
      continue;
    }

    if (!armijo_case) {
      filter.emplace_back((1.0 - opt_.gamma_theta) * theta_cur,
                          phi_cur - opt_.gamma_phi * theta_cur);
    }

    // L-BFGS curvature pair: gradient of f + lam' c, both sides evaluated
    // with the multipliers of the new iterate (barrier excluded; the bound
    // terms enter the KKT matrix through Sigma separately)
    Eigen::VectorXd grad_old;
    std::vector<double> jac_old;
    if (impl.lbfgs) {
      grad_old = ev.grad;
      jac_old = ev.jac;
    }

    if (alpha > 1e-4) {
      dual_reset_tried = false;
      tiny_step_streak = 0;
    } else if (++tiny_step_streak >= 3 && !dual_reset_tried && m > 0) {
      // repeated microscopic steps: refresh the duals and start clean
      lam = dual_least_squares(ev, gl, gu);
      for (int i : impl.bnd.lo_idx) gl[i] = mu / (w[i] - impl.bnd.lo[i]);
      for (int i : impl.bnd.up_idx) gu[i] = mu / (impl.bnd.up[i] - w[i]);
      nu = std::max(1.0, std::min(nu, 10.0 * lam.lpNorm<Eigen::Infinity>()));
      reset_filter();
      dual_reset_tried = true;
      tiny_step_streak = 0;
      continue;
    }
    // accept the step; when the accepted primal motion is below evaluation
    // noise at a feasible point, the multipliers still take their full step
    const bool negligible_primal =
        alpha * dw.lpNorm<Eigen::Infinity>() <=
        100.0 * std::numeric_limits<double>::epsilon() *
            std::max(1.0, w.lpNorm<Eigen::Infinity>());
    Eigen::VectorXd lam_prev = lam;
    double alpha_lam = negligible_primal ? 1.0 : alpha;
    // dual safeguard: cap the multiplier growth per iteration; quasi-Newton
    // dual directions can otherwise run away
    const double dlam_inf = m > 0 ? dlam.lpNorm<Eigen::Infinity>() : 0.0;
    const double lam_budget = 10.0 * std::max(1.0, lam.lpNorm<Eigen::Infinity>());
    if (dlam_inf * alpha_lam > lam_budget) alpha_lam = lam_budget / dlam_inf;
    w = wt;
    lam += alpha_lam * dlam;
    if (!impl.eval_point(w, ev, true)) {
      sol.status = IpmStatus::EvalError;
      sol.message = "evaluation failed after an accepted step";
      break;
    }
    for (int i : impl.bnd.lo_idx) {
      gl[i] += alpha_d * dgl[i];
      const double sl = w[i] - impl.bnd.lo[i];
      gl[i] = std::clamp(gl[i], mu / (opt_.kappa_sigma * sl), opt_.kappa_sigma * mu / sl);
    }
    for (int i : impl.bnd.up_idx) {
      gu[i] += alpha_d * dgu[i];
      const double su = impl.bnd.up[i] - w[i];
      gu[i] = std::clamp(gu[i], mu / (opt_.kappa_sigma * su), opt_.kappa_sigma * mu / su);
    }

    // dual step quality guard: a multiplier move that wrecks stationarity at
    // the new point (ill-conditioned Jacobian, quasi-Newton dual noise) is
    // discarded in favor of the previous estimate
    if (m > 0 && alpha_lam > 0.0) {
      auto stat_norm = [&](const Eigen::VectorXd& lambda) {
        Eigen::VectorXd s = ev.grad + impl.jac_t_mul(ev.jac, lambda);
        for (int i : impl.bnd.lo_idx) s[i] -= gl[i];
        for (int i : impl.bnd.up_idx) s[i] += gu[i];
        return s.lpNorm<Eigen::Infinity>();
      };
      const double stat_new = stat_norm(lam);
      const double stat_old = stat_norm(lam_prev);
      if (stat_new > 10.0 * stat_old + opt_.tol) lam = lam_prev;
    }

    if (impl.lbfgs) {
      if (ls_multipliers && m > 0) lam = dual_least_squares(ev, gl, gu);
      Eigen::VectorXd eta_new = ev.grad + impl.jac_t_mul(ev.jac, lam);
      Eigen::VectorXd eta_old = grad_old + impl.jac_t_mul(jac_old, lam);
      impl.lbfgs->update(alpha * dw, eta_new - eta_old);
    }

    auto rlog = impl.scaled_residual(w, ev, lam, gl, gu, mu);
    if (opt_.verbose)
      std::printf("  it=%d |dw|=%.2e |dlam|=%.2e |lam|=%.2e a=%.2e ad=%.2e stat=%.2e th=%.2e nu=%.2e\n",
                  iter, dw.lpNorm<Eigen::Infinity>(), dlam.lpNorm<Eigen::Infinity>(),
                  lam.lpNorm<Eigen::Infinity>(), alpha, alpha_d, rlog.stat, ev.c.lpNorm<1>(), nu);
    IterationRecord rec;
    rec.iter = iter;
    rec.mu = mu;
    rec.f = ev.f / impl.s_f;
    rec.theta = ev.c.lpNorm<1>();
    rec.stat = rlog.stat;
    rec.comp = rlog.comp;
    rec.alpha_p = alpha;
    rec.alpha_d = alpha_d;
    rec.inertia_corrections = step.corrections;
    rec.delta_h = step.delta_h;
    rec.seconds = elapsed();
    sol.log.push_back(rec);
    sol.iterations = iter + 1;
  }

  if (sol.status == IpmStatus::MaxIter) {
    auto r0 = impl.scaled_residual(w, ev, lam, gl, gu, 0.0);
    sol.kkt_residual = r0.total();
    sol.message = "iteration limit reached";
  }
  if (sol.status == IpmStatus::Optimal && sol.message.empty()) sol.message = "converged";

  // report within the original (unrelaxed) bounds
  for (int i = 0; i < n; ++i) w[i] = std::clamp(w[i], nlp_.lower()[i], nlp_.upper()[i]);
  sol.w = w;
  sol.lam = lam;
  sol.gam_lo = gl;
  sol.gam_up = gu;
  sol.f = ev.ok ? ev.f / impl.s_f : std::numeric_limits<double>::quiet_NaN();
  sol.mu = mu;
  return sol;
}

}  // namespace ndae
