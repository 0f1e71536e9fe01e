#include "ndae/colloc.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace ndae {

namespace {

// Monomial coefficients of the Legendre polynomial P_n on [-1, 1].
std::vector<double> legendre_coeffs(int n) {
  std::vector<double> pm1{1.0};  // P_0
  if (n == 0) return pm1;
  std::vector<double> p{0.0, 1.0};  // P_1
  for (int k = 1; k < n; ++k) {
    std::vector<double> next(k + 2, 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) next[i + 1] += (2.0 * k + 1.0) * p[i] / (k + 1.0);
    for (std::size_t i = 0; i < pm1.size(); ++i) next[i] -= k * pm1[i] / (k + 1.0);
    pm1 = std::move(p);
    p = std::move(next);
  }
  return p;
}

// Roots of P_K - P_{K-1} via the companion matrix, mapped to (0, 1].
Eigen::VectorXd radau_oracle(int K) {
  std::vector<double> pk = legendre_coeffs(K);
  std::vector<double> pk1 = legendre_coeffs(K - 1);
  std::vector<double> r(pk.size(), 0.0);
  for (std::size_t i = 0; i < pk.size(); ++i) r[i] = pk[i];
  for (std::size_t i = 0; i < pk1.size(); ++i) r[i] -= pk1[i];

  const int deg = K;
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(deg, deg);
  for (int i = 1; i < deg; ++i) companion(i, i - 1) = 1.0;
  for (int i = 0; i < deg; ++i) companion(i, deg - 1) = -r[i] / r[deg];

  Eigen::EigenSolver<Eigen::MatrixXd> es(companion);
  std::vector<double> roots;
  for (int i = 0; i < deg; ++i) {
    const auto ev = es.eigenvalues()[i];
    if (std::abs(ev.imag()) < 1e-9) roots.push_back(ev.real());
  }
  if (static_cast<int>(roots.size()) != K)
    fail(Errc::NonConverged, "Radau companion-matrix oracle returned complex roots");
  std::sort(roots.begin(), roots.end());

  Eigen::VectorXd tau(K);
  for (int i = 0; i < K; ++i) tau[i] = 0.5 * (roots[i] + 1.0);
  if (std::abs(tau[K - 1] - 1.0) > 1e-9)
    fail(Errc::NonConverged, "Radau oracle: right endpoint missing");
  tau[K - 1] = 1.0;

  // Verify quadrature exactness up to degree 2K-2 before accepting.
  Eigen::MatrixXd V(K, K);
  Eigen::VectorXd m(K);
  for (int q = 0; q < K; ++q) {
    for (int i = 0; i < K; ++i) V(q, i) = std::pow(tau[i], q);
    m[q] = 1.0 / (q + 1.0);
  }
  Eigen::VectorXd w = V.fullPivLu().solve(m);
  for (int q = 0; q <= 2 * K - 2; ++q) {
    double s = 0.0;
    for (int i = 0; i < K; ++i) s += w[i] * std::pow(tau[i], q);
    if (std::abs(s - 1.0 / (q + 1.0)) > 1e-12)
      fail(Errc::NonConverged, "Radau oracle failed quadrature exactness check");
  }
  return tau;
}

void check_distinct(const Eigen::VectorXd& pts) {
  for (int i = 0; i < pts.size(); ++i) {
    for (int j = i + 1; j < pts.size(); ++j) {
      if (pts[i] == pts[j]) fail(Errc::DuplicatePoints, "interpolation points must be distinct");
    }
  }
}

}  // namespace

Eigen::VectorXd radau_points(int K) {
  if (K < 1 || K > 5) fail(Errc::UnsupportedOrder, "Radau order must be in 1..5");
  static const std::array<Eigen::VectorXd, 5> cache = [] {
    std::array<Eigen::VectorXd, 5> c;
    for (int k = 1; k <= 5; ++k) c[k - 1] = radau_oracle(k);
    return c;
  }();
  return cache[K - 1];
}

Eigen::MatrixXd lagrange_derivative_matrix(const Eigen::VectorXd& pts,
                                           const Eigen::VectorXd& at) {
  check_distinct(pts);
  const int n = static_cast<int>(pts.size());
  Eigen::MatrixXd D(n, at.size());
  for (int j = 0; j < n; ++j) {
    double denom = 1.0;
    for (int k = 0; k < n; ++k) {
      if (k != j) denom *= pts[j] - pts[k];
    }
    for (int c = 0; c < at.size(); ++c) {
      double s = 0.0;
      for (int m = 0; m < n; ++m) {
        if (m == j) continue;
        double prod = 1.0;
        for (int k = 0; k < n; ++k) {
          if (k != j && k != m) prod *= at[c] - pts[k];
        }
        s += prod;
      }
      D(j, c) = s / denom;
    }
  }
  return D;
}

Eigen::MatrixXd basis_derivative_matrix(const Eigen::VectorXd& pts) {
  if (pts.size() < 2) fail(Errc::DimensionMismatch, "need at least two points");
  return lagrange_derivative_matrix(pts, pts.tail(pts.size() - 1));
}

Eigen::VectorXd lagrange_values(const Eigen::VectorXd& pts, double tau) {
  const int n = static_cast<int>(pts.size());
  Eigen::VectorXd l(n);
  for (int j = 0; j < n; ++j) {
    double v = 1.0;
    for (int k = 0; k < n; ++k) {
      if (k != j) v *= (tau - pts[k]) / (pts[j] - pts[k]);
    }
    l[j] = v;
  }
  return l;
}

CollocationScheme CollocationScheme::make(int n_fe, int K, double t0, double tf,
                                          std::vector<double> lengths) {
  if (n_fe < 1) fail(Errc::DimensionMismatch, "element count must be >= 1");
  if (!(tf > t0)) fail(Errc::EmptyHorizon, "tf must exceed t0");
  CollocationScheme s;
  s.n_fe = n_fe;
  s.K = K;
  s.t0 = t0;
  s.tf = tf;
  if (lengths.empty()) {
    s.h.assign(n_fe, (tf - t0) / n_fe);
  } else {
    if (static_cast<int>(lengths.size()) != n_fe)
      fail(Errc::DimensionMismatch, "element length count != n_fe");
    double total = 0.0;
    for (double hi : lengths) {
      if (!(hi > 0)) fail(Errc::DimensionMismatch, "element lengths must be positive");
      total += hi;
    }
    const double scale = (tf - t0) / total;
    s.h = std::move(lengths);
    for (double& hi : s.h) hi *= scale;
  }
  Eigen::VectorXd radau = radau_points(K);
  s.tau.resize(K + 1);
  s.tau[0] = 0.0;
  s.tau.tail(K) = radau;
  s.D = basis_derivative_matrix(s.tau);
  s.Dbar = lagrange_derivative_matrix(radau, radau);
  s.ell_at_one = lagrange_values(s.tau, 1.0);
  return s;
}

double CollocationScheme::element_start(int i) const {
  double t = t0;
  for (int e = 0; e < i; ++e) t += h[e];
  return t;
}

int CollocationScheme::element_of(double t) const {
  const double tol = 1e-12 * std::max(1.0, std::abs(tf - t0));
  if (t < t0 - tol || t > tf + tol) fail(Errc::OutOfHorizon, "time outside the horizon");
  if (t <= t0) return 0;
  double end = t0;
  for (int i = 0; i < n_fe; ++i) {
    end += h[i];
    if (t <= end || i == n_fe - 1) return i;
  }
  return n_fe - 1;
}

double CollocationScheme::local_tau(int elem, double t) const {
  return (t - element_start(elem)) / h[elem];
}

// ---------------------------------------------------------------------------
// DiscretizedNlp

int DiscretizedNlp::n_eq() const { return equalities_ ? equalities_->n_out() : 0; }
int DiscretizedNlp::n_ineq() const { return inequalities_ ? inequalities_->n_out() : 0; }

int DiscretizedNlp::ix(int traj, int elem, int j, int d) const {
  return traj * traj_stride_ + elem * (n_x_ * (scheme_.K + 1)) + j * n_x_ + d;
}
int DiscretizedNlp::iy(int traj, int elem, int k, int d) const {
  return traj * traj_stride_ + x_block_ + elem * (n_y_ * scheme_.K) + (k - 1) * n_y_ + d;
}
int DiscretizedNlp::iz(int traj, int elem, int k, int d) const {
  return traj * traj_stride_ + x_block_ + y_block_ + elem * (n_z_ * scheme_.K) +
         (k - 1) * n_z_ + d;
}
int DiscretizedNlp::itheta(int t) const { return theta_offset_ + t; }

Eigen::VectorXd DiscretizedNlp::default_initial_point() const {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n_vars_);
  for (int tr = 0; tr < n_traj_; ++tr) {
    for (int e = 0; e < scheme_.n_fe; ++e) {
      for (int j = 0; j <= scheme_.K; ++j) {
        for (int d = 0; d < n_x_; ++d) w[ix(tr, e, j, d)] = model_.x0[tr][d];
      }
    }
  }
  int free_idx = 0;
  for (const auto& p : model_.params) {
    if (!p.fixed) w[ip_free(free_idx++)] = p.value;
  }
  return w;
}

void DiscretizedNlp::interpolate(const Eigen::VectorXd& w, int traj, double t,
                                 Eigen::VectorXd* x, Eigen::VectorXd* y,
                                 Eigen::VectorXd* z) const {
  const int e = scheme_.element_of(t);
  const double tau = scheme_.local_tau(e, t);
  if (x != nullptr) {
    Eigen::VectorXd lx = lagrange_values(scheme_.tau, tau);
    x->resize(n_x_);
    for (int d = 0; d < n_x_; ++d) {
      double v = 0.0;
      for (int j = 0; j <= scheme_.K; ++j) v += lx[j] * w[ix(traj, e, j, d)];
      (*x)[d] = v;
    }
  }
  Eigen::VectorXd lr;
  if ((y != nullptr && n_y_ > 0) || (z != nullptr && n_z_ > 0)) {
    lr = lagrange_values(scheme_.tau.tail(scheme_.K), tau);
  }
  if (y != nullptr) {
    y->resize(n_y_);
    for (int d = 0; d < n_y_; ++d) {
      double v = 0.0;
      for (int k = 1; k <= scheme_.K; ++k) v += lr[k - 1] * w[iy(traj, e, k, d)];
      (*y)[d] = v;
    }
  }
  if (z != nullptr) {
    z->resize(n_z_);
    for (int d = 0; d < n_z_; ++d) {
      double v = 0.0;
      for (int k = 1; k <= scheme_.K; ++k) v += lr[k - 1] * w[iz(traj, e, k, d)];
      (*z)[d] = v;
    }
  }
}

Eigen::MatrixXd DiscretizedNlp::collocation_states(const Eigen::VectorXd& w, int traj) const {
  Eigen::MatrixXd X(scheme_.n_fe * scheme_.K, n_x_);
  int r = 0;
  for (int e = 0; e < scheme_.n_fe; ++e) {
    for (int k = 1; k <= scheme_.K; ++k, ++r) {
      for (int d = 0; d < n_x_; ++d) X(r, d) = w[ix(traj, e, k, d)];
    }
  }
  return X;
}

Eigen::MatrixXd DiscretizedNlp::collocation_outputs(const Eigen::VectorXd& w, int traj) const {
  Eigen::MatrixXd Z(scheme_.n_fe * scheme_.K, n_z_);
  int r = 0;
  for (int e = 0; e < scheme_.n_fe; ++e) {
    for (int k = 1; k <= scheme_.K; ++k, ++r) {
      for (int d = 0; d < n_z_; ++d) Z(r, d) = w[iz(traj, e, k, d)];
    }
  }
  return Z;
}

Eigen::MatrixXd DiscretizedNlp::collocation_algebraics(const Eigen::VectorXd& w, int traj) const {
  Eigen::MatrixXd Y(scheme_.n_fe * scheme_.K, n_y_);
  int r = 0;
  for (int e = 0; e < scheme_.n_fe; ++e) {
    for (int k = 1; k <= scheme_.K; ++k, ++r) {
      for (int d = 0; d < n_y_; ++d) Y(r, d) = w[iy(traj, e, k, d)];
    }
  }
  return Y;
}

void DiscretizedNlp::seed_from_interpolation(Eigen::VectorXd& w, const DiscretizedNlp& other,
                                             const Eigen::VectorXd& w_other) const {
  Eigen::VectorXd xv, yv, zv;
  for (int tr = 0; tr < n_traj_; ++tr) {
    for (int e = 0; e < scheme_.n_fe; ++e) {
      const double ts = scheme_.element_start(e);
      for (int j = 0; j <= scheme_.K; ++j) {
        const double t = ts + scheme_.tau[j] * scheme_.h[e];
        other.interpolate(w_other, tr, t, &xv, j == 0 ? nullptr : &yv,
                          j == 0 ? nullptr : &zv);
        for (int d = 0; d < n_x_; ++d) w[ix(tr, e, j, d)] = xv[d];
        if (j > 0) {
          for (int d = 0; d < n_y_; ++d) w[iy(tr, e, j, d)] = yv[d];
          for (int d = 0; d < n_z_; ++d) w[iz(tr, e, j, d)] = zv[d];
        }
      }
    }
  }
  int nf = std::min(n_free_p_, other.n_free_p_);
  for (int i = 0; i < nf; ++i) w[ip_free(i)] = w_other[other.ip_free(i)];
  if (n_theta_ > 0 && other.n_theta_ == n_theta_) {
    for (int i = 0; i < n_theta_; ++i) w[itheta(i)] = w_other[other.itheta(i)];
  }
}

// ---------------------------------------------------------------------------
// transcribe

DiscretizedNlp transcribe(const ContinuousModel& model, const CollocationScheme& scheme,
                          const TranscribeOptions& options) {
  if (options.couple_neural && options.network == nullptr)
    fail(Errc::MissingNetwork, "neural coupling requested without a network spec");
  if (options.couple_neural && options.network->n_outputs() != model.n_z())
    fail(Errc::ShapeMismatch, "network output count != neural output count");
  if (model.n_traj() == 0) fail(Errc::DimensionMismatch, "model has no trajectories");
  if (options.data_objective && model.observations.empty())
    fail(Errc::DimensionMismatch, "data objective requested without observations");

  DiscretizedNlp nlp;
  nlp.model_ = model;
  nlp.scheme_ = scheme;
  nlp.n_traj_ = model.n_traj();
  nlp.n_x_ = model.n_x();
  nlp.n_y_ = model.n_y();
  nlp.n_z_ = model.n_z();
  const int K = scheme.K, n_fe = scheme.n_fe;
  nlp.x_block_ = nlp.n_x_ * n_fe * (K + 1);
  nlp.y_block_ = nlp.n_y_ * n_fe * K;
  nlp.z_block_ = nlp.n_z_ * n_fe * K;
  nlp.traj_stride_ = nlp.x_block_ + nlp.y_block_ + nlp.z_block_;
  nlp.p_offset_ = nlp.n_traj_ * nlp.traj_stride_;
  nlp.n_free_p_ = 0;
  for (const auto& p : model.params) {
    if (!p.fixed) ++nlp.n_free_p_;
  }
  // theta variables only when the network couples with free weights
  const bool theta_vars = options.couple_neural && options.theta_values == nullptr;
  nlp.n_theta_ = theta_vars ? options.network->n_theta() : 0;
  nlp.theta_offset_ = nlp.p_offset_ + nlp.n_free_p_;
  const bool relax_neural = options.couple_neural && options.neural_slack_penalty > 0.0;
  const int n_neural_rows = relax_neural ? nlp.n_traj_ * n_fe * K * model.n_z() : 0;
  const int slack_offset = nlp.theta_offset_ + nlp.n_theta_;
  nlp.n_vars_ = slack_offset + 2 * n_neural_rows;

  expr::Graph g(nlp.n_vars_);
  int next_slack = slack_offset;

  // parameter nodes (shared across trajectories)
  std::vector<expr::NodeId> p_nodes(model.n_p());
  {
    int free_idx = 0;
    for (int d = 0; d < model.n_p(); ++d) {
      p_nodes[d] = model.params[d].fixed ? g.constant(model.params[d].value)
                                         : g.variable(nlp.ip_free(free_idx++));
    }
  }

  std::vector<expr::NodeId> eq_rows, ineq_rows, obj_terms;
  std::vector<RowClass> eq_classes;

  const int n_model_vars = model.n_model_vars();
  std::vector<expr::NodeId> subst(n_model_vars);

  for (int tr = 0; tr < nlp.n_traj_; ++tr) {
    for (int e = 0; e < n_fe; ++e) {
      const double t_start = scheme.element_start(e);
      for (int k = 1; k <= K; ++k) {
        // substitution for model expressions at point (e, k)
        for (int d = 0; d < model.n_x(); ++d)
          subst[model.var_x(d)] = g.variable(nlp.ix(tr, e, k, d));
        for (int d = 0; d < model.n_y(); ++d)
          subst[model.var_y(d)] = g.variable(nlp.iy(tr, e, k, d));
        for (int d = 0; d < model.n_z(); ++d)
          subst[model.var_z(d)] = g.variable(nlp.iz(tr, e, k, d));
        for (int d = 0; d < model.n_p(); ++d) subst[model.var_p(d)] = p_nodes[d];
        if (model.has_time)
          subst[model.var_t()] = g.constant(t_start + scheme.tau[k] * scheme.h[e]);

        auto f_vals = g.emit(model.graph, model.dynamics, subst);
        // collocation rows: sum_j D(j,k) x_ij - h_e f_d = 0
        for (int d = 0; d < model.n_x(); ++d) {
          std::vector<expr::NodeId> terms;
          terms.reserve(K + 2);
          for (int j = 0; j <= K; ++j) {
            expr::NodeId kk[2] = {g.constant(scheme.D(j, k - 1)),
                                  g.variable(nlp.ix(tr, e, j, d))};
            terms.push_back(g.mul(kk));
          }
          expr::NodeId hf[2] = {g.constant(scheme.h[e]), f_vals[d]};
          terms.push_back(g.neg(g.mul(hf)));
          eq_rows.push_back(g.add(terms));
          eq_classes.push_back(RowClass::Collocation);
        }

        if (!model.algebraic_eqs.empty()) {
          auto h_vals = g.emit(model.graph, model.algebraic_eqs, subst);
          for (expr::NodeId r : h_vals) {
            eq_rows.push_back(r);
            eq_classes.push_back(RowClass::Algebraic);
          }
        }

        if (options.couple_neural) {
          std::vector<expr::NodeId> nn_in(model.neural_inputs.size());
          for (std::size_t ii = 0; ii < model.neural_inputs.size(); ++ii)
            nn_in[ii] = subst[model.neural_inputs[ii]];
          auto nn_out = emit_expressions(*options.network, g, nn_in, nlp.theta_offset_,
                                         options.theta_values);
          for (int d = 0; d < model.n_z(); ++d) {
            std::vector<expr::NodeId> row{subst[model.var_z(d)], g.neg(nn_out[d])};
            if (relax_neural) {
              const int sp = next_slack++, sm = next_slack++;
              row.push_back(g.neg(g.variable(sp)));
              row.push_back(g.variable(sm));
              std::vector<expr::NodeId> pen{g.variable(sp), g.variable(sm)};
              expr::NodeId kk[2] = {g.constant(options.neural_slack_penalty), g.add(pen)};
              obj_terms.push_back(g.mul(kk));
            }
            eq_rows.push_back(g.add(row));
            eq_classes.push_back(RowClass::Neural);
          }
        }

        if (!model.path_ineqs.empty()) {
          auto g_vals = g.emit(model.graph, model.path_ineqs, subst);
          for (expr::NodeId r : g_vals) ineq_rows.push_back(r);
        }

        if (options.lambda_s > 0.0) {
          // smoothing penalty on the reduced-basis derivative of z
          for (int d = 0; d < model.n_z(); ++d) {
            std::vector<expr::NodeId> terms;
            terms.reserve(K);
            for (int j = 1; j <= K; ++j) {
              expr::NodeId kk[2] = {g.constant(scheme.Dbar(j - 1, k - 1)),
                                    g.variable(nlp.iz(tr, e, j, d))};
              terms.push_back(g.mul(kk));
            }
            expr::NodeId dz = g.add(terms);
            expr::NodeId sq[2] = {g.constant(options.lambda_s), g.pow(dz, 2)};
            obj_terms.push_back(g.mul(sq));
          }
        }
      }
    }

    // continuity rows: x_{i+1,0} = sum_j l_j(1) x_{i,j}
    for (int e = 0; e + 1 < n_fe; ++e) {
      for (int d = 0; d < model.n_x(); ++d) {
        std::vector<expr::NodeId> terms;
        terms.reserve(K + 2);
        terms.push_back(g.variable(nlp.ix(tr, e + 1, 0, d)));
        for (int j = 0; j <= K; ++j) {
          expr::NodeId kk[2] = {g.constant(scheme.ell_at_one[j]),
                                g.variable(nlp.ix(tr, e, j, d))};
          terms.push_back(g.neg(g.mul(kk)));
        }
        eq_rows.push_back(g.add(terms));
        eq_classes.push_back(RowClass::Continuity);
      }
    }

    // initial conditions
    for (int d = 0; d < model.n_x(); ++d) {
      std::vector<expr::NodeId> row{g.variable(nlp.ix(tr, 0, 0, d)),
                                    g.constant(-model.x0[tr][d])};
      eq_rows.push_back(g.add(row));
      eq_classes.push_back(RowClass::InitialCondition);
    }

    // data loss: in-element Lagrange interpolation at observation times
    if (options.data_objective) {
      const auto& obs = model.observations.trajectories[tr];
      for (std::size_t oi = 0; oi < obs.times.size(); ++oi) {
        const int e = scheme.element_of(obs.times[oi]);
        const double tau = scheme.local_tau(e, obs.times[oi]);
        Eigen::VectorXd lx = lagrange_values(scheme.tau, tau);
        for (std::size_t sc = 0; sc < obs.observed_states.size(); ++sc) {
          const int d = obs.observed_states[sc];
          std::vector<expr::NodeId> terms;
          terms.reserve(K + 2);
          for (int j = 0; j <= K; ++j) {
            if (lx[j] == 0.0) continue;
            expr::NodeId kk[2] = {g.constant(lx[j]), g.variable(nlp.ix(tr, e, j, d))};
            terms.push_back(g.mul(kk));
          }
          terms.push_back(g.constant(-obs.values(oi, sc)));
          obj_terms.push_back(g.pow(g.add(terms), 2));
        }
      }
    }
  }

  // theta regularization
  if (theta_vars && options.lambda_r > 0.0) {
    std::vector<expr::NodeId> reg;
    reg.reserve(nlp.n_theta_);
    for (int i = 0; i < nlp.n_theta_; ++i) reg.push_back(g.pow(g.variable(nlp.itheta(i)), 2));
    expr::NodeId kk[2] = {g.constant(options.lambda_r), g.add(reg)};
    obj_terms.push_back(g.mul(kk));
  }

  expr::NodeId obj_root = obj_terms.empty() ? g.constant(0.0) : g.add(obj_terms);

  // bounds; the j = 0 points are equality-pinned (initial conditions and
  // continuity), so they carry no box bounds of their own
  for (int tr = 0; tr < nlp.n_traj_; ++tr) {
    for (int d = 0; d < model.n_x(); ++d) {
      if (model.x0[tr][d] < model.states[d].lb || model.x0[tr][d] > model.states[d].ub)
        fail(Errc::InconsistentInitialState, "initial state violates declared state bounds");
    }
  }
  nlp.lb_ = Eigen::VectorXd::Constant(nlp.n_vars_, -kInf);
  nlp.ub_ = Eigen::VectorXd::Constant(nlp.n_vars_, kInf);
  for (int s = slack_offset; s < nlp.n_vars_; ++s) nlp.lb_[s] = 0.0;
  for (int tr = 0; tr < nlp.n_traj_; ++tr) {
    for (int e = 0; e < n_fe; ++e) {
      for (int d = 0; d < model.n_x(); ++d) {
        for (int j = 1; j <= K; ++j) {
          nlp.lb_[nlp.ix(tr, e, j, d)] = model.states[d].lb;
          nlp.ub_[nlp.ix(tr, e, j, d)] = model.states[d].ub;
        }
      }
      for (int k = 1; k <= K; ++k) {
        for (int d = 0; d < model.n_y(); ++d) {
          nlp.lb_[nlp.iy(tr, e, k, d)] = model.algebraics[d].lb;
          nlp.ub_[nlp.iy(tr, e, k, d)] = model.algebraics[d].ub;
        }
        for (int d = 0; d < model.n_z(); ++d) {
          nlp.lb_[nlp.iz(tr, e, k, d)] = model.neural_outputs[d].lb;
          nlp.ub_[nlp.iz(tr, e, k, d)] = model.neural_outputs[d].ub;
        }
      }
    }
  }
  {
    int free_idx = 0;
    for (const auto& p : model.params) {
      if (!p.fixed) {
        nlp.lb_[nlp.ip_free(free_idx)] = p.lb;
        nlp.ub_[nlp.ip_free(free_idx)] = p.ub;
        ++free_idx;
      }
    }
  }

  nlp.objective_.emplace(g, std::vector<expr::NodeId>{obj_root});
  nlp.equalities_.emplace(g, eq_rows);
  if (!ineq_rows.empty()) nlp.inequalities_.emplace(g, ineq_rows);
  nlp.eq_classes_ = std::move(eq_classes);
  return nlp;
}

}  // namespace ndae
