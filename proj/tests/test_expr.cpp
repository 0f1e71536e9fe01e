#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "ndae/expr.hpp"

using namespace ndae;
using namespace ndae::expr;

namespace {

Eigen::VectorXd eval_vec(const Function& f, const Eigen::VectorXd& w) {
  Workspace ws;
  return f.eval(w, ws);
}

// Central finite differences of one output row.
Eigen::VectorXd fd_gradient(const Function& f, int row, const Eigen::VectorXd& w,
                            double h = 1e-6) {
  Workspace ws;
  Eigen::VectorXd g(w.size());
  for (int i = 0; i < w.size(); ++i) {
    Eigen::VectorXd wp = w, wm = w;
    wp[i] += h;
    wm[i] -= h;
    g[i] = (f.eval(wp, ws)[row] - f.eval(wm, ws)[row]) / (2 * h);
  }
  return g;
}

Eigen::MatrixXd dense_jacobian(const Function& f, const Eigen::VectorXd& w) {
  Workspace ws;
  std::vector<double> vals(f.jac_sparsity().nnz());
  f.jacobian({w.data(), static_cast<std::size_t>(w.size())}, vals, ws);
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(f.n_out(), f.n_vars());
  const auto& sp = f.jac_sparsity();
  for (int r = 0; r < f.n_out(); ++r) {
    for (std::int32_t k = sp.row_ptr[r]; k < sp.row_ptr[r + 1]; ++k) {
      J(r, sp.cols[k]) = vals[k];
    }
  }
  return J;
}

Eigen::MatrixXd dense_lagrangian_hessian(const Function* obj, const Function* cons,
                                         const Eigen::VectorXd& w, double sigma,
                                         const Eigen::VectorXd& mult) {
  Workspace ws;
  std::vector<double> vals;
  auto pat = hessian_of_lagrangian(obj, cons, {w.data(), static_cast<std::size_t>(w.size())},
                                   sigma, {mult.data(), static_cast<std::size_t>(mult.size())},
                                   vals, ws);
  int n = obj ? obj->n_vars() : cons->n_vars();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t e = 0; e < pat.nnz(); ++e) {
    H(pat.rows[e], pat.cols[e]) = vals[e];
    H(pat.cols[e], pat.rows[e]) = vals[e];
  }
  return H;
}

// Exact reverse gradient as a dense vector.
Eigen::VectorXd fd_free_exact(const Function& f, int row, const Eigen::VectorXd& w);

// FD of the exact gradient of sigma*f + mult'c.
Eigen::MatrixXd fd_hessian(const Function* obj, const Function* cons, const Eigen::VectorXd& w,
                           double sigma, const Eigen::VectorXd& mult, double h = 1e-5) {
  const int n = obj ? obj->n_vars() : cons->n_vars();
  auto lag_grad = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
    if (obj) g += sigma * fd_free_exact(*obj, 0, x);
    if (cons) {
      for (int r = 0; r < cons->n_out(); ++r) g += mult[r] * fd_free_exact(*cons, r, x);
    }
    return g;
  };
  Eigen::MatrixXd H(n, n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd wp = w, wm = w;
    wp[i] += h;
    wm[i] -= h;
    H.col(i) = (lag_grad(wp) - lag_grad(wm)) / (2 * h);
  }
  return 0.5 * (H + H.transpose());
}

Eigen::VectorXd fd_free_exact(const Function& f, int row, const Eigen::VectorXd& w) {
  Workspace ws;
  const auto& sp = f.jac_sparsity();
  std::vector<double> vals(sp.row_ptr[row + 1] - sp.row_ptr[row]);
  f.gradient({w.data(), static_cast<std::size_t>(w.size())}, row, vals, ws);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(f.n_vars());
  for (std::int32_t k = sp.row_ptr[row]; k < sp.row_ptr[row + 1]; ++k) {
    g[sp.cols[k]] = vals[k - sp.row_ptr[row]];
  }
  return g;
}

// Random expression generator over n variables: builds a DAG mixing every op.
NodeId random_expr(Graph& g, std::mt19937_64& rng, int n_vars, int depth) {
  std::uniform_int_distribution<int> pick(0, 9);
  std::uniform_int_distribution<int> varpick(0, n_vars - 1);
  std::uniform_real_distribution<double> cpick(0.3, 2.0);
  if (depth == 0) {
    if (pick(rng) < 7) return g.variable(varpick(rng));
    return g.constant(cpick(rng));
  }
  NodeId a = random_expr(g, rng, n_vars, depth - 1);
  NodeId b = random_expr(g, rng, n_vars, depth - 1);
  switch (pick(rng)) {
    case 0: {
      NodeId kk[2] = {a, b};
      return g.add(kk);
    }
    case 1:
    case 2: {
      NodeId kk[2] = {a, b};
      return g.mul(kk);
    }
    case 3:
      return g.pow(a, 2);
    case 4: {
      // keep denominators away from zero: 2 + tanh(b)
      NodeId kk[2] = {g.constant(2.0), g.tanh(b)};
      return g.div(a, g.add(kk));
    }
    case 5:
      return g.neg(a);
    case 6:
      return g.tanh(a);
    case 7: {
      NodeId kk[2] = {g.constant(1.2), g.tanh(a)};  // argument in (0.2, 2.2)
      return g.log(g.add(kk));
    }
    case 8: {
      NodeId kk[2] = {g.constant(1.5), g.tanh(a)};
      return g.sqrt(g.add(kk));
    }
    default:
      return g.exp(g.tanh(a));  // bounded argument
  }
}

}  // namespace

TEST_CASE("eval basics match stated examples") {
  Graph g(2);
  Workspace ws;
  // tanh(0) = 0
  Function t(g, std::vector<NodeId>{g.tanh(g.variable(0))});
  Eigen::VectorXd w0 = Eigen::VectorXd::Zero(2);
  CHECK(eval_vec(t, w0)[0] == 0.0);

  // softplus(0) = ln 2
  Graph g2(1);
  NodeId kk[2] = {g2.constant(1.0), g2.exp(g2.variable(0))};
  Function sp(g2, std::vector<NodeId>{g2.log(g2.add(kk))});
  Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
  CHECK(eval_vec(sp, z)[0] == doctest::Approx(0.6931471805599453).epsilon(1e-15));

  // 0.1*x*y at (1,2) = 0.2
  Graph g3(2);
  NodeId mm[3] = {g3.constant(0.1), g3.variable(0), g3.variable(1)};
  Function f3(g3, std::vector<NodeId>{g3.mul(mm)});
  Eigen::VectorXd w3(2);
  w3 << 1, 2;
  CHECK(eval_vec(f3, w3)[0] == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("eval is deterministic (bit-identical)") {
  std::mt19937_64 rng(7);
  Graph g(4);
  NodeId r = random_expr(g, rng, 4, 5);
  Function f(g, std::vector<NodeId>{r});
  Eigen::VectorXd w(4);
  w << 0.3, -0.8, 1.7, 0.05;
  Eigen::VectorXd a = eval_vec(f, w), b = eval_vec(f, w);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
}

TEST_CASE("domain errors are reported, not NaN") {
  Graph g(1);
  Function flog(g, std::vector<NodeId>{g.log(g.variable(0))});
  Workspace ws;
  Eigen::VectorXd w(1);
  w << -1.0;
  CHECK_THROWS_AS(flog.eval(w, ws), DomainError);

  Graph g2(1);
  Function fsqrt(g2, std::vector<NodeId>{g2.sqrt(g2.variable(0))});
  w << -0.5;
  CHECK_THROWS_AS(fsqrt.eval(w, ws), DomainError);
  w << 0.0;  // sqrt(0) itself is fine
  CHECK(fsqrt.eval(w, ws)[0] == 0.0);

  Graph g3(2);
  Function fdiv(g3, std::vector<NodeId>{g3.div(g3.variable(0), g3.variable(1))});
  Eigen::VectorXd w2(2);
  w2 << 1.0, 0.0;
  CHECK_THROWS_AS(fdiv.eval(w2, ws), DomainError);

  Graph g4(1);
  Function fexp(g4, std::vector<NodeId>{g4.exp(g4.variable(0), 100.0)});
  w << 101.0;
  CHECK_THROWS_AS(fexp.eval(w, ws), DomainError);
  w << 99.0;
  CHECK(std::isfinite(fexp.eval(w, ws)[0]));
}

TEST_CASE("gradient: polynomial and tanh examples") {
  Graph g(2);
  Expr x = g.var(0), y = g.var(1);
  Expr f = pow(x, 2) + pow(y, 2);
  Function fn(g, std::vector<NodeId>{f.id});
  Eigen::VectorXd w(2);
  w << 1, 2;
  Eigen::VectorXd grad = fd_free_exact(fn, 0, w);
  CHECK(grad[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(grad[1] == doctest::Approx(4.0).epsilon(1e-14));

  Graph g2(1);
  Function ft(g2, std::vector<NodeId>{g2.tanh(g2.variable(0))});
  Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
  CHECK(fd_free_exact(ft, 0, z)[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("jacobian: stated examples") {
  Graph g(2);
  Expr x = g.var(0), y = g.var(1);
  Function f(g, std::vector<NodeId>{(x + y).id, (x * y).id});
  Eigen::VectorXd w(2);
  w << 3, 4;
  Eigen::MatrixXd J = dense_jacobian(f, w);
  CHECK(J(0, 0) == doctest::Approx(1.0));
  CHECK(J(0, 1) == doctest::Approx(1.0));
  CHECK(J(1, 0) == doctest::Approx(4.0));
  CHECK(J(1, 1) == doctest::Approx(3.0));

  // identity map on 5 vars: 5x5 identity pattern
  Graph g5(5);
  std::vector<NodeId> outs;
  for (int i = 0; i < 5; ++i) outs.push_back(g5.variable(i));
  Function id5(g5, outs);
  const auto& sp = id5.jac_sparsity();
  REQUIRE(sp.nnz() == 5);
  for (int r = 0; r < 5; ++r) {
    CHECK(sp.row_ptr[r + 1] - sp.row_ptr[r] == 1);
    CHECK(sp.cols[sp.row_ptr[r]] == r);
  }
}

TEST_CASE("hessian: trivial examples") {
  // f = x^2 -> H = [[2]]
  Graph g(1);
  Function f(g, std::vector<NodeId>{g.pow(g.variable(0), 2)});
  Eigen::VectorXd w(1);
  w << 0.7;
  Eigen::MatrixXd H = dense_lagrangian_hessian(&f, nullptr, w, 1.0, Eigen::VectorXd());
  CHECK(H(0, 0) == doctest::Approx(2.0).epsilon(1e-14));

  // constraint x*y with multiplier 3 -> H(x,y) = 3
  Graph g2(2);
  NodeId mm[2] = {g2.variable(0), g2.variable(1)};
  Function c(g2, std::vector<NodeId>{g2.mul(mm)});
  Eigen::VectorXd mult(1);
  mult << 3.0;
  Eigen::VectorXd w2(2);
  w2 << 0.1, -0.4;
  Eigen::MatrixXd H2 = dense_lagrangian_hessian(nullptr, &c, w2, 0.0, mult);
  CHECK(H2(0, 1) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(H2(1, 0) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(H2(0, 0) == 0.0);
}

TEST_CASE("random graphs: gradient/jacobian/hessian vs finite differences") {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> wpick(-0.9, 0.9);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 3 + static_cast<int>(rng() % 4);
    Graph g(n);
    std::vector<NodeId> outs;
    const int n_out = 1 + static_cast<int>(rng() % 3);
    for (int r = 0; r < n_out; ++r) outs.push_back(random_expr(g, rng, n, 4));
    Function f(g, outs);
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) w[i] = wpick(rng);

    Eigen::MatrixXd J = dense_jacobian(f, w);
    for (int r = 0; r < f.n_out(); ++r) {
      Eigen::VectorXd gfd = fd_gradient(f, r, w);
      for (int i = 0; i < n; ++i) {
        const double scale = std::max(1.0, std::abs(gfd[i]));
        CHECK(std::abs(J(r, i) - gfd[i]) / scale <= 1e-6);
      }
    }

    Eigen::VectorXd mult(f.n_out());
    for (int r = 0; r < f.n_out(); ++r) mult[r] = wpick(rng);
    Eigen::MatrixXd H = dense_lagrangian_hessian(nullptr, &f, w, 0.0, mult);
    CHECK((H - H.transpose()).cwiseAbs().maxCoeff() == 0.0);  // symmetric by construction
    Eigen::MatrixXd Hfd = fd_hessian(nullptr, &f, w, 0.0, mult);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double scale = std::max(1.0, std::abs(Hfd(i, j)));
        CHECK(std::abs(H(i, j) - Hfd(i, j)) / scale <= 1e-5);
      }
    }
  }
}

TEST_CASE("sparsity patterns never under-report") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> wpick(-0.9, 0.9);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 4;
    Graph g(n);
    std::vector<NodeId> outs{random_expr(g, rng, n, 4), random_expr(g, rng, n, 3)};
    Function f(g, outs);
    for (int pt = 0; pt < 10; ++pt) {
      Eigen::VectorXd w(n);
      for (int i = 0; i < n; ++i) w[i] = wpick(rng);
      Eigen::MatrixXd J = dense_jacobian(f, w);
      const auto& sp = f.jac_sparsity();
      for (int r = 0; r < f.n_out(); ++r) {
        Eigen::VectorXd gfd = fd_gradient(f, r, w);
        for (int i = 0; i < n; ++i) {
          if (std::abs(gfd[i]) > 1e-7) {
            bool in_pattern = false;
            for (std::int32_t k = sp.row_ptr[r]; k < sp.row_ptr[r + 1]; ++k) {
              if (sp.cols[k] == i) in_pattern = true;
            }
            CHECK(in_pattern);
          }
        }
      }
    }
  }
}

TEST_CASE("common subexpressions are shared") {
  Graph g(2);
  Expr x = g.var(0), y = g.var(1);
  Expr a = tanh(x * y);
  Expr b = tanh(x * y);
  CHECK(a.id == b.id);
  Expr c = tanh(x * y) + 0.0;  // adding zero folds back to the shared node
  CHECK(c.id == a.id);
}

TEST_CASE("emit maps a graph into another with substitution and refolding") {
  Graph src(2);
  Expr u = src.var(0), v = src.var(1);
  Expr r = u * v + sqrt(u + 1.0);
  Graph dst(3);
  // substitute u -> var2 of dst, v -> constant 4
  std::vector<NodeId> sub{dst.variable(2), dst.constant(4.0)};
  auto roots = dst.emit(src, std::vector<NodeId>{r.id}, sub);
  Function f(dst, roots);
  Eigen::VectorXd w(3);
  w << 0, 0, 3.0;
  CHECK(eval_vec(f, w)[0] == doctest::Approx(12.0 + 2.0).epsilon(1e-15));
}
