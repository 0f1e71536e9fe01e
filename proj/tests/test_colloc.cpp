#include <doctest.h>

#include <cmath>

#include "ndae/colloc.hpp"
#include "ndae/ipm.hpp"

using namespace ndae;

namespace {

// dx/dt = -x, x(0) = 1; no algebraics, no network, zero objective.
ContinuousModel decay_model() {
  ModelBuilder mb(1, 0, 0);
  mb.state(0, "x");
  mb.horizon(0.0, 1.0);
  mb.dynamics({(-mb.x(0)).id});
  mb.trajectory(Eigen::VectorXd::Ones(1));
  return mb.build();
}

IpmSolution square_solve(const DiscretizedNlp& nlp, double tol = 1e-10) {
  ExprNlp std_nlp(nlp);
  IpmOptions o;
  o.tol = tol;
  o.max_iter = 200;
  IpmSolver solver(std_nlp, o);
  return solver.solve(std_nlp.extend_point(nlp.default_initial_point()));
}

}  // namespace

TEST_CASE("radau points: stated values and errors") {
  CHECK(radau_points(1).size() == 1);
  CHECK(radau_points(1)[0] == 1.0);

  Eigen::VectorXd t2 = radau_points(2);
  CHECK(std::abs(t2[0] - 1.0 / 3.0) <= 1e-12);
  CHECK(t2[1] == 1.0);

  Eigen::VectorXd t3 = radau_points(3);
  CHECK(std::abs(t3[0] - (4.0 - std::sqrt(6.0)) / 10.0) <= 1e-10);
  CHECK(std::abs(t3[1] - (4.0 + std::sqrt(6.0)) / 10.0) <= 1e-10);
  CHECK(t3[2] == 1.0);

  for (int K = 1; K <= 5; ++K) {
    Eigen::VectorXd t = radau_points(K);
    for (int i = 1; i < K; ++i) CHECK(t[i] > t[i - 1]);
    CHECK(t[K - 1] == 1.0);
  }

  CHECK_THROWS_AS(radau_points(0), Error);
  CHECK_THROWS_AS(radau_points(6), Error);
}

TEST_CASE("basis derivative matrix: linear case and column sums") {
  Eigen::VectorXd pts(2);
  pts << 0.0, 1.0;
  Eigen::MatrixXd D = basis_derivative_matrix(pts);
  CHECK(D(0, 0) == doctest::Approx(-1.0));
  CHECK(D(1, 0) == doctest::Approx(1.0));

  Eigen::VectorXd tau(4);
  tau << 0.0, radau_points(3)[0], radau_points(3)[1], 1.0;
  Eigen::MatrixXd D3 = basis_derivative_matrix(tau);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(D3.col(k).sum()) <= 1e-13);

  Eigen::VectorXd dup(3);
  dup << 0.0, 0.5, 0.5;
  CHECK_THROWS_AS(basis_derivative_matrix(dup), Error);
}

TEST_CASE("interpolating t^2 on K=2 Radau points reproduces the derivative") {
  Eigen::VectorXd tau(3);
  tau << 0.0, 1.0 / 3.0, 1.0;
  Eigen::MatrixXd D = basis_derivative_matrix(tau);
  for (int k = 1; k <= 2; ++k) {
    double deriv = 0.0;
    for (int j = 0; j <= 2; ++j) deriv += tau[j] * tau[j] * D(j, k - 1);
    CHECK(std::abs(deriv - 2.0 * tau[k]) <= 1e-12);
  }
}

TEST_CASE("square solve of dx/dt = -x hits exp(-1) at t=1") {
  auto model = decay_model();
  auto scheme = CollocationScheme::make(20, 3, 0.0, 1.0);
  TranscribeOptions topt;
  topt.data_objective = false;
  auto nlp = transcribe(model, scheme, topt);

  // layout formula: square problem
  CHECK(nlp.n_eq() == 1 * (1 * 20 * 3 + 1 * 19 + 1));
  CHECK(nlp.n_vars() == 1 * 20 * (3 + 1));

  auto sol = square_solve(nlp);
  REQUIRE(sol.status == IpmStatus::Optimal);
  Eigen::VectorXd x;
  nlp.interpolate(sol.w, 0, 1.0, &x, nullptr, nullptr);
  CHECK(std::abs(x[0] - std::exp(-1.0)) <= 1e-8);

  // continuity at the accepted solution
  for (int e = 0; e + 1 < 20; ++e) {
    double xl = 0.0;
    for (int j = 0; j <= 3; ++j) xl += nlp.scheme().ell_at_one[j] * sol.w[nlp.ix(0, e, j, 0)];
    CHECK(std::abs(sol.w[nlp.ix(0, e + 1, 0, 0)] - xl) <= 1e-9);
  }

  // mid-element interpolation matches the analytic solution
  for (double t : {0.123, 0.5, 0.987}) {
    nlp.interpolate(sol.w, 0, t, &x, nullptr, nullptr);
    CHECK(std::abs(x[0] - std::exp(-t)) <= 1e-8);
  }

  // t = t0 returns x0 and t = collocation point returns the stored value
  nlp.interpolate(sol.w, 0, 0.0, &x, nullptr, nullptr);
  CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-12));
  const double tpt = nlp.scheme().element_start(4) + nlp.scheme().tau[2] * nlp.scheme().h[4];
  nlp.interpolate(sol.w, 0, tpt, &x, nullptr, nullptr);
  CHECK(std::abs(x[0] - sol.w[nlp.ix(0, 4, 2, 0)]) <= 1e-13);

  CHECK_THROWS_AS(nlp.interpolate(sol.w, 0, 1.5, &x, nullptr, nullptr), Error);
}

TEST_CASE("observed convergence order >= K on the linear test ODE") {
  auto model = decay_model();
  double errs[2];
  int idx = 0;
  for (int n_fe : {5, 10}) {
    auto scheme = CollocationScheme::make(n_fe, 3, 0.0, 1.0);
    TranscribeOptions topt;
    topt.data_objective = false;
    auto nlp = transcribe(model, scheme, topt);
    auto sol = square_solve(nlp, 1e-12);
    REQUIRE(sol.status == IpmStatus::Optimal);
    Eigen::VectorXd x;
    nlp.interpolate(sol.w, 0, 1.0, &x, nullptr, nullptr);
    errs[idx++] = std::abs(x[0] - std::exp(-1.0));
  }
  CHECK(errs[0] / errs[1] >= 8.0);  // order >= 3
}

TEST_CASE("polynomial exactness: dx/dt = q'(t) reproduces q at collocation points") {
  // q(t) = t^3 with K = 3: exact at the collocation points
  ModelBuilder mb(1, 0, 0, 0, /*with_time=*/true);
  mb.state(0, "x");
  mb.horizon(0.0, 2.0);
  mb.dynamics({(3.0 * pow(mb.t(), 2)).id});
  mb.trajectory(Eigen::VectorXd::Zero(1));
  auto model = mb.build();
  auto scheme = CollocationScheme::make(4, 3, 0.0, 2.0);
  TranscribeOptions topt;
  topt.data_objective = false;
  auto nlp = transcribe(model, scheme, topt);
  auto sol = square_solve(nlp, 1e-12);
  REQUIRE(sol.status == IpmStatus::Optimal);
  for (int e = 0; e < 4; ++e) {
    for (int k = 1; k <= 3; ++k) {
      const double t = scheme.element_start(e) + scheme.tau[k] * scheme.h[e];
      CHECK(std::abs(sol.w[nlp.ix(0, e, k, 0)] - t * t * t) <= 1e-10);
    }
  }
}

TEST_CASE("multi-trajectory transcription stacks per-trajectory blocks") {
  ModelBuilder mb(1, 0, 0);
  mb.state(0, "x");
  mb.horizon(0.0, 1.0);
  mb.dynamics({(-mb.x(0)).id});
  mb.trajectory(Eigen::VectorXd::Ones(1));
  mb.trajectory(2.0 * Eigen::VectorXd::Ones(1));
  auto model2 = mb.build();

  auto scheme = CollocationScheme::make(5, 2, 0.0, 1.0);
  TranscribeOptions topt;
  topt.data_objective = false;
  auto nlp2 = transcribe(model2, scheme, topt);
  auto nlp1 = transcribe(decay_model(), CollocationScheme::make(5, 2, 0.0, 1.0), topt);

  CHECK(nlp2.n_eq() == 2 * nlp1.n_eq());
  CHECK(nlp2.n_vars() == 2 * nlp1.n_vars());

  // first block of the 2-trajectory problem evaluates like the single one
  Eigen::VectorXd w1 = nlp1.default_initial_point();
  Eigen::VectorXd w2 = nlp2.default_initial_point();
  expr::Workspace ws;
  Eigen::VectorXd c1 = nlp1.equalities().eval(w1, ws);
  Eigen::VectorXd c2 = nlp2.equalities().eval(w2, ws);
  for (int r = 0; r < nlp1.n_eq(); ++r) CHECK(c2[r] == doctest::Approx(c1[r]).epsilon(1e-15));
}

TEST_CASE("element_of attributes boundaries to the left element") {
  auto scheme = CollocationScheme::make(4, 2, 0.0, 4.0);
  CHECK(scheme.element_of(0.0) == 0);
  CHECK(scheme.element_of(1.0) == 0);
  CHECK(scheme.element_of(1.0 + 1e-12) == 1);
  CHECK(scheme.element_of(4.0) == 3);
  CHECK_THROWS_AS(scheme.element_of(4.5), Error);
}
