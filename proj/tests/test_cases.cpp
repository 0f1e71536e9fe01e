#include <doctest.h>

#include <cmath>

#include "ndae/cases.hpp"

using namespace ndae;

namespace {

std::vector<Eigen::VectorXd> tank_x0() {
  Eigen::VectorXd a(4);
  a << 2.0, 1.0, 1.0, 4.0;
  return {a};
}

}  // namespace

TEST_CASE("tank builds in both modes with the documented layout") {
  TankParams p;
  auto truth = build_tank(p, CaseMode::Truth, 0.0, 2.5, tank_x0());
  CHECK(truth.n_x() == 4);
  CHECK(truth.n_y() == 5);
  CHECK(truth.n_z() == 0);
  CHECK(truth.algebraic_eqs.size() == 5);

  auto neural = build_tank(p, CaseMode::NeuralUnknown, 0.0, 2.5, tank_x0());
  CHECK(neural.n_x() == 4);
  CHECK(neural.n_y() == 3);
  CHECK(neural.n_z() == 2);
  CHECK(neural.algebraic_eqs.size() == 3);  // known rows after index reduction
  CHECK(neural.neural_inputs == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("tank rejects inconsistent initial levels") {
  Eigen::VectorXd bad(4);
  bad << 2.0, 1.0, 1.5, 4.0;  // x1(0) != x2(0)
  CHECK_THROWS_AS(build_tank(TankParams{}, CaseMode::Truth, 0.0, 2.5, {bad}), Error);
}

TEST_CASE("tank flows vanish at zero levels") {
  TankParams p;
  auto m = build_tank(p, CaseMode::Truth, 0.0, 2.5, tank_x0());
  expr::Function h(m.graph, m.algebraic_eqs);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(m.n_model_vars());
  expr::Workspace ws;
  Eigen::VectorXd r = h.eval(w, ws);
  // with x = 0 and all flows 0 every algebraic residual vanishes (sqrt(0)=0)
  CHECK(r.lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("population fixed point is an equilibrium with dV/dt = 0") {
  PopulationParams p;
  const double xs = p.fixed_point_x0(), ys = p.fixed_point_x1();
  CHECK(xs == doctest::Approx(0.2 * 0.01 / (0.2 * 0.2 + 0.01 * 0.1)));

  Eigen::VectorXd fp(2);
  fp << xs, ys;
  auto m = build_population(p, /*with_lyapunov=*/true, CaseMode::Truth, 0.0, 30.0, {fp});
  CHECK(m.n_x() == 3);
  CHECK(m.path_ineqs.size() == 1);

  expr::Function f(m.graph, m.dynamics);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(m.n_model_vars());
  w[0] = xs;
  w[1] = ys;
  w[2] = lyapunov_value(p, xs, ys);
  expr::Workspace ws;
  Eigen::VectorXd dx = f.eval(w, ws);
  CHECK(std::abs(dx[0]) <= 1e-14);
  CHECK(std::abs(dx[1]) <= 1e-14);
  CHECK(std::abs(dx[2]) <= 1e-14);  // dV/dt at equilibrium
}

TEST_CASE("lyapunov value attains its minimum at the fixed point") {
  PopulationParams p;
  const double xs = p.fixed_point_x0(), ys = p.fixed_point_x1();
  const double vstar = lyapunov_value(p, xs, ys);
  for (int i = 0; i <= 12; ++i) {
    for (int j = 0; j <= 12; ++j) {
      const double x = xs * (0.5 + 1.5 * i / 12.0);
      const double y = ys * (0.5 + 1.5 * j / 12.0);
      CHECK(lyapunov_value(p, x, y) >= vstar - 1e-12);
    }
  }
}

TEST_CASE("fed-batch Monod properties and volume guard") {
  FedbatchParams p;
  CHECK(p.monod(p.K_S) == p.mu_max / 2.0);                       // half saturation
  CHECK(std::abs(p.monod(1000 * p.K_S) - p.mu_max) <= 1e-3 * p.mu_max);  // saturation
  CHECK(p.monod(0.0) == 0.0);  // no substrate, no growth

  Eigen::VectorXd ok(4), bad(4);
  ok << 0.05, 0.0, 10.0, 1.0;
  bad << 0.05, 0.0, 10.0, 0.0;
  CHECK_NOTHROW(build_fedbatch(p, CaseMode::Truth, 0.0, 20.0, {ok}));
  CHECK_THROWS_AS(build_fedbatch(p, CaseMode::Truth, 0.0, 20.0, {bad}), Error);

  // at S = 0 the growth term vanishes: dX/dt reduces to the dilution term
  auto m = build_fedbatch(p, CaseMode::Truth, 0.0, 20.0, {ok});
  expr::Function f(m.graph, m.dynamics);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(m.n_model_vars());
  w[0] = 0.7;  // X
  w[3] = 1.0;  // V
  // S = 0; with F = 0 the derivative must be exactly 0
  FedbatchParams p0 = p;
  p0.feed_rate = 0.0;
  auto m0 = build_fedbatch(p0, CaseMode::Truth, 0.0, 20.0, {ok});
  expr::Function f0(m0.graph, m0.dynamics);
  Eigen::VectorXd w0 = Eigen::VectorXd::Zero(m0.n_model_vars());
  w0[0] = 0.7;
  w0[3] = 1.0;
  expr::Workspace ws;
  Eigen::VectorXd dx = f0.eval(w0, ws);
  CHECK(dx[0] == 0.0);
}
