#include <doctest.h>

#include <cmath>

#include "ndae/cases.hpp"
#include "ndae/sim.hpp"

using namespace ndae;

TEST_CASE("truth simulation of dx/dt = -x hits exp(-1) within 1e-9") {
  ModelBuilder mb(1, 0, 0);
  mb.state(0, "x");
  mb.horizon(0.0, 1.0);
  mb.dynamics({(-mb.x(0)).id});
  mb.trajectory(Eigen::VectorXd::Ones(1));
  auto model = mb.build();

  SimulateOptions so;
  so.n_fe = 40;
  so.K = 3;
  auto truth = simulate_truth(model, so);
  CHECK(std::abs(truth.states_at(0, 1.0)[0] - std::exp(-1.0)) <= 1e-9);
  CHECK(truth.doubling_error <= 1e-7);
}

TEST_CASE("tank truth conserves total fluid volume") {
  TankParams p;
  Eigen::VectorXd x0(4);
  x0 << 2.0, 1.0, 1.0, 4.0;
  auto model = build_tank(p, CaseMode::Truth, 0.0, 2.5, {x0});
  SimulateOptions so;
  so.n_fe = 240;
  so.K = 3;
  auto truth = simulate_truth(model, so);

  auto total_volume = [&](double t) {
    Eigen::VectorXd x = truth.states_at(0, t);
    double v = 0.0;
    for (int i = 0; i < 4; ++i) v += p.profiles.volume[i](x[i]);
    return v;
  };
  const double v0 = total_volume(0.0);
  for (int i = 1; i <= 20; ++i) {
    CHECK(std::abs(total_volume(2.5 * i / 20.0) - v0) <= 1e-6);
  }
}

TEST_CASE("population trajectory from the fixed point stays constant") {
  PopulationParams p;
  Eigen::VectorXd fp(2);
  fp << p.fixed_point_x0(), p.fixed_point_x1();
  auto model = build_population(p, false, CaseMode::Truth, 0.0, 30.0, {fp});
  SimulateOptions so;
  so.n_fe = 40;
  so.K = 3;
  auto truth = simulate_truth(model, so);
  for (int i = 0; i <= 10; ++i) {
    Eigen::VectorXd x = truth.states_at(0, 3.0 * i);
    CHECK(std::abs(x[0] - fp[0]) <= 1e-9);
    CHECK(std::abs(x[1] - fp[1]) <= 1e-9);
  }
}

TEST_CASE("population truth descends the Lyapunov function") {
  PopulationParams p;
  Eigen::VectorXd x0(2);
  x0 << 1.0, 1.0;
  auto model = build_population(p, false, CaseMode::Truth, 0.0, 30.0, {x0});
  SimulateOptions so;
  so.n_fe = 200;
  so.K = 3;
  auto truth = simulate_truth(model, so);
  double prev = kInf;
  for (int i = 0; i <= 120; ++i) {
    Eigen::VectorXd x = truth.states_at(0, 30.0 * i / 120.0);
    const double v = lyapunov_value(p, x[0], x[1]);
    CHECK(v <= prev + 1e-8);
    prev = v;
  }
}

TEST_CASE("fed-batch volume grows linearly under constant feed") {
  FedbatchParams p;
  Eigen::VectorXd x0(4);
  x0 << 0.05, 0.0, 10.0, 1.0;
  auto model = build_fedbatch(p, CaseMode::Truth, 0.0, 20.0, {x0});
  SimulateOptions so;
  so.n_fe = 40;
  so.K = 3;
  auto truth = simulate_truth(model, so);
  for (int i = 0; i <= 10; ++i) {
    const double t = 2.0 * i;
    CHECK(std::abs(truth.states_at(0, t)[3] - (1.0 + p.feed_rate * t)) <= 1e-10);
  }
}

TEST_CASE("observations: determinism, zero noise, sample std") {
  ModelBuilder mb(1, 0, 0);
  mb.state(0, "x");
  mb.horizon(0.0, 1.0);
  mb.dynamics({(mb.x(0) * 0.0).id});  // constant state
  mb.trajectory(Eigen::VectorXd::Ones(1));
  auto model = mb.build();
  SimulateOptions so;
  so.n_fe = 8;
  so.K = 2;
  auto truth = simulate_truth(model, so);

  auto grid = uniform_times(0.0, 1.0, 1000);
  auto a = make_observations(truth, {grid}, {0}, 0.05, 99, NoiseKind::Absolute);
  auto b = make_observations(truth, {grid}, {0}, 0.05, 99, NoiseKind::Absolute);
  CHECK(a.trajectories[0].values == b.trajectories[0].values);  // same seed, same draws

  auto clean = make_observations(truth, {grid}, {0}, 0.0, 99);
  for (int i = 0; i < 1000; ++i) {
    CHECK(clean.trajectories[0].values(i, 0) == truth.states_at(0, grid[i])[0]);
  }

  // chi-square 99% band for the sample std of 1000 draws at sigma = 0.05
  const auto& v = a.trajectories[0].values;
  const double mean = v.col(0).mean();
  const double sd = std::sqrt((v.col(0).array() - mean).square().sum() / (v.rows() - 1));
  CHECK(sd >= 0.045);
  CHECK(sd <= 0.055);

  CHECK_THROWS_AS(make_observations(truth, {{1.5}}, {0}, 0.0, 1), Error);
}
