#include "ndae/cases.hpp"

#include <cmath>

namespace ndae {

using expr::Expr;

TankProfiles tank_training_profiles() {
  TankProfiles p;
  p.phi[0] = [](Expr x) { return 0.1 + 0.0 * x; };
  p.phi[1] = [](Expr x) { return 0.5 + 0.0 * x; };
  p.phi[2] = [](Expr x) { return 2.0 + 0.0 * x; };
  p.phi[3] = [](Expr x) { return 10.0 + 0.0 * x; };
  p.volume[0] = [](double x) { return 0.1 * x; };
  p.volume[1] = [](double x) { return 0.5 * x; };
  p.volume[2] = [](double x) { return 2.0 * x; };
  p.volume[3] = [](double x) { return 10.0 * x; };
  return p;
}

TankProfiles tank_eval_profiles() {
  TankProfiles p;
  p.phi[0] = [](Expr x) { return sqrt(x + 0.1); };
  p.phi[1] = [](Expr x) { return 0.1 + 0.0 * x; };
  p.phi[2] = [](Expr x) { return x + 0.1; };
  p.phi[3] = [](Expr x) { return 10.0 + 0.0 * x; };
  p.volume[0] = [](double x) {
    return (2.0 / 3.0) * (std::pow(x + 0.1, 1.5) - std::pow(0.1, 1.5));
  };
  p.volume[1] = [](double x) { return 0.1 * x; };
  p.volume[2] = [](double x) { return 0.5 * x * x + 0.1 * x; };
  p.volume[3] = [](double x) { return 10.0 * x; };
  return p;
}

ContinuousModel build_tank(const TankParams& params, CaseMode mode, double t0, double tf,
                           const std::vector<Eigen::VectorXd>& x0s) {
  for (const auto& x0 : x0s) {
    if (x0.size() != 4) fail(Errc::DimensionMismatch, "tank initial state needs 4 levels");
    if (std::abs(x0[1] - x0[2]) > 1e-12)
      fail(Errc::InconsistentInitialState,
           "the level equality x1(t) = x2(t) requires x1(0) = x2(0)");
  }

  const auto& prof = params.profiles;
  if (mode == CaseMode::Truth) {
    // algebraics: y0 (pump), y1, y2, y3, y4
    ModelBuilder mb(4, 5, 0);
    mb.state(0, "x0", 0.0).state(1, "x1", 0.0).state(2, "x2", 0.0).state(3, "x3", 0.0);
    mb.algebraic(0, "y0", 0.0).algebraic(1, "y1", 0.0).algebraic(2, "y2")
        .algebraic(3, "y3", 0.0).algebraic(4, "y4", 0.0);
    mb.horizon(t0, tf);
    Expr x0 = mb.x(0), x1 = mb.x(1), x2 = mb.x(2), x3 = mb.x(3);
    Expr y0 = mb.y(0), y1 = mb.y(1), y2 = mb.y(2), y3 = mb.y(3), y4 = mb.y(4);
    mb.dynamics({((y1 - y3) / prof.phi[0](x0)).id,
                 (y2 / prof.phi[1](x1)).id,
                 ((y3 - y4) / prof.phi[2](x2)).id,
                 ((y4 - y0) / prof.phi[3](x3)).id});
    // index-reduced level equality, flow split, known outflow, pump law,
    // unknown outflow
    mb.algebraic_eqs({(y2 / prof.phi[1](x1) - (y3 - y4) / prof.phi[2](x2)).id,
                      (y0 - y1 - y2).id,
                      (y4 - params.alpha2 * sqrt(x2)).id,
                      (y0 - 0.1 * x0 * x3).id,
                      (y3 - params.alpha1 * sqrt(x0)).id});
    for (const auto& x0v : x0s) mb.trajectory(x0v);
    return mb.build();
  }

  // NeuralUnknown: z0 replaces y0 (pump law), z1 replaces y3 (tank-0 outflow)
  ModelBuilder mb(4, 3, 2);
  mb.state(0, "x0", 0.0).state(1, "x1", 0.0).state(2, "x2", 0.0).state(3, "x3", 0.0);
  mb.algebraic(0, "y1", 0.0).algebraic(1, "y2").algebraic(2, "y4", 0.0);
  mb.neural_output(0, "z_y0", 0.0).neural_output(1, "z_y3", 0.0);
  mb.horizon(t0, tf);
  Expr x0 = mb.x(0), x1 = mb.x(1), x2 = mb.x(2), x3 = mb.x(3);
  Expr y1 = mb.y(0), y2 = mb.y(1), y4 = mb.y(2);
  Expr z0 = mb.z(0), z1 = mb.z(1);
  mb.dynamics({((y1 - z1) / prof.phi[0](x0)).id,
               (y2 / prof.phi[1](x1)).id,
               ((z1 - y4) / prof.phi[2](x2)).id,
               ((y4 - z0) / prof.phi[3](x3)).id});
  mb.algebraic_eqs({(y2 / prof.phi[1](x1) - (z1 - y4) / prof.phi[2](x2)).id,
                    (z0 - y1 - y2).id,
                    (y4 - params.alpha2 * sqrt(x2)).id});
  mb.neural_inputs({0, 1, 2, 3});
  for (const auto& x0v : x0s) mb.trajectory(x0v);
  return mb.build();
}

double lyapunov_value(const PopulationParams& p, double x0, double x1) {
  const double xs = p.fixed_point_x0(), ys = p.fixed_point_x1();
  return std::log(x0 / xs) + xs / x0 +
         (p.a1 * xs / p.a2) * (std::log(x1 / ys) + ys / x1);
}

ContinuousModel build_population(const PopulationParams& params, bool with_lyapunov,
                                 CaseMode mode, double t0, double tf,
                                 const std::vector<Eigen::VectorXd>& x0s) {
  const int n_x = with_lyapunov ? 3 : 2;
  const int n_z = mode == CaseMode::NeuralUnknown ? 1 : 0;
  ModelBuilder mb(n_x, 0, n_z);
  mb.state(0, "x0", params.x0_lower_bound);
  mb.state(1, "x1", params.x0_lower_bound);
  if (with_lyapunov) mb.state(2, "V");
  mb.horizon(t0, tf);

  Expr x0 = mb.x(0), x1 = mb.x(1);
  Expr f0 = (params.r1 - params.a1 * x1 - params.b1 * x0) * x0;
  Expr growth = mode == CaseMode::NeuralUnknown ? mb.z(0)
                                                : (params.r2 - params.a2 * (x1 / x0));
  Expr f1 = growth * x1;

  std::vector<expr::NodeId> dyn{f0.id, f1.id};
  if (with_lyapunov) {
    const double xs = params.fixed_point_x0(), ys = params.fixed_point_x1();
    Expr dV_dx0 = 1.0 / x0 - xs / pow(x0, 2);
    Expr dV_dx1 = (params.a1 * xs / params.a2) * (1.0 / x1 - ys / pow(x1, 2));
    Expr dVdt = dV_dx0 * f0 + dV_dx1 * f1;
    dyn.push_back(dVdt.id);
    mb.path_ineqs({dVdt.id});  // dV/dt <= 0 along the trajectory
  }
  mb.dynamics(std::move(dyn));
  if (mode == CaseMode::NeuralUnknown) {
    mb.neural_output(0, "z");
    mb.neural_inputs({0, 1});  // V is bookkeeping, not a network input
  }
  for (const auto& x0v : x0s) {
    if (x0v.size() != 2) fail(Errc::DimensionMismatch, "population initial state is (x0, x1)");
    if (!with_lyapunov) {
      mb.trajectory(x0v);
    } else {
      Eigen::VectorXd ext(3);
      ext << x0v[0], x0v[1], lyapunov_value(params, x0v[0], x0v[1]);
      mb.trajectory(ext);
    }
  }
  return mb.build();
}

ContinuousModel build_fedbatch(const FedbatchParams& params, CaseMode mode, double t0, double tf,
                               const std::vector<Eigen::VectorXd>& x0s) {
  for (const auto& x0 : x0s) {
    if (x0.size() != 4) fail(Errc::DimensionMismatch, "fed-batch initial state is (X, P, S, V)");
    if (!(x0[3] > 0)) fail(Errc::NonpositiveVolume, "reactor volume must start positive");
  }
  const int n_z = mode == CaseMode::NeuralUnknown ? 1 : 0;
  ModelBuilder mb(4, 0, n_z, 0, /*with_time=*/true);
  mb.state(0, "X", 0.0).state(1, "P", 0.0).state(2, "S", 0.0).state(3, "V", 1e-6);
  mb.horizon(t0, tf);
  Expr X = mb.x(0), P = mb.x(1), S = mb.x(2), V = mb.x(3);
  Expr F = mb.t() * 0.0 + params.feed_rate;  // constant feed profile F(t)
  Expr mu = mode == CaseMode::NeuralUnknown
                ? mb.z(0)
                : params.mu_max * (S / (params.K_S + S));
  Expr r_g = mu * X;
  mb.dynamics({(-(F / V) * X + r_g).id,
               (-(F / V) * P + params.Y_PX * r_g).id,
               ((F / V) * (params.S_f - S) - (1.0 / params.Y_XS) * r_g).id,
               F.id});
  if (mode == CaseMode::NeuralUnknown) {
    mb.neural_output(0, "z_mu");
    mb.neural_inputs({0, 1, 2, 3});
  }
  for (const auto& x0v : x0s) mb.trajectory(x0v);
  return mb.build();
}

}  // namespace ndae
