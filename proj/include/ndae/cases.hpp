#pragma once

#include <array>
#include <functional>

#include "ndae/ocp.hpp"

namespace ndae {

enum class CaseMode { Truth, NeuralUnknown };

/// Area-height profiles phi_i(x_i) together with their antiderivatives
/// (tank volume as a function of level), used by the conservation checks.
struct TankProfiles {
  std::array<std::function<expr::Expr(expr::Expr)>, 4> phi;
  std::array<std::function<double(double)>, 4> volume;
};

TankProfiles tank_training_profiles();
TankProfiles tank_eval_profiles();

struct TankParams {
  double alpha1 = 0.5;
  double alpha2 = 0.5;
  TankProfiles profiles = tank_training_profiles();
};

/// Closed four-tank manifold with a pump law y0 = 0.1 x0 x3 and a level
/// equality between tanks 1 and 2, reduced to index 1 by differentiating the
/// level constraint. NeuralUnknown mode declares z = (y0, y3) as network
/// outputs with inputs x0..x3.
ContinuousModel build_tank(const TankParams& params, CaseMode mode, double t0, double tf,
                           const std::vector<Eigen::VectorXd>& x0s);

struct PopulationParams {
  double r1 = 0.2, a1 = 0.2, b1 = 0.1, r2 = 0.2, a2 = 0.01;
  double x0_lower_bound = 1e-3;

  double fixed_point_x0() const { return r1 * a2 / (a1 * r2 + a2 * b1); }
  double fixed_point_x1() const { return r1 * r2 / (a1 * r2 + a2 * b1); }
};

/// Closed-form Lyapunov function of the predator-prey system.
double lyapunov_value(const PopulationParams& p, double x0, double x1);

/// Predator-prey dynamics; NeuralUnknown mode learns z = r2 - a2 x1/x0.
/// with_lyapunov appends V as a differential state (chain-rule dynamics from
/// the active mode's right-hand side) plus the path constraint dV/dt <= 0;
/// trajectories are given as (x0, x1) and V(0) is filled in.
ContinuousModel build_population(const PopulationParams& params, bool with_lyapunov,
                                 CaseMode mode, double t0, double tf,
                                 const std::vector<Eigen::VectorXd>& x0s);

struct FedbatchParams {
  double mu_max = 0.20;   // 1/h
  double K_S = 1.0;       // g/L
  double Y_XS = 0.5;
  double Y_PX = 0.2;
  double S_f = 10.0;      // g/L
  double feed_rate = 0.05;  // L/h, constant feed profile F(t)

  double monod(double S) const { return mu_max * S / (K_S + S); }
};

/// Fed-batch bioreactor with Monod growth kinetics; NeuralUnknown mode learns
/// z(t) = mu(S) with the full state as network input.
ContinuousModel build_fedbatch(const FedbatchParams& params, CaseMode mode, double t0, double tf,
                               const std::vector<Eigen::VectorXd>& x0s);

}  // namespace ndae
