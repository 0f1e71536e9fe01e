#include "ndae/sim.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "ndae/ipm.hpp"

namespace ndae {

namespace {

IpmSolution solve_square(const DiscretizedNlp& nlp, const Eigen::VectorXd& w0, double tol,
                         double mu0 = -1.0) {
  ExprNlp std_nlp(nlp);
  IpmOptions o;
  o.tol = tol;
  o.max_iter = 600;
  IpmSolver solver(std_nlp, o);
  return solver.solve(std_nlp.extend_point(w0), nullptr, nullptr, nullptr, mu0);
}

DiscretizedNlp transcribe_square(const ContinuousModel& model, int n_fe, int K) {
  TranscribeOptions topt;
  topt.data_objective = false;
  return transcribe(model, CollocationScheme::make(n_fe, K, model.t0, model.tf), topt);
}

}  // namespace

Eigen::VectorXd SimulatedTruth::states_at(int traj, double t) const {
  Eigen::VectorXd x;
  nlp.interpolate(w, traj, t, &x, nullptr, nullptr);
  return x;
}

Eigen::VectorXd SimulatedTruth::algebraics_at(int traj, double t) const {
  Eigen::VectorXd y;
  nlp.interpolate(w, traj, t, nullptr, &y, nullptr);
  return y;
}

Eigen::VectorXd SimulatedTruth::outputs_at(int traj, double t) const {
  Eigen::VectorXd z;
  nlp.interpolate(w, traj, t, nullptr, nullptr, &z);
  return z;
}

SimulatedTruth simulate_truth(const ContinuousModel& truth_model, const SimulateOptions& options) {
  // coarse-to-fine ladder for robust convergence from the constant guess
  std::vector<int> ladder;
  for (int nfe = std::max(4, options.n_fe / 4); nfe < options.n_fe; nfe *= 2)
    ladder.push_back(nfe);
  ladder.push_back(options.n_fe);

  DiscretizedNlp prev_nlp = transcribe_square(truth_model, ladder[0], options.K);
  Eigen::VectorXd prev_w = prev_nlp.default_initial_point();
  for (std::size_t step = 0; step < ladder.size(); ++step) {
    DiscretizedNlp nlp =
        step == 0 ? std::move(prev_nlp) : transcribe_square(truth_model, ladder[step], options.K);
    Eigen::VectorXd w0 = nlp.default_initial_point();
    if (step > 0) nlp.seed_from_interpolation(w0, prev_nlp, prev_w);
    // warm ladder steps start near-feasible; skip the large-mu homotopy
    auto sol = solve_square(nlp, w0, options.solver_tol, step > 0 ? 1e-6 : -1.0);
    if (sol.status != IpmStatus::Optimal)
      fail(sol.status == IpmStatus::Infeasible ? Errc::InfeasibleProblem : Errc::NonConverged,
           "truth simulation square solve failed at n_fe=" + std::to_string(ladder[step]) +
               " (" + sol.message + ")");
    prev_nlp = std::move(nlp);
    prev_w = sol.w.head(prev_nlp.n_vars());
  }

  SimulatedTruth truth{std::move(prev_nlp), std::move(prev_w)};

  if (options.verify_doubling) {
    DiscretizedNlp fine = transcribe_square(truth_model, 2 * options.n_fe, options.K);
    Eigen::VectorXd w0 = fine.default_initial_point();
    fine.seed_from_interpolation(w0, truth.nlp, truth.w);
    auto sol = solve_square(fine, w0, options.solver_tol, 1e-6);
    if (sol.status != IpmStatus::Optimal)
      fail(Errc::NonConverged, "doubling-check solve failed: " + sol.message);
    double max_change = 0.0;
    Eigen::VectorXd xa, xb;
    for (int tr = 0; tr < truth.n_traj(); ++tr) {
      for (int i = 0; i <= 200; ++i) {
        const double t =
            truth_model.t0 + (truth_model.tf - truth_model.t0) * i / 200.0;
        truth.nlp.interpolate(truth.w, tr, t, &xa, nullptr, nullptr);
        fine.interpolate(sol.w.head(fine.n_vars()), tr, t, &xb, nullptr, nullptr);
        max_change = std::max(max_change, (xa - xb).lpNorm<Eigen::Infinity>());
      }
    }
    truth.doubling_error = max_change;
    if (max_change > options.doubling_tol) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3e", max_change);
      fail(Errc::NonConverged,
           std::string("truth simulation not converged: doubling changed states by ") + buf);
    }
  }
  return truth;
}

std::vector<double> uniform_times(double t0, double tf, int count) {
  std::vector<double> times(count);
  for (int i = 0; i < count; ++i) times[i] = t0 + (tf - t0) * (i + 1.0) / (count + 1.0);
  return times;
}

ObservationSet make_observations(const SimulatedTruth& truth,
                                 const std::vector<std::vector<double>>& times_per_traj,
                                 const std::vector<int>& observed_states, double sigma,
                                 std::uint64_t seed, NoiseKind kind) {
  if (static_cast<int>(times_per_traj.size()) != truth.n_traj())
    fail(Errc::DimensionMismatch, "need one time grid per trajectory");
  const auto& model = truth.nlp.model();
  for (const auto& times : times_per_traj) {
    for (double t : times) {
      if (t < model.t0 || t > model.tf) fail(Errc::OutOfHorizon, "observation time off horizon");
    }
  }

  // per-state sigma from the state range over all trajectories
  const int n_x = model.n_x();
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(n_x, kInf);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(n_x, -kInf);
  for (int tr = 0; tr < truth.n_traj(); ++tr) {
    for (int i = 0; i <= 200; ++i) {
      const double t = model.t0 + (model.tf - model.t0) * i / 200.0;
      Eigen::VectorXd x = truth.states_at(tr, t);
      lo = lo.cwiseMin(x);
      hi = hi.cwiseMax(x);
    }
  }

  std::mt19937_64 rng(seed);
  auto uniform01 = [&] { return std::ldexp(static_cast<double>(rng() >> 11), -53); };
  auto gauss = [&] {
    // Box-Muller on the portable uniform; deterministic across platforms
    double u1 = 0.0;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  };

  ObservationSet obs;
  obs.noise.synthetic = true;
  obs.noise.sigma_fraction = kind == NoiseKind::RangeFraction ? sigma : 0.0;
  obs.noise.seed = seed;
  obs.noise.sigma_per_state.resize(n_x, 0.0);
  for (int d = 0; d < n_x; ++d) {
    obs.noise.sigma_per_state[d] =
        kind == NoiseKind::RangeFraction ? sigma * std::max(hi[d] - lo[d], 0.0) : sigma;
  }

  for (int tr = 0; tr < truth.n_traj(); ++tr) {
    TrajectoryObservations to;
    to.observed_states = observed_states;
    to.times = times_per_traj[tr];
    to.values.resize(to.times.size(), observed_states.size());
    for (std::size_t i = 0; i < to.times.size(); ++i) {
      Eigen::VectorXd x = truth.states_at(tr, to.times[i]);
      for (std::size_t sc = 0; sc < observed_states.size(); ++sc) {
        const int d = observed_states[sc];
        const double noise = sigma > 0 ? obs.noise.sigma_per_state[d] * gauss() : 0.0;
        to.values(i, sc) = x[d] + noise;
      }
    }
    obs.trajectories.push_back(std::move(to));
  }
  return obs;
}

}  // namespace ndae
