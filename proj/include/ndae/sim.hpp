#pragma once

#include "ndae/colloc.hpp"

namespace ndae {

/// Ground-truth trajectories from a fine square collocation solve of a fully
/// specified model, convergence-verified by element doubling.
struct SimulatedTruth {
  DiscretizedNlp nlp;
  Eigen::VectorXd w;
  double doubling_error = 0.0;  // max state change under element doubling

  Eigen::VectorXd states_at(int traj, double t) const;
  Eigen::VectorXd algebraics_at(int traj, double t) const;
  Eigen::VectorXd outputs_at(int traj, double t) const;
  int n_traj() const { return nlp.n_traj(); }
};

struct SimulateOptions {
  int n_fe = 80;
  int K = 3;
  bool verify_doubling = true;
  double doubling_tol = 1e-7;
  double solver_tol = 1e-10;
};

/// Square solve on the fine scheme, warm-started through a coarse-to-fine
/// ladder. Throws NonConverged when the doubling check fails and Infeasible
/// when a square solve does not converge (inconsistent x0).
SimulatedTruth simulate_truth(const ContinuousModel& truth_model, const SimulateOptions& options);

enum class NoiseKind { RangeFraction, Absolute };

/// Samples the truth at the given times and adds seeded Gaussian noise:
/// per-state sigma = sigma * (range of that state over the truth) for
/// RangeFraction, or sigma directly for Absolute. sigma == 0 reproduces the
/// truth exactly.
ObservationSet make_observations(const SimulatedTruth& truth,
                                 const std::vector<std::vector<double>>& times_per_traj,
                                 const std::vector<int>& observed_states, double sigma,
                                 std::uint64_t seed,
                                 NoiseKind kind = NoiseKind::RangeFraction);

/// Uniformly spaced interior observation grid (count points over [t0, tf]).
std::vector<double> uniform_times(double t0, double tf, int count);

}  // namespace ndae
