#pragma once

#include <array>
#include <string>

#include "ndae/ipm.hpp"
#include "ndae/mlp.hpp"
#include "ndae/sim.hpp"

namespace ndae {

/// Hyper-parameters of the four-step training procedure.
struct PipelineConfig {
  int n_fe = 20;
  int K = 2;
  double lambda_s = 1e5;   // smoothing coefficient (Step 1)
  double lambda_r = 1.0;   // weight regularization
  int n_init = 3200;       // pretraining steps (Step 2)
  double pretrain_step_size = 1e-2;
  double eps1 = 1e-3;      // Step-3 tolerance
  double eps2 = 1e-6;      // Step-4 tolerance
  int lbfgs_memory = 6;
  std::uint64_t weight_seed = 1;
  double step1_tol = 1e-8;
  int max_iter = 3000;
  bool skip_pretrain = false;    // ablation: skip Step 2
  bool skip_lbfgs_stage = false; // ablation: skip Step 3
  bool skip_refinement = false;  // ablation: skip Step 4

  void validate() const;
};

struct StageResult {
  std::string name;
  bool run = false;
  IpmStatus status = IpmStatus::MaxIter;
  double seconds = 0.0;
  int iterations = 0;
  double final_kkt = 0.0;
};

/// Smooth-initialization solve: the transcription without neural rows, the
/// free z trajectories regularized by lambda_s * ||dz/dtau||^2.
struct SmoothInitResult {
  DiscretizedNlp nlp;
  Eigen::VectorXd w;
  IpmSolution sol;
};

SmoothInitResult smooth_init(const ContinuousModel& model, const CollocationScheme& scheme,
                             double lambda_s, double tol = 1e-8, int max_iter = 3000);

/// Total variation of the z trajectories at collocation points (smoothing
/// diagnostics).
double total_variation_z(const DiscretizedNlp& nlp, const Eigen::VectorXd& w);

struct TrainedModel {
  MlpSpec spec;  // normalization fixed from the Step-1 trajectories
  WeightVector weights;
  DiscretizedNlp nlp;  // full problem (neural rows attached)
  Eigen::VectorXd w;   // final primal point
  std::array<StageResult, 4> stages;
  double total_seconds = 0.0;
  double train_mse = 0.0;
  DiscretizedNlp init_nlp;  // Step-1 problem and its solution
  Eigen::VectorXd w_init;

  bool all_stages_ok() const;
};

/// Runs the four-step procedure: smooth initialization, normalization fixing
/// plus weight pretraining, the L-BFGS main solve at eps1, and the
/// exact-Hessian refinement at eps2 warm-started from the previous
/// primal-dual point. Skip flags support the ablation trials. Stage failures
/// are recorded and later stages continue from the best available point.
TrainedModel train(const ContinuousModel& model, MlpSpec spec, const PipelineConfig& cfg);

/// Sum of squared residuals over all observations (the data loss), evaluated
/// by in-element interpolation of the solution; mse = loss / #observations.
double data_loss(const DiscretizedNlp& nlp, const Eigen::VectorXd& w);
double train_mse(const DiscretizedNlp& nlp, const Eigen::VectorXd& w);

struct EvaluatedTrajectory {
  IpmStatus status = IpmStatus::MaxIter;
  DiscretizedNlp nlp;  // single-trajectory square problem
  Eigen::VectorXd w;
  double max_eq_violation = 0.0;
  double max_bound_violation = 0.0;
};

struct EvaluationResult {
  std::vector<EvaluatedTrajectory> trajectories;
  int n_infeasible = 0;
};

struct EvaluateOptions {
  double tol = 1e-9;
  int max_iter = 2000;
  double neural_slack_penalty = 0.0;  // > 0 adds l1-penalized slacks on neural rows
};

/// Fixed-theta square solves of an evaluation model (one per trajectory).
EvaluationResult evaluate(const MlpSpec& spec, const WeightVector& weights,
                          const ContinuousModel& eval_model, const CollocationScheme& scheme,
                          const EvaluateOptions& options = {});

/// Mean squared error of interpolated states against a simulated truth over
/// the given states and times.
double mse_vs_truth(const DiscretizedNlp& nlp, const Eigen::VectorXd& w, int traj,
                    const SimulatedTruth& truth, int truth_traj, const std::vector<int>& states,
                    const std::vector<double>& times);

}  // namespace ndae
