#include "ndae/pipeline.hpp"

#include <chrono>
#include <cmath>

namespace ndae {

namespace {

double now_seconds(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Network input samples at all collocation points, resolved through the
// model's input selector.
Eigen::MatrixXd gather_network_inputs(const DiscretizedNlp& nlp, const Eigen::VectorXd& w) {
  const auto& model = nlp.model();
  const int pts = nlp.scheme().n_fe * nlp.scheme().K;
  const int n_in = static_cast<int>(model.neural_inputs.size());
  Eigen::MatrixXd X(nlp.n_traj() * pts, n_in);
  for (int tr = 0; tr < nlp.n_traj(); ++tr) {
    Eigen::MatrixXd xs = nlp.collocation_states(w, tr);
    Eigen::MatrixXd ys = nlp.collocation_algebraics(w, tr);
    for (int r = 0; r < pts; ++r) {
      for (int c = 0; c < n_in; ++c) {
        const int idx = model.neural_inputs[c];
        double v = 0.0;
        if (idx < model.n_x()) {
          v = xs(r, idx);
        } else if (idx < model.n_x() + model.n_y()) {
          v = ys(r, idx - model.n_x());
        } else if (idx < model.n_x() + model.n_y() + model.n_z()) {
          fail(Errc::IndexOutOfRange, "network inputs may not reference network outputs");
        } else {
          v = model.params[idx - model.n_x() - model.n_y() - model.n_z()].value;
        }
        X(tr * pts + r, c) = v;
      }
    }
  }
  return X;
}

Eigen::MatrixXd gather_network_outputs(const DiscretizedNlp& nlp, const Eigen::VectorXd& w) {
  const int pts = nlp.scheme().n_fe * nlp.scheme().K;
  Eigen::MatrixXd Z(nlp.n_traj() * pts, nlp.model().n_z());
  for (int tr = 0; tr < nlp.n_traj(); ++tr) {
    Z.middleRows(tr * pts, pts) = nlp.collocation_outputs(w, tr);
  }
  return Z;
}

}  // namespace

void PipelineConfig::validate() const {
  if (n_fe < 1 || K < 1) fail(Errc::ConfigError, "scheme sizes must be positive");
  if (lambda_s < 0 || lambda_r < 0) fail(Errc::ConfigError, "coefficients must be >= 0");
  if (n_init < 0) fail(Errc::ConfigError, "pretrain step count must be >= 0");
  if (!(eps2 <= eps1)) fail(Errc::ConfigError, "eps2 must be <= eps1");
}

SmoothInitResult smooth_init(const ContinuousModel& model, const CollocationScheme& scheme,
                             double lambda_s, double tol, int max_iter) {
  if (model.observations.empty())
    fail(Errc::DimensionMismatch, "smooth initialization needs observations");
  if (lambda_s < 0) fail(Errc::ConfigError, "lambda_s must be >= 0");
  TranscribeOptions topt;
  topt.data_objective = true;
  topt.lambda_s = lambda_s;
  SmoothInitResult res{transcribe(model, scheme, topt), {}, {}};
  ExprNlp std_nlp(res.nlp);
  IpmOptions o;
  o.tol = tol;
  o.max_iter = max_iter;
  IpmSolver solver(std_nlp, o);
  res.sol = solver.solve(std_nlp.extend_point(res.nlp.default_initial_point()));
  res.w = res.sol.w.head(res.nlp.n_vars());
  return res;
}

double total_variation_z(const DiscretizedNlp& nlp, const Eigen::VectorXd& w) {
  double tv = 0.0;
  for (int tr = 0; tr < nlp.n_traj(); ++tr) {
    Eigen::MatrixXd Z = nlp.collocation_outputs(w, tr);
    for (int d = 0; d < Z.cols(); ++d) {
      for (int r = 1; r < Z.rows(); ++r) tv += std::abs(Z(r, d) - Z(r - 1, d));
    }
  }
  return tv;
}

double data_loss(const DiscretizedNlp& nlp, const Eigen::VectorXd& w) {
  const auto& obs = nlp.model().observations;
  double loss = 0.0;
  Eigen::VectorXd x;
  for (int tr = 0; tr < nlp.n_traj(); ++tr) {
    const auto& to = obs.trajectories[tr];
    for (std::size_t i = 0; i < to.times.size(); ++i) {
      nlp.interpolate(w, tr, to.times[i], &x, nullptr, nullptr);
      for (std::size_t sc = 0; sc < to.observed_states.size(); ++sc) {
        const double r = x[to.observed_states[sc]] - to.values(i, sc);
        loss += r * r;
      }
    }
  }
  return loss;
}

double train_mse(const DiscretizedNlp& nlp, const Eigen::VectorXd& w) {
  const auto& obs = nlp.model().observations;
  std::size_t count = 0;
  for (const auto& to : obs.trajectories) count += to.times.size() * to.observed_states.size();
  if (count == 0) return 0.0;
  return data_loss(nlp, w) / static_cast<double>(count);
}

bool TrainedModel::all_stages_ok() const {
  for (const auto& s : stages) {
    if (s.run && s.status != IpmStatus::Optimal) return false;
  }
  return true;
}

TrainedModel train(const ContinuousModel& model, MlpSpec spec, const PipelineConfig& cfg) {
  cfg.validate();
  if (model.observations.empty()) fail(Errc::DimensionMismatch, "training needs observations");
  if (spec.n_inputs() != static_cast<int>(model.neural_inputs.size()))
    fail(Errc::ShapeMismatch, "network input width != input selector size");
  if (spec.n_outputs() != model.n_z())
    fail(Errc::ShapeMismatch, "network output width != neural output count");

  const auto t_total = std::chrono::steady_clock::now();
  TrainedModel out;
  out.stages = {StageResult{"step1_smooth_init"}, StageResult{"step2_pretrain"},
                StageResult{"step3_lbfgs"}, StageResult{"step4_refine"}};
  CollocationScheme scheme = CollocationScheme::make(cfg.n_fe, cfg.K, model.t0, model.tf);

  // Step 1: smooth initialization (exact Hessian)
  {
    auto t0 = std::chrono::steady_clock::now();
    auto init = smooth_init(model, scheme, cfg.lambda_s, cfg.step1_tol, cfg.max_iter);
    out.stages[0].run = true;
    out.stages[0].status = init.sol.status;
    out.stages[0].iterations = init.sol.iterations;
    out.stages[0].final_kkt = init.sol.kkt_residual;
    out.stages[0].seconds = now_seconds(t0);
    out.init_nlp = std::move(init.nlp);
    out.w_init = std::move(init.w);
  }

  // normalization layers fixed from the Step-1 trajectories
  Eigen::MatrixXd x_samples = gather_network_inputs(out.init_nlp, out.w_init);
  Eigen::MatrixXd z_samples = gather_network_outputs(out.init_nlp, out.w_init);
  compute_normalization(spec, x_samples, z_samples);
  out.spec = spec;

  // Step 2: weight pretraining
  if (!cfg.skip_pretrain && cfg.n_init > 0) {
    auto t0 = std::chrono::steady_clock::now();
    auto pre = pretrain(spec, x_samples, z_samples, cfg.n_init, cfg.pretrain_step_size,
                        cfg.weight_seed);
    out.weights = std::move(pre.weights);
    out.stages[1].run = true;
    out.stages[1].status = IpmStatus::Optimal;  // initialization heuristic, always completes
    out.stages[1].iterations = cfg.n_init;
    out.stages[1].final_kkt = pre.final_loss;
    out.stages[1].seconds = now_seconds(t0);
  } else {
    out.weights = random_init(spec, cfg.weight_seed);
  }

  // full problem with neural rows
  TranscribeOptions topt;
  topt.data_objective = true;
  topt.lambda_r = cfg.lambda_r;
  topt.network = &out.spec;
  topt.couple_neural = true;
  out.nlp = transcribe(model, scheme, topt);

  Eigen::VectorXd w0 = out.nlp.default_initial_point();
  w0.head(out.w_init.size()) = out.w_init;
  for (int i = 0; i < out.nlp.n_theta(); ++i) w0[out.nlp.itheta(i)] = out.weights.theta[i];

  ExprNlp std_nlp(out.nlp);
  Eigen::VectorXd w_cur = std_nlp.extend_point(w0);
  IpmSolution sol3;
  bool have3 = false;

  // Step 3: L-BFGS main solve at eps1
  if (!cfg.skip_lbfgs_stage) {
    auto t0 = std::chrono::steady_clock::now();
    IpmOptions o;
    o.tol = cfg.eps1;
    o.max_iter = cfg.max_iter;
    o.hessian_mode = HessianMode::Lbfgs;
    o.lbfgs_memory = cfg.lbfgs_memory;
    IpmSolver solver(std_nlp, o);
    sol3 = solver.solve(w_cur);
    out.stages[2].run = true;
    out.stages[2].status = sol3.status;
    out.stages[2].iterations = sol3.iterations;
    out.stages[2].final_kkt = sol3.kkt_residual;
    out.stages[2].seconds = now_seconds(t0);
    w_cur = sol3.w;
    have3 = true;
  }

  // Step 4: exact-Hessian refinement at eps2, warm-started primal-dual
  if (!cfg.skip_refinement) {
    auto t0 = std::chrono::steady_clock::now();
    IpmOptions o;
    o.tol = cfg.eps2;
    o.max_iter = cfg.max_iter;
    o.hessian_mode = HessianMode::Exact;
    IpmSolver solver(std_nlp, o);
    IpmSolution sol4;
    if (have3) {
      sol4 = solver.solve(w_cur, &sol3.lam, &sol3.gam_lo, &sol3.gam_up, sol3.mu);
    } else {
      sol4 = solver.solve(w_cur);
    }
    out.stages[3].run = true;
    out.stages[3].status = sol4.status;
    out.stages[3].iterations = sol4.iterations;
    out.stages[3].final_kkt = sol4.kkt_residual;
    out.stages[3].seconds = now_seconds(t0);
    w_cur = sol4.w;
  }

  out.w = w_cur.head(out.nlp.n_vars());
  for (int i = 0; i < out.nlp.n_theta(); ++i) out.weights.theta[i] = out.w[out.nlp.itheta(i)];
  out.train_mse = train_mse(out.nlp, out.w);
  out.total_seconds = now_seconds(t_total);
  return out;
}

EvaluationResult evaluate(const MlpSpec& spec, const WeightVector& weights,
                          const ContinuousModel& eval_model, const CollocationScheme& scheme,
                          const EvaluateOptions& options) {
  if (static_cast<int>(weights.theta.size()) != spec.n_theta())
    fail(Errc::ShapeMismatch, "weight vector does not match the network spec");
  EvaluationResult res;
  for (int tr = 0; tr < eval_model.n_traj(); ++tr) {
    ContinuousModel single = eval_model;
    single.x0 = {eval_model.x0[tr]};
    single.observations = {};

    TranscribeOptions topt;
    topt.data_objective = false;
    topt.network = &spec;
    topt.couple_neural = true;
    topt.theta_values = &weights.theta;
    topt.neural_slack_penalty = options.neural_slack_penalty;
    EvaluatedTrajectory et;
    et.nlp = transcribe(single, scheme, topt);

    ExprNlp std_nlp(et.nlp);
    IpmOptions o;
    o.tol = options.tol;
    o.max_iter = options.max_iter;
    IpmSolver solver(std_nlp, o);
    auto sol = solver.solve(std_nlp.extend_point(et.nlp.default_initial_point()));
    et.status = sol.status;
    et.w = sol.w.head(et.nlp.n_vars());

    expr::Workspace ws;
    Eigen::VectorXd c = et.nlp.equalities().eval(et.w, ws);
    et.max_eq_violation = c.size() > 0 ? c.cwiseAbs().maxCoeff() : 0.0;
    double bv = 0.0;
    for (int i = 0; i < et.nlp.n_vars(); ++i) {
      if (std::isfinite(et.nlp.lower()[i])) bv = std::max(bv, et.nlp.lower()[i] - et.w[i]);
      if (std::isfinite(et.nlp.upper()[i])) bv = std::max(bv, et.w[i] - et.nlp.upper()[i]);
    }
    et.max_bound_violation = bv;
    if (et.status == IpmStatus::Infeasible) ++res.n_infeasible;
    res.trajectories.push_back(std::move(et));
  }
  return res;
}

double mse_vs_truth(const DiscretizedNlp& nlp, const Eigen::VectorXd& w, int traj,
                    const SimulatedTruth& truth, int truth_traj, const std::vector<int>& states,
                    const std::vector<double>& times) {
  double acc = 0.0;
  Eigen::VectorXd x;
  for (double t : times) {
    nlp.interpolate(w, traj, t, &x, nullptr, nullptr);
    Eigen::VectorXd xt = truth.states_at(truth_traj, t);
    for (int d : states) {
      const double r = x[d] - xt[d];
      acc += r * r;
    }
  }
  return acc / (static_cast<double>(times.size()) * states.size());
}

}  // namespace ndae
