#include <doctest.h>

#include <cmath>
#include <random>

#include "ndae/mlp.hpp"

using namespace ndae;

namespace {

MlpSpec make_spec(std::vector<int> widths, Activation act) {
  MlpSpec s;
  s.widths = std::move(widths);
  s.activation = act;
  set_identity_normalization(s);
  return s;
}

double eval_emitted(const MlpSpec& spec, const Eigen::VectorXd& theta, const Eigen::VectorXd& x,
                    int out) {
  expr::Graph g(spec.n_inputs() + spec.n_theta());
  std::vector<expr::NodeId> in(spec.n_inputs());
  for (int i = 0; i < spec.n_inputs(); ++i) in[i] = g.variable(i);
  auto roots = emit_expressions(spec, g, in, spec.n_inputs());
  expr::Function f(g, roots);
  Eigen::VectorXd w(spec.n_inputs() + spec.n_theta());
  w.head(spec.n_inputs()) = x;
  w.tail(spec.n_theta()) = theta;
  expr::Workspace ws;
  return f.eval(w, ws)[out];
}

}  // namespace

TEST_CASE("theta layout is a bijection") {
  auto spec = make_spec({3, 5, 2}, Activation::Tanh);
  CHECK(spec.n_theta() == 5 * 3 + 5 + 2 * 5 + 2);
  std::vector<char> hit(spec.n_theta(), 0);
  for (int l = 1; l <= spec.n_layers(); ++l) {
    for (int r = 0; r < spec.widths[l]; ++r) {
      for (int c = 0; c < spec.widths[l - 1]; ++c) {
        int idx = spec.weight_index(l, r, c);
        CHECK(!hit[idx]);
        hit[idx] = 1;
      }
      int bidx = spec.bias_index(l, r);
      CHECK(!hit[bidx]);
      hit[bidx] = 1;
    }
  }
  for (char h : hit) CHECK(h == 1);

  // flatten(unflatten) round trip through the matrix accessors
  WeightVector w = random_init(spec, 7);
  Eigen::MatrixXd W1 = w.weights(spec, 1);
  CHECK(W1(2, 1) == w.theta[spec.weight_index(1, 2, 1)]);
  Eigen::VectorXd b2 = w.biases(spec, 2);
  CHECK(b2[0] == w.theta[spec.bias_index(2, 0)]);
}

TEST_CASE("stated examples: zero net outputs mu_z; affine layer") {
  auto spec = make_spec({1, 1, 1}, Activation::Tanh);
  spec.mu_z[0] = 3.25;
  WeightVector w;
  w.theta = Eigen::VectorXd::Zero(spec.n_theta());
  Eigen::VectorXd x(1);
  x << 0.7;
  CHECK(forward(spec, w, x)[0] == 3.25);

  // single affine layer W=[[2]], b=[1], x=3 -> 7
  auto aff = make_spec({1, 1}, Activation::Tanh);
  WeightVector wa;
  wa.theta = Eigen::VectorXd::Zero(aff.n_theta());
  wa.theta[aff.weight_index(1, 0, 0)] = 2.0;
  wa.theta[aff.bias_index(1, 0)] = 1.0;
  Eigen::VectorXd x3(1);
  x3 << 3.0;
  CHECK(forward(aff, wa, x3)[0] == 7.0);
}

TEST_CASE("swish equals x*sigmoid(x)") {
  auto spec = make_spec({1, 1, 1}, Activation::Swish);
  WeightVector w;
  w.theta = Eigen::VectorXd::Zero(spec.n_theta());
  w.theta[spec.weight_index(1, 0, 0)] = 1.0;  // hidden pre-activation = x
  w.theta[spec.weight_index(2, 0, 0)] = 1.0;  // output = hidden
  for (double v : {-3.0, -1.0, 0.0, 1.0, 3.0}) {
    Eigen::VectorXd x(1);
    x << v;
    const double got = forward(spec, w, x)[0];
    const double want = v / (1.0 + std::exp(-v));
    CHECK(std::abs(got - want) <= 1e-12);
  }
  // swish(0) = 0
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  CHECK(forward(spec, w, zero)[0] == 0.0);
}

TEST_CASE("softplus forward is overflow-safe at |x| = 50") {
  auto spec = make_spec({1, 4, 1}, Activation::Softplus);
  WeightVector w = random_init(spec, 3);
  for (double v : {-50.0, 50.0}) {
    Eigen::VectorXd x(1);
    x << v;
    CHECK(std::isfinite(forward(spec, w, x)[0]));
  }
  // matches the log1p oracle elementwise
  for (double u : {-30.0, -2.0, 0.0, 2.0, 30.0}) {
    const double stable = std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u)));
    const double naive = std::log(1.0 + std::exp(u));
    CHECK(std::abs(stable - naive) <= 1e-12 * std::max(1.0, std::abs(naive)));
  }
}

TEST_CASE("emitted expressions match numeric forward to 1e-14") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> nd;
  for (Activation act : {Activation::Tanh, Activation::Softplus, Activation::Swish}) {
    auto spec = make_spec({3, 7, 5, 2}, act);
    // non-identity normalization
    for (int i = 0; i < 3; ++i) {
      spec.mu_x[i] = 0.3 * i;
      spec.sigma_x[i] = 1.0 + 0.2 * i;
    }
    spec.mu_z << -0.5, 0.25;
    spec.sigma_z << 2.0, 0.5;
    for (int trial = 0; trial < 34; ++trial) {
      WeightVector w = random_init(spec, 100 + trial);
      for (int l = 1; l <= spec.n_layers(); ++l) {
        for (int r = 0; r < spec.widths[l]; ++r) w.theta[spec.bias_index(l, r)] = 0.1 * nd(rng);
      }
      Eigen::VectorXd x(3);
      for (int i = 0; i < 3; ++i) x[i] = nd(rng);
      Eigen::VectorXd fwd = forward(spec, w, x);
      for (int out = 0; out < 2; ++out) {
        const double em = eval_emitted(spec, w.theta, x, out);
        CHECK(std::abs(em - fwd[out]) <= 1e-14 * std::max(1.0, std::abs(fwd[out])));
      }
    }
  }
}

TEST_CASE("denormalization inverts normalization through an identity stack") {
  auto spec = make_spec({2, 2}, Activation::Tanh);  // single affine layer
  spec.mu_x << 1.0, -2.0;
  spec.sigma_x << 2.0, 0.5;
  spec.mu_z = spec.mu_x;
  spec.sigma_z = spec.sigma_x;
  WeightVector w;
  w.theta = Eigen::VectorXd::Zero(spec.n_theta());
  w.theta[spec.weight_index(1, 0, 0)] = 1.0;
  w.theta[spec.weight_index(1, 1, 1)] = 1.0;
  Eigen::VectorXd x(2);
  x << 0.37, -1.2;
  Eigen::VectorXd out = forward(spec, w, x);
  CHECK(std::abs(out[0] - x[0]) <= 1e-12);
  CHECK(std::abs(out[1] - x[1]) <= 1e-12);
}

TEST_CASE("compute_normalization: population convention with floor") {
  auto spec = make_spec({1, 1}, Activation::Tanh);
  Eigen::MatrixXd X(2, 1), Z(2, 1);
  X << 0.0, 2.0;
  Z << 5.0, 5.0;  // constant -> sigma floored
  compute_normalization(spec, X, Z);
  CHECK(spec.mu_x[0] == doctest::Approx(1.0));
  CHECK(spec.sigma_x[0] == doctest::Approx(1.0));
  CHECK(spec.mu_z[0] == doctest::Approx(5.0));
  CHECK(spec.sigma_z[0] == 1e-8);

  Eigen::MatrixXd empty(0, 1);
  CHECK_THROWS_AS(compute_normalization(spec, empty, empty), Error);
}

TEST_CASE("pretrain: zero steps returns the seeded init; linear fit descends") {
  auto spec = make_spec({1, 1}, Activation::Tanh);
  Eigen::MatrixXd X(8, 1), Z(8, 1);
  for (int i = 0; i < 8; ++i) {
    X(i, 0) = -1.0 + 0.25 * i;
    Z(i, 0) = 2.0 * X(i, 0);
  }
  auto zero = pretrain(spec, X, Z, 0, 1e-2, 42);
  CHECK(zero.weights.theta == random_init(spec, 42).theta);

  auto run = pretrain(spec, X, Z, 100, 1e-2, 42);
  REQUIRE(run.loss_history.size() == 100);
  // convex least squares: monotone decrease over the first 100 full-batch steps
  double prev = run.initial_loss;
  for (double l : run.loss_history) {
    CHECK(l <= prev + 1e-12);
    prev = l;
  }
  CHECK(run.final_loss < run.initial_loss);
}

TEST_CASE("pretrain gradient matches finite differences of the loss") {
  auto spec = make_spec({2, 3, 1}, Activation::Softplus);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd X(5, 2), Z(5, 1);
  for (int i = 0; i < 5; ++i) {
    X(i, 0) = nd(rng);
    X(i, 1) = nd(rng);
    Z(i, 0) = nd(rng);
  }
  // one tiny step from a fixed seed must reduce the loss along -grad, and the
  // emitted-graph gradient agrees with central differences.
  const int nt = spec.n_theta();
  expr::Graph g(nt);
  std::vector<expr::NodeId> terms;
  for (int i = 0; i < 5; ++i) {
    std::vector<expr::NodeId> in{g.constant(X(i, 0)), g.constant(X(i, 1))};
    auto out = emit_expressions(spec, g, in, 0);
    terms.push_back(g.pow(g.add(std::vector<expr::NodeId>{g.constant(Z(i, 0)), g.neg(out[0])}), 2));
  }
  expr::Function phi(g, std::vector<expr::NodeId>{g.add(terms)});
  expr::Workspace ws;
  WeightVector w = random_init(spec, 4);
  const auto& sp = phi.jac_sparsity();
  std::vector<double> gv(sp.nnz());
  phi.gradient({w.theta.data(), static_cast<std::size_t>(nt)}, 0, gv, ws);
  for (std::int32_t k = sp.row_ptr[0]; k < sp.row_ptr[1]; ++k) {
    const int i = sp.cols[k];
    Eigen::VectorXd tp = w.theta, tm = w.theta;
    tp[i] += 1e-6;
    tm[i] -= 1e-6;
    const double fd = (phi.eval(tp, ws)[0] - phi.eval(tm, ws)[0]) / 2e-6;
    CHECK(std::abs(gv[k] - fd) / std::max(1.0, std::abs(fd)) <= 1e-6);
  }
}
