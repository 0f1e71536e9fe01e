#include "ndae/mlp.hpp"

#include <cmath>
#include <random>

namespace ndae {

namespace {

// Portable uniform double in [0, 1) from a seeded 64-bit generator.
double uniform01(std::mt19937_64& rng) { return std::ldexp(static_cast<double>(rng() >> 11), -53); }

}  // namespace

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "softplus") return Activation::Softplus;
  if (name == "swish") return Activation::Swish;
  fail(Errc::ConfigError, "unknown activation: " + name);
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Softplus: return "softplus";
    case Activation::Swish: return "swish";
  }
  return "?";
}

int MlpSpec::n_theta() const {
  int n = 0;
  for (int l = 1; l < static_cast<int>(widths.size()); ++l) {
    n += widths[l] * widths[l - 1] + widths[l];
  }
  return n;
}

int MlpSpec::layer_offset(int layer) const {
  int off = 0;
  for (int l = 1; l < layer; ++l) off += widths[l] * widths[l - 1] + widths[l];
  return off;
}

int MlpSpec::weight_index(int layer, int row, int col) const {
  return layer_offset(layer) + row * widths[layer - 1] + col;
}

int MlpSpec::bias_index(int layer, int row) const {
  return layer_offset(layer) + widths[layer] * widths[layer - 1] + row;
}

void MlpSpec::validate() const {
  if (widths.size() < 2) fail(Errc::ShapeMismatch, "network needs at least input/output widths");
  for (int w : widths) {
    if (w <= 0) fail(Errc::ShapeMismatch, "nonpositive layer width");
  }
  auto check_vec = [&](const Eigen::VectorXd& v, int n, const char* what) {
    if (static_cast<int>(v.size()) != n) fail(Errc::ShapeMismatch, std::string(what) + " size");
  };
  check_vec(mu_x, n_inputs(), "mu_x");
  check_vec(sigma_x, n_inputs(), "sigma_x");
  check_vec(mu_z, n_outputs(), "mu_z");
  check_vec(sigma_z, n_outputs(), "sigma_z");
  if ((sigma_x.array() <= 0).any() || (sigma_z.array() <= 0).any())
    fail(Errc::ShapeMismatch, "normalization sigma must be strictly positive");
}

void set_identity_normalization(MlpSpec& spec) {
  spec.mu_x = Eigen::VectorXd::Zero(spec.n_inputs());
  spec.sigma_x = Eigen::VectorXd::Ones(spec.n_inputs());
  spec.mu_z = Eigen::VectorXd::Zero(spec.n_outputs());
  spec.sigma_z = Eigen::VectorXd::Ones(spec.n_outputs());
}

Eigen::MatrixXd WeightVector::weights(const MlpSpec& spec, int layer) const {
  Eigen::MatrixXd W(spec.widths[layer], spec.widths[layer - 1]);
  for (int r = 0; r < W.rows(); ++r) {
    for (int c = 0; c < W.cols(); ++c) W(r, c) = theta[spec.weight_index(layer, r, c)];
  }
  return W;
}

Eigen::VectorXd WeightVector::biases(const MlpSpec& spec, int layer) const {
  Eigen::VectorXd b(spec.widths[layer]);
  for (int r = 0; r < b.size(); ++r) b[r] = theta[spec.bias_index(layer, r)];
  return b;
}

WeightVector random_init(const MlpSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  WeightVector w;
  w.theta = Eigen::VectorXd::Zero(spec.n_theta());
  for (int l = 1; l <= spec.n_layers(); ++l) {
    const int fan_in = spec.widths[l - 1], fan_out = spec.widths[l];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) {
        w.theta[spec.weight_index(l, r, c)] = bound * (2.0 * uniform01(rng) - 1.0);
      }
    }
  }
  return w;
}

std::vector<expr::NodeId> emit_expressions(const MlpSpec& spec, expr::Graph& g,
                                           std::span<const expr::NodeId> inputs,
                                           int theta_offset,
                                           const Eigen::VectorXd* theta_values) {
  spec.validate();
  if (static_cast<int>(inputs.size()) != spec.n_inputs())
    fail(Errc::ShapeMismatch, "network input count");
  if (theta_values != nullptr && static_cast<int>(theta_values->size()) != spec.n_theta())
    fail(Errc::ShapeMismatch, "theta length");

  auto theta = [&](int flat) -> expr::NodeId {
    if (theta_values != nullptr) return g.constant((*theta_values)[flat]);
    return g.variable(theta_offset + flat);
  };

  // input normalization
  std::vector<expr::NodeId> act(inputs.begin(), inputs.end());
  for (int i = 0; i < spec.n_inputs(); ++i) {
    expr::NodeId shifted =
        g.add_ordered(std::vector<expr::NodeId>{act[i], g.constant(-spec.mu_x[i])});
    act[i] = g.div(shifted, g.constant(spec.sigma_x[i]));
  }

  for (int l = 1; l <= spec.n_layers(); ++l) {
    const bool hidden = l < spec.n_layers();
    std::vector<expr::NodeId> next(spec.widths[l]);
    for (int r = 0; r < spec.widths[l]; ++r) {
      std::vector<expr::NodeId> terms;
      terms.reserve(spec.widths[l - 1] + 1);
      for (int c = 0; c < spec.widths[l - 1]; ++c) {
        expr::NodeId kk[2] = {theta(spec.weight_index(l, r, c)), act[c]};
        terms.push_back(g.mul(kk));
      }
      terms.push_back(theta(spec.bias_index(l, r)));
      expr::NodeId pre = g.add_ordered(terms);
      if (!hidden) {
        next[r] = pre;
        continue;
      }
      switch (spec.activation) {
        case Activation::Tanh:
          next[r] = g.tanh(pre);
          break;
        case Activation::Softplus: {
          expr::NodeId kk[2] = {g.constant(1.0), g.exp(pre, spec.preactivation_guard)};
          next[r] = g.log(g.add(kk));
          break;
        }
        case Activation::Swish: {
          // x/2 * tanh(x/2) + x/2
          expr::NodeId half = g.div(pre, g.constant(2.0));
          expr::NodeId kk[2] = {half, g.tanh(half)};
          expr::NodeId prod = g.mul(kk);
          next[r] = g.add_ordered(std::vector<expr::NodeId>{prod, half});
          break;
        }
      }
    }
    act = std::move(next);
  }

  // output denormalization
  for (int r = 0; r < spec.n_outputs(); ++r) {
    expr::NodeId kk[2] = {g.constant(spec.sigma_z[r]), act[r]};
    expr::NodeId scaled = g.mul(kk);
    act[r] = g.add_ordered(std::vector<expr::NodeId>{scaled, g.constant(spec.mu_z[r])});
  }
  return act;
}

Eigen::VectorXd forward(const MlpSpec& spec, const WeightVector& w, const Eigen::VectorXd& x) {
  spec.validate();
  if (static_cast<int>(x.size()) != spec.n_inputs()) fail(Errc::ShapeMismatch, "input size");
  if (static_cast<int>(w.theta.size()) != spec.n_theta()) fail(Errc::ShapeMismatch, "theta size");

  Eigen::VectorXd act(spec.n_inputs());
  for (int i = 0; i < spec.n_inputs(); ++i) act[i] = (x[i] + -spec.mu_x[i]) / spec.sigma_x[i];

  for (int l = 1; l <= spec.n_layers(); ++l) {
    const bool hidden = l < spec.n_layers();
    Eigen::VectorXd next(spec.widths[l]);
    for (int r = 0; r < spec.widths[l]; ++r) {
      double acc = 0.0;
      for (int c = 0; c < spec.widths[l - 1]; ++c) {
        acc += w.theta[spec.weight_index(l, r, c)] * act[c];
      }
      acc += w.theta[spec.bias_index(l, r)];
      if (!hidden) {
        next[r] = acc;
        continue;
      }
      switch (spec.activation) {
        case Activation::Tanh:
          next[r] = std::tanh(acc);
          break;
        case Activation::Softplus:
          // overflow-safe softplus
          next[r] = std::max(acc, 0.0) + std::log1p(std::exp(-std::abs(acc)));
          break;
        case Activation::Swish: {
          const double half = acc / 2.0;
          next[r] = half * std::tanh(half) + half;
          break;
        }
      }
    }
    act = std::move(next);
  }

  for (int r = 0; r < spec.n_outputs(); ++r) act[r] = spec.sigma_z[r] * act[r] + spec.mu_z[r];
  return act;
}

void compute_normalization(MlpSpec& spec, const Eigen::MatrixXd& x_samples,
                           const Eigen::MatrixXd& z_samples) {
  if (x_samples.rows() == 0 || z_samples.rows() == 0)
    fail(Errc::EmptySample, "normalization needs a nonempty sample set");
  if (x_samples.cols() != spec.n_inputs() || z_samples.cols() != spec.n_outputs())
    fail(Errc::ShapeMismatch, "normalization sample width");
  auto stats = [](const Eigen::MatrixXd& s, Eigen::VectorXd& mu, Eigen::VectorXd& sigma) {
    const double n = static_cast<double>(s.rows());
    mu = s.colwise().mean();
    Eigen::MatrixXd centered = s.rowwise() - mu.transpose();
    sigma = (centered.array().square().colwise().sum() / n).sqrt();
    sigma = sigma.cwiseMax(1e-8);
  };
  stats(x_samples, spec.mu_x, spec.sigma_x);
  stats(z_samples, spec.mu_z, spec.sigma_z);
}

PretrainResult pretrain(const MlpSpec& spec, const Eigen::MatrixXd& x_samples,
                        const Eigen::MatrixXd& z_samples, int steps, double step_size,
                        std::uint64_t seed) {
  spec.validate();
  if (x_samples.rows() != z_samples.rows()) fail(Errc::ShapeMismatch, "sample row mismatch");
  if (x_samples.rows() == 0) fail(Errc::EmptySample, "pretraining needs samples");

  PretrainResult res;
  res.weights = random_init(spec, seed);
  if (steps <= 0) return res;

  // phi(theta) = sum_i ||z_i - f(x_i; theta)||^2 as one frozen graph over theta.
  const int nt = spec.n_theta();
  expr::Graph g(nt);
  std::vector<expr::NodeId> terms;
  for (Eigen::Index i = 0; i < x_samples.rows(); ++i) {
    std::vector<expr::NodeId> in(spec.n_inputs());
    for (int c = 0; c < spec.n_inputs(); ++c) in[c] = g.constant(x_samples(i, c));
    auto out = emit_expressions(spec, g, in, 0);
    for (int r = 0; r < spec.n_outputs(); ++r) {
      expr::NodeId resid =
          g.add(std::vector<expr::NodeId>{g.constant(z_samples(i, r)), g.neg(out[r])});
      terms.push_back(g.pow(resid, 2));
    }
  }
  expr::Function phi(g, std::vector<expr::NodeId>{g.add(terms)});
  expr::Workspace ws;

  const auto& sp = phi.jac_sparsity();
  const int nnz = sp.row_ptr[1] - sp.row_ptr[0];
  std::vector<double> gvals(nnz);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(nt);
  Eigen::VectorXd& theta = res.weights.theta;

  res.loss_history.reserve(steps);
  res.initial_loss = phi.eval(theta, ws)[0];
  double step = step_size;
  double loss_prev = res.initial_loss;
  for (int s = 0; s < steps; ++s) {
    phi.gradient({theta.data(), static_cast<std::size_t>(theta.size())}, 0, gvals, ws);
    grad.setZero();
    for (int k = 0; k < nnz; ++k) grad[sp.cols[k]] = gvals[k];
    // monotone safeguard: halve the step until the loss does not increase
    double loss_new = loss_prev;
    for (int bt = 0; bt < 60; ++bt) {
      Eigen::VectorXd trial = theta - step * grad;
      const double lt = phi.eval(trial, ws)[0];
      if (std::isfinite(lt) && lt <= loss_prev) {
        theta = std::move(trial);
        loss_new = lt;
        break;
      }
      step *= 0.5;
    }
    loss_prev = loss_new;
    res.loss_history.push_back(loss_new);
    step = std::min(step * 1.2, step_size);
  }
  res.final_loss = res.loss_history.back();
  return res;
}

}  // namespace ndae
