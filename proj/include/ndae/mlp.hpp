#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ndae/expr.hpp"

namespace ndae {

enum class Activation { Tanh, Softplus, Swish };

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation a);

/// Multilayer perceptron: widths [n_in, hidden..., n_out], activation on
/// hidden layers only, affine output, with fixed input normalization and
/// output denormalization layers.
struct MlpSpec {
  std::vector<int> widths;
  Activation activation = Activation::Tanh;
  Eigen::VectorXd mu_x, sigma_x;  // input normalization
  Eigen::VectorXd mu_z, sigma_z;  // output denormalization
  double preactivation_guard = 500.0;  // exp-argument guard in emitted softplus

  int n_layers() const { return static_cast<int>(widths.size()) - 1; }  // weight layers
  int n_inputs() const { return widths.front(); }
  int n_outputs() const { return widths.back(); }
  int n_theta() const;

  // Flat layout: per weight layer l = 1..n_layers, W_l row-major then b_l.
  int layer_offset(int layer) const;  // 1-based layer
  int weight_index(int layer, int row, int col) const;
  int bias_index(int layer, int row) const;

  void validate() const;  // ShapeMismatch on inconsistent sizes
};

/// Identity normalization vectors for a spec (mu = 0, sigma = 1).
void set_identity_normalization(MlpSpec& spec);

/// Flattened trainable weights with the MlpSpec layout.
struct WeightVector {
  Eigen::VectorXd theta;

  Eigen::MatrixXd weights(const MlpSpec& spec, int layer) const;  // 1-based
  Eigen::VectorXd biases(const MlpSpec& spec, int layer) const;
};

/// Seeded uniform init in +-sqrt(6/(fan_in+fan_out)), zero biases.
WeightVector random_init(const MlpSpec& spec, std::uint64_t seed);

/// Emits the reduced-space network expression for one evaluation point.
/// `inputs` are graph nodes for the network inputs. Weights reference the
/// variable range [theta_offset, theta_offset + n_theta) when theta_values is
/// null, otherwise they fold in as constants.
std::vector<expr::NodeId> emit_expressions(const MlpSpec& spec, expr::Graph& g,
                                           std::span<const expr::NodeId> inputs,
                                           int theta_offset,
                                           const Eigen::VectorXd* theta_values = nullptr);

/// Numeric forward pass; same accumulation order as the emitted expression.
Eigen::VectorXd forward(const MlpSpec& spec, const WeightVector& w, const Eigen::VectorXd& x);

/// Componentwise mean/stddev (population convention) over sample rows, with
/// sigma floored at 1e-8. Writes the result into spec.
void compute_normalization(MlpSpec& spec, const Eigen::MatrixXd& x_samples,
                           const Eigen::MatrixXd& z_samples);

struct PretrainResult {
  WeightVector weights;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> loss_history;  // one entry per step
};

/// Full-batch gradient descent on sum_i ||z_i - f(x_i; theta)||^2 from a
/// seeded random init. steps == 0 returns the init unchanged.
PretrainResult pretrain(const MlpSpec& spec, const Eigen::MatrixXd& x_samples,
                        const Eigen::MatrixXd& z_samples, int steps, double step_size,
                        std::uint64_t seed);

}  // namespace ndae
