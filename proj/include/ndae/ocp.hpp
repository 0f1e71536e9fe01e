#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ndae/expr.hpp"

namespace ndae {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct VariableInfo {
  std::string name;
  double lb = -kInf;
  double ub = kInf;
};

struct StaticParam {
  std::string name;
  double value = 0.0;
  double lb = -kInf;
  double ub = kInf;
  bool fixed = true;
};

/// Per-trajectory observed data: a subset of states sampled at given times.
struct TrajectoryObservations {
  std::vector<int> observed_states;  // indices into the state vector
  std::vector<double> times;
  Eigen::MatrixXd values;  // times x observed_states
};

struct NoiseRecord {
  bool synthetic = false;
  double sigma_fraction = 0.0;           // noise as fraction of state range
  std::vector<double> sigma_per_state;   // resolved absolute sigma per observed state
  std::uint64_t seed = 0;
};

struct ObservationSet {
  std::vector<TrajectoryObservations> trajectories;
  NoiseRecord noise;
  bool empty() const { return trajectories.empty(); }
};

struct LossSpec {
  double lambda_r = 0.0;  // coefficient of ||theta||_2^2
};

/// Continuous-time estimation problem: dynamics f, algebraic equalities h,
/// path inequalities g <= 0 over the variable ordering [x | y | z | p | t].
/// Expressions live in `graph`; the root lists reference it.
struct ContinuousModel {
  std::vector<VariableInfo> states;          // x
  std::vector<VariableInfo> algebraics;      // y
  std::vector<VariableInfo> neural_outputs;  // z
  std::vector<StaticParam> params;           // p
  bool has_time = false;

  double t0 = 0.0, tf = 0.0;

  expr::Graph graph{0};
  std::vector<expr::NodeId> dynamics;       // n_x roots
  std::vector<expr::NodeId> algebraic_eqs;  // == 0
  std::vector<expr::NodeId> path_ineqs;     // <= 0

  std::vector<int> neural_inputs;  // model variable indices fed to the network

  std::vector<Eigen::VectorXd> x0;  // one initial state per trajectory

  ObservationSet observations;
  LossSpec loss;

  int n_x() const { return static_cast<int>(states.size()); }
  int n_y() const { return static_cast<int>(algebraics.size()); }
  int n_z() const { return static_cast<int>(neural_outputs.size()); }
  int n_p() const { return static_cast<int>(params.size()); }
  int n_traj() const { return static_cast<int>(x0.size()); }
  int n_model_vars() const { return n_x() + n_y() + n_z() + n_p() + (has_time ? 1 : 0); }

  int var_x(int d) const { return d; }
  int var_y(int d) const { return n_x() + d; }
  int var_z(int d) const { return n_x() + n_y() + d; }
  int var_p(int d) const { return n_x() + n_y() + n_z() + d; }
  int var_t() const { return n_x() + n_y() + n_z() + n_p(); }
};

/// Assembles and validates a ContinuousModel.
class ModelBuilder {
 public:
  ModelBuilder(int n_x, int n_y, int n_z, int n_p = 0, bool with_time = false);

  expr::Graph& graph() { return model_.graph; }

  expr::Expr x(int d);
  expr::Expr y(int d);
  expr::Expr z(int d);
  expr::Expr p(int d);
  expr::Expr t();

  ModelBuilder& state(int d, std::string name, double lb = -kInf, double ub = kInf);
  ModelBuilder& algebraic(int d, std::string name, double lb = -kInf, double ub = kInf);
  ModelBuilder& neural_output(int d, std::string name, double lb = -kInf, double ub = kInf);
  ModelBuilder& param(int d, std::string name, double value, bool fixed = true,
                      double lb = -kInf, double ub = kInf);
  ModelBuilder& horizon(double t0, double tf);
  ModelBuilder& dynamics(std::vector<expr::NodeId> roots);
  ModelBuilder& algebraic_eqs(std::vector<expr::NodeId> roots);
  ModelBuilder& path_ineqs(std::vector<expr::NodeId> roots);
  ModelBuilder& trajectory(Eigen::VectorXd x0);
  ModelBuilder& neural_inputs(std::vector<int> model_var_indices);
  ModelBuilder& regularization(double lambda_r);

  /// Validates and returns the immutable model.
  ContinuousModel build();

 private:
  ContinuousModel model_;
};

/// Validates the observation set against the model and returns the model
/// carrying it.
ContinuousModel attach_observations(ContinuousModel model, ObservationSet obs);

}  // namespace ndae
