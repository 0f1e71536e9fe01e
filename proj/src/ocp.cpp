#include "ndae/ocp.hpp"

#include <cmath>
#include <unordered_set>

namespace ndae {

ModelBuilder::ModelBuilder(int n_x, int n_y, int n_z, int n_p, bool with_time) {
  if (n_x <= 0) fail(Errc::DimensionMismatch, "model needs at least one state");
  model_.states.resize(n_x);
  model_.algebraics.resize(n_y);
  model_.neural_outputs.resize(n_z);
  model_.params.resize(n_p);
  model_.has_time = with_time;
  model_.graph = expr::Graph(n_x + n_y + n_z + n_p + (with_time ? 1 : 0));
  for (int d = 0; d < n_x; ++d) model_.states[d].name = "x" + std::to_string(d);
  for (int d = 0; d < n_y; ++d) model_.algebraics[d].name = "y" + std::to_string(d);
  for (int d = 0; d < n_z; ++d) model_.neural_outputs[d].name = "z" + std::to_string(d);
  for (int d = 0; d < n_p; ++d) model_.params[d].name = "p" + std::to_string(d);
  // default neural inputs: the full state vector
  model_.neural_inputs.resize(n_x);
  for (int d = 0; d < n_x; ++d) model_.neural_inputs[d] = model_.var_x(d);
}

expr::Expr ModelBuilder::x(int d) { return model_.graph.var(model_.var_x(d)); }
expr::Expr ModelBuilder::y(int d) { return model_.graph.var(model_.var_y(d)); }
expr::Expr ModelBuilder::z(int d) { return model_.graph.var(model_.var_z(d)); }
expr::Expr ModelBuilder::p(int d) { return model_.graph.var(model_.var_p(d)); }
expr::Expr ModelBuilder::t() {
  if (!model_.has_time) fail(Errc::UnknownSymbol, "model built without a time variable");
  return model_.graph.var(model_.var_t());
}

ModelBuilder& ModelBuilder::state(int d, std::string name, double lb, double ub) {
  model_.states.at(d) = {std::move(name), lb, ub};
  return *this;
}
ModelBuilder& ModelBuilder::algebraic(int d, std::string name, double lb, double ub) {
  model_.algebraics.at(d) = {std::move(name), lb, ub};
  return *this;
}
ModelBuilder& ModelBuilder::neural_output(int d, std::string name, double lb, double ub) {
  model_.neural_outputs.at(d) = {std::move(name), lb, ub};
  return *this;
}
ModelBuilder& ModelBuilder::param(int d, std::string name, double value, bool fixed, double lb,
                                  double ub) {
  model_.params.at(d) = {std::move(name), value, lb, ub, fixed};
  return *this;
}
ModelBuilder& ModelBuilder::horizon(double t0, double tf) {
  model_.t0 = t0;
  model_.tf = tf;
  return *this;
}
ModelBuilder& ModelBuilder::dynamics(std::vector<expr::NodeId> roots) {
  model_.dynamics = std::move(roots);
  return *this;
}
ModelBuilder& ModelBuilder::algebraic_eqs(std::vector<expr::NodeId> roots) {
  model_.algebraic_eqs = std::move(roots);
  return *this;
}
ModelBuilder& ModelBuilder::path_ineqs(std::vector<expr::NodeId> roots) {
  model_.path_ineqs = std::move(roots);
  return *this;
}
ModelBuilder& ModelBuilder::trajectory(Eigen::VectorXd x0) {
  model_.x0.push_back(std::move(x0));
  return *this;
}
ModelBuilder& ModelBuilder::neural_inputs(std::vector<int> idx) {
  model_.neural_inputs = std::move(idx);
  return *this;
}
ModelBuilder& ModelBuilder::regularization(double lambda_r) {
  model_.loss.lambda_r = lambda_r;
  return *this;
}

ContinuousModel ModelBuilder::build() {
  ContinuousModel& m = model_;
  if (static_cast<int>(m.dynamics.size()) != m.n_x())
    fail(Errc::DimensionMismatch, "dynamics output count != state count");
  if (!(m.tf > m.t0)) fail(Errc::EmptyHorizon, "horizon must satisfy tf > t0");
  std::unordered_set<std::string> names;
  auto check_name = [&](const std::string& n) {
    if (!names.insert(n).second) fail(Errc::DimensionMismatch, "duplicate variable name: " + n);
  };
  for (const auto& v : m.states) check_name(v.name);
  for (const auto& v : m.algebraics) check_name(v.name);
  for (const auto& v : m.neural_outputs) check_name(v.name);
  for (const auto& v : m.params) check_name(v.name);
  for (const auto& x0 : m.x0) {
    if (static_cast<int>(x0.size()) != m.n_x())
      fail(Errc::DimensionMismatch, "initial state size != state count");
  }
  for (int idx : m.neural_inputs) {
    if (idx < 0 || idx >= m.n_model_vars() - (m.has_time ? 1 : 0))
      fail(Errc::IndexOutOfRange, "neural input index out of range");
  }
  const int n_nodes = m.graph.n_nodes();
  auto check_roots = [&](const std::vector<expr::NodeId>& roots) {
    for (expr::NodeId r : roots) {
      if (r < 0 || r >= n_nodes) fail(Errc::UnknownSymbol, "expression root not in model graph");
    }
  };
  check_roots(m.dynamics);
  check_roots(m.algebraic_eqs);
  check_roots(m.path_ineqs);
  if (m.loss.lambda_r < 0) fail(Errc::DimensionMismatch, "lambda_r must be >= 0");
  return std::move(model_);
}

ContinuousModel attach_observations(ContinuousModel model, ObservationSet obs) {
  if (static_cast<int>(obs.trajectories.size()) != model.n_traj())
    fail(Errc::DimensionMismatch, "observation trajectory count != model trajectory count");
  for (const auto& tr : obs.trajectories) {
    for (int s : tr.observed_states) {
      if (s < 0 || s >= model.n_x()) fail(Errc::IndexOutOfRange, "observed state out of range");
    }
    for (double t : tr.times) {
      if (t < model.t0 || t > model.tf)
        fail(Errc::TimeOutOfHorizon, "observation time outside [t0, tf]");
    }
    if (tr.values.rows() != static_cast<Eigen::Index>(tr.times.size()) ||
        tr.values.cols() != static_cast<Eigen::Index>(tr.observed_states.size()))
      fail(Errc::DimensionMismatch, "observation value matrix shape");
    if (!tr.values.allFinite()) fail(Errc::DimensionMismatch, "non-finite observation value");
  }
  model.observations = std::move(obs);
  return model;
}

}  // namespace ndae
