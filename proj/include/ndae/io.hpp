#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ndae/cases.hpp"
#include "ndae/pipeline.hpp"

namespace ndae {

// ---------------------------------------------------------------------------
// Minimal TOML subset: [table] and [table.sub] headers, key = value lines,
// strings, numbers, booleans, (nested) arrays and # comments. Everything the
// shipped configs use; anything else is a ConfigError.

class TomlValue {
 public:
  enum class Kind { String, Float, Integer, Boolean, Array, Table };

  Kind kind() const { return kind_; }
  bool is_table() const { return kind_ == Kind::Table; }

  const std::string& as_string() const;
  double as_float() const;  // accepts integers
  std::int64_t as_integer() const;
  bool as_boolean() const;
  const std::vector<TomlValue>& as_array() const;

  bool contains(const std::string& key) const;
  const TomlValue& at(const std::string& key) const;
  const std::map<std::string, TomlValue>& table() const;
  std::vector<double> as_float_array() const;

  static TomlValue make_table();
  static TomlValue make_string(std::string v);
  static TomlValue make_float(double v);
  static TomlValue make_integer(std::int64_t v);
  static TomlValue make_boolean(bool v);
  static TomlValue make_array(std::vector<TomlValue> v);

  TomlValue& insert(const std::string& key, TomlValue v);
  TomlValue& subtable(const std::string& key);

 private:
  Kind kind_ = Kind::Table;
  std::string str_;
  double num_ = 0;
  std::int64_t int_ = 0;
  bool bool_ = false;
  std::vector<TomlValue> array_;
  std::map<std::string, TomlValue> table_;
};

TomlValue parse_toml(const std::string& text);
TomlValue parse_toml_file(const std::string& path);

// ---------------------------------------------------------------------------
// Run configuration

struct SchemeConfig {
  int n_fe = 20;
  int K = 2;
};

struct NetworkConfig {
  std::vector<int> hidden{20, 20};
  std::string activation = "tanh";
};

struct DataConfig {
  double t0 = 0.0, tf = 1.0;
  std::vector<Eigen::VectorXd> trajectories;
  int observations_per_trajectory = 15;
  double noise_fraction = 0.02;
  std::uint64_t seed = 42;
  int sim_elements = 80;
  int sim_order = 3;
  std::vector<std::string> observed_states;
};

struct EvalConfig {
  std::vector<Eigen::VectorXd> trajectories;
  bool tank_eval_profiles = false;
};

struct CaseSettings {
  std::string name;  // tank | population | fedbatch
  TankParams tank;
  bool tank_eval_profiles = false;
  PopulationParams population;
  bool with_lyapunov = true;
  FedbatchParams fedbatch;
};

struct OutputConfig {
  int grid_points = 201;
};

struct RunConfig {
  CaseSettings case_settings;
  SchemeConfig scheme;
  PipelineConfig pipeline;
  NetworkConfig network;
  DataConfig data;
  EvalConfig eval;
  OutputConfig output;
};

/// Schema-validated parse; unknown keys are rejected.
RunConfig parse_run_config(const TomlValue& root);
RunConfig load_run_config(const std::string& path);

/// Builds the configured case model (Truth or NeuralUnknown variant). When
/// `use_eval_variant` is set, tank evaluation profiles and the [evaluate]
/// trajectories replace the training ones.
ContinuousModel build_case_model(const RunConfig& cfg, CaseMode mode, bool use_eval_variant);

/// Maps configured observed-state names to indices of the built model.
std::vector<int> observed_state_indices(const RunConfig& cfg, const ContinuousModel& model);

// ---------------------------------------------------------------------------
// Artifact formats

/// Weight export: layer widths, activation, normalization vectors, row-major
/// weight matrices, biases.
void write_weights_json(const std::string& path, const MlpSpec& spec, const WeightVector& w);
std::pair<MlpSpec, WeightVector> read_weights_json(const std::string& path);

/// Observation CSV: trajectory_id,t,state_name,value
void write_observations_csv(const std::string& path, const ObservationSet& obs,
                            const std::vector<std::string>& state_names);
ObservationSet read_observations_csv(const std::string& path,
                                     const std::vector<std::string>& state_names);

/// Trajectory CSV: header t,<name>..., one row per grid time.
void write_trajectory_csv(const std::string& path, const DiscretizedNlp& nlp,
                          const Eigen::VectorXd& w, int traj, int grid_points);

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace ndae
