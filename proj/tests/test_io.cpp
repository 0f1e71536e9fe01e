#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ndae/io.hpp"

using namespace ndae;

namespace {

const char* kMiniConfig = R"(
# example configuration
[case]
name = "tank"

[case.tank]
alpha1 = 0.5
alpha2 = 0.5
profiles = "training"

[scheme]
n_fe = 8
K = 2

[pipeline]
lambda_s = 1e5
lambda_r = 1.0
n_init = 100
eps1 = 1e-3
eps2 = 1e-6

[network]
hidden = [8, 8]
activation = "tanh"

[data]
horizon = [0.0, 2.5]
trajectories = [[2.0, 1.0, 1.0, 4.0], [1.5, 1.8, 1.8, 3.0]]
observations_per_trajectory = 10
noise_fraction = 0.02
seed = 42
sim_elements = 32
sim_order = 3
observed_states = ["x0", "x1", "x2"]

[evaluate]
trajectories = [[2.0, 1.0, 1.0, 4.0]]
profiles = "eval"

[output]
grid_points = 51
)";

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("toml subset parses tables, arrays and scalars") {
  auto root = parse_toml(kMiniConfig);
  CHECK(root.at("case").at("name").as_string() == "tank");
  CHECK(root.at("case").at("tank").at("alpha1").as_float() == 0.5);
  CHECK(root.at("scheme").at("n_fe").as_integer() == 8);
  CHECK(root.at("pipeline").at("lambda_s").as_float() == 1e5);
  CHECK(root.at("data").at("trajectories").as_array().size() == 2);
  CHECK(root.at("data").at("observed_states").as_array()[1].as_string() == "x1");

  CHECK_THROWS_AS(parse_toml("key = "), Error);
  CHECK_THROWS_AS(parse_toml("a = 1\na = 2"), Error);
}

TEST_CASE("run config: schema validation and unknown-key rejection") {
  auto cfg = parse_run_config(parse_toml(kMiniConfig));
  CHECK(cfg.case_settings.name == "tank");
  CHECK(cfg.scheme.n_fe == 8);
  CHECK(cfg.pipeline.lambda_s == 1e5);
  CHECK(cfg.network.hidden == std::vector<int>{8, 8});
  CHECK(cfg.data.trajectories.size() == 2);
  CHECK(cfg.eval.tank_eval_profiles);
  CHECK(cfg.output.grid_points == 51);

  std::string bad = std::string(kMiniConfig) + "\n[data]\n";  // duplicate table is fine (merge)
  // unknown key rejected
  std::string unknown = std::string(kMiniConfig) + "\n[output]\nbogus = 1\n";
  CHECK_THROWS_AS(parse_run_config(parse_toml(unknown)), Error);

  auto model = build_case_model(cfg, CaseMode::NeuralUnknown, false);
  CHECK(model.n_traj() == 2);
  auto eval_model = build_case_model(cfg, CaseMode::NeuralUnknown, true);
  CHECK(eval_model.n_traj() == 1);
  auto idx = observed_state_indices(cfg, model);
  CHECK(idx == std::vector<int>{0, 1, 2});
}

TEST_CASE("weights json round trip") {
  MlpSpec spec;
  spec.widths = {3, 5, 2};
  spec.activation = Activation::Softplus;
  set_identity_normalization(spec);
  spec.mu_x << 1, 2, 3;
  spec.sigma_z << 0.5, 2.0;
  WeightVector w = random_init(spec, 17);
  const std::string path = temp_path("ndae_weights_test.json");
  write_weights_json(path, spec, w);
  auto [spec2, w2] = read_weights_json(path);
  CHECK(spec2.widths == spec.widths);
  CHECK(spec2.activation == spec.activation);
  CHECK((spec2.mu_x - spec.mu_x).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((spec2.sigma_z - spec.sigma_z).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((w2.theta - w.theta).lpNorm<Eigen::Infinity>() == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("observation csv round trip") {
  ObservationSet obs;
  TrajectoryObservations a;
  a.observed_states = {0, 2};
  a.times = {0.5, 1.25};
  a.values.resize(2, 2);
  a.values << 1.25, -0.5, 3.75, 0.125;
  obs.trajectories.push_back(a);
  TrajectoryObservations b = a;
  b.values << 0.0625, 7.5, -2.25, 9.0;
  obs.trajectories.push_back(b);

  const std::string path = temp_path("ndae_obs_test.csv");
  write_observations_csv(path, obs, {"s0", "s1", "s2"});
  auto rt = read_observations_csv(path, {"s0", "s1", "s2"});
  REQUIRE(rt.trajectories.size() == 2);
  CHECK(rt.trajectories[0].observed_states == std::vector<int>{0, 2});
  CHECK(rt.trajectories[0].times == std::vector<double>{0.5, 1.25});
  CHECK(rt.trajectories[0].values == a.values);
  CHECK(rt.trajectories[1].values == b.values);
  std::remove(path.c_str());

  CHECK_THROWS_AS(read_observations_csv(temp_path("missing_ndae.csv"), {"s0"}), Error);
}

TEST_CASE("format_double survives a round trip") {
  for (double v : {0.1, 1.0 / 3.0, 1e-17, 123456.789, -2.5e80}) {
    CHECK(std::stod(format_double(v)) == v);
  }
}
