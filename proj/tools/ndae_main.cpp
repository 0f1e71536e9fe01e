#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ndae/io.hpp"

using namespace ndae;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitSolver = 4;

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case Errc::ConfigError:
    case Errc::UnknownSymbol:
    case Errc::ShapeMismatch:
    case Errc::DimensionMismatch:
    case Errc::UnsupportedOrder:
    case Errc::InconsistentInitialState:
    case Errc::NonpositiveVolume:
      return kExitConfig;
    case Errc::DataNotFound:
    case Errc::IoError:
      return kExitData;
    default:
      return kExitSolver;
  }
}

json stage_json(const StageResult& s) {
  json j;
  j["name"] = s.name;
  j["run"] = s.run;
  if (s.run) {
    j["status"] = ipm_status_name(s.status);
    j["seconds"] = s.seconds;
    j["iterations"] = s.iterations;
    j["final_kkt"] = s.final_kkt;
  } else {
    j["status"] = nullptr;
    j["seconds"] = nullptr;
    j["iterations"] = nullptr;
    j["final_kkt"] = nullptr;
  }
  return j;
}

json config_echo(const RunConfig& cfg) {
  json j;
  j["case"] = cfg.case_settings.name;
  j["scheme"] = {{"n_fe", cfg.scheme.n_fe}, {"K", cfg.scheme.K}};
  j["pipeline"] = {{"lambda_s", cfg.pipeline.lambda_s},
                   {"lambda_r", cfg.pipeline.lambda_r},
                   {"n_init", cfg.pipeline.n_init},
                   {"eps1", cfg.pipeline.eps1},
                   {"eps2", cfg.pipeline.eps2},
                   {"lbfgs_memory", cfg.pipeline.lbfgs_memory},
                   {"weight_seed", cfg.pipeline.weight_seed},
                   {"skip_pretrain", cfg.pipeline.skip_pretrain},
                   {"skip_lbfgs_stage", cfg.pipeline.skip_lbfgs_stage},
                   {"skip_refinement", cfg.pipeline.skip_refinement}};
  j["network"] = {{"hidden", cfg.network.hidden}, {"activation", cfg.network.activation}};
  j["data"] = {{"seed", cfg.data.seed},
               {"noise_fraction", cfg.data.noise_fraction},
               {"observations_per_trajectory", cfg.data.observations_per_trajectory},
               {"trajectories", cfg.data.trajectories.size()},
               {"horizon", {cfg.data.t0, cfg.data.tf}}};
  return j;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write " + path);
  out << j.dump(2) << "\n";
}

std::vector<std::string> model_state_names(const ContinuousModel& m) {
  std::vector<std::string> names;
  for (const auto& s : m.states) names.push_back(s.name);
  return names;
}

SimulatedTruth simulate_case_truth(const RunConfig& cfg, bool eval_variant) {
  auto truth_model = build_case_model(cfg, CaseMode::Truth, eval_variant);
  SimulateOptions so;
  so.n_fe = cfg.data.sim_elements;
  so.K = cfg.data.sim_order;
  return simulate_truth(truth_model, so);
}

MlpSpec network_spec(const RunConfig& cfg, const ContinuousModel& model) {
  MlpSpec spec;
  spec.widths.clear();
  spec.widths.push_back(static_cast<int>(model.neural_inputs.size()));
  for (int h : cfg.network.hidden) spec.widths.push_back(h);
  spec.widths.push_back(model.n_z());
  spec.activation = activation_from_name(cfg.network.activation);
  set_identity_normalization(spec);
  return spec;
}

int cmd_generate(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  auto truth = simulate_case_truth(cfg, false);
  const auto& model = truth.nlp.model();

  std::vector<std::vector<double>> times;
  for (int tr = 0; tr < truth.n_traj(); ++tr) {
    times.push_back(uniform_times(model.t0, model.tf, cfg.data.observations_per_trajectory));
  }
  auto neural_probe = build_case_model(cfg, CaseMode::NeuralUnknown, false);
  RunConfig cfg_idx = cfg;
  auto obs_states = observed_state_indices(cfg_idx, neural_probe);
  auto obs = make_observations(truth, times, obs_states, cfg.data.noise_fraction, cfg.data.seed);

  write_observations_csv(out_dir + "/observations.csv", obs, model_state_names(model));
  for (int tr = 0; tr < truth.n_traj(); ++tr) {
    write_trajectory_csv(out_dir + "/truth_traj" + std::to_string(tr) + ".csv", truth.nlp,
                         truth.w, tr, cfg.output.grid_points);
  }
  json manifest;
  manifest["schema_version"] = 1;
  manifest["command"] = "generate";
  manifest["config"] = config_echo(cfg);
  manifest["sigma_per_state"] = obs.noise.sigma_per_state;
  manifest["doubling_error"] = truth.doubling_error;
  manifest["files"] = {"observations.csv"};
  write_json(out_dir + "/manifest.json", manifest);
  std::printf("generate: %d trajectories, %d observation times each -> %s\n", truth.n_traj(),
              cfg.data.observations_per_trajectory, out_dir.c_str());
  return kExitOk;
}

TrainedModel run_training(const RunConfig& cfg, const std::string& data_dir) {
  auto model = build_case_model(cfg, CaseMode::NeuralUnknown, false);
  auto obs =
      read_observations_csv(data_dir + "/observations.csv", model_state_names(model));
  obs.noise.sigma_fraction = cfg.data.noise_fraction;
  auto attached = attach_observations(std::move(model), std::move(obs));
  MlpSpec spec = network_spec(cfg, attached);
  return train(attached, spec, cfg.pipeline);
}

json training_summary(const RunConfig& cfg, const TrainedModel& trained) {
  json summary;
  summary["schema_version"] = 1;
  summary["command"] = "train";
  summary["config"] = config_echo(cfg);
  json stages = json::array();
  for (const auto& s : trained.stages) stages.push_back(stage_json(s));
  summary["stages"] = stages;
  summary["train_mse"] = trained.train_mse;
  summary["total_seconds"] = trained.total_seconds;
  summary["all_stages_ok"] = trained.all_stages_ok();
  return summary;
}

int cmd_train(const RunConfig& cfg, const std::string& out_dir, const std::string& data_dir) {
  fs::create_directories(out_dir);
  auto trained = run_training(cfg, data_dir);
  write_weights_json(out_dir + "/model.json", trained.spec, trained.weights);
  for (int tr = 0; tr < trained.nlp.n_traj(); ++tr) {
    write_trajectory_csv(out_dir + "/fit_traj" + std::to_string(tr) + ".csv", trained.nlp,
                         trained.w, tr, cfg.output.grid_points);
  }
  write_json(out_dir + "/run_summary.json", training_summary(cfg, trained));
  std::printf("train: mse=%.6e total=%.3fs stages:", trained.train_mse, trained.total_seconds);
  for (const auto& s : trained.stages) {
    std::printf(" %s=%s", s.name.c_str(), s.run ? ipm_status_name(s.status) : "skipped");
  }
  std::printf("\n");
  return trained.all_stages_ok() ? kExitOk : kExitSolver;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& model_path, const std::string& out_dir) {
  fs::create_directories(out_dir);
  auto [spec, weights] = read_weights_json(model_path);
  auto eval_model = build_case_model(cfg, CaseMode::NeuralUnknown, true);
  auto scheme =
      CollocationScheme::make(cfg.scheme.n_fe, cfg.scheme.K, eval_model.t0, eval_model.tf);
  auto result = evaluate(spec, weights, eval_model, scheme);

  // truth of the evaluation variant for the test error
  auto truth = simulate_case_truth(cfg, true);
  auto obs_states = observed_state_indices(cfg, eval_model);
  auto times = uniform_times(eval_model.t0, eval_model.tf, cfg.data.observations_per_trajectory);

  json per_traj = json::array();
  double mse_sum = 0.0;
  int mse_count = 0;
  for (std::size_t tr = 0; tr < result.trajectories.size(); ++tr) {
    const auto& et = result.trajectories[tr];
    json tj;
    tj["status"] = ipm_status_name(et.status);
    tj["max_eq_violation"] = et.max_eq_violation;
    tj["max_bound_violation"] = et.max_bound_violation;
    if (et.status == IpmStatus::Optimal) {
      const double mse = mse_vs_truth(et.nlp, et.w, 0, truth, static_cast<int>(tr), obs_states,
                                      times);
      tj["mse_vs_truth"] = mse;
      mse_sum += mse;
      ++mse_count;
      write_trajectory_csv(out_dir + "/eval_traj" + std::to_string(tr) + ".csv", et.nlp, et.w, 0,
                           cfg.output.grid_points);
    }
    per_traj.push_back(tj);
  }
  json summary;
  summary["schema_version"] = 1;
  summary["command"] = "evaluate";
  summary["config"] = config_echo(cfg);
  summary["model_file"] = model_path;
  summary["trajectories"] = per_traj;
  summary["n_infeasible"] = result.n_infeasible;
  summary["test_mse"] = mse_count > 0 ? json(mse_sum / mse_count) : json(nullptr);
  write_json(out_dir + "/eval_summary.json", summary);
  std::printf("evaluate: %d trajectories, %d infeasible, test_mse=%s\n",
              static_cast<int>(result.trajectories.size()), result.n_infeasible,
              mse_count > 0 ? format_double(mse_sum / mse_count).c_str() : "n/a");
  return kExitOk;
}

int cmd_ablate(const RunConfig& cfg, const std::string& out_dir, const std::string& data_dir) {
  fs::create_directories(out_dir);
  struct Trial {
    const char* name;
    bool skip2, skip3, skip4;
    double eps1_override;  // < 0 keeps the configured value
  };
  const Trial trials[] = {
      {"0", false, false, false, -1.0}, {"A", true, false, false, -1.0},
      {"B", false, false, true, -1.0},  {"C", true, false, true, 1e-6},
      {"D", false, true, false, -1.0},
  };
  json rows = json::array();
  std::ofstream csv(out_dir + "/ablation.csv");
  csv << "trial,step1_s,step2_s,step3_s,step4_s,total_s,train_mse,test_mse,all_ok\n";
  std::printf("trial  step1      step2      step3      step4      total      mse(train)   mse(test)\n");
  for (const auto& t : trials) {
    RunConfig c = cfg;
    c.pipeline.skip_pretrain = t.skip2;
    c.pipeline.skip_lbfgs_stage = t.skip3;
    c.pipeline.skip_refinement = t.skip4;
    if (t.eps1_override > 0) c.pipeline.eps1 = t.eps1_override;
    auto trained = run_training(c, data_dir);

    // test error on the evaluation variant
    double test_mse = std::numeric_limits<double>::quiet_NaN();
    try {
      auto eval_model = build_case_model(c, CaseMode::NeuralUnknown, true);
      auto scheme =
          CollocationScheme::make(c.scheme.n_fe, c.scheme.K, eval_model.t0, eval_model.tf);
      auto ev = evaluate(trained.spec, trained.weights, eval_model, scheme);
      auto truth = simulate_case_truth(c, true);
      auto obs_states = observed_state_indices(c, eval_model);
      auto times = uniform_times(eval_model.t0, eval_model.tf,
                                 c.data.observations_per_trajectory);
      double acc = 0;
      int cnt = 0;
      for (std::size_t tr = 0; tr < ev.trajectories.size(); ++tr) {
        if (ev.trajectories[tr].status != IpmStatus::Optimal) continue;
        acc += mse_vs_truth(ev.trajectories[tr].nlp, ev.trajectories[tr].w, 0, truth,
                            static_cast<int>(tr), obs_states, times);
        ++cnt;
      }
      if (cnt > 0) test_mse = acc / cnt;
    } catch (const Error&) {
      // evaluation failures leave test_mse unset; the table still gets a row
    }

    json row;
    row["trial"] = t.name;
    json stages = json::array();
    for (const auto& s : trained.stages) stages.push_back(stage_json(s));
    row["stages"] = stages;
    row["total_seconds"] = trained.total_seconds;
    row["train_mse"] = trained.train_mse;
    row["test_mse"] = std::isnan(test_mse) ? json(nullptr) : json(test_mse);
    row["all_ok"] = trained.all_stages_ok();
    rows.push_back(row);

    auto sec = [&](int i) {
      return trained.stages[i].run ? format_double(trained.stages[i].seconds) : std::string("");
    };
    csv << t.name << ',' << sec(0) << ',' << sec(1) << ',' << sec(2) << ',' << sec(3) << ','
        << format_double(trained.total_seconds) << ',' << format_double(trained.train_mse) << ','
        << (std::isnan(test_mse) ? "" : format_double(test_mse)) << ','
        << (trained.all_stages_ok() ? "true" : "false") << '\n';
    auto cell = [&](int i) {
      return trained.stages[i].run ? std::string(format_double(trained.stages[i].seconds))
                                   : std::string("-");
    };
    std::printf("%-6s %-10s %-10s %-10s %-10s %-10.3f %-12.5e %-12.5e\n", t.name,
                cell(0).c_str(), cell(1).c_str(), cell(2).c_str(), cell(3).c_str(),
                trained.total_seconds, trained.train_mse, test_mse);
  }
  json out;
  out["schema_version"] = 1;
  out["command"] = "ablate";
  out["config"] = config_echo(cfg);
  out["trials"] = rows;
  write_json(out_dir + "/ablation.json", out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid neural DAE estimation by simultaneous collocation"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", model_path, data_dir;
  std::int64_t seed_override = -1;
  bool verbose = false;
  app.add_flag("--verbose", verbose, "verbose solver output");

  auto add_common = [&](CLI::App* sub, bool needs_model) {
    sub->add_option("--config", config_path, "TOML run configuration")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed_override, "override the data seed");
    sub->add_option("--data", data_dir, "directory holding observations.csv (default: --out)");
    if (needs_model) {
      sub->add_option("--model", model_path, "trained model JSON")->required();
    }
  };

  auto* gen = app.add_subcommand("generate", "simulate the truth and emit noisy observations");
  add_common(gen, false);
  auto* tr = app.add_subcommand("train", "run the four-step training procedure");
  add_common(tr, false);
  auto* ev = app.add_subcommand("evaluate", "fixed-weight square solves of the evaluation model");
  add_common(ev, true);
  auto* ab = app.add_subcommand("ablate", "run the five stage-skipping trials");
  add_common(ab, false);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_run_config(config_path);
    if (seed_override >= 0) cfg.data.seed = static_cast<std::uint64_t>(seed_override);
    if (data_dir.empty()) data_dir = out_dir;
    if (gen->parsed()) return cmd_generate(cfg, out_dir);
    if (tr->parsed()) return cmd_train(cfg, out_dir, data_dir);
    if (ev->parsed()) return cmd_evaluate(cfg, model_path, out_dir);
    if (ab->parsed()) return cmd_ablate(cfg, out_dir, data_dir);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitSolver;
  }
  return kExitOk;
}
