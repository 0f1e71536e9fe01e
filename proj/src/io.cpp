#include "ndae/io.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ndae {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TomlValue

const std::string& TomlValue::as_string() const {
  if (kind_ != Kind::String) fail(Errc::ConfigError, "expected a string value");
  return str_;
}
double TomlValue::as_float() const {
  if (kind_ == Kind::Float) return num_;
  if (kind_ == Kind::Integer) return static_cast<double>(int_);
  fail(Errc::ConfigError, "expected a numeric value");
}
std::int64_t TomlValue::as_integer() const {
  if (kind_ != Kind::Integer) fail(Errc::ConfigError, "expected an integer value");
  return int_;
}
bool TomlValue::as_boolean() const {
  if (kind_ != Kind::Boolean) fail(Errc::ConfigError, "expected a boolean value");
  return bool_;
}
const std::vector<TomlValue>& TomlValue::as_array() const {
  if (kind_ != Kind::Array) fail(Errc::ConfigError, "expected an array value");
  return array_;
}
bool TomlValue::contains(const std::string& key) const {
  return kind_ == Kind::Table && table_.count(key) > 0;
}
const TomlValue& TomlValue::at(const std::string& key) const {
  if (!contains(key)) fail(Errc::ConfigError, "missing config key: " + key);
  return table_.at(key);
}
const std::map<std::string, TomlValue>& TomlValue::table() const {
  if (kind_ != Kind::Table) fail(Errc::ConfigError, "expected a table");
  return table_;
}
std::vector<double> TomlValue::as_float_array() const {
  std::vector<double> out;
  for (const auto& v : as_array()) out.push_back(v.as_float());
  return out;
}

TomlValue TomlValue::make_table() {
  TomlValue v;
  v.kind_ = Kind::Table;
  return v;
}
TomlValue TomlValue::make_string(std::string s) {
  TomlValue v;
  v.kind_ = Kind::String;
  v.str_ = std::move(s);
  return v;
}
TomlValue TomlValue::make_float(double d) {
  TomlValue v;
  v.kind_ = Kind::Float;
  v.num_ = d;
  return v;
}
TomlValue TomlValue::make_integer(std::int64_t i) {
  TomlValue v;
  v.kind_ = Kind::Integer;
  v.int_ = i;
  return v;
}
TomlValue TomlValue::make_boolean(bool b) {
  TomlValue v;
  v.kind_ = Kind::Boolean;
  v.bool_ = b;
  return v;
}
TomlValue TomlValue::make_array(std::vector<TomlValue> a) {
  TomlValue v;
  v.kind_ = Kind::Array;
  v.array_ = std::move(a);
  return v;
}
TomlValue& TomlValue::insert(const std::string& key, TomlValue v) {
  if (kind_ != Kind::Table) fail(Errc::ConfigError, "insert into non-table");
  if (table_.count(key)) fail(Errc::ConfigError, "duplicate config key: " + key);
  return table_[key] = std::move(v);
}
TomlValue& TomlValue::subtable(const std::string& key) {
  if (kind_ != Kind::Table) fail(Errc::ConfigError, "subtable of non-table");
  auto it = table_.find(key);
  if (it == table_.end()) return table_[key] = make_table();
  if (!it->second.is_table()) fail(Errc::ConfigError, "key is not a table: " + key);
  return it->second;
}

// ---------------------------------------------------------------------------
// TOML subset parser

namespace {

struct TomlParser {
  const std::string& text;
  std::size_t pos = 0;
  int line = 1;

  [[noreturn]] void err(const std::string& what) const {
    fail(Errc::ConfigError, "config parse error (line " + std::to_string(line) + "): " + what);
  }

  bool eof() const { return pos >= text.size(); }
  char peek() const { return text[pos]; }
  char get() {
    char c = text[pos++];
    if (c == '\n') ++line;
    return c;
  }

  void skip_ws_inline() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos;
  }
  void skip_to_eol() {
    while (!eof() && peek() != '\n') ++pos;
  }
  void skip_ws_and_comments() {
    for (;;) {
      skip_ws_inline();
      if (eof()) return;
      if (peek() == '#') {
        skip_to_eol();
        continue;
      }
      if (peek() == '\n' || peek() == '\r') {
        get();
        continue;
      }
      return;
    }
  }

  std::string parse_bare_key() {
    std::string k;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' ||
                      peek() == '-')) {
      k += get();
    }
    if (k.empty()) err("expected a key");
    return k;
  }

  TomlValue parse_value() {
    skip_ws_inline();
    if (eof()) err("expected a value");
    char c = peek();
    if (c == '"') {
      get();
      std::string s;
      while (!eof() && peek() != '"') {
        char d = get();
        if (d == '\\') {
          if (eof()) err("dangling escape");
          char e = get();
          switch (e) {
            case 'n': s += '\n'; break;
            case 't': s += '\t'; break;
            case '"': s += '"'; break;
            case '\\': s += '\\'; break;
            default: err("unsupported escape");
          }
        } else {
          s += d;
        }
      }
      if (eof()) err("unterminated string");
      get();
      return TomlValue::make_string(std::move(s));
    }
    if (c == '[') {
      get();
      std::vector<TomlValue> items;
      for (;;) {
        skip_ws_and_comments();
        if (eof()) err("unterminated array");
        if (peek() == ']') {
          get();
          break;
        }
        items.push_back(parse_value());
        skip_ws_and_comments();
        if (!eof() && peek() == ',') {
          get();
          continue;
        }
        skip_ws_and_comments();
        if (!eof() && peek() == ']') {
          get();
          break;
        }
        err("expected ',' or ']' in array");
      }
      return TomlValue::make_array(std::move(items));
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::string word = parse_bare_key();
      if (word == "true") return TomlValue::make_boolean(true);
      if (word == "false") return TomlValue::make_boolean(false);
      if (word == "inf") return TomlValue::make_float(kInf);
      if (word == "nan") err("nan is not a valid config value");
      err("unsupported bare value: " + word);
    }
    // number
    std::string num;
    while (!eof() && (std::isdigit(static_cast<unsigned char>(peek())) || peek() == '+' ||
                      peek() == '-' || peek() == '.' || peek() == 'e' || peek() == 'E' ||
                      peek() == '_')) {
      char d = get();
      if (d != '_') num += d;
    }
    if (num.empty()) err("expected a value");
    const bool is_float = num.find_first_of(".eE") != std::string::npos;
    try {
      if (is_float) return TomlValue::make_float(std::stod(num));
      return TomlValue::make_integer(std::stoll(num));
    } catch (const std::exception&) {
      err("malformed number: " + num);
    }
  }

  TomlValue parse() {
    TomlValue root = TomlValue::make_table();
    TomlValue* current = &root;
    for (;;) {
      skip_ws_and_comments();
      if (eof()) break;
      if (peek() == '[') {
        get();
        std::vector<std::string> path;
        for (;;) {
          skip_ws_inline();
          path.push_back(parse_bare_key());
          skip_ws_inline();
          if (!eof() && peek() == '.') {
            get();
            continue;
          }
          break;
        }
        if (eof() || peek() != ']') err("expected ']' after table header");
        get();
        current = &root;
        for (const auto& p : path) current = &current->subtable(p);
        continue;
      }
      std::string key = parse_bare_key();
      skip_ws_inline();
      if (eof() || peek() != '=') err("expected '=' after key " + key);
      get();
      current->insert(key, parse_value());
      skip_ws_inline();
      if (!eof() && peek() == '#') skip_to_eol();
    }
    return root;
  }
};

}  // namespace

TomlValue parse_toml(const std::string& text) {
  TomlParser p{text};
  return p.parse();
}

TomlValue parse_toml_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::DataNotFound, "cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_toml(ss.str());
}

// ---------------------------------------------------------------------------
// RunConfig

namespace {

void check_keys(const TomlValue& table, const std::vector<std::string>& allowed,
                const std::string& where) {
  for (const auto& [k, v] : table.table()) {
    bool ok = false;
    for (const auto& a : allowed) {
      if (k == a) {
        ok = true;
        break;
      }
    }
    if (!ok) fail(Errc::ConfigError, "unknown config key '" + k + "' in [" + where + "]");
  }
}

std::vector<Eigen::VectorXd> parse_trajectories(const TomlValue& v) {
  std::vector<Eigen::VectorXd> out;
  for (const auto& row : v.as_array()) {
    auto vals = row.as_float_array();
    Eigen::VectorXd x(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) x[i] = vals[i];
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(const TomlValue& root) {
  check_keys(root, {"case", "scheme", "pipeline", "network", "data", "evaluate", "output"},
             "top level");
  RunConfig cfg;

  const TomlValue& c = root.at("case");
  check_keys(c, {"name", "tank", "population", "fedbatch"}, "case");
  cfg.case_settings.name = c.at("name").as_string();
  if (cfg.case_settings.name != "tank" && cfg.case_settings.name != "population" &&
      cfg.case_settings.name != "fedbatch") {
    fail(Errc::ConfigError, "unknown case name: " + cfg.case_settings.name);
  }
  if (c.contains("tank")) {
    const TomlValue& t = c.at("tank");
    check_keys(t, {"alpha1", "alpha2", "profiles"}, "case.tank");
    if (t.contains("alpha1")) cfg.case_settings.tank.alpha1 = t.at("alpha1").as_float();
    if (t.contains("alpha2")) cfg.case_settings.tank.alpha2 = t.at("alpha2").as_float();
    if (t.contains("profiles")) {
      const std::string p = t.at("profiles").as_string();
      if (p == "training") {
        cfg.case_settings.tank_eval_profiles = false;
      } else if (p == "eval") {
        cfg.case_settings.tank_eval_profiles = true;
      } else {
        fail(Errc::ConfigError, "tank profiles must be 'training' or 'eval'");
      }
    }
  }
  if (c.contains("population")) {
    const TomlValue& t = c.at("population");
    check_keys(t, {"r1", "a1", "b1", "r2", "a2", "with_lyapunov", "x0_lower_bound"},
               "case.population");
    auto& p = cfg.case_settings.population;
    if (t.contains("r1")) p.r1 = t.at("r1").as_float();
    if (t.contains("a1")) p.a1 = t.at("a1").as_float();
    if (t.contains("b1")) p.b1 = t.at("b1").as_float();
    if (t.contains("r2")) p.r2 = t.at("r2").as_float();
    if (t.contains("a2")) p.a2 = t.at("a2").as_float();
    if (t.contains("x0_lower_bound")) p.x0_lower_bound = t.at("x0_lower_bound").as_float();
    if (t.contains("with_lyapunov"))
      cfg.case_settings.with_lyapunov = t.at("with_lyapunov").as_boolean();
  }
  if (c.contains("fedbatch")) {
    const TomlValue& t = c.at("fedbatch");
    check_keys(t, {"mu_max", "K_S", "Y_XS", "Y_PX", "S_f", "feed_rate"}, "case.fedbatch");
    auto& p = cfg.case_settings.fedbatch;
    if (t.contains("mu_max")) p.mu_max = t.at("mu_max").as_float();
    if (t.contains("K_S")) p.K_S = t.at("K_S").as_float();
    if (t.contains("Y_XS")) p.Y_XS = t.at("Y_XS").as_float();
    if (t.contains("Y_PX")) p.Y_PX = t.at("Y_PX").as_float();
    if (t.contains("S_f")) p.S_f = t.at("S_f").as_float();
    if (t.contains("feed_rate")) p.feed_rate = t.at("feed_rate").as_float();
  }

  const TomlValue& s = root.at("scheme");
  check_keys(s, {"n_fe", "K"}, "scheme");
  cfg.scheme.n_fe = static_cast<int>(s.at("n_fe").as_integer());
  cfg.scheme.K = static_cast<int>(s.at("K").as_integer());
  cfg.pipeline.n_fe = cfg.scheme.n_fe;
  cfg.pipeline.K = cfg.scheme.K;

  if (root.contains("pipeline")) {
    const TomlValue& p = root.at("pipeline");
    check_keys(p,
               {"lambda_s", "lambda_r", "n_init", "eps1", "eps2", "lbfgs_memory", "weight_seed",
                "pretrain_step_size", "max_iter", "step1_tol", "skip_pretrain",
                "skip_lbfgs_stage", "skip_refinement"},
               "pipeline");
    auto& pl = cfg.pipeline;
    if (p.contains("lambda_s")) pl.lambda_s = p.at("lambda_s").as_float();
    if (p.contains("lambda_r")) pl.lambda_r = p.at("lambda_r").as_float();
    if (p.contains("n_init")) pl.n_init = static_cast<int>(p.at("n_init").as_integer());
    if (p.contains("eps1")) pl.eps1 = p.at("eps1").as_float();
    if (p.contains("eps2")) pl.eps2 = p.at("eps2").as_float();
    if (p.contains("lbfgs_memory"))
      pl.lbfgs_memory = static_cast<int>(p.at("lbfgs_memory").as_integer());
    if (p.contains("weight_seed"))
      pl.weight_seed = static_cast<std::uint64_t>(p.at("weight_seed").as_integer());
    if (p.contains("pretrain_step_size"))
      pl.pretrain_step_size = p.at("pretrain_step_size").as_float();
    if (p.contains("max_iter")) pl.max_iter = static_cast<int>(p.at("max_iter").as_integer());
    if (p.contains("step1_tol")) pl.step1_tol = p.at("step1_tol").as_float();
    if (p.contains("skip_pretrain")) pl.skip_pretrain = p.at("skip_pretrain").as_boolean();
    if (p.contains("skip_lbfgs_stage"))
      pl.skip_lbfgs_stage = p.at("skip_lbfgs_stage").as_boolean();
    if (p.contains("skip_refinement"))
      pl.skip_refinement = p.at("skip_refinement").as_boolean();
  }

  const TomlValue& nw = root.at("network");
  check_keys(nw, {"hidden", "activation"}, "network");
  cfg.network.hidden.clear();
  for (const auto& h : nw.at("hidden").as_array()) {
    cfg.network.hidden.push_back(static_cast<int>(h.as_integer()));
  }
  if (nw.contains("activation")) cfg.network.activation = nw.at("activation").as_string();

  const TomlValue& d = root.at("data");
  check_keys(d,
             {"horizon", "trajectories", "observations_per_trajectory", "noise_fraction", "seed",
              "sim_elements", "sim_order", "observed_states"},
             "data");
  auto horizon = d.at("horizon").as_float_array();
  if (horizon.size() != 2) fail(Errc::ConfigError, "horizon must be [t0, tf]");
  cfg.data.t0 = horizon[0];
  cfg.data.tf = horizon[1];
  cfg.data.trajectories = parse_trajectories(d.at("trajectories"));
  if (d.contains("observations_per_trajectory")) {
    cfg.data.observations_per_trajectory =
        static_cast<int>(d.at("observations_per_trajectory").as_integer());
  }
  if (d.contains("noise_fraction")) cfg.data.noise_fraction = d.at("noise_fraction").as_float();
  if (d.contains("seed")) cfg.data.seed = static_cast<std::uint64_t>(d.at("seed").as_integer());
  if (d.contains("sim_elements"))
    cfg.data.sim_elements = static_cast<int>(d.at("sim_elements").as_integer());
  if (d.contains("sim_order")) cfg.data.sim_order = static_cast<int>(d.at("sim_order").as_integer());
  for (const auto& s2 : d.at("observed_states").as_array()) {
    cfg.data.observed_states.push_back(s2.as_string());
  }

  if (root.contains("evaluate")) {
    const TomlValue& e = root.at("evaluate");
    check_keys(e, {"trajectories", "profiles"}, "evaluate");
    if (e.contains("trajectories")) cfg.eval.trajectories = parse_trajectories(e.at("trajectories"));
    if (e.contains("profiles")) {
      const std::string p = e.at("profiles").as_string();
      if (p == "training") {
        cfg.eval.tank_eval_profiles = false;
      } else if (p == "eval") {
        cfg.eval.tank_eval_profiles = true;
      } else {
        fail(Errc::ConfigError, "evaluate profiles must be 'training' or 'eval'");
      }
    }
  }

  if (root.contains("output")) {
    const TomlValue& o = root.at("output");
    check_keys(o, {"grid_points"}, "output");
    if (o.contains("grid_points"))
      cfg.output.grid_points = static_cast<int>(o.at("grid_points").as_integer());
  }

  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(parse_toml_file(path));
}

ContinuousModel build_case_model(const RunConfig& cfg, CaseMode mode, bool use_eval_variant) {
  const auto& cs = cfg.case_settings;
  const auto& x0s =
      use_eval_variant && !cfg.eval.trajectories.empty() ? cfg.eval.trajectories
                                                         : cfg.data.trajectories;
  if (x0s.empty()) fail(Errc::ConfigError, "no trajectories configured");
  if (cs.name == "tank") {
    TankParams p = cs.tank;
    const bool eval_profiles =
        use_eval_variant ? cfg.eval.tank_eval_profiles : cs.tank_eval_profiles;
    p.profiles = eval_profiles ? tank_eval_profiles() : tank_training_profiles();
    return build_tank(p, mode, cfg.data.t0, cfg.data.tf, x0s);
  }
  if (cs.name == "population") {
    return build_population(cs.population, cs.with_lyapunov, mode, cfg.data.t0, cfg.data.tf, x0s);
  }
  if (cs.name == "fedbatch") {
    return build_fedbatch(cs.fedbatch, mode, cfg.data.t0, cfg.data.tf, x0s);
  }
  fail(Errc::ConfigError, "unknown case: " + cs.name);
}

std::vector<int> observed_state_indices(const RunConfig& cfg, const ContinuousModel& model) {
  std::vector<int> idx;
  for (const auto& name : cfg.data.observed_states) {
    bool found = false;
    for (int d = 0; d < model.n_x(); ++d) {
      if (model.states[d].name == name) {
        idx.push_back(d);
        found = true;
        break;
      }
    }
    if (!found) fail(Errc::ConfigError, "observed state not in model: " + name);
  }
  if (idx.empty()) fail(Errc::ConfigError, "no observed states configured");
  return idx;
}

// ---------------------------------------------------------------------------
// Artifacts

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_weights_json(const std::string& path, const MlpSpec& spec, const WeightVector& w) {
  json j;
  j["schema_version"] = 1;
  j["widths"] = spec.widths;
  j["activation"] = activation_name(spec.activation);
  auto vec = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  j["mu_x"] = vec(spec.mu_x);
  j["sigma_x"] = vec(spec.sigma_x);
  j["mu_z"] = vec(spec.mu_z);
  j["sigma_z"] = vec(spec.sigma_z);
  json weights = json::array(), biases = json::array();
  for (int l = 1; l <= spec.n_layers(); ++l) {
    Eigen::MatrixXd W = w.weights(spec, l);
    json rows = json::array();
    for (int r = 0; r < W.rows(); ++r) {
      rows.push_back(std::vector<double>(W.row(r).begin(), W.row(r).end()));
    }
    weights.push_back(rows);
    biases.push_back(vec(w.biases(spec, l)));
  }
  j["weights"] = weights;
  j["biases"] = biases;
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write " + path);
  out << j.dump(2) << "\n";
}

std::pair<MlpSpec, WeightVector> read_weights_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::DataNotFound, "cannot open model file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(Errc::ConfigError, std::string("malformed model file: ") + e.what());
  }
  MlpSpec spec;
  spec.widths = j.at("widths").get<std::vector<int>>();
  spec.activation = activation_from_name(j.at("activation").get<std::string>());
  auto vec = [&](const char* key) {
    auto v = j.at(key).get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()).eval();
  };
  spec.mu_x = vec("mu_x");
  spec.sigma_x = vec("sigma_x");
  spec.mu_z = vec("mu_z");
  spec.sigma_z = vec("sigma_z");
  spec.validate();
  WeightVector w;
  w.theta = Eigen::VectorXd::Zero(spec.n_theta());
  const auto& weights = j.at("weights");
  const auto& biases = j.at("biases");
  for (int l = 1; l <= spec.n_layers(); ++l) {
    const auto& W = weights.at(l - 1);
    for (int r = 0; r < spec.widths[l]; ++r) {
      const auto& row = W.at(r);
      for (int cidx = 0; cidx < spec.widths[l - 1]; ++cidx) {
        w.theta[spec.weight_index(l, r, cidx)] = row.at(cidx).get<double>();
      }
      w.theta[spec.bias_index(l, r)] = biases.at(l - 1).at(r).get<double>();
    }
  }
  return {std::move(spec), std::move(w)};
}

void write_observations_csv(const std::string& path, const ObservationSet& obs,
                            const std::vector<std::string>& state_names) {
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write " + path);
  out << "trajectory_id,t,state_name,value\n";
  for (std::size_t tr = 0; tr < obs.trajectories.size(); ++tr) {
    const auto& to = obs.trajectories[tr];
    for (std::size_t i = 0; i < to.times.size(); ++i) {
      for (std::size_t sc = 0; sc < to.observed_states.size(); ++sc) {
        out << tr << ',' << format_double(to.times[i]) << ','
            << state_names.at(to.observed_states[sc]) << ','
            << format_double(to.values(i, sc)) << '\n';
      }
    }
  }
}

ObservationSet read_observations_csv(const std::string& path,
                                     const std::vector<std::string>& state_names) {
  std::ifstream in(path);
  if (!in) fail(Errc::DataNotFound, "cannot open observation file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "trajectory_id,t,state_name,value")
    fail(Errc::ConfigError, "unexpected observation CSV header in " + path);

  auto state_index = [&](const std::string& name) {
    for (std::size_t d = 0; d < state_names.size(); ++d) {
      if (state_names[d] == name) return static_cast<int>(d);
    }
    fail(Errc::ConfigError, "unknown state name in observations: " + name);
  };

  // trajectory -> time -> (state, value)
  std::map<int, std::map<double, std::vector<std::pair<int, double>>>> grid;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tr_s, t_s, name, v_s;
    if (!std::getline(ss, tr_s, ',') || !std::getline(ss, t_s, ',') ||
        !std::getline(ss, name, ',') || !std::getline(ss, v_s)) {
      fail(Errc::ConfigError, "malformed observation row: " + line);
    }
    grid[std::stoi(tr_s)][std::stod(t_s)].emplace_back(state_index(name), std::stod(v_s));
  }

  ObservationSet obs;
  for (auto& [tr, times] : grid) {
    if (tr != static_cast<int>(obs.trajectories.size()))
      fail(Errc::ConfigError, "non-contiguous trajectory ids in observations");
    TrajectoryObservations to;
    std::vector<int> states;
    for (auto& [t, vals] : times) {
      if (states.empty()) {
        for (auto& [s, v] : vals) states.push_back(s);
        std::sort(states.begin(), states.end());
      }
      to.times.push_back(t);
    }
    to.observed_states = states;
    to.values.resize(to.times.size(), states.size());
    std::size_t row = 0;
    for (auto& [t, vals] : times) {
      if (vals.size() != states.size())
        fail(Errc::ConfigError, "ragged observation rows at t=" + std::to_string(t));
      for (auto& [s, v] : vals) {
        auto it = std::find(states.begin(), states.end(), s);
        to.values(row, it - states.begin()) = v;
      }
      ++row;
    }
    obs.trajectories.push_back(std::move(to));
  }
  return obs;
}

void write_trajectory_csv(const std::string& path, const DiscretizedNlp& nlp,
                          const Eigen::VectorXd& w, int traj, int grid_points) {
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write " + path);
  const auto& model = nlp.model();
  out << 't';
  for (const auto& v : model.states) out << ',' << v.name;
  for (const auto& v : model.algebraics) out << ',' << v.name;
  for (const auto& v : model.neural_outputs) out << ',' << v.name;
  out << '\n';
  Eigen::VectorXd x, y, z;
  for (int i = 0; i < grid_points; ++i) {
    const double t = model.t0 + (model.tf - model.t0) * i / (grid_points - 1.0);
    nlp.interpolate(w, traj, t, &x, &y, &z);
    out << format_double(t);
    for (int d = 0; d < x.size(); ++d) out << ',' << format_double(x[d]);
    for (int d = 0; d < y.size(); ++d) out << ',' << format_double(y[d]);
    for (int d = 0; d < z.size(); ++d) out << ',' << format_double(z[d]);
    out << '\n';
  }
}

}  // namespace ndae
