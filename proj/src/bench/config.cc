#include "ctpg/bench/config.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ctpg::bench {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) parts.push_back(trim(item));
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

double parse_double(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': '" + text + "' is not a number");
  }
  return value;
}

long parse_long(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  long value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': '" + text + "' is not an integer");
  }
  return value;
}

using Registry = std::vector<KeySpec>;

void append(Registry& to, const Registry& from) {
  to.insert(to.end(), from.begin(), from.end());
}

Registry env_keys(const std::string& default_env) {
  return {
      {"env.name", default_env, "lqr | diffdrive | electric"},
      {"env.horizon", "", "seconds; empty uses the environment default (25, 5, 2)"},
      {"env.fd_eps", "0", "> 0 wraps the dynamics in the finite-difference adapter"},
      {"env.lqr.a", "0,0;0,0", "rows separated by ';'"},
      {"env.lqr.b", "1,0;0,1", ""},
      {"env.lqr.q", "1,0;0,1", ""},
      {"env.lqr.r", "1,0;0,1", ""},
      {"env.lqr.x0", "1,1", "fixed initial state"},
      {"env.diffdrive.wheelbase", "0.5", ""},
      {"env.diffdrive.cost_weight", "0.1", ""},
      {"env.diffdrive.box", "2", "initial positions uniform in [-box, box]^2"},
      {"env.electric.control_cost", "0.1", ""},
      {"env.electric.softening", "1e-4", ""},
      {"env.electric.path_radius", "0.25", ""},
      {"env.electric.path_rate", "3.141592653589793", ""},
  };
}

Registry policy_keys(const std::string& kind, const std::string& hidden) {
  return {
      {"policy.kind", kind, "mlp | linear | gain | lqr_optimal"},
      {"policy.hidden", hidden, "hidden layer widths of the tanh MLP"},
      {"policy.last_layer_scale", "1", "scales the initial output layer"},
      {"policy.gain", "0.2", "initial gain for the linear and gain policies"},
  };
}

Registry solver_keys(const std::string& tol) {
  return {
      {"solver.abstol", tol, "adaptive solves (ctpg, node)"},
      {"solver.reltol", tol, ""},
      {"solver.bptt_step", "0.01", "Euler step for bptt"},
  };
}

Registry train_keys(const std::string& estimator, const std::string& iterations,
                    const std::string& batch, const std::string& clip) {
  return {
      {"train.estimator", estimator, "ctpg | bptt | node"},
      {"train.iterations", iterations, ""},
      {"train.batch_size", batch, ""},
      {"train.lr", "0.01", "Adam step size"},
      {"train.clip", clip, "element-wise gradient clip; 0 disables"},
      {"train.seed", "0", "master seed"},
  };
}

Registry output_keys() {
  return {
      {"output.wallclock", "false", "record timings (makes CSVs run-dependent)"},
      {"output.plot", "true", "write a .plot.py script next to the CSV"},
  };
}

std::map<std::string, Registry> build_registries() {
  std::map<std::string, Registry> regs;

  Registry pareto = env_keys("lqr");
  append(pareto, policy_keys("lqr_optimal", "8"));
  append(pareto, output_keys());
  append(pareto, {
      {"pareto.bptt_steps", "0.5,0.25,0.1,0.05,0.02,0.01", ""},
      {"pareto.ctpg_tols", "1e-2,1e-3,1e-4,1e-5,1e-6,1e-7,1e-8", "abstol = reltol"},
      {"pareto.node_tols", "1e-6", "empty skips the Neural ODE rows"},
      {"pareto.seeds", "0,1,2,3,4", ""},
      {"pareto.oracle_h", "1e-4", "RK4 step of the finite-difference oracle"},
      {"pareto.oracle_eps", "1e-5", "parameter perturbation of the oracle"},
      {"pareto.error_floor", "1", "error = |g - g_ref| / max(|g_ref|, floor)"},
      {"pareto.cache_dir", "", "oracle cache directory; empty uses the CSV's"},
      {"pareto.check_dominance", "true", "exit 1 unless ctpg dominates every bptt point"},
      {"pareto.threads", "0", ""},
  });
  regs["pareto"] = pareto;

  Registry train = env_keys("diffdrive");
  append(train, policy_keys("mlp", "64,64"));
  append(train, solver_keys("1e-3"));
  append(train, train_keys("ctpg", "200", "16", "1"));
  append(train, output_keys());
  append(train, {
      {"output.params", "", "parameter file; empty uses <csv stem>.params"},
      {"output.trajectories", "", "optional trajectory dump CSV"},
      {"output.trajectory_grid", "5", "evaluation states per axis of the dump"},
      {"output.trajectory_dt", "0.05", ""},
      {"train.threads", "0", ""},
  });
  regs["train"] = train;

  Registry instability = env_keys("lqr");
  append(instability, policy_keys("mlp", "32"));
  append(instability, solver_keys("1e-6"));
  append(instability, train_keys("node", "1000", "1", "0"));
  append(instability, output_keys());
  append(instability, {
      {"instability.twin", "true", "also train the ctpg twin"},
      {"instability.check", "true", "exit 1 unless the expected behaviour shows"},
      {"instability.min_aux_growth", "1e3", ""},
      {"instability.twin_after", "50", "twin loss must stay below its start after this"},
  });
  regs["instability"] = instability;

  Registry eigs = output_keys();
  append(eigs, {
      {"eigs.random_systems", "10", ""},
      {"eigs.state_dim", "3", ""},
      {"eigs.control_dim", "2", ""},
      {"eigs.hidden", "8", "policy of the random systems"},
      {"eigs.seed", "0", ""},
      {"eigs.include_lqr", "true", "u = -x on A = 0, B = I (2 states)"},
      {"eigs.include_zero", "true", "probe with f identically zero"},
      {"eigs.tolerance", "1e-6", "pairing residual bound"},
      {"eigs.fd_eps", "1e-6", ""},
  });
  regs["eigs"] = eigs;

  regs["gradcheck"] = {
      {"gradcheck.tolerance", "", "overrides every check's tolerance"},
      {"gradcheck.drop_policy_chain", "false", "debug: use the open-loop adjoint"},
      {"gradcheck.seed", "0", ""},
  };
  return regs;
}

const std::map<std::string, Registry>& registries() {
  static const std::map<std::string, Registry> regs = build_registries();
  return regs;
}

}  // namespace

KvConfig KvConfig::parse(std::istream& in, const std::string& source) {
  KvConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    }
    if (cfg.has(key)) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" +
                        key + "'");
    }
    cfg.set(key, trim(line.substr(eq + 1)));
  }
  return cfg;
}

KvConfig KvConfig::parse_string(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

KvConfig KvConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse(in, path);
}

void KvConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

const std::vector<KeySpec>& command_keys(const std::string& command) {
  const auto it = registries().find(command);
  if (it == registries().end()) throw ConfigError("unknown command '" + command + "'");
  return it->second;
}

std::vector<std::string> command_names() {
  std::vector<std::string> names;
  for (const auto& [name, keys] : registries()) names.push_back(name);
  return names;
}

Settings::Settings(std::string command, const KvConfig& config)
    : command_(std::move(command)) {
  for (const KeySpec& spec : command_keys(command_)) {
    values_[spec.key] = spec.default_value;
  }
  for (const auto& [key, value] : config.entries()) override(key, value);
}

void Settings::override(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw ConfigError("unknown config key '" + key + "' for command " + command_);
  }
  it->second = value;
}

const std::string& Settings::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    throw std::logic_error("config key '" + key + "' is not registered for " + command_);
  }
  return it->second;
}

std::string Settings::str(const std::string& key) const { return raw(key); }

double Settings::num(const std::string& key) const {
  return parse_double(key, raw(key));
}

long Settings::integer(const std::string& key) const {
  return parse_long(key, raw(key));
}

std::uint64_t Settings::u64(const std::string& key) const {
  const long v = integer(key);
  if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::uint64_t>(v);
}

bool Settings::flag(const std::string& key) const {
  std::string v = raw(key);
  std::transform(v.begin(), v.end(), v.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': '" + raw(key) + "' is not a boolean");
}

std::vector<double> Settings::list(const std::string& key) const {
  std::vector<double> out;
  if (trim(raw(key)).empty()) return out;
  for (const std::string& item : split(raw(key), ',')) {
    out.push_back(parse_double(key, item));
  }
  return out;
}

std::vector<int> Settings::int_list(const std::string& key) const {
  std::vector<int> out;
  if (trim(raw(key)).empty()) return out;
  for (const std::string& item : split(raw(key), ',')) {
    out.push_back(static_cast<int>(parse_long(key, item)));
  }
  return out;
}

Matrix Settings::matrix(const std::string& key) const {
  std::vector<std::vector<double>> rows;
  for (const std::string& row : split(raw(key), ';')) {
    std::vector<double> r;
    for (const std::string& item : split(row, ',')) r.push_back(parse_double(key, item));
    rows.push_back(std::move(r));
  }
  if (rows.empty() || rows.front().empty()) {
    throw ConfigError("config key '" + key + "': empty matrix");
  }
  Matrix m(rows.size(), rows.front().size());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) {
      throw ConfigError("config key '" + key + "': ragged matrix rows");
    }
    for (size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

std::string Settings::fingerprint() const {
  std::string text = "command=" + command_ + "\n";
  for (const auto& [key, value] : values_) text += key + "=" + value + "\n";
  return fnv1a_hex(text);
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ctpg::bench
