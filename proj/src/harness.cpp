#include "lspi/harness.hpp"

#include "lspi/baselines.hpp"
#include "lspi/errors.hpp"
#include "lspi/policy_iter.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>
#include <tuple>

namespace lspi {

using nlohmann::json;

InstanceSpec offline_paper_instance() {
  InstanceSpec inst;
  inst.name = "offline-paper";
  inst.sys.A.resize(3, 3);
  inst.sys.A << 0.95, 0.01, 0.0,
                0.01, 0.95, 0.01,
                0.0, 0.01, 0.95;
  inst.sys.B.resize(3, 2);
  inst.sys.B << 1.0, 0.1,
                0.0, 0.1,
                0.0, 0.1;
  inst.sys.sigma_w = 1.0;
  inst.sys.Sigma0 = Matrix::Zero(3, 3);
  inst.cost.S = Matrix::Identity(3, 3);
  inst.cost.R = Matrix::Identity(2, 2);
  return inst;
}

InstanceSpec adaptive_dean_instance() {
  InstanceSpec inst;
  inst.name = "adaptive-dean";
  inst.sys.A.resize(3, 3);
  inst.sys.A << 1.01, 0.01, 0.0,
                0.01, 1.01, 0.01,
                0.0, 0.01, 1.01;
  inst.sys.B = Matrix::Identity(3, 3);
  inst.sys.sigma_w = 1.0;
  inst.sys.Sigma0 = Matrix::Zero(3, 3);
  inst.cost.S = 10.0 * Matrix::Identity(3, 3);
  inst.cost.R = Matrix::Identity(3, 3);
  return inst;
}

namespace {

Matrix matrix_from_json(const json& j, const std::string& key) {
  if (!j.is_array() || j.empty()) throw ConfigError(key, "expected a non-empty array of rows");
  const auto rows = static_cast<Index>(j.size());
  if (!j[0].is_array() || j[0].empty()) throw ConfigError(key, "expected a non-empty array of rows");
  const auto cols = static_cast<Index>(j[0].size());
  Matrix M(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw ConfigError(key, "rows must all have the same length");
    }
    for (Index c = 0; c < cols; ++c) {
      const json& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw ConfigError(key, "entries must be numbers");
      M(r, c) = v.get<double>();
    }
  }
  return M;
}

std::string read_file(const std::string& path, const std::string& key) {
  std::ifstream in(path);
  if (!in) throw ConfigError(key, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text, const std::string& key) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(key, std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

InstanceSpec load_custom_instance(const std::string& path) {
  const json j = parse_json(read_file(path, "instance_path"), "instance_path");
  if (!j.is_object()) throw ConfigError("instance_path", "instance file must hold an object");
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (k != "A" && k != "B" && k != "S" && k != "R" && k != "sigma_w" && k != "Sigma0" &&
        k != "name") {
      throw ConfigError(k, "unknown instance key");
    }
  }
  for (const char* k : {"A", "B", "S", "R"}) {
    if (!j.contains(k)) throw ConfigError(k, "missing required instance key");
  }
  InstanceSpec inst;
  inst.name = j.value("name", std::string("custom"));
  inst.sys.A = matrix_from_json(j["A"], "A");
  inst.sys.B = matrix_from_json(j["B"], "B");
  inst.cost.S = matrix_from_json(j["S"], "S");
  inst.cost.R = matrix_from_json(j["R"], "R");
  if (j.contains("sigma_w")) {
    if (!j["sigma_w"].is_number()) throw ConfigError("sigma_w", "expected a number");
    inst.sys.sigma_w = j["sigma_w"].get<double>();
  }
  inst.sys.Sigma0 = j.contains("Sigma0") ? matrix_from_json(j["Sigma0"], "Sigma0")
                                         : Matrix::Zero(inst.sys.A.rows(), inst.sys.A.rows());
  inst.sys.validate();
  const Index n = inst.sys.n();
  const Index d = inst.sys.d();
  if (inst.cost.S.rows() != n || inst.cost.S.cols() != n) throw ConfigError("S", "must be n x n");
  if (inst.cost.R.rows() != d || inst.cost.R.cols() != d) throw ConfigError("R", "must be d x d");
  return inst;
}

InstanceSpec resolve_instance(const ExperimentConfig& cfg) {
  if (cfg.instance == "offline-paper") return offline_paper_instance();
  if (cfg.instance == "adaptive-dean") return adaptive_dean_instance();
  if (cfg.instance == "custom") {
    if (cfg.instance_path.empty()) throw ConfigError("instance_path", "required for custom instance");
    return load_custom_instance(cfg.instance_path);
  }
  throw ConfigError("instance", "unknown instance '" + cfg.instance + "'");
}

void apply_preset(ExperimentConfig& cfg, const std::string& preset) {
  if (preset == "offline-paper") {
    cfg.instance = "offline-paper";
    cfg.budget = 1000000;
    cfg.trials = 100;
    cfg.k0 = "auto";
  } else if (preset == "online-paper" || preset == "paper-online") {
    cfg.instance = "adaptive-dean";
    cfg.algorithm = "lspi_adaptive";
    cfg.trials = 100;
    cfg.horizon = 10000;
    cfg.warm_start = true;
    cfg.warm_start_steps = 2000;
    cfg.warm_start_sigma = 1.0;
    cfg.schedule = "linear";
    cfg.linear_base = 10;
    cfg.epochs = 0;
    cfg.sigma0_sq = 0.01;
    cfg.exploration_exponent = 2.0 / 3.0;
    cfg.inner_solver = "lspi_v1";
    cfg.data_window = "all";
    cfg.inner_iters_rule = "thresholds";
    cfg.inner_iters_base = 3;
    cfg.inner_iters_thresholds = {2000, 4000, 6000};
  } else if (preset == "theory-online") {
    cfg.instance = "adaptive-dean";
    cfg.algorithm = "lspi_adaptive";
    cfg.trials = 100;
    cfg.horizon = -1;
    cfg.warm_start = false;
    cfg.schedule = "doubling";
    cfg.t_mult = 500;
    cfg.epochs = 8;
    cfg.sigma0_sq = 1.0;
    cfg.exploration_exponent = 1.0 / 3.0;
    cfg.inner_solver = "lspi_v2";
    cfg.data_window = "epoch";
    cfg.inner_iters_rule = "thresholds";
    cfg.inner_iters_base = 3;
    cfg.inner_iters_thresholds = {2000, 4000, 6000};
  } else {
    throw ConfigError("preset", "unknown preset '" + preset + "'");
  }
}

namespace {

template <class T>
T get_typed(const json& v, const std::string& key);

template <>
std::string get_typed<std::string>(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError(key, "expected a string");
  return v.get<std::string>();
}

template <>
double get_typed<double>(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError(key, "expected a number");
  return v.get<double>();
}

template <>
bool get_typed<bool>(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError(key, "expected a boolean");
  return v.get<bool>();
}

template <>
Index get_typed<Index>(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
  return v.get<Index>();
}

template <>
int get_typed<int>(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw ConfigError(key, "integer out of range");
  }
  return static_cast<int>(x);
}

template <>
std::uint64_t get_typed<std::uint64_t>(const json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError(key, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

template <>
std::vector<Index> get_typed<std::vector<Index>>(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError(key, "expected an array of integers");
  std::vector<Index> out;
  for (const auto& e : v) out.push_back(get_typed<Index>(e, key));
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const json&, const std::string&)>;

template <class T>
Setter field(T ExperimentConfig::*member) {
  return [member](ExperimentConfig& c, const json& v, const std::string& key) {
    c.*member = get_typed<T>(v, key);
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table{
      {"instance", field(&ExperimentConfig::instance)},
      {"instance_path", field(&ExperimentConfig::instance_path)},
      {"algorithm", field(&ExperimentConfig::algorithm)},
      {"trials", field(&ExperimentConfig::trials)},
      {"seed", field(&ExperimentConfig::seed)},
      {"jobs", field(&ExperimentConfig::jobs)},
      {"format", field(&ExperimentConfig::format)},
      {"out", field(&ExperimentConfig::out)},
      {"budget", field(&ExperimentConfig::budget)},
      {"checkpoints", field(&ExperimentConfig::checkpoints)},
      {"lspi_sigma_eta", field(&ExperimentConfig::lspi_sigma_eta)},
      {"lspi_v1_N", field(&ExperimentConfig::lspi_v1_N)},
      {"lspi_v2_N", field(&ExperimentConfig::lspi_v2_N)},
      {"lspi_v2_T", field(&ExperimentConfig::lspi_v2_T)},
      {"mu", field(&ExperimentConfig::mu)},
      {"pg_sigma_eta", field(&ExperimentConfig::pg_sigma_eta)},
      {"pg_step", field(&ExperimentConfig::pg_step)},
      {"dfo_sigma_eta", field(&ExperimentConfig::dfo_sigma_eta)},
      {"dfo_step", field(&ExperimentConfig::dfo_step)},
      {"dfo_shared_noise", field(&ExperimentConfig::dfo_shared_noise)},
      {"rollout_horizon", field(&ExperimentConfig::rollout_horizon)},
      {"projection_radius_factor", field(&ExperimentConfig::projection_radius_factor)},
      {"sigma_u", field(&ExperimentConfig::sigma_u)},
      {"nominal_rollout_len", field(&ExperimentConfig::nominal_rollout_len)},
      {"horizon", field(&ExperimentConfig::horizon)},
      {"warm_start", field(&ExperimentConfig::warm_start)},
      {"warm_start_steps", field(&ExperimentConfig::warm_start_steps)},
      {"warm_start_sigma", field(&ExperimentConfig::warm_start_sigma)},
      {"count_warm_start", field(&ExperimentConfig::count_warm_start)},
      {"schedule", field(&ExperimentConfig::schedule)},
      {"t_mult", field(&ExperimentConfig::t_mult)},
      {"linear_base", field(&ExperimentConfig::linear_base)},
      {"epochs", field(&ExperimentConfig::epochs)},
      {"sigma0_sq", field(&ExperimentConfig::sigma0_sq)},
      {"exploration_exponent", field(&ExperimentConfig::exploration_exponent)},
      {"inner_solver", field(&ExperimentConfig::inner_solver)},
      {"data_window", field(&ExperimentConfig::data_window)},
      {"inner_iters_rule", field(&ExperimentConfig::inner_iters_rule)},
      {"inner_iters_base", field(&ExperimentConfig::inner_iters_base)},
      {"inner_iters_slope", field(&ExperimentConfig::inner_iters_slope)},
      {"inner_iters_thresholds", field(&ExperimentConfig::inner_iters_thresholds)},
      {"record_every", field(&ExperimentConfig::record_every)},
      {"k0", field(&ExperimentConfig::k0)},
      {"k0_perturbation", field(&ExperimentConfig::k0_perturbation)},
      {"divergence_threshold", field(&ExperimentConfig::divergence_threshold)},
      {"pi_iterations", field(&ExperimentConfig::pi_iterations)},
      {"sweep_T", field(&ExperimentConfig::sweep_T)},
  };
  return table;
}

bool one_of(const std::string& v, std::initializer_list<const char*> options) {
  return std::any_of(options.begin(), options.end(), [&](const char* o) { return v == o; });
}

}  // namespace

void apply_config_json(ExperimentConfig& cfg, const std::string& json_text) {
  const json j = parse_json(json_text, "config");
  if (!j.is_object()) throw ConfigError("config", "config must be a flat JSON object");
  if (j.contains("preset")) apply_preset(cfg, get_typed<std::string>(j["preset"], "preset"));
  const auto& table = setters();
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") continue;
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(key, "unknown config key");
    if (value.is_object()) throw ConfigError(key, "nested objects are not allowed");
    it->second(cfg, value, key);
  }
}

void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
  apply_config_json(cfg, read_file(path, "config"));
}

void ExperimentConfig::validate() const {
  if (!one_of(instance, {"offline-paper", "adaptive-dean", "custom"})) {
    throw ConfigError("instance", "unknown instance '" + instance + "'");
  }
  if (instance == "custom" && instance_path.empty()) {
    throw ConfigError("instance_path", "required for custom instance");
  }
  if (trials < 1) throw ConfigError("trials", "must be >= 1");
  if (jobs < 0) throw ConfigError("jobs", "must be >= 0");
  if (!one_of(format, {"csv", "json"})) throw ConfigError("format", "must be csv or json");
  if (budget < 0) throw ConfigError("budget", "must be >= 0");
  if (checkpoints < 1) throw ConfigError("checkpoints", "must be >= 1");
  if (!(lspi_sigma_eta >= 0.0)) throw ConfigError("lspi_sigma_eta", "must be >= 0");
  if (lspi_v1_N < 0) throw ConfigError("lspi_v1_N", "must be >= 0");
  if (lspi_v2_N < 1) throw ConfigError("lspi_v2_N", "must be >= 1");
  if (lspi_v2_T < 0) throw ConfigError("lspi_v2_T", "must be >= 0");
  if (!(mu >= 0.0)) throw ConfigError("mu", "must be >= 0");
  if (!(pg_sigma_eta > 0.0)) throw ConfigError("pg_sigma_eta", "must be > 0");
  if (!(pg_step > 0.0)) throw ConfigError("pg_step", "must be > 0");
  if (!(dfo_sigma_eta > 0.0)) throw ConfigError("dfo_sigma_eta", "must be > 0");
  if (!(dfo_step > 0.0)) throw ConfigError("dfo_step", "must be > 0");
  if (rollout_horizon < 1) throw ConfigError("rollout_horizon", "must be >= 1");
  if (!(projection_radius_factor > 0.0)) throw ConfigError("projection_radius_factor", "must be > 0");
  if (!(sigma_u > 0.0)) throw ConfigError("sigma_u", "must be > 0");
  if (nominal_rollout_len < 1) throw ConfigError("nominal_rollout_len", "must be >= 1");
  if (horizon < -1) throw ConfigError("horizon", "must be >= 0, or -1 for no cap");
  if (warm_start_steps < 0) throw ConfigError("warm_start_steps", "must be >= 0");
  if (!(warm_start_sigma >= 0.0)) throw ConfigError("warm_start_sigma", "must be >= 0");
  if (!one_of(schedule, {"doubling", "linear"})) throw ConfigError("schedule", "must be doubling or linear");
  if (t_mult < 1) throw ConfigError("t_mult", "must be >= 1");
  if (linear_base < 1) throw ConfigError("linear_base", "must be >= 1");
  if (epochs < 0) throw ConfigError("epochs", "must be >= 0");
  if (epochs == 0 && horizon < 0) {
    throw ConfigError("epochs", "epochs and horizon cannot both be unbounded");
  }
  if (schedule == "doubling" && epochs > 40) throw ConfigError("epochs", "too many doubling epochs");
  if (!(sigma0_sq >= 0.0)) throw ConfigError("sigma0_sq", "must be >= 0");
  if (!std::isfinite(exploration_exponent)) throw ConfigError("exploration_exponent", "must be finite");
  if (!one_of(inner_solver, {"lspi_v1", "lspi_v2"})) throw ConfigError("inner_solver", "must be lspi_v1 or lspi_v2");
  if (!one_of(data_window, {"epoch", "all"})) throw ConfigError("data_window", "must be epoch or all");
  if (!one_of(inner_iters_rule, {"thresholds", "linear"})) {
    throw ConfigError("inner_iters_rule", "must be thresholds or linear");
  }
  if (inner_iters_base < 1) throw ConfigError("inner_iters_base", "must be >= 1");
  if (inner_iters_slope < 0) throw ConfigError("inner_iters_slope", "must be >= 0");
  if (record_every < 1) throw ConfigError("record_every", "must be >= 1");
  if (!one_of(k0, {"auto", "zero", "perturbed-dare"})) {
    throw ConfigError("k0", "must be auto, zero or perturbed-dare");
  }
  if (!(k0_perturbation >= 0.0)) throw ConfigError("k0_perturbation", "must be >= 0");
  if (!(divergence_threshold > 0.0)) throw ConfigError("divergence_threshold", "must be > 0");
  if (pi_iterations < 0) throw ConfigError("pi_iterations", "must be >= 0");
  for (Index T : sweep_T) {
    if (T < 1) throw ConfigError("sweep_T", "entries must be >= 1");
  }
}

Matrix initial_gain(const ExperimentConfig& cfg, const InstanceSpec& inst, int trial) {
  const Index n = inst.sys.n();
  const Index d = inst.sys.d();
  const bool open_loop_stable = is_stable(inst.sys.A);
  if (cfg.k0 == "zero" || (cfg.k0 == "auto" && open_loop_stable)) return Matrix::Zero(d, n);

  const GroundTruth truth(inst.sys, inst.cost);
  const StreamFactory streams(cfg.seed, static_cast<std::uint64_t>(trial));
  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    RngStream rng = streams.make(static_cast<std::uint64_t>(attempt), StreamPurpose::kInitialGain);
    Matrix G(n, n);
    for (Index c = 0; c < n; ++c) {
      for (Index r = 0; r < n; ++r) G(r, c) = rng.normal();
    }
    try {
      const DareSolution sol =
          dare(inst.sys.A + cfg.k0_perturbation * G, inst.sys.B, inst.cost.S, inst.cost.R);
      if (truth.stabilizes(sol.K_star)) return sol.K_star;
    } catch (const Error&) {
    }
  }
  throw NonStabilizableError("initial_gain: no perturbed model produced a stabilizing gain");
}

std::vector<MetricRecord> run_trials(int trials, int jobs,
                                     const std::function<std::vector<MetricRecord>(int)>& fn) {
  if (trials <= 0) return {};
  unsigned workers = jobs > 0 ? static_cast<unsigned>(jobs) : std::thread::hardware_concurrency();
  workers = std::max(1u, std::min(workers, static_cast<unsigned>(trials)));

  std::vector<std::vector<MetricRecord>> per_trial(static_cast<std::size_t>(trials));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(trials));
  std::atomic<int> next{0};
  auto work = [&] {
    for (int t = next++; t < trials; t = next++) {
      try {
        per_trial[static_cast<std::size_t>(t)] = fn(t);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<MetricRecord> out;
  for (auto& v : per_trial) out.insert(out.end(), v.begin(), v.end());
  return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<Index> checkpoint_steps(Index budget, int count) {
  std::vector<Index> steps{0};
  if (budget == 0) return steps;
  for (int k = 1; k <= count; ++k) {
    const Index s = static_cast<Index>((static_cast<long double>(budget) * k) / count);
    if (s > steps.back()) steps.push_back(s);
  }
  return steps;
}

const Matrix& gain_at(const std::vector<GainSnapshot>& snaps, Index step) {
  const GainSnapshot* best = &snaps.front();
  for (const auto& s : snaps) {
    if (s.step <= step) best = &s;
  }
  return best->K;
}

struct OfflineResult {
  std::vector<Matrix> gains;  // one per checkpoint
  std::optional<Index> failure_step;
};

void emit_offline(const std::string& algorithm, int trial, const std::vector<Index>& steps,
                  const OfflineResult& res, const GroundTruth& truth,
                  std::vector<MetricRecord>& out) {
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const bool failed = res.failure_step && steps[i] >= *res.failure_step;
    const double err = failed ? kInf : truth.rel_cost_err(res.gains[i]);
    out.push_back({algorithm, trial, steps[i], "rel_cost_err", err});
  }
  if (res.failure_step) {
    out.push_back({algorithm, trial, *res.failure_step, "failure", 1.0});
  }
}

OfflineResult from_snapshots(const SgdTrace& trace, const std::vector<Index>& steps) {
  OfflineResult res;
  for (Index s : steps) res.gains.push_back(gain_at(trace.snapshots, s));
  if (trace.failure) res.failure_step = trace.failure->step;
  return res;
}

OfflineResult offline_nominal(const ExperimentConfig& cfg, const Plant& plant, const CostModel& cost,
                              const Matrix& K0, const std::vector<Index>& steps,
                              const StreamFactory& streams) {
  OfflineResult res;
  NominalStatistics stats(plant.n(), plant.d());
  Matrix K = K0;
  Index used = 0;
  std::uint64_t rollout_index = 0;
  for (Index c : steps) {
    bool added = false;
    while (used + cfg.nominal_rollout_len <= c) {
      RngStream rng = streams.make(rollout_index++, StreamPurpose::kExcitation);
      try {
        stats.add(plant.rollout(K0, cfg.sigma_u, cfg.nominal_rollout_len, Fresh{}, rng));
      } catch (const DivergenceError& e) {
        res.failure_step = used + e.step();
        used = std::numeric_limits<Index>::max() / 2;
        break;
      }
      used += cfg.nominal_rollout_len;
      added = true;
    }
    if (added) {
      try {
        K = nominal_controller(stats.fit(), cost.S, cost.R);
      } catch (const IdentifiabilityError&) {
      } catch (const NonStabilizableError&) {
      }
    }
    res.gains.push_back(K);
  }
  return res;
}

OfflineResult offline_lspi_v1(const ExperimentConfig& cfg, const Plant& plant, const Matrix& K0,
                              double mu, const std::vector<Index>& steps,
                              const StreamFactory& streams) {
  OfflineResult res;
  LstdqStatistics stats(plant.n(), plant.d());
  InitialState start = Fresh{};
  Index used = 0;
  std::uint64_t segment = 0;
  for (Index c : steps) {
    if (!res.failure_step && c > used) {
      RngStream rng = streams.make(segment++, StreamPurpose::kRollout);
      try {
        const Trajectory traj = plant.rollout(K0, cfg.lspi_sigma_eta, c - used, start, rng);
        stats.add(traj);
        start = Continue{traj.final_state()};
        used = c;
      } catch (const DivergenceError& e) {
        res.failure_step = used + e.step();
      }
    }
    Matrix K = K0;
    if (used > 0) {
      try {
        for (int t = 0; t < cfg.lspi_v1_N; ++t) {
          K = lspi_improve(stats.estimate(K, plant.sigma_w()), plant.n(), mu);
        }
      } catch (const ConditioningError&) {
        K = Matrix::Constant(K0.rows(), K0.cols(), std::numeric_limits<double>::quiet_NaN());
      }
    }
    res.gains.push_back(K);
  }
  return res;
}

OfflineResult offline_lspi_v2(const ExperimentConfig& cfg, const Plant& plant, const Matrix& K0,
                              double mu, const std::vector<Index>& steps,
                              const StreamFactory& streams, const GroundTruth& truth) {
  OfflineResult res;
  const Index T = cfg.lspi_v2_T > 0 ? cfg.lspi_v2_T : cfg.budget / cfg.lspi_v2_N;
  if (T < 1) {
    res.gains.assign(steps.size(), K0);
    return res;
  }
  LspiConfig lc;
  lc.N = static_cast<int>(std::min<Index>(cfg.lspi_v2_N, cfg.budget / T));
  lc.T = T;
  lc.sigma_eta = cfg.lspi_sigma_eta;
  lc.mu = mu;
  PiTrace trace;
  try {
    trace = lspi_v2(plant, K0, lc, streams, &truth);
  } catch (const ConditioningError&) {
    res.failure_step = 0;
    res.gains.assign(steps.size(), K0);
    return res;
  }
  if (trace.failure) res.failure_step = static_cast<Index>(trace.failure->iteration) * T;
  for (Index c : steps) {
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(c / T), trace.gains.size() - 1);
    res.gains.push_back(trace.gains[i]);
  }
  return res;
}

}  // namespace

std::vector<MetricRecord> run_offline_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (std::find(kOfflineAlgorithms.begin(), kOfflineAlgorithms.end(), cfg.algorithm) ==
      kOfflineAlgorithms.end()) {
    throw ConfigError("algorithm", "unknown offline algorithm '" + cfg.algorithm + "'");
  }
  const InstanceSpec inst = resolve_instance(cfg);
  const GroundTruth truth(inst.sys, inst.cost);
  const Plant plant(inst.sys, inst.cost, cfg.divergence_threshold);
  const double mu = cfg.mu > 0.0 ? cfg.mu : default_mu(inst.cost);
  const std::vector<Index> steps = checkpoint_steps(cfg.budget, cfg.checkpoints);
  const double radius = cfg.projection_radius_factor * truth.optimal().K_star.norm();

  return run_trials(cfg.trials, cfg.jobs, [&](int trial) {
    const StreamFactory streams(cfg.seed, static_cast<std::uint64_t>(trial));
    const Matrix K0 = initial_gain(cfg, inst, trial);
    OfflineResult res;
    const std::string& alg = cfg.algorithm;
    if (alg == "optimal") {
      res.gains.assign(steps.size(), truth.optimal().K_star);
    } else if (alg == "nominal") {
      res = offline_nominal(cfg, plant, inst.cost, K0, steps, streams);
    } else if (alg == "pg_simple" || alg == "pg_vf" || alg == "dfo") {
      SgdConfig sc;
      sc.horizon = cfg.rollout_horizon;
      sc.radius = radius;
      sc.budget = cfg.budget;
      SgdTrace trace;
      if (alg == "dfo") {
        sc.sigma_eta = cfg.dfo_sigma_eta;
        sc.step = cfg.dfo_step;
        DfoOptions opts;
        opts.shared_noise = cfg.dfo_shared_noise;
        trace = dfo_sgd(plant, K0, sc, streams, opts);
      } else {
        sc.sigma_eta = cfg.pg_sigma_eta;
        sc.step = cfg.pg_step;
        if (alg == "pg_vf") {
          trace = pg_sgd(plant, K0, sc, PgBaselineKind::kValueFunction, streams,
                         [&](const Matrix& K) { return truth.value(K).V; });
        } else {
          trace = pg_sgd(plant, K0, sc, PgBaselineKind::kSimple, streams);
        }
      }
      res = from_snapshots(trace, steps);
    } else if (alg == "lspi_v1") {
      res = offline_lspi_v1(cfg, plant, K0, mu, steps, streams);
    } else {
      res = offline_lspi_v2(cfg, plant, K0, mu, steps, streams, truth);
    }
    std::vector<MetricRecord> out;
    emit_offline(alg, trial, steps, res, truth, out);
    std::stable_sort(out.begin(), out.end(),
                     [](const MetricRecord& a, const MetricRecord& b) { return a.step < b.step; });
    return out;
  });
}

namespace {

AdaptiveConfig adaptive_config(const ExperimentConfig& cfg) {
  AdaptiveConfig ac;
  if (cfg.schedule == "doubling") {
    ac.schedule.kind = DoublingEpochs{cfg.t_mult};
  } else {
    ac.schedule.kind = LinearEpochs{cfg.linear_base};
  }
  ac.schedule.exploration = PowerDecay{cfg.sigma0_sq, cfg.exploration_exponent};
  if (cfg.inner_iters_rule == "linear") {
    ac.schedule.inner_iters = LinearEpochIters{cfg.inner_iters_base, cfg.inner_iters_slope};
  } else {
    ac.schedule.inner_iters = StepThresholdIters{cfg.inner_iters_base, cfg.inner_iters_thresholds};
  }
  if (cfg.epochs > 0) {
    ac.epochs = cfg.epochs;
  } else {
    // Enough epochs to cover the horizon; the step cap ends the run.
    ac.epochs = static_cast<int>(std::min<Index>(cfg.horizon + 1, 1 << 20));
  }
  ac.warm_start.enabled = cfg.warm_start;
  ac.warm_start.steps = cfg.warm_start_steps;
  ac.warm_start.sigma_eta = cfg.warm_start_sigma;
  ac.warm_start.count_toward_regret = cfg.count_warm_start;
  if (cfg.horizon >= 0) ac.max_steps = cfg.horizon;
  return ac;
}

}  // namespace

std::vector<MetricRecord> run_online_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (std::find(kOnlineAlgorithms.begin(), kOnlineAlgorithms.end(), cfg.algorithm) ==
      kOnlineAlgorithms.end()) {
    throw ConfigError("algorithm", "unknown online algorithm '" + cfg.algorithm + "'");
  }
  const InstanceSpec inst = resolve_instance(cfg);
  const GroundTruth truth(inst.sys, inst.cost);
  const Plant plant(inst.sys, inst.cost, cfg.divergence_threshold);
  const double mu = cfg.mu > 0.0 ? cfg.mu : default_mu(inst.cost);
  const AdaptiveConfig base = adaptive_config(cfg);

  return run_trials(cfg.trials, cfg.jobs, [&](int trial) {
    const StreamFactory streams(cfg.seed, static_cast<std::uint64_t>(trial));
    AdaptiveConfig ac = base;
    Matrix K0;
    std::unique_ptr<GainEstimator> est;
    const DataWindow window = cfg.data_window == "all" ? DataWindow::kCumulative : DataWindow::kEpoch;
    if (cfg.algorithm == "optimal") {
      K0 = truth.optimal().K_star;
      ac.warm_start.enabled = false;
      ac.schedule.exploration = ExplicitVariances{{0.0}};
      est = std::make_unique<FixedGainEstimator>(K0);
    } else {
      K0 = initial_gain(cfg, inst, trial);
      if (cfg.algorithm == "lspi_adaptive") {
        est = std::make_unique<LspiEstimator>(
            plant.n(), plant.d(), plant.sigma_w(), mu,
            cfg.inner_solver == "lspi_v1" ? InnerSolver::kLspiV1 : InnerSolver::kLspiV2, window);
      } else {
        est = std::make_unique<NominalEstimator>(plant.n(), plant.d(), inst.cost, window);
      }
    }
    const RegretTrace trace = run_adaptive(plant, K0, ac, *est, truth.J_star(), streams, &truth);

    std::vector<MetricRecord> out;
    const Index total = trace.steps();
    std::size_t g = 0;
    auto record = [&](Index s) {
      while (g + 1 < trace.gain_steps.size() && trace.gain_steps[g + 1] <= s - 1) ++g;
      out.push_back({cfg.algorithm, trial, s, "cum_regret",
                     trace.cum_regret[static_cast<std::size_t>(s - 1)]});
      out.push_back({cfg.algorithm, trial, s, "rel_cost_err", trace.gain_rel_cost_err[g]});
    };
    for (Index s = cfg.record_every; s <= total; s += cfg.record_every) record(s);
    if (total > 0 && total % cfg.record_every != 0) record(total);
    if (trace.failure) out.push_back({cfg.algorithm, trial, trace.failure->step, "failure", 1.0});
    std::stable_sort(out.begin(), out.end(),
                     [](const MetricRecord& a, const MetricRecord& b) { return a.step < b.step; });
    return out;
  });
}

std::vector<MetricRecord> run_lstdq_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const InstanceSpec inst = resolve_instance(cfg);
  const GroundTruth truth(inst.sys, inst.cost);
  const Plant plant(inst.sys, inst.cost, cfg.divergence_threshold);
  return run_trials(cfg.trials, cfg.jobs, [&](int trial) {
    const StreamFactory streams(cfg.seed, static_cast<std::uint64_t>(trial));
    const Matrix K0 = initial_gain(cfg, inst, trial);
    const Vector q = truth.qfun(K0).q.coords;
    std::vector<MetricRecord> out;
    for (std::size_t i = 0; i < cfg.sweep_T.size(); ++i) {
      const Index T = cfg.sweep_T[i];
      RngStream rng = streams.make(i, StreamPurpose::kRollout);
      try {
        const Trajectory traj = plant.rollout(K0, cfg.lspi_sigma_eta, T, Fresh{}, rng);
        LstdqStatistics stats(plant.n(), plant.d());
        stats.add(traj);
        const LstdqEstimate est = stats.estimate(K0, plant.sigma_w());
        out.push_back({"lstdq", trial, T, "q_err", (est.q.coords - q).norm()});
      } catch (const DivergenceError& e) {
        out.push_back({"lstdq", trial, T, "failure", 1.0});
      }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const MetricRecord& a, const MetricRecord& b) { return a.step < b.step; });
    return out;
  });
}

void canonicalize(std::vector<MetricRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const MetricRecord& a, const MetricRecord& b) {
    return std::tie(a.algorithm, a.trial, a.step) < std::tie(b.algorithm, b.trial, b.step);
  });
}

double nearest_rank(std::vector<double> values, double q) {
  if (values.empty()) throw ParameterError("nearest_rank: empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ParameterError("nearest_rank: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const auto N = static_cast<double>(values.size());
  // Guard against q*N landing a hair above an integer.
  auto rank = static_cast<std::size_t>(std::ceil(q * N - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

std::vector<SummaryRow> aggregate_percentiles(const std::vector<MetricRecord>& records,
                                              const std::vector<double>& quantiles,
                                              std::vector<std::string>* warnings) {
  std::map<std::tuple<std::string, std::string, Index>, std::vector<double>> groups;
  for (const auto& r : records) {
    auto& g = groups[{r.algorithm, r.metric, r.step}];
    if (!std::isnan(r.value)) g.push_back(r.value);
  }
  std::vector<SummaryRow> rows;
  for (auto& [key, values] : groups) {
    const auto& [alg, metric, step] = key;
    if (values.empty()) {
      if (warnings != nullptr) {
        warnings->push_back("empty group " + alg + "/" + metric + "/" + std::to_string(step) +
                            " omitted");
      }
      continue;
    }
    SummaryRow row{alg, metric, step, values.size(), {}};
    for (double q : quantiles) row.quantiles.push_back(nearest_rank(values, q));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_records_csv(std::ostream& os, const std::vector<MetricRecord>& records) {
  os << "algorithm,trial,step,metric,value\n";
  for (const auto& r : records) {
    os << r.algorithm << ',' << r.trial << ',' << r.step << ',' << r.metric << ','
       << format_value(r.value) << '\n';
  }
}

void write_records_json(std::ostream& os, const std::vector<MetricRecord>& records) {
  json arr = json::array();
  for (const auto& r : records) {
    json v = std::isfinite(r.value) ? json(r.value) : json(format_value(r.value));
    arr.push_back({{"algorithm", r.algorithm},
                   {"trial", r.trial},
                   {"step", r.step},
                   {"metric", r.metric},
                   {"value", v}});
  }
  os << arr.dump(1) << '\n';
}

std::vector<MetricRecord> read_records_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "algorithm,trial,step,metric,value") {
    throw ConfigError("in", "missing or unexpected CSV header");
  }
  std::vector<MetricRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 5) {
      throw ConfigError("in", "line " + std::to_string(lineno) + ": expected 5 fields");
    }
    try {
      MetricRecord r;
      r.algorithm = fields[0];
      r.trial = std::stoi(fields[1]);
      r.step = std::stoll(fields[2]);
      r.metric = fields[3];
      r.value = std::strtod(fields[4].c_str(), nullptr);
      out.push_back(std::move(r));
    } catch (const std::exception&) {
      throw ConfigError("in", "line " + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows,
                       const std::vector<double>& quantiles) {
  os << "algorithm,metric,step,count";
  for (double q : quantiles) os << ",p" << format_value(100.0 * q);
  os << '\n';
  for (const auto& r : rows) {
    os << r.algorithm << ',' << r.metric << ',' << r.step << ',' << r.count;
    for (double v : r.quantiles) os << ',' << format_value(v);
    os << '\n';
  }
}

}  // namespace lspi
