// Command-line front end for the experiment harness.

#include "lspi/errors.hpp"
#include "lspi/harness.hpp"
#include "lspi/policy_iter.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

using namespace lspi;

struct Common {
  std::string preset;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<int> jobs;
  std::string out;
  std::string format;
  std::string algorithm;
  std::string instance;
  std::optional<Index> budget;
  std::optional<Index> horizon;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--preset", c.preset, "offline-paper | online-paper | theory-online");
  sub->add_option("--config", c.config, "flat JSON config file");
  sub->add_option("--seed", c.seed, "master seed");
  sub->add_option("--trials", c.trials, "number of trials");
  sub->add_option("--jobs", c.jobs, "worker threads (0 = all cores)");
  sub->add_option("--out", c.out, "output path (stdout when omitted)");
  sub->add_option("--format", c.format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
  sub->add_option("--algorithm", c.algorithm, "algorithm tag, or 'all'");
  sub->add_option("--instance", c.instance, "offline-paper | adaptive-dean | custom");
}

ExperimentConfig build_config(const Common& c, const std::string& default_preset) {
  ExperimentConfig cfg;
  if (!default_preset.empty()) apply_preset(cfg, default_preset);
  if (!c.preset.empty()) apply_preset(cfg, c.preset);
  if (!c.config.empty()) apply_config_file(cfg, c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.trials) cfg.trials = *c.trials;
  if (c.jobs) cfg.jobs = *c.jobs;
  if (!c.out.empty()) cfg.out = c.out;
  if (!c.format.empty()) cfg.format = c.format;
  if (!c.algorithm.empty()) cfg.algorithm = c.algorithm;
  if (!c.instance.empty()) cfg.instance = c.instance;
  if (c.budget) cfg.budget = *c.budget;
  if (c.horizon) cfg.horizon = *c.horizon;
  return cfg;
}

const std::vector<double> kQuantiles{0.1, 0.5, 0.9};

template <class F>
void with_output(const std::string& path, F&& write) {
  if (path.empty()) {
    write(std::cout);
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("out", "cannot open '" + path + "' for writing");
  write(os);
}

void write_records(const ExperimentConfig& cfg, std::vector<MetricRecord> records,
                   const std::vector<std::string>& algorithms) {
  canonicalize(records);
  with_output(cfg.out, [&](std::ostream& os) {
    if (cfg.format == "json") {
      write_records_json(os, records);
    } else {
      write_records_csv(os, records);
    }
  });
  if (cfg.out.empty()) return;

  std::vector<std::string> warnings;
  const auto rows = aggregate_percentiles(records, kQuantiles, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  with_output(cfg.out + ".summary.csv",
              [&](std::ostream& os) { write_summary_csv(os, rows, kQuantiles); });

  const bool vf = std::find(algorithms.begin(), algorithms.end(), "pg_vf") != algorithms.end();
  nlohmann::json meta{{"generator", kGeneratorFamily},
                      {"seed", cfg.seed},
                      {"trials", cfg.trials},
                      {"instance", cfg.instance},
                      {"algorithms", algorithms},
                      {"oracle_assisted", vf},
                      {"k0", cfg.k0},
                      {"k0_perturbation", cfg.k0_perturbation},
                      {"dfo_shared_noise", cfg.dfo_shared_noise}};
  with_output(cfg.out + ".meta.json", [&](std::ostream& os) { os << meta.dump(2) << '\n'; });
}

using Runner = std::vector<MetricRecord> (*)(const ExperimentConfig&);

void run_experiment(ExperimentConfig cfg, Runner runner, const std::vector<std::string>& all) {
  std::vector<std::string> algorithms =
      cfg.algorithm == "all" ? all : std::vector<std::string>{cfg.algorithm};
  std::vector<MetricRecord> records;
  for (const auto& alg : algorithms) {
    cfg.algorithm = alg;
    auto part = runner(cfg);
    records.insert(records.end(), part.begin(), part.end());
  }
  write_records(cfg, std::move(records), algorithms);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Least-squares policy iteration for LQR: experiment runner"};
  app.require_subcommand(1);

  Common off, on, pi, sweep;
  auto* offline = app.add_subcommand("offline", "offline sample-efficiency comparison");
  add_common(offline, off);
  offline->add_option("--budget", off.budget, "total simulated steps per trial");

  auto* online = app.add_subcommand("online", "adaptive control regret experiment");
  add_common(online, on);
  online->add_option("--horizon", on.horizon, "adaptive steps after the warm start (-1 = no cap)");

  auto* pi_exact = app.add_subcommand("pi-exact", "model-based policy iteration trace");
  add_common(pi_exact, pi);
  int pi_iterations = 50;
  pi_exact->add_option("--iterations", pi_iterations, "number of improvement steps");

  auto* lstdq_sweep = app.add_subcommand("lstdq-sweep", "LSTD-Q error versus trajectory length");
  add_common(lstdq_sweep, sweep);
  std::vector<Index> sweep_T;
  lstdq_sweep->add_option("--T", sweep_T, "trajectory lengths");

  auto* aggregate = app.add_subcommand("aggregate", "percentile summary of a records CSV");
  std::string agg_in, agg_out;
  std::vector<double> quantiles = kQuantiles;
  aggregate->add_option("--in", agg_in, "records CSV")->required();
  aggregate->add_option("--out", agg_out, "summary CSV (stdout when omitted)");
  aggregate->add_option("--quantiles", quantiles, "quantiles in [0, 1]");

  CLI11_PARSE(app, argc, argv);

  try {
    if (offline->parsed()) {
      ExperimentConfig cfg = build_config(off, "offline-paper");
      if (off.algorithm.empty() && off.config.empty()) cfg.algorithm = "all";
      run_experiment(cfg, run_offline_experiment, kOfflineAlgorithms);
    } else if (online->parsed()) {
      ExperimentConfig cfg = build_config(on, on.preset.empty() ? "online-paper" : "");
      if (on.algorithm.empty() && on.config.empty()) cfg.algorithm = "all";
      run_experiment(cfg, run_online_experiment, kOnlineAlgorithms);
    } else if (pi_exact->parsed()) {
      ExperimentConfig cfg = build_config(pi, "");
      cfg.pi_iterations = pi_iterations;
      cfg.validate();
      const InstanceSpec inst = resolve_instance(cfg);
      const Matrix K0 = initial_gain(cfg, inst, 0);
      const PiTrace trace = exact_pi(inst.sys.A, inst.sys.B, inst.cost.S, inst.cost.R, K0,
                                     cfg.pi_iterations, inst.sys.sigma_w);
      with_output(cfg.out, [&](std::ostream& os) { write_pi_trace_csv(os, trace); });
    } else if (lstdq_sweep->parsed()) {
      ExperimentConfig cfg = build_config(sweep, "");
      if (!sweep_T.empty()) cfg.sweep_T = sweep_T;
      cfg.algorithm = "lstdq";
      write_records(cfg, run_lstdq_sweep(cfg), {"lstdq"});
    } else if (aggregate->parsed()) {
      std::ifstream in(agg_in, std::ios::binary);
      if (!in) throw ConfigError("in", "cannot open '" + agg_in + "'");
      auto records = read_records_csv(in);
      canonicalize(records);
      std::vector<std::string> warnings;
      const auto rows = aggregate_percentiles(records, quantiles, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
      with_output(agg_out, [&](std::ostream& os) { write_summary_csv(os, rows, quantiles); });
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
