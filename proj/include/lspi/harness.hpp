#pragma once

// Experiment orchestration: benchmark instances, typed configuration, trial
// fan-out, metric records and percentile summaries.

#include "lspi/adaptive.hpp"
#include "lspi/ground_truth.hpp"
#include "lspi/sim.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace lspi {

struct InstanceSpec {
  std::string name;
  LinearSystem sys;
  CostModel cost;
};

/// Stable 3-state, 2-input instance used for the offline comparison.
InstanceSpec offline_paper_instance();
/// Marginally unstable 3-state, 3-input instance used for adaptive control.
InstanceSpec adaptive_dean_instance();
/// JSON object with A, B, S, R (arrays of rows), sigma_w and optional Sigma0.
InstanceSpec load_custom_instance(const std::string& path);

struct ExperimentConfig {
  std::string instance = "offline-paper";
  std::string instance_path;
  std::string algorithm = "lspi_v2";
  int trials = 100;
  std::uint64_t seed = 0;
  int jobs = 0;
  std::string format = "csv";
  std::string out;

  // Offline.
  Index budget = 1000000;
  int checkpoints = 20;
  double lspi_sigma_eta = 1.0;
  int lspi_v1_N = 15;
  int lspi_v2_N = 3;
  /// 0 means floor(budget / lspi_v2_N).
  Index lspi_v2_T = 0;
  /// 0 means min(lambda_min(S), lambda_min(R)).
  double mu = 0.0;
  double pg_sigma_eta = 1.0;
  double pg_step = 1e-5;
  double dfo_sigma_eta = 1e-3;
  double dfo_step = 1e-4;
  bool dfo_shared_noise = true;
  Index rollout_horizon = 100;
  double projection_radius_factor = 5.0;
  double sigma_u = 1.0;
  Index nominal_rollout_len = 100;

  // Online.
  /// Post-warm-start steps; -1 means no cap (run all epochs).
  Index horizon = 10000;
  bool warm_start = true;
  Index warm_start_steps = 2000;
  double warm_start_sigma = 1.0;
  bool count_warm_start = true;
  std::string schedule = "linear";
  Index t_mult = 500;
  Index linear_base = 10;
  /// 0 means as many epochs as the horizon allows.
  int epochs = 0;
  double sigma0_sq = 0.01;
  double exploration_exponent = 2.0 / 3.0;
  std::string inner_solver = "lspi_v1";
  std::string data_window = "all";
  std::string inner_iters_rule = "thresholds";
  int inner_iters_base = 3;
  int inner_iters_slope = 1;
  std::vector<Index> inner_iters_thresholds{2000, 4000, 6000};
  Index record_every = 100;

  // Shared.
  std::string k0 = "auto";
  double k0_perturbation = 0.1;
  double divergence_threshold = kDefaultDivergenceThreshold;
  int pi_iterations = 50;
  std::vector<Index> sweep_T{1000, 10000, 100000};

  void validate() const;
};

/// Applies a named preset: offline-paper, online-paper or theory-online.
void apply_preset(ExperimentConfig& cfg, const std::string& preset);

/// Overlays keys of a flat JSON object. Unknown keys and type mismatches
/// raise ConfigError naming the key. A "preset" key is applied first.
void apply_config_json(ExperimentConfig& cfg, const std::string& json_text);
void apply_config_file(ExperimentConfig& cfg, const std::string& path);

InstanceSpec resolve_instance(const ExperimentConfig& cfg);

struct MetricRecord {
  std::string algorithm;
  int trial = 0;
  Index step = 0;
  std::string metric;
  double value = 0.0;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

inline const std::vector<std::string> kOfflineAlgorithms{"nominal", "pg_simple", "pg_vf", "dfo",
                                                          "lspi_v1", "lspi_v2", "optimal"};
inline const std::vector<std::string> kOnlineAlgorithms{"lspi_adaptive", "nominal_adaptive",
                                                         "optimal"};

/// Initial gain for a trial: zero when the open loop is stable (or k0 =
/// "zero"), otherwise the Riccati gain of a randomly perturbed model that
/// stabilizes the true system.
Matrix initial_gain(const ExperimentConfig& cfg, const InstanceSpec& inst, int trial);

std::vector<MetricRecord> run_offline_experiment(const ExperimentConfig& cfg);
std::vector<MetricRecord> run_online_experiment(const ExperimentConfig& cfg);
/// q_err of LSTD-Q at each T in cfg.sweep_T with K_play = K_eval = K0.
std::vector<MetricRecord> run_lstdq_sweep(const ExperimentConfig& cfg);

/// Orders by (algorithm, trial, step), keeping emission order within ties.
void canonicalize(std::vector<MetricRecord>& records);

struct SummaryRow {
  std::string algorithm;
  std::string metric;
  Index step = 0;
  std::size_t count = 0;
  std::vector<double> quantiles;
};

/// Nearest-rank quantiles per (algorithm, metric, step): the value at rank
/// ceil(q * count) of the sorted group (rank >= 1). NaNs are dropped; groups
/// left empty are omitted and reported through `warnings`.
std::vector<SummaryRow> aggregate_percentiles(const std::vector<MetricRecord>& records,
                                              const std::vector<double>& quantiles,
                                              std::vector<std::string>* warnings = nullptr);

/// Nearest-rank quantile of an unsorted sample.
double nearest_rank(std::vector<double> values, double q);

std::string format_value(double v);

void write_records_csv(std::ostream& os, const std::vector<MetricRecord>& records);
void write_records_json(std::ostream& os, const std::vector<MetricRecord>& records);
std::vector<MetricRecord> read_records_csv(std::istream& is);
void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows,
                       const std::vector<double>& quantiles);

/// Runs fn(trial) for trial = 0..trials-1 on `jobs` threads (0 = hardware
/// concurrency) and concatenates the results in trial order.
std::vector<MetricRecord> run_trials(int trials, int jobs,
                                     const std::function<std::vector<MetricRecord>(int)>& fn);

}  // namespace lspi
