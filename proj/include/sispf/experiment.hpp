#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sispf/models.hpp"
#include "sispf/serialize.hpp"
#include "sispf/training.hpp"

namespace sispf {

// Evaluation methods. Enum values key the per-method random substreams, so a
// method's results do not depend on which other methods run alongside it.
enum class Method { kLln = 0, kMinDeg = 1, kMinDegResample = 2, kLearned = 3, kLearnedResample = 4 };

std::string method_name(Method method);
Method method_from_name(const std::string& name);

// How the per-step error ratios ||est_t - target_t|| / ||target_t|| collapse
// to one score per run: averaged over steps, last step only, or one ratio of
// stacked-trajectory norms.
enum class RrmseMode { kPerStepMean, kFinalStep, kStacked };

double relative_rmse(const std::vector<Vector>& estimates, const std::vector<Vector>& targets,
                     RrmseMode mode);

struct ExperimentConfig {
  ScenarioKind scenario = ScenarioKind::kLinear;
  std::vector<double> snr_grid_db = {0.0, 2.0, 4.0, 6.0, 8.0, 10.0};
  std::size_t num_trials = 10;
  std::size_t train_runs = 200;
  std::size_t test_runs = 100;
  std::size_t particle_count = 25;   // K
  std::size_t horizon = 12;          // T
  std::size_t state_dim = 10;        // N
  std::size_t meas_dim = 8;          // M
  std::vector<std::size_t> mean_hidden = {256, 512};
  std::vector<std::size_t> cov_hidden = {256, 512};
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 1;
  std::vector<Method> methods;  // empty -> every method valid for the scenario
  RrmseMode rrmse_mode = RrmseMode::kPerStepMean;
  bool per_trial = false;   // aggregate per-trial medians instead of pooling
  std::size_t threads = 1;  // worker threads over (snr, trial) cells
  // Runs for the before/after-training degeneracy evaluation (0 disables it).
  std::size_t degeneracy_runs = 50;
};

// One aggregated output row.
struct MetricsRecord {
  std::string scenario;
  double snr_db = 0.0;
  std::string method;
  double median_rrmse = 0.0;
  double std_rrmse = 0.0;
  double mean_final_ess = 0.0;
  std::size_t trials_completed = 0;
};

// Raw per-(snr, trial) results, exposed so tests can pair methods trial by
// trial. Score vectors are indexed [method position in cfg.methods][test run]
// and hold NaN for runs where that method's filter degenerated.
struct CellResult {
  double snr_db = 0.0;
  std::size_t trial = 0;
  bool completed = false;  // false when training diverged; scores then empty
  std::vector<std::vector<double>> rrmse;
  std::vector<std::vector<double>> final_ess;
  std::vector<double> train_losses;           // per completed training run
  double untrained_final_ess = 0.0;           // mean final-step ESS before ...
  double trained_final_ess = 0.0;             // ... and after training
};

struct ExperimentResult {
  std::vector<MetricsRecord> metrics;  // grid order: snr outer, method inner
  std::vector<CellResult> cells;       // [snr_index * num_trials + trial]
  std::vector<Method> methods;         // the resolved method list
};

// The full protocol: per (snr, trial) generate a scenario from the trial
// seed, train the learned proposal when one is requested, then run every
// method on the same per-run measurement sequences and aggregate.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Single-proposal pipeline behind the train/test subcommands. train_cell
// trains one proposal with the same keying as one run_experiment cell and
// returns everything `test` later needs; evaluate_proposal rebuilds the
// scenario from that metadata and scores the given methods over fresh test
// runs, so a save/load round trip reproduces the in-process numbers exactly.
struct TrainedCell {
  LearnedProposal proposal;
  ProposalMetadata metadata;
  TrainingReport report;
};

TrainedCell train_cell(const ExperimentConfig& cfg, double snr_db, std::size_t trial);

std::vector<MetricsRecord> evaluate_proposal(const LearnedProposal& proposal,
                                             const ProposalMetadata& metadata,
                                             const std::vector<Method>& methods,
                                             std::size_t test_runs, RrmseMode mode);

// CSV with header scenario,snr_db,method,median_rrmse,std_rrmse,
// mean_final_ess,trials_completed; 12 significant digits, \n line endings.
std::string metrics_to_csv(const std::vector<MetricsRecord>& metrics);
void write_csv(const std::string& path, const std::vector<MetricsRecord>& metrics);

}  // namespace sispf
