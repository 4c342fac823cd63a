#include "sispf/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <utility>

#include "sispf/baselines.hpp"
#include "sispf/errors.hpp"
#include "sispf/filter.hpp"
#include "sispf/nn.hpp"

namespace sispf {

std::string method_name(Method method) {
  switch (method) {
    case Method::kLln: return "lln";
    case Method::kMinDeg: return "mindeg";
    case Method::kMinDegResample: return "mindeg-resample";
    case Method::kLearned: return "learned";
    case Method::kLearnedResample: return "learned-resample";
  }
  throw std::invalid_argument("method_name: unknown method");
}

Method method_from_name(const std::string& name) {
  if (name == "lln") return Method::kLln;
  if (name == "mindeg") return Method::kMinDeg;
  if (name == "mindeg-resample") return Method::kMinDegResample;
  if (name == "learned") return Method::kLearned;
  if (name == "learned-resample") return Method::kLearnedResample;
  throw std::invalid_argument("unknown method: " + name);
}

double relative_rmse(const std::vector<Vector>& estimates, const std::vector<Vector>& targets,
                     RrmseMode mode) {
  if (estimates.size() != targets.size() || estimates.empty()) {
    throw DimensionMismatch("relative_rmse: estimate/target lengths differ or are empty");
  }
  const std::size_t steps = estimates.size();
  if (mode == RrmseMode::kStacked) {
    double err_sq = 0.0;
    double ref_sq = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      const double e = norm(subtract(estimates[t], targets[t]));
      const double r = norm(targets[t]);
      err_sq += e * e;
      ref_sq += r * r;
    }
    if (ref_sq == 0.0) throw ZeroTargetNorm("relative_rmse: all targets have zero norm", 0);
    return std::sqrt(err_sq / ref_sq);
  }
  const std::size_t first = (mode == RrmseMode::kFinalStep) ? steps - 1 : 0;
  double total = 0.0;
  for (std::size_t t = first; t < steps; ++t) {
    const double r = norm(targets[t]);
    if (r == 0.0) throw ZeroTargetNorm("relative_rmse: target has zero norm", t);
    total += norm(subtract(estimates[t], targets[t])) / r;
  }
  return total / static_cast<double>(steps - first);
}

namespace {

std::vector<Method> resolve_methods(const ExperimentConfig& cfg) {
  std::vector<Method> methods = cfg.methods;
  if (methods.empty()) {
    if (cfg.scenario == ScenarioKind::kLinear) methods.push_back(Method::kLln);
    methods.insert(methods.end(), {Method::kMinDeg, Method::kMinDegResample, Method::kLearned,
                                   Method::kLearnedResample});
  }
  for (const Method m : methods) {
    if (m == Method::kLln && cfg.scenario != ScenarioKind::kLinear) {
      throw std::invalid_argument("the lln method requires the linear scenario");
    }
  }
  return methods;
}

bool needs_training(const std::vector<Method>& methods) {
  return std::any_of(methods.begin(), methods.end(), [](Method m) {
    return m == Method::kLearned || m == Method::kLearnedResample;
  });
}

CellResult run_cell(const ExperimentConfig& cfg, const std::vector<Method>& methods,
                    double snr_db, std::size_t trial) {
  CellResult cell;
  cell.snr_db = snr_db;
  cell.trial = trial;

  const StreamKey trial_key = StreamKey(cfg.seed).child(stream_tag::kTrial).child(trial);
  // SNR enters below the trial level, so one trial shares its network
  // geometry across the whole sweep.
  const StreamKey cell_key = trial_key.child(std::bit_cast<std::uint64_t>(snr_db));

  ScenarioConfig scenario_cfg;
  scenario_cfg.state_dim = cfg.state_dim;
  scenario_cfg.meas_dim = cfg.meas_dim;
  scenario_cfg.horizon = cfg.horizon;
  scenario_cfg.snr_db = snr_db;
  scenario_cfg.seed = trial_key.value();
  scenario_cfg.scenario = cfg.scenario;
  const std::unique_ptr<GaussianStateSpace> model = generate_scenario(scenario_cfg);

  LearnedProposal proposal;
  if (needs_training(methods)) {
    proposal = make_learned_proposal(cfg.state_dim, cfg.meas_dim, cfg.horizon, cfg.mean_hidden,
                                     cfg.cov_hidden, cell_key.child(stream_tag::kProposalInit));
    const MeasurementSource source = [&](std::size_t run) {
      GaussianStream sim = cell_key.child(stream_tag::kRunSimulation).child(run).stream();
      return simulate(*model, cfg.horizon, sim).measurements;
    };
    TrainingConfig tcfg;
    tcfg.num_runs = cfg.train_runs;
    tcfg.particle_count = cfg.particle_count;
    tcfg.horizon = cfg.horizon;
    tcfg.learning_rate = cfg.learning_rate;
    tcfg.beta1 = cfg.beta1;
    tcfg.beta2 = cfg.beta2;
    tcfg.seed = cell_key.value();

    if (cfg.degeneracy_runs > 0) {
      cell.untrained_final_ess =
          evaluate_degeneracy(proposal, *model, cfg.degeneracy_runs, cfg.particle_count,
                              cell_key.child(stream_tag::kDegeneracyEval))
              .back();
    }
    try {
      const TrainingReport report = train(proposal, *model, source, tcfg);
      cell.train_losses = report.run_losses;
    } catch (const TooManyDivergedRuns&) {
      return cell;  // incomplete: scores stay empty
    }
    if (cfg.degeneracy_runs > 0) {
      cell.trained_final_ess =
          evaluate_degeneracy(proposal, *model, cfg.degeneracy_runs, cfg.particle_count,
                              cell_key.child(stream_tag::kDegeneracyEval))
              .back();
    }
  }

  const OptimalGaussianProposal mindeg(*model);
  const LearnedProposalSampler learned(proposal);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  cell.rrmse.assign(methods.size(), std::vector<double>(cfg.test_runs, nan));
  cell.final_ess.assign(methods.size(), std::vector<double>(cfg.test_runs, nan));

  for (std::size_t j = 0; j < cfg.test_runs; ++j) {
    GaussianStream sim = cell_key.child(stream_tag::kTestSimulation).child(j).stream();
    const Trajectory traj = simulate(*model, cfg.horizon, sim);

    // Error targets: exact filtered means when they exist, true states
    // otherwise.
    std::vector<Vector> targets;
    if (cfg.scenario == ScenarioKind::kLinear) {
      for (const KalmanState& s : kalman_filter(*model, traj.measurements)) {
        targets.push_back(s.mean);
      }
    } else {
      targets = traj.states;
    }

    for (std::size_t m = 0; m < methods.size(); ++m) {
      const Method method = methods[m];
      const StreamKey method_key = cell_key.child(stream_tag::kFilterRun)
                                       .child(j)
                                       .child(static_cast<std::uint64_t>(method));
      try {
        if (method == Method::kLln) {
          GaussianStream draws = cell_key.child(stream_tag::kLln).child(j).stream();
          const std::vector<Vector> estimates =
              lln_estimate(*model, traj.measurements, cfg.particle_count, draws);
          cell.rrmse[m][j] = relative_rmse(estimates, targets, cfg.rrmse_mode);
          // Exact-marginal draws carry no weights; report the nominal sample
          // count where the particle methods report an ESS.
          cell.final_ess[m][j] = static_cast<double>(cfg.particle_count);
          continue;
        }
        const bool resample =
            method == Method::kMinDegResample || method == Method::kLearnedResample;
        const Proposal& prop =
            (method == Method::kMinDeg || method == Method::kMinDegResample)
                ? static_cast<const Proposal&>(mindeg)
                : static_cast<const Proposal&>(learned);
        const FilterResult result = run_filter(*model, prop, traj.measurements,
                                               cfg.particle_count, resample, method_key);
        cell.rrmse[m][j] = relative_rmse(result.estimates, targets, cfg.rrmse_mode);
        cell.final_ess[m][j] = result.ess.back();
      } catch (const AllWeightsDegenerate&) {
        // Dead run for this method only; the NaN sentinel already in place
        // drops it from the aggregates.
      } catch (const JitterCapExceeded&) {
      }
    }
  }
  cell.completed = true;
  return cell;
}

double median_of(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  if (values.size() % 2 == 1) return values[mid];
  return 0.5 * (values[mid - 1] + values[mid]);
}

double sample_std(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  double mean = 0.0;
  for (const double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (const double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.num_trials == 0 || cfg.test_runs == 0) {
    throw std::invalid_argument("run_experiment: trials and test_runs must be positive");
  }
  ExperimentResult result;
  result.methods = resolve_methods(cfg);

  const std::size_t cell_count = cfg.snr_grid_db.size() * cfg.num_trials;
  result.cells.resize(cell_count);

  // Cells are independent and fully keyed, so any scheduling of this loop
  // produces identical bytes.
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cell_count) return;
      try {
        result.cells[i] = run_cell(cfg, result.methods, cfg.snr_grid_db[i / cfg.num_trials],
                                   i % cfg.num_trials);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  if (cfg.threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < cfg.threads; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  const std::string scenario = scenario_name(cfg.scenario);
  for (std::size_t s = 0; s < cfg.snr_grid_db.size(); ++s) {
    for (std::size_t m = 0; m < result.methods.size(); ++m) {
      MetricsRecord record;
      record.scenario = scenario;
      record.snr_db = cfg.snr_grid_db[s];
      record.method = method_name(result.methods[m]);

      std::vector<double> pooled_scores;
      std::vector<double> trial_medians;
      std::vector<double> pooled_ess;
      for (std::size_t trial = 0; trial < cfg.num_trials; ++trial) {
        const CellResult& cell = result.cells[s * cfg.num_trials + trial];
        if (!cell.completed) continue;
        ++record.trials_completed;
        std::vector<double> trial_scores;
        for (std::size_t j = 0; j < cfg.test_runs; ++j) {
          if (std::isfinite(cell.rrmse[m][j])) {
            pooled_scores.push_back(cell.rrmse[m][j]);
            trial_scores.push_back(cell.rrmse[m][j]);
          }
          if (std::isfinite(cell.final_ess[m][j])) pooled_ess.push_back(cell.final_ess[m][j]);
        }
        if (!trial_scores.empty()) trial_medians.push_back(median_of(trial_scores));
      }

      if (cfg.per_trial) {
        record.median_rrmse = median_of(trial_medians);
        record.std_rrmse = sample_std(trial_medians);
      } else {
        record.median_rrmse = median_of(pooled_scores);
        record.std_rrmse = sample_std(pooled_scores);
      }
      double ess_sum = 0.0;
      for (const double e : pooled_ess) ess_sum += e;
      record.mean_final_ess = pooled_ess.empty()
                                  ? std::numeric_limits<double>::quiet_NaN()
                                  : ess_sum / static_cast<double>(pooled_ess.size());
      result.metrics.push_back(std::move(record));
    }
  }
  return result;
}

TrainedCell train_cell(const ExperimentConfig& cfg, double snr_db, std::size_t trial) {
  const StreamKey trial_key = StreamKey(cfg.seed).child(stream_tag::kTrial).child(trial);
  const StreamKey cell_key = trial_key.child(std::bit_cast<std::uint64_t>(snr_db));

  ScenarioConfig scenario_cfg;
  scenario_cfg.state_dim = cfg.state_dim;
  scenario_cfg.meas_dim = cfg.meas_dim;
  scenario_cfg.horizon = cfg.horizon;
  scenario_cfg.snr_db = snr_db;
  scenario_cfg.seed = trial_key.value();
  scenario_cfg.scenario = cfg.scenario;
  const std::unique_ptr<GaussianStateSpace> model = generate_scenario(scenario_cfg);

  TrainedCell cell;
  cell.proposal =
      make_learned_proposal(cfg.state_dim, cfg.meas_dim, cfg.horizon, cfg.mean_hidden,
                            cfg.cov_hidden, cell_key.child(stream_tag::kProposalInit));
  const MeasurementSource source = [&](std::size_t run) {
    GaussianStream sim = cell_key.child(stream_tag::kRunSimulation).child(run).stream();
    return simulate(*model, cfg.horizon, sim).measurements;
  };
  TrainingConfig tcfg;
  tcfg.num_runs = cfg.train_runs;
  tcfg.particle_count = cfg.particle_count;
  tcfg.horizon = cfg.horizon;
  tcfg.learning_rate = cfg.learning_rate;
  tcfg.beta1 = cfg.beta1;
  tcfg.beta2 = cfg.beta2;
  tcfg.seed = cell_key.value();
  cell.report = train(cell.proposal, *model, source, tcfg);

  cell.metadata.scenario = scenario_name(cfg.scenario);
  cell.metadata.snr_db = snr_db;
  cell.metadata.scenario_seed = scenario_cfg.seed;
  cell.metadata.training = tcfg;
  return cell;
}

std::vector<MetricsRecord> evaluate_proposal(const LearnedProposal& proposal,
                                             const ProposalMetadata& metadata,
                                             const std::vector<Method>& methods,
                                             std::size_t test_runs, RrmseMode mode) {
  const ScenarioKind kind = scenario_from_name(metadata.scenario);
  ScenarioConfig scenario_cfg;
  scenario_cfg.state_dim = proposal.state_dim;
  scenario_cfg.meas_dim = proposal.meas_dim;
  scenario_cfg.horizon = proposal.horizon;
  scenario_cfg.snr_db = metadata.snr_db;
  scenario_cfg.seed = metadata.scenario_seed;
  scenario_cfg.scenario = kind;
  const std::unique_ptr<GaussianStateSpace> model = generate_scenario(scenario_cfg);

  for (const Method m : methods) {
    if (m == Method::kLln && kind != ScenarioKind::kLinear) {
      throw std::invalid_argument("the lln method requires the linear scenario");
    }
  }

  const std::size_t k_count = metadata.training.particle_count;
  const StreamKey eval_key(metadata.training.seed);
  const OptimalGaussianProposal mindeg(*model);
  const LearnedProposalSampler learned(proposal);

  std::vector<std::vector<double>> rrmse(methods.size());
  std::vector<std::vector<double>> final_ess(methods.size());
  for (std::size_t j = 0; j < test_runs; ++j) {
    GaussianStream sim = eval_key.child(stream_tag::kTestSimulation).child(j).stream();
    const Trajectory traj = simulate(*model, proposal.horizon, sim);
    std::vector<Vector> targets;
    if (kind == ScenarioKind::kLinear) {
      for (const KalmanState& s : kalman_filter(*model, traj.measurements)) {
        targets.push_back(s.mean);
      }
    } else {
      targets = traj.states;
    }
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const Method method = methods[m];
      try {
        if (method == Method::kLln) {
          GaussianStream draws = eval_key.child(stream_tag::kLln).child(j).stream();
          rrmse[m].push_back(
              relative_rmse(lln_estimate(*model, traj.measurements, k_count, draws), targets, mode));
          final_ess[m].push_back(static_cast<double>(k_count));
          continue;
        }
        const bool resample =
            method == Method::kMinDegResample || method == Method::kLearnedResample;
        const Proposal& prop =
            (method == Method::kMinDeg || method == Method::kMinDegResample)
                ? static_cast<const Proposal&>(mindeg)
                : static_cast<const Proposal&>(learned);
        const StreamKey method_key = eval_key.child(stream_tag::kFilterRun)
                                         .child(j)
                                         .child(static_cast<std::uint64_t>(method));
        const FilterResult result =
            run_filter(*model, prop, traj.measurements, k_count, resample, method_key);
        rrmse[m].push_back(relative_rmse(result.estimates, targets, mode));
        final_ess[m].push_back(result.ess.back());
      } catch (const AllWeightsDegenerate&) {
      } catch (const JitterCapExceeded&) {
      }
    }
  }

  std::vector<MetricsRecord> records;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    MetricsRecord record;
    record.scenario = metadata.scenario;
    record.snr_db = metadata.snr_db;
    record.method = method_name(methods[m]);
    record.median_rrmse = median_of(rrmse[m]);
    record.std_rrmse = sample_std(rrmse[m]);
    double ess_sum = 0.0;
    for (const double e : final_ess[m]) ess_sum += e;
    record.mean_final_ess = final_ess[m].empty()
                                ? std::numeric_limits<double>::quiet_NaN()
                                : ess_sum / static_cast<double>(final_ess[m].size());
    record.trials_completed = 1;
    records.push_back(std::move(record));
  }
  return records;
}

std::string metrics_to_csv(const std::vector<MetricsRecord>& metrics) {
  std::string out = "scenario,snr_db,method,median_rrmse,std_rrmse,mean_final_ess,trials_completed\n";
  char buffer[160];
  for (const MetricsRecord& r : metrics) {
    std::snprintf(buffer, sizeof(buffer), "%.12g,%.12g,%.12g,%zu\n", r.median_rrmse, r.std_rrmse,
                  r.mean_final_ess, r.trials_completed);
    out += r.scenario;
    out += ',';
    char snr[40];
    std::snprintf(snr, sizeof(snr), "%.12g", r.snr_db);
    out += snr;
    out += ',';
    out += r.method;
    out += ',';
    out += buffer;
  }
  return out;
}

void write_csv(const std::string& path, const std::vector<MetricsRecord>& metrics) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << metrics_to_csv(metrics);
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace sispf
