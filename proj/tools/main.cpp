#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sispf/diagnostics.hpp"
#include "sispf/experiment.hpp"
#include "sispf/models.hpp"
#include "sispf/serialize.hpp"

namespace {

using sispf::ExperimentConfig;
using sispf::Matrix;
using sispf::Method;
using sispf::RrmseMode;
using sispf::Vector;

RrmseMode rrmse_mode_from_name(const std::string& name) {
  if (name == "per-step-mean") return RrmseMode::kPerStepMean;
  if (name == "final-step") return RrmseMode::kFinalStep;
  if (name == "stacked") return RrmseMode::kStacked;
  throw std::invalid_argument("unknown rrmse mode: " + name +
                              " (expected per-step-mean, final-step, or stacked)");
}

ExperimentConfig config_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  nlohmann::json j;
  in >> j;

  ExperimentConfig cfg;
  if (j.contains("scenario")) cfg.scenario = sispf::scenario_from_name(j["scenario"]);
  if (j.contains("snr_grid_db")) cfg.snr_grid_db = j["snr_grid_db"].get<std::vector<double>>();
  if (j.contains("num_trials")) cfg.num_trials = j["num_trials"].get<std::size_t>();
  if (j.contains("train_runs")) cfg.train_runs = j["train_runs"].get<std::size_t>();
  if (j.contains("test_runs")) cfg.test_runs = j["test_runs"].get<std::size_t>();
  if (j.contains("particle_count")) cfg.particle_count = j["particle_count"].get<std::size_t>();
  if (j.contains("horizon")) cfg.horizon = j["horizon"].get<std::size_t>();
  if (j.contains("state_dim")) cfg.state_dim = j["state_dim"].get<std::size_t>();
  if (j.contains("meas_dim")) cfg.meas_dim = j["meas_dim"].get<std::size_t>();
  if (j.contains("mean_hidden")) cfg.mean_hidden = j["mean_hidden"].get<std::vector<std::size_t>>();
  if (j.contains("cov_hidden")) cfg.cov_hidden = j["cov_hidden"].get<std::vector<std::size_t>>();
  if (j.contains("learning_rate")) cfg.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("beta1")) cfg.beta1 = j["beta1"].get<double>();
  if (j.contains("beta2")) cfg.beta2 = j["beta2"].get<double>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("methods")) {
    cfg.methods.clear();
    for (const auto& name : j["methods"]) cfg.methods.push_back(sispf::method_from_name(name));
  }
  if (j.contains("rrmse_mode")) cfg.rrmse_mode = rrmse_mode_from_name(j["rrmse_mode"]);
  if (j.contains("per_trial")) cfg.per_trial = j["per_trial"].get<bool>();
  if (j.contains("threads")) cfg.threads = j["threads"].get<std::size_t>();
  if (j.contains("degeneracy_runs")) cfg.degeneracy_runs = j["degeneracy_runs"].get<std::size_t>();
  return cfg;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < v.dim(); ++i) out.push_back(v[i]);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text(out_path, text);
  }
}

// Raw flag values; only flags the user actually passed override the config
// file, which in turn overrides the built-in defaults.
struct FlagValues {
  std::string config;
  std::string scenario = "linear";
  std::vector<double> snr;
  std::uint64_t seed = 1;
  std::size_t particles = 25;
  std::size_t trials = 10;
  std::size_t runs = 0;
  std::size_t trial_index = 0;
  std::size_t threads = 1;
  std::string out;
  std::string params;
  std::string resample = "off";
  std::vector<std::string> methods;
  std::string rrmse_mode = "per-step-mean";
  bool per_trial = false;
};

void add_shared_flags(CLI::App* cmd, FlagValues* f) {
  cmd->add_option("--config", f->config, "JSON config file; explicit flags override it");
  cmd->add_option("--scenario", f->scenario, "linear | nonlinear | uniform");
  cmd->add_option("--snr", f->snr, "SNR value(s) in dB within [0, 10]");
  cmd->add_option("--seed", f->seed, "master seed");
  cmd->add_option("--particles", f->particles, "particle count K");
  cmd->add_option("--threads", f->threads, "worker threads over independent cells");
}

// count() for options the subcommand may not register at all.
std::size_t flag_count(const CLI::App& cmd, const std::string& name) {
  const CLI::Option* opt = cmd.get_option_no_throw(name);
  return opt == nullptr ? 0 : opt->count();
}

ExperimentConfig build_config(const CLI::App& cmd, const FlagValues& f, bool runs_are_training) {
  ExperimentConfig cfg;
  if (flag_count(cmd, "--config") > 0) cfg = config_from_file(f.config);
  if (flag_count(cmd, "--scenario") > 0) cfg.scenario = sispf::scenario_from_name(f.scenario);
  if (flag_count(cmd, "--snr") > 0) cfg.snr_grid_db = f.snr;
  if (flag_count(cmd, "--seed") > 0) cfg.seed = f.seed;
  if (flag_count(cmd, "--particles") > 0) cfg.particle_count = f.particles;
  if (flag_count(cmd, "--trials") > 0) cfg.num_trials = f.trials;
  if (flag_count(cmd, "--runs") > 0) {
    if (runs_are_training) {
      cfg.train_runs = f.runs;
    } else {
      cfg.test_runs = f.runs;
    }
  }
  if (flag_count(cmd, "--method") > 0) {
    cfg.methods.clear();
    for (const std::string& name : f.methods) cfg.methods.push_back(sispf::method_from_name(name));
  }
  if (flag_count(cmd, "--rrmse-mode") > 0) cfg.rrmse_mode = rrmse_mode_from_name(f.rrmse_mode);
  if (flag_count(cmd, "--per-trial") > 0) cfg.per_trial = f.per_trial;
  if (flag_count(cmd, "--threads") > 0) cfg.threads = f.threads;
  return cfg;
}

// One SNR for subcommands that act on a single cell: an explicit --snr must
// carry exactly one value; otherwise a one-point config grid is honored and
// anything else falls back to 10 dB.
double single_snr(const CLI::App& cmd, const ExperimentConfig& cfg) {
  if (flag_count(cmd, "--snr") > 0) {
    if (cfg.snr_grid_db.size() != 1) {
      throw std::invalid_argument("this subcommand takes one --snr value");
    }
    return cfg.snr_grid_db.front();
  }
  return cfg.snr_grid_db.size() == 1 ? cfg.snr_grid_db.front() : 10.0;
}

int cmd_simulate(const CLI::App& cmd, const FlagValues& f) {
  ExperimentConfig cfg = build_config(cmd, f, false);
  const double snr_db = single_snr(cmd, cfg);

  sispf::ScenarioConfig scenario_cfg;
  scenario_cfg.state_dim = cfg.state_dim;
  scenario_cfg.meas_dim = cfg.meas_dim;
  scenario_cfg.horizon = cfg.horizon;
  scenario_cfg.snr_db = snr_db;
  scenario_cfg.seed = cfg.seed;
  scenario_cfg.scenario = cfg.scenario;
  const std::unique_ptr<sispf::GaussianStateSpace> model = sispf::generate_scenario(scenario_cfg);
  sispf::GaussianStream sim =
      sispf::StreamKey(cfg.seed).child(sispf::stream_tag::kTestSimulation).stream();
  const sispf::Trajectory traj = sispf::simulate(*model, cfg.horizon, sim);

  nlohmann::json j;
  j["scenario"] = sispf::scenario_name(cfg.scenario);
  j["snr_db"] = snr_db;
  j["seed"] = cfg.seed;
  j["A"] = matrix_to_json(model->a());
  j["C"] = matrix_to_json(model->c_meas());
  j["mu0"] = vector_to_json(model->initial_mean());
  j["sigma0"] = matrix_to_json(model->sigma0());
  j["sigma_v"] = matrix_to_json(model->sigma_v());
  j["sigma_w"] = matrix_to_json(model->sigma_w());
  nlohmann::json states = nlohmann::json::array();
  for (const Vector& x : traj.states) states.push_back(vector_to_json(x));
  nlohmann::json measurements = nlohmann::json::array();
  for (const Vector& y : traj.measurements) measurements.push_back(vector_to_json(y));
  j["states"] = std::move(states);
  j["measurements"] = std::move(measurements);
  emit(f.out, j.dump(2) + "\n");
  return 0;
}

int cmd_train(const CLI::App& cmd, const FlagValues& f) {
  const ExperimentConfig cfg = build_config(cmd, f, true);
  const double snr_db = single_snr(cmd, cfg);
  const sispf::TrainedCell cell = sispf::train_cell(cfg, snr_db, f.trial_index);
  sispf::save_proposal(f.out, cell.proposal, cell.metadata);

  std::string report;
  char line[128];
  for (std::size_t r = 0; r < cell.report.run_losses.size(); ++r) {
    std::snprintf(line, sizeof(line), "run %zu: J=%.12g mean_ess=%.12g\n", r,
                  cell.report.run_losses[r], cell.report.run_mean_ess[r]);
    report += line;
  }
  std::snprintf(line, sizeof(line), "diverged_runs=%zu\n", cell.report.diverged_runs.size());
  report += line;
  write_text(f.out + ".report.txt", report);
  std::cout << "wrote " << f.out << " and " << f.out << ".report.txt ("
            << cell.report.run_losses.size() << " completed runs)\n";
  return 0;
}

int cmd_test(const CLI::App& cmd, const FlagValues& f) {
  const ExperimentConfig cfg = build_config(cmd, f, false);
  const sispf::LoadedProposal loaded = sispf::load_proposal(f.params);

  std::vector<Method> methods = cfg.methods;
  if (methods.empty()) methods = {Method::kLearned};
  if (f.resample != "on" && f.resample != "off") {
    throw std::invalid_argument("--resample expects on or off");
  }
  if (flag_count(cmd, "--resample") > 0) {
    for (Method& m : methods) {
      if (f.resample == "on") {
        if (m == Method::kMinDeg) m = Method::kMinDegResample;
        if (m == Method::kLearned) m = Method::kLearnedResample;
      } else {
        if (m == Method::kMinDegResample) m = Method::kMinDeg;
        if (m == Method::kLearnedResample) m = Method::kLearned;
      }
    }
  }

  const std::vector<sispf::MetricsRecord> records = sispf::evaluate_proposal(
      loaded.proposal, loaded.metadata, methods, cfg.test_runs, cfg.rrmse_mode);
  emit(f.out, sispf::metrics_to_csv(records));
  return 0;
}

int cmd_sweep(const CLI::App& cmd, const FlagValues& f) {
  const ExperimentConfig cfg = build_config(cmd, f, false);
  const sispf::ExperimentResult result = sispf::run_experiment(cfg);
  if (f.out.empty()) {
    std::cout << sispf::metrics_to_csv(result.metrics);
  } else {
    sispf::write_csv(f.out, result.metrics);
    std::cout << "wrote " << f.out << " (" << result.metrics.size() << " rows)\n";
  }
  return 0;
}

int print_checks(const std::vector<sispf::CheckResult>& checks) {
  bool all_pass = true;
  for (const sispf::CheckResult& c : checks) {
    std::printf("%-28s %-4s  value=%.3e  threshold=%.0e\n", c.name.c_str(),
                c.pass ? "PASS" : "FAIL", c.value, c.threshold);
    all_pass = all_pass && c.pass;
  }
  std::printf("%zu checks, %s\n", checks.size(), all_pass ? "all passed" : "FAILURES present");
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential importance sampling particle filter with learned proposals"};
  app.require_subcommand(1);

  FlagValues f;
  int exit_code = 0;

  CLI::App* simulate = app.add_subcommand("simulate", "generate a scenario and dump one trajectory");
  add_shared_flags(simulate, &f);
  simulate->add_option("--out", f.out, "output path (default stdout)");
  simulate->callback([&] { exit_code = cmd_simulate(*simulate, f); });

  CLI::App* train = app.add_subcommand("train", "train a proposal and serialize it");
  add_shared_flags(train, &f);
  train->add_option("--runs", f.runs, "training runs (default 200)");
  train->add_option("--trial", f.trial_index, "trial index within the seed (default 0)");
  train->add_option("--out", f.out, "output params file")->required();
  train->callback([&] { exit_code = cmd_train(*train, f); });

  CLI::App* test = app.add_subcommand("test", "evaluate a serialized proposal");
  add_shared_flags(test, &f);
  test->add_option("--params", f.params, "params file from `train`")->required();
  test->add_option("--runs", f.runs, "test runs (default 100)");
  test->add_option("--method", f.methods, "method(s) to score (default learned)");
  test->add_option("--resample", f.resample, "on | off: force resampling variants");
  test->add_option("--rrmse-mode", f.rrmse_mode, "per-step-mean | final-step | stacked");
  test->add_option("--out", f.out, "CSV path (default stdout)");
  test->callback([&] { exit_code = cmd_test(*test, f); });

  CLI::App* sweep = app.add_subcommand("sweep", "full SNR sweep to CSV");
  add_shared_flags(sweep, &f);
  sweep->add_option("--trials", f.trials, "train/test repetitions per SNR (default 10)");
  sweep->add_option("--runs", f.runs, "test runs per trial (default 100)");
  sweep->add_option("--method", f.methods, "method subset (default: all valid)");
  sweep->add_option("--rrmse-mode", f.rrmse_mode, "per-step-mean | final-step | stacked");
  sweep->add_flag("--per-trial", f.per_trial, "aggregate per-trial medians instead of pooling");
  sweep->add_option("--out", f.out, "CSV path (default stdout)");
  sweep->callback([&] { exit_code = cmd_sweep(*sweep, f); });

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  gradcheck->add_option("--seed", f.seed, "master seed");
  gradcheck->callback([&] { exit_code = print_checks(sispf::run_gradcheck_suite(f.seed)); });

  CLI::App* selftest = app.add_subcommand("selftest", "gradient checks plus filter property checks");
  selftest->add_option("--seed", f.seed, "master seed");
  selftest->callback([&] { exit_code = print_checks(sispf::run_selftest_suite(f.seed)); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
