#include "sispf/training.hpp"

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "sispf/errors.hpp"
#include "sispf/filter.hpp"
#include "sispf/linalg.hpp"

namespace sispf {

LossGraph build_loss_graph(Tape& tape, const ProposalGraph& graph, const LearnedProposal& shape,
                           const Model& model, const std::vector<Vector>& measurements,
                           std::size_t particle_count, const StreamKey& noise_key,
                           const Matrix* shared_noise) {
  const std::size_t n = shape.state_dim;
  const std::size_t steps = measurements.size();
  const std::size_t k_count = particle_count;
  if (model.state_dim() != n || model.meas_dim() != shape.meas_dim) {
    throw DimensionMismatch("build_loss_graph: model and proposal dimensions differ");
  }
  if (k_count == 0) throw DimensionMismatch("build_loss_graph: particle_count must be positive");
  if (steps == 0) throw DimensionMismatch("build_loss_graph: empty measurement record");
  if (shared_noise != nullptr && (shared_noise->rows() != n || shared_noise->cols() != 1)) {
    throw ShapeMismatch("build_loss_graph: shared_noise must be a state-dim column");
  }

  LossGraph out;
  out.step_log_weights.reserve(steps);
  out.step_logsumexp.reserve(steps);

  // All particles start from the prior mean, matching the plain filter.
  const NodeId start = tape.constant(Matrix::column(model.initial_mean()));
  std::vector<NodeId> x_prev(k_count, start);
  std::vector<NodeId> cum_log_weight(k_count);
  NodeId objective;
  NodeId score;

  for (std::size_t t = 0; t < steps; ++t) {
    const NodeId y = tape.constant(Matrix::column(measurements[t]));
    const StreamKey step_key = noise_key.child(t);
    std::vector<NodeId> x_next(k_count);
    std::vector<NodeId> targets(k_count);
    std::vector<NodeId> increments(k_count);

    for (std::size_t k = 0; k < k_count; ++k) {
      auto [mean, cov] = proposal_moments(tape, graph, shape.horizon, t, x_prev[k], y);
      const NodeId chol_lower = tape.cholesky_relative(cov, 1e-6);

      // Reparametrized draw: the randomness enters as a constant, so the
      // sample stays differentiable in the proposal parameters.
      Matrix eta(n, 1);
      if (shared_noise != nullptr) {
        eta = *shared_noise;
      } else {
        GaussianStream noise = step_key.child(k).stream();
        for (std::size_t i = 0; i < n; ++i) eta(i, 0) = noise.normal();
      }
      const NodeId x = tape.add(mean, tape.lower_triangular_matvec(chol_lower, tape.constant(eta)));

      const NodeId log_proposal = mvn_log_density_node(tape, x, mean, chol_lower);
      const NodeId log_prior = (t == 0) ? model.log_initial_density_node(tape, x)
                                        : model.log_transition_density_node(tape, x, x_prev[k]);
      const NodeId log_meas = model.log_measurement_density_node(tape, y, x);
      const NodeId log_target = tape.add(log_meas, log_prior);
      const NodeId increment = tape.subtract(log_target, log_proposal);

      targets[k] = log_target;
      increments[k] = increment;
      cum_log_weight[k] = (t == 0) ? increment : tape.add(cum_log_weight[k], increment);
      // The live particle feeds the next step, so each network also collects
      // gradient from every later step's terms through the trajectory.
      x_next[k] = x;
    }
    x_prev = std::move(x_next);

    // The training objective is the summed log joint density of the sampled
    // particles, E[log p(y_t|x) + log p(x|x_prev)] under the reparametrized
    // draw. Its gradient pulls every proposal mean toward the mode of its
    // step's exact conditional p(x_t | x_prev, y_t) at full strength
    // whatever the current spread, and it lets the covariance shrink onto
    // that mode, which drives the weights toward uniformity (coinciding
    // particles attain the degeneracy score's -T*K*log K ceiling exactly).
    // The score itself is useless as the training signal: its normalization
    // term cancels the posterior-matching pull on the mean, the remainder
    // scales with the proposal spread, and the optimizer settles into a
    // tiny-covariance mismatched-mean equilibrium that uniformizes weights
    // without ever fitting the target.
    const NodeId step_objective = tape.sum(tape.concat_rows(targets));
    objective = (t == 0) ? step_objective : tape.add(objective, step_objective);

    // Cumulative normalized log-weights: the filter's actual degeneracy
    // state, kept both per step (for the ESS) and summed (the score).
    const NodeId stacked = tape.concat_rows(cum_log_weight);
    const NodeId lse = tape.logsumexp_over_entries(stacked);
    const NodeId step_score = tape.subtract(
        tape.sum(stacked), tape.scalar_multiply(lse, static_cast<double>(k_count)));
    score = (t == 0) ? step_score : tape.add(score, step_score);
    out.step_log_weights.push_back(stacked);
    out.step_logsumexp.push_back(lse);
  }
  out.objective = objective;
  out.log_weight_sum = score;
  return out;
}

LossGraph build_loss_graph(Tape& tape, const LearnedProposal& proposal, const Model& model,
                           const std::vector<Vector>& measurements, std::size_t particle_count,
                           const StreamKey& noise_key, const Matrix* shared_noise) {
  const ProposalGraph graph = bind_proposal(tape, proposal);
  return build_loss_graph(tape, graph, proposal, model, measurements, particle_count, noise_key,
                          shared_noise);
}

namespace {

// Mean over steps of 1 / sum_k w-tilde_k^2, read off the already-evaluated
// loss graph.
double mean_ess_from_graph(const Tape& tape, const LossGraph& lg) {
  double total = 0.0;
  for (std::size_t t = 0; t < lg.step_log_weights.size(); ++t) {
    const Matrix& logs = tape.value(lg.step_log_weights[t]);
    const double lse = tape.value(lg.step_logsumexp[t])(0, 0);
    double sum_sq = 0.0;
    for (std::size_t k = 0; k < logs.rows(); ++k) {
      const double w = std::exp(logs(k, 0) - lse);
      sum_sq += w * w;
    }
    total += 1.0 / sum_sq;
  }
  return total / static_cast<double>(lg.step_log_weights.size());
}

}  // namespace

TrainingReport train(LearnedProposal& proposal, const Model& model,
                     const MeasurementSource& measurements, const TrainingConfig& cfg) {
  if (proposal.horizon != cfg.horizon) {
    throw DimensionMismatch("train: proposal horizon does not match the configured horizon");
  }

  std::vector<Matrix*> params = trainable_parameters(proposal);
  AdamState adam = make_adam_state(trainable_parameters(std::as_const(proposal)),
                                   cfg.learning_rate, cfg.beta1, cfg.beta2);

  TrainingReport report;
  const StreamKey noise_root = StreamKey(cfg.seed).child(stream_tag::kTraining);

  std::vector<Matrix> tail_sum;
  std::size_t tail_count = 0;
  const std::size_t tail_start = cfg.num_runs / 2;

  for (std::size_t run = 0; run < cfg.num_runs; ++run) {
    const std::size_t record_index = cfg.fixed_trajectory ? 0 : run;
    const std::vector<Vector> record = measurements(record_index);

    Tape tape;
    double loss_value = 0.0;
    double mean_ess = 0.0;
    std::vector<Matrix> ascent;
    bool failed = false;
    try {
      const ProposalGraph graph = bind_proposal(tape, proposal);
      const LossGraph lg = build_loss_graph(tape, graph, proposal, model, record,
                                            cfg.particle_count, noise_root.child(run),
                                            nullptr, /*detach_between_steps=*/false);
      if (!std::isfinite(tape.value(lg.objective)(0, 0))) {
        throw NonFiniteGradient("training objective is not finite");
      }
      // Report the normalized-weight score: that is the quantity the filter
      // degenerates in, whatever the optimizer maximizes.
      loss_value = tape.value(lg.log_weight_sum)(0, 0);
      mean_ess = mean_ess_from_graph(tape, lg);

      tape.backward(lg.objective);
      const std::vector<NodeId> nodes = proposal_parameter_nodes(graph);
      ascent.reserve(nodes.size());
      // ADAM descends, the objective is maximized: flip the gradient sign.
      for (const NodeId id : nodes) ascent.push_back(scale(tape.gradient(id), -1.0));

      if (cfg.grad_clip_norm > 0.0) {
        double norm_sq = 0.0;
        for (const Matrix& g : ascent) {
          const double f = frobenius_norm(g);
          norm_sq += f * f;
        }
        const double norm = std::sqrt(norm_sq);
        if (norm > cfg.grad_clip_norm) {
          const double shrink = cfg.grad_clip_norm / norm;
          for (Matrix& g : ascent) g = scale(g, shrink);
        }
      }

      std::vector<const Matrix*> grad_ptrs;
      grad_ptrs.reserve(ascent.size());
      for (const Matrix& g : ascent) grad_ptrs.push_back(&g);
      adam_step(params, grad_ptrs, adam);
    } catch (const JitterCapExceeded&) {
      failed = true;
    } catch (const NonFiniteGradient&) {
      failed = true;
    }

    if (failed) {
      report.diverged_runs.push_back(run);
      report.diverged = true;
      continue;
    }
    report.run_losses.push_back(loss_value);
    report.run_mean_ess.push_back(mean_ess);

    if (run >= tail_start) {
      if (tail_sum.empty()) {
        tail_sum.reserve(params.size());
        for (const Matrix* p : params) tail_sum.push_back(*p);
      } else {
        for (std::size_t i = 0; i < params.size(); ++i) {
          tail_sum[i] = add(tail_sum[i], *params[i]);
        }
      }
      ++tail_count;
    }
  }

  if (tail_count > 1) {
    const double inv = 1.0 / static_cast<double>(tail_count);
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = scale(tail_sum[i], inv);
  }

  if (5 * report.diverged_runs.size() > cfg.num_runs) {
    throw TooManyDivergedRuns("train: more than 20% of runs diverged");
  }
  return report;
}

std::vector<double> evaluate_degeneracy(const LearnedProposal& proposal, const Model& model,
                                        std::size_t num_runs, std::size_t particle_count,
                                        const StreamKey& key) {
  const LearnedProposalSampler sampler(proposal);
  std::vector<double> mean_ess(proposal.horizon, 0.0);
  for (std::size_t r = 0; r < num_runs; ++r) {
    const StreamKey run_key = key.child(r);
    GaussianStream sim = run_key.child(stream_tag::kRunSimulation).stream();
    const Trajectory traj = simulate(model, proposal.horizon, sim);
    const FilterResult result = run_filter(model, sampler, traj.measurements, particle_count,
                                           false, run_key.child(stream_tag::kRunNoise));
    for (std::size_t t = 0; t < mean_ess.size(); ++t) mean_ess[t] += result.ess[t];
  }
  for (double& e : mean_ess) e /= static_cast<double>(num_runs);
  return mean_ess;
}

}  // namespace sispf
