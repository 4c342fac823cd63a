#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "sispf/autodiff.hpp"
#include "sispf/models.hpp"
#include "sispf/nn.hpp"
#include "sispf/rng.hpp"

namespace sispf {

struct TrainingConfig {
  std::size_t num_runs = 200;
  std::size_t particle_count = 25;
  std::size_t horizon = 12;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 1;
  // When set, every run re-uses the measurement record of run 0 instead of a
  // fresh one (stochastic-gradient ablation).
  bool fixed_trajectory = false;
};

struct TrainingReport {
  // Degeneracy score per completed run: the sum over steps and particles of
  // the normalized log-weights, sum_t sum_k log w-tilde_t^(k).
  std::vector<double> run_losses;
  std::vector<double> run_mean_ess;  // mean over steps of the ESS, per completed run
  std::vector<std::size_t> diverged_runs;
  bool diverged = false;
};

// One unrolled filtering pass as a differentiable graph.
//
// `objective` is what training maximizes: the joint log-density of the
// particles and the record, sum_t sum_k [log p(y_t | x_t^(k)) +
// log p(x_t^(k) | x_{t-1}^(k))]. Its gradient pulls every proposal mean
// toward the mode of the exact conditional p(x_t | x_{t-1}, y_t) at full
// strength however small the proposal spread is, and lets the covariance
// tighten onto that mode; both movements push the normalized weights toward
// uniformity. The normalized score itself is useless as the training
// signal: along the reparametrized draw x = mean + L * eta the -log pi
// terms cancel between the per-particle sum and the log-sum-exp, and the
// mean gradient cancels to first order (the softmax weights sum to one), so
// ascent on the score stalls in a tight-covariance, wrong-mean equilibrium.
//
// `log_weight_sum` is the degeneracy score sum_t sum_k log w-tilde_t^(k)
// with w-tilde the softmax-normalized cumulative weights. It is bounded by
// -T*K*log K, with equality exactly at uniform weights, which makes it the
// reported measure of weight degeneracy. It is kept as a graph node so
// derivative checks can differentiate it end to end.
//
// `step_log_weights[t]` is the (K,1) column of cumulative unnormalized
// log-weights at step t and `step_logsumexp[t]` its log-sum-exp (together
// they give the normalized weights, hence the ESS, without recomputation).
struct LossGraph {
  NodeId objective;
  NodeId log_weight_sum;
  std::vector<NodeId> step_log_weights;
  std::vector<NodeId> step_logsumexp;
};

// Unrolls the filter against an already-bound parameter graph. Proposal
// sampling uses the reparametrization x = mean + L * eta with eta drawn from
// noise_key.child(t).child(k), so the draw stays differentiable in the
// parameters, and particles feed the next step's network inputs as live
// nodes, so gradients flow through time: each step's networks collect credit
// from every later step's terms as well as their own. `shape` supplies the
// dimensions only; parameter values live in the graph nodes. When
// `shared_noise` (an N-entry column) is given, every (step, particle) reuses
// it instead of drawing: all particles then coincide, which pins
// `log_weight_sum` at its -T*K*log K ceiling.
LossGraph build_loss_graph(Tape& tape, const ProposalGraph& graph, const LearnedProposal& shape,
                           const Model& model, const std::vector<Vector>& measurements,
                           std::size_t particle_count, const StreamKey& noise_key,
                           const Matrix* shared_noise = nullptr);

// Convenience overload: binds `proposal` onto the tape first.
LossGraph build_loss_graph(Tape& tape, const LearnedProposal& proposal, const Model& model,
                           const std::vector<Vector>& measurements, std::size_t particle_count,
                           const StreamKey& noise_key, const Matrix* shared_noise = nullptr);

// Supplies the measurement record for a training run. Deliberately the only
// channel between the data and the trainer: latent states never cross it.
using MeasurementSource = std::function<std::vector<Vector>(std::size_t run_index)>;

// Maximizes LossGraph::objective by ADAM ascent, one measurement record per
// update. The returned parameters are the running average of the iterates
// over the second half of the runs: with a constant step size the iterates
// hover around the optimum rather than settle on it, and averaging strips
// that single-record wander (Polyak-Ruppert averaging). Runs whose graph
// construction or gradient fails (jitter cap, non-finite values) are skipped
// with the parameters untouched; more than 20% of them aborts with
// TooManyDivergedRuns.
TrainingReport train(LearnedProposal& proposal, const Model& model,
                     const MeasurementSource& measurements, const TrainingConfig& cfg);

// Mean ESS per step of the plain (non-graph) filter over `num_runs` freshly
// simulated measurement records; used to compare degeneracy before and after
// training.
std::vector<double> evaluate_degeneracy(const LearnedProposal& proposal, const Model& model,
                                        std::size_t num_runs, std::size_t particle_count,
                                        const StreamKey& key);

}  // namespace sispf
