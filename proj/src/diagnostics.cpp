#include "sispf/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "sispf/autodiff.hpp"
#include "sispf/baselines.hpp"
#include "sispf/filter.hpp"
#include "sispf/linalg.hpp"
#include "sispf/models.hpp"
#include "sispf/nn.hpp"
#include "sispf/rng.hpp"
#include "sispf/training.hpp"

namespace sispf {

namespace {

constexpr double kGradTolerance = 1e-4;

Matrix random_matrix(std::size_t rows, std::size_t cols, RandomStream& rng) {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = rng.normal();
  }
  return m;
}

// Entries in [0.5, 2.5]: safe for log and bounded away from |.|'s kink.
Matrix random_positive_matrix(std::size_t rows, std::size_t cols, RandomStream& rng) {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = 0.5 + 2.0 * rng.uniform();
  }
  return m;
}

// Gives every output entry its own fixed weight so that constant or
// symmetric gradients cannot mask an indexing bug. The weights must be
// pre-drawn: gradcheck rebuilds the graph for every finite-difference probe,
// and the objective has to be the same function each time.
NodeId weighted_sum(Tape& tape, NodeId x, const Matrix& weights) {
  return tape.sum(tape.elementwise_multiply(x, tape.constant(weights)));
}

using BuildFn = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

CheckResult grad_case(const std::string& name, const BuildFn& build,
                      const std::vector<Matrix>& params, double step = 1e-5) {
  CheckResult result;
  result.name = name;
  result.threshold = kGradTolerance;
  result.value = gradcheck(build, params, step);
  result.pass = result.value < result.threshold;
  return result;
}

// Small well-conditioned linear-Gaussian system; scenario generation cannot
// produce N=2 (the measurement count would exceed the node-pair count).
std::unique_ptr<LinearGaussianModel> make_toy_model() {
  Matrix a(2, 2, 0.0);
  a(0, 0) = 0.9;
  a(0, 1) = 0.15;
  a(1, 0) = -0.1;
  a(1, 1) = 0.8;
  Matrix c(2, 2, 0.0);
  c(0, 0) = 1.0;
  c(1, 0) = 0.4;
  c(1, 1) = 0.9;
  const Vector mu0{1.0, 1.0};
  const Matrix sigma0 = Matrix::identity(2);
  Matrix sigma_v = scale(Matrix::identity(2), 0.3);
  sigma_v(0, 1) = sigma_v(1, 0) = 0.05;
  Matrix sigma_w = scale(Matrix::identity(2), 0.4);
  sigma_w(0, 1) = sigma_w(1, 0) = -0.08;
  return std::make_unique<LinearGaussianModel>(a, c, mu0, sigma0, sigma_v, sigma_w);
}

LearnedProposal make_toy_proposal(std::uint64_t seed) {
  return make_learned_proposal(2, 2, 2, {3}, {4}, StreamKey(seed).child(stream_tag::kProposalInit));
}

}  // namespace

std::vector<CheckResult> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<CheckResult> results;
  GaussianStream rng(StreamKey(seed).child(0x67726164).value());

  {
    const std::vector<Matrix> params = {random_matrix(3, 2, rng), random_matrix(3, 2, rng),
                                        random_matrix(3, 2, rng)};
    const Matrix w = random_matrix(3, 2, rng);
    results.push_back(grad_case(
        "add-subtract-negate",
        [&, w](Tape& t, const std::vector<NodeId>& p) {
          return weighted_sum(t, t.add(t.subtract(p[0], p[1]), t.negate(p[2])), w);
        },
        params));
  }
  {
    const std::vector<Matrix> params = {random_matrix(3, 3, rng), random_matrix(3, 3, rng)};
    const Matrix w = random_matrix(3, 3, rng);
    results.push_back(grad_case(
        "elementwise-multiply",
        [&, w](Tape& t, const std::vector<NodeId>& p) {
          return weighted_sum(t, t.elementwise_multiply(p[0], p[1]), w);
        },
        params));
  }
  {
    const std::vector<Matrix> params = {random_matrix(3, 4, rng), random_matrix(4, 2, rng)};
    const Matrix w = random_matrix(3, 2, rng);
    results.push_back(grad_case(
        "matmul",
        [&, w](Tape& t, const std::vector<NodeId>& p) {
          return weighted_sum(t, t.matmul(p[0], p[1]), w);
        },
        params));
  }
  {
    // Single-column operand: the specialized rank-one backward path.
    const std::vector<Matrix> params = {random_matrix(3, 4, rng), random_matrix(4, 1, rng)};
    const Matrix w = random_matrix(3, 1, rng);
    results.push_back(grad_case(
        "matmul-column",
        [&, w](Tape& t, const std::vector<NodeId>& p) {
          return weighted_sum(t, t.matmul(p[0], p[1]), w);
        },
        params));
  }
  {
    const std::vector<Matrix> params = {random_matrix(2, 5, rng)};
    const Matrix w = random_matrix(5, 2, rng);
    results.push_back(grad_case(
        "transpose",
        [&, w](Tape& t, const std::vector<NodeId>& p) {
          return weighted_sum(t, t.transpose(p[0]), w);
        },
        params));
  }
  {
    const std::vector<Matrix> params = {random_matrix(3, 3, rng)};
    const Matrix w = random_matrix(3, 3, rng);
    results.push_back(grad_case(
        "tanh",
        [&, w](Tape& t, const std::vector<NodeId>& p) { return weighted_sum(t, t.tanh(p[0]), w); },
        params));
  }
  {
    const std::vector<Matrix> params = {random_matrix(3, 3, rng)};
    const Matrix w = random_matrix(3, 3, rng);
    results.push_back(grad_case(
        "exp",
        [&, w](Tape& t, const std::vector<NodeId>& p) { return weighted_sum(t, t.exp(p[0]), w); },
        params));
  }
  {
    const std::vector<Matrix> params = {random_positive_matrix(3, 3, rng)};
    const Matrix w = random_matrix(3, 3, rng);
    results.push_back(grad_case(
        "log",
        [&, w](Tape& t, const std::vector<NodeId>& p) { return weighted_sum(t, t.log(p[0]), w); },
        params));
  }
  {
    const std::vector<Matrix> params = {random_matrix(3, 3, rng)};
    const Matrix w = random_matrix(3, 3, rng);
    results.push_back(grad_case(
        "square",
        [&, w](Tape& t, const std::vector<NodeId>& p) {
          return weighted_sum(t, t.square(p[0]), w);
        },
        params));
  }
  {
    // Positive entries keep finite differences away from the kink at zero.
    const std::vector<Matrix> params = {random_positive_matrix(3, 3, rng)};
    const Matrix w = random_matrix(3, 3, rng);
    results.push_back(grad_case(
        "abs",
        [&, w](Tape& t, const std::vector<NodeId>& p) {
          return weighted_sum(t, t.abs(t.negate(p[0])), w);
        },
        params));
  }
  {
    const std::vector<Matrix> params = {random_matrix(4, 2, rng)};
    results.push_back(grad_case(
        "sum", [](Tape& t, const std::vector<NodeId>& p) { return t.sum(p[0]); }, params));
  }
  {
    const std::vector<Matrix> params = {random_matrix(3, 2, rng)};
    const Matrix w = random_matrix(3, 2, rng);
    results.push_back(grad_case(
        "scalar-multiply",
        [&, w](Tape& t, const std::vector<NodeId>& p) {
          return weighted_sum(t, t.scalar_multiply(p[0], -1.7), w);
        },
        params));
  }
  {
    const std::vector<Matrix> params = {random_matrix(2, 1, rng), random_matrix(3, 1, rng),
                                        random_matrix(1, 1, rng)};
    const Matrix w = random_matrix(6, 1, rng);
    results.push_back(grad_case(
        "concat-rows",
        [&, w](Tape& t, const std::vector<NodeId>& p) {
          return weighted_sum(t, t.concat_rows({p[0], p[1], p[2]}), w);
        },
        params));
  }
  {
    const std::vector<Matrix> params = {random_matrix(5, 1, rng)};
    results.push_back(grad_case(
        "logsumexp",
        [](Tape& t, const std::vector<NodeId>& p) { return t.logsumexp_over_entries(p[0]); },
        params));
  }
  {
    Matrix lower = random_matrix(3, 3, rng);
    for (std::size_t i = 0; i < 3; ++i) lower(i, i) += 3.0;
    const std::vector<Matrix> params = {lower, random_matrix(3, 1, rng)};
    const Matrix w = random_matrix(3, 1, rng);
    results.push_back(grad_case(
        "lower-triangular-matvec",
        [&, w](Tape& t, const std::vector<NodeId>& p) {
          return weighted_sum(t, t.lower_triangular_matvec(p[0], p[1]), w);
        },
        params));
  }
  {
    Matrix lower = random_matrix(3, 3, rng);
    for (std::size_t i = 0; i < 3; ++i) lower(i, i) += 3.0;
    const std::vector<Matrix> params = {lower, random_matrix(3, 1, rng)};
    const Matrix w = random_matrix(3, 1, rng);
    results.push_back(grad_case(
        "lower-triangular-solve",
        [&, w](Tape& t, const std::vector<NodeId>& p) {
          return weighted_sum(t, t.lower_triangular_solve(p[0], p[1]), w);
        },
        params));
  }
  {
    Matrix lower = random_matrix(3, 3, rng);
    for (std::size_t i = 0; i < 3; ++i) lower(i, i) = 1.0 + rng.uniform();
    const std::vector<Matrix> params = {lower};
    results.push_back(grad_case(
        "sum-log-diagonal",
        [](Tape& t, const std::vector<NodeId>& p) { return t.sum_log_diagonal(p[0]); }, params));
  }
  {
    // Sigma = P P^T + I is symmetric by construction, so the finite
    // differences see the same symmetric perturbation the backward rule
    // assumes.
    const std::vector<Matrix> params = {random_matrix(3, 3, rng)};
    const Matrix w = random_matrix(3, 3, rng);
    results.push_back(grad_case(
        "cholesky",
        [&, w](Tape& t, const std::vector<NodeId>& p) {
          const NodeId sigma =
              t.add(t.matmul(p[0], t.transpose(p[0])), t.constant(Matrix::identity(3)));
          const NodeId lower = t.cholesky(sigma, 0.0);
          return t.add(weighted_sum(t, lower, w), t.sum_log_diagonal(lower));
        },
        params));
  }
  {
    const std::vector<Matrix> params = {random_matrix(3, 1, rng), random_matrix(3, 1, rng),
                                        random_matrix(3, 3, rng)};
    results.push_back(grad_case(
        "mvn-log-density",
        [&](Tape& t, const std::vector<NodeId>& p) {
          const NodeId sigma = t.add(t.matmul(p[2], t.transpose(p[2])),
                                     t.constant(scale(Matrix::identity(3), 0.5)));
          return mvn_log_density_node(t, p[0], p[1], t.cholesky(sigma, 0.0));
        },
        params));
  }
  {
    const LearnedProposal proposal = make_toy_proposal(seed);
    std::vector<Matrix> params;
    for (const Matrix* m : trainable_parameters(proposal)) params.push_back(*m);
    const Matrix x_prev = random_matrix(2, 1, rng);
    const Matrix y = random_matrix(2, 1, rng);
    const Matrix w_mean = random_matrix(2, 1, rng);
    const Matrix w_cov = random_matrix(2, 2, rng);
    // Trace-relative jitter, exactly as the training graph applies it, so the
    // check also exercises the jitter term of the Cholesky backward rule.
    results.push_back(grad_case(
        "proposal-moments",
        [&](Tape& t, const std::vector<NodeId>& p) {
          const ProposalGraph graph = proposal_graph_from_nodes(t, proposal, p);
          const auto [mean, cov] =
              proposal_moments(t, graph, proposal.horizon, 0, t.constant(x_prev), t.constant(y));
          return t.add(t.add(weighted_sum(t, mean, w_mean), weighted_sum(t, cov, w_cov)),
                       t.sum_log_diagonal(t.cholesky_relative(cov, 1e-6)));
        },
        params));
  }
  {
    const std::unique_ptr<LinearGaussianModel> model = make_toy_model();
    const LearnedProposal proposal = make_toy_proposal(seed + 1);
    std::vector<Matrix> params;
    for (const Matrix* m : trainable_parameters(proposal)) params.push_back(*m);
    GaussianStream sim = StreamKey(seed).child(stream_tag::kTestSimulation).stream();
    const std::vector<Vector> measurements = simulate(*model, 2, sim).measurements;
    const StreamKey noise_key = StreamKey(seed).child(stream_tag::kTraining);
    // Full through-time graphs in both cases: finite differences rebuild the
    // whole pass under perturbed parameters, so the reverse sweep must keep
    // the cross-step edges to probe the same function.
    results.push_back(grad_case(
        "unrolled-loss",
        [&](Tape& t, const std::vector<NodeId>& p) {
          const ProposalGraph graph = proposal_graph_from_nodes(t, proposal, p);
          return build_loss_graph(t, graph, proposal, *model, measurements, 3, noise_key,
                                  nullptr, /*detach_between_steps=*/false)
              .log_weight_sum;
        },
        params));
    results.push_back(grad_case(
        "unrolled-objective",
        [&](Tape& t, const std::vector<NodeId>& p) {
          const ProposalGraph graph = proposal_graph_from_nodes(t, proposal, p);
          return build_loss_graph(t, graph, proposal, *model, measurements, 3, noise_key,
                                  nullptr, /*detach_between_steps=*/false)
              .objective;
        },
        params));
  }
  return results;
}

std::vector<CheckResult> run_selftest_suite(std::uint64_t seed) {
  std::vector<CheckResult> results = run_gradcheck_suite(seed);
  const std::unique_ptr<LinearGaussianModel> model = make_toy_model();

  {
    // ESS stays within [1, K] along a whole bootstrap run.
    CheckResult check{"ess-range", 0.0, 1e-9, false};
    const std::size_t k_count = 50;
    GaussianStream sim = StreamKey(seed).child(stream_tag::kTestSimulation).child(1).stream();
    const Trajectory traj = simulate(*model, 10, sim);
    const BootstrapProposal bootstrap(*model);
    const FilterResult result = run_filter(*model, bootstrap, traj.measurements, k_count, false,
                                           StreamKey(seed).child(stream_tag::kFilterRun));
    for (const double ess : result.ess) {
      check.value = std::max(check.value, 1.0 - ess);
      check.value = std::max(check.value, ess - static_cast<double>(k_count));
    }
    check.value = std::max(check.value, 0.0);
    check.pass = check.value < check.threshold;
    results.push_back(check);
  }
  {
    // Resampling leaves every weight at exactly 1/K.
    CheckResult check{"resample-weight-reset", 0.0, 1e-12, false};
    ParticleEnsemble ensemble = make_ensemble(8);
    GaussianStream rng(StreamKey(seed).child(stream_tag::kResample).value());
    const BootstrapProposal bootstrap(*model);
    GaussianStream sim = StreamKey(seed).child(stream_tag::kTestSimulation).child(2).stream();
    const Trajectory traj = simulate(*model, 1, sim);
    sis_step(ensemble, *model, bootstrap, traj.measurements[0],
             StreamKey(seed).child(stream_tag::kFilterRun).child(0));
    resample(ensemble, rng);
    const double uniform = -std::log(8.0);
    for (const double lw : ensemble.log_weights) {
      check.value = std::max(check.value, std::abs(lw - uniform));
    }
    check.pass = check.value < check.threshold;
    results.push_back(check);
  }
  {
    // Every particle gets the same weight increment under the
    // minimum-degeneracy proposal at t = 0.
    CheckResult check{"mindeg-constant-increment", 0.0, 1e-10, false};
    ParticleEnsemble ensemble = make_ensemble(100);
    const OptimalGaussianProposal mindeg(*model);
    GaussianStream sim = StreamKey(seed).child(stream_tag::kTestSimulation).child(3).stream();
    const Trajectory traj = simulate(*model, 1, sim);
    sis_step(ensemble, *model, mindeg, traj.measurements[0],
             StreamKey(seed).child(stream_tag::kFilterRun).child(1));
    for (const double lw : ensemble.log_weights) {
      check.value = std::max(check.value, std::abs(lw - ensemble.log_weights[0]));
    }
    check.pass = check.value < check.threshold;
    results.push_back(check);
  }
  {
    // J never exceeds -T*K*log K, and zero shared noise attains it.
    const LearnedProposal proposal = make_toy_proposal(seed + 2);
    GaussianStream sim = StreamKey(seed).child(stream_tag::kTestSimulation).child(4).stream();
    const std::vector<Vector> measurements = simulate(*model, 2, sim).measurements;
    const double bound = -2.0 * 3.0 * std::log(3.0);

    CheckResult upper{"loss-upper-bound", 0.0, 1e-9, false};
    {
      Tape tape;
      const LossGraph lg = build_loss_graph(tape, proposal, *model, measurements, 3,
                                            StreamKey(seed).child(stream_tag::kTraining));
      upper.value = tape.value(lg.log_weight_sum)(0, 0) - bound;
      upper.pass = upper.value < upper.threshold;
    }
    results.push_back(upper);

    CheckResult attain{"loss-bound-attainment", 0.0, 1e-9, false};
    {
      Tape tape;
      const Matrix zero_noise(2, 1, 0.0);
      const LossGraph lg =
          build_loss_graph(tape, proposal, *model, measurements, 3,
                           StreamKey(seed).child(stream_tag::kTraining), &zero_noise);
      attain.value = std::abs(tape.value(lg.log_weight_sum)(0, 0) - bound);
      attain.pass = attain.value < attain.threshold;
    }
    results.push_back(attain);
  }
  {
    // Scalar Kalman update with every model quantity 1 and y0 = 2:
    // m = 1.5, P = 0.5.
    CheckResult check{"kalman-scalar-update", 0.0, 1e-12, false};
    const Matrix one(1, 1, 1.0);
    const LinearGaussianModel scalar(one, one, Vector{1.0}, one, one, one);
    const std::vector<KalmanState> states = kalman_filter(scalar, {Vector{2.0}});
    check.value = std::max(std::abs(states[0].mean[0] - 1.5), std::abs(states[0].cov(0, 0) - 0.5));
    check.pass = check.value < check.threshold;
    results.push_back(check);
  }
  {
    // Identical keys give bit-identical estimates.
    CheckResult check{"filter-determinism", 0.0, 1e-300, false};
    GaussianStream sim = StreamKey(seed).child(stream_tag::kTestSimulation).child(5).stream();
    const Trajectory traj = simulate(*model, 6, sim);
    const BootstrapProposal bootstrap(*model);
    const StreamKey run_key = StreamKey(seed).child(stream_tag::kFilterRun).child(2);
    const FilterResult a = run_filter(*model, bootstrap, traj.measurements, 20, true, run_key);
    const FilterResult b = run_filter(*model, bootstrap, traj.measurements, 20, true, run_key);
    for (std::size_t t = 0; t < a.estimates.size(); ++t) {
      check.value = std::max(check.value, norm(subtract(a.estimates[t], b.estimates[t])));
    }
    check.pass = check.value < check.threshold;
    results.push_back(check);
  }
  return results;
}

}  // namespace sispf
