#include "sispf/filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace sispf {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

ParticleEnsemble make_ensemble(std::size_t particle_count) {
  ParticleEnsemble ensemble;
  ensemble.particle_count = particle_count;
  ensemble.trajectories.resize(particle_count);
  ensemble.log_weights.assign(particle_count, 0.0);
  return ensemble;
}

Proposal::Draw BootstrapProposal::sample(std::size_t t, const Vector& x_prev, const Vector& y,
                                         RandomStream& rng) const {
  (void)y;
  Draw draw;
  if (t == 0) {
    draw.state = sample_mvn(model_.initial_mean(), model_.chol0(), rng).value;
    draw.log_density = model_.log_initial_density(draw.state);
  } else {
    const Vector mean = model_.transition_mean(x_prev);
    draw.state = sample_mvn(mean, model_.chol_v(), rng).value;
    draw.log_density = mvn_log_density(draw.state, mean, model_.chol_v());
  }
  return draw;
}

OptimalGaussianProposal::OptimalGaussianProposal(const GaussianStateSpace& model)
    : model_(model) {
  const Matrix inv_v = spd_inverse(model.chol_v());
  const Matrix inv_w = spd_inverse(model.chol_w());
  const Matrix inv_0 = spd_inverse(model.chol0());
  const Matrix ct_inv_w = multiply(transpose(model.c_meas()), inv_w);  // N x M
  const Matrix gram = multiply(ct_inv_w, model.c_meas());              // CᵀΣ_w⁻¹C

  Matrix precision = add(inv_v, gram);
  symmetrize_in_place(precision);
  sigma_star_ = spd_inverse(cholesky(precision, 0.0));
  prior_gain_ = multiply(sigma_star_, inv_v);
  meas_gain_ = multiply(sigma_star_, ct_inv_w);
  chol_ = cholesky(sigma_star_, 0.0);

  Matrix precision0 = add(inv_0, gram);
  symmetrize_in_place(precision0);
  sigma_star_t0_ = spd_inverse(cholesky(precision0, 0.0));
  meas_gain_t0_ = multiply(sigma_star_t0_, ct_inv_w);
  prior_pull_t0_ = matvec(multiply(sigma_star_t0_, inv_0), model.initial_mean());
  chol_t0_ = cholesky(sigma_star_t0_, 0.0);
}

Vector OptimalGaussianProposal::mean_for(std::size_t t, const Vector& x_prev,
                                         const Vector& y) const {
  if (t == 0) {
    return add(prior_pull_t0_, matvec(meas_gain_t0_, y));
  }
  return add(matvec(prior_gain_, model_.transition_mean(x_prev)), matvec(meas_gain_, y));
}

Proposal::Draw OptimalGaussianProposal::sample(std::size_t t, const Vector& x_prev,
                                               const Vector& y, RandomStream& rng) const {
  const CholeskyFactor& chol = (t == 0) ? chol_t0_ : chol_;
  Draw draw;
  const Vector mean = mean_for(t, x_prev, y);
  draw.state = sample_mvn(mean, chol, rng).value;
  draw.log_density = mvn_log_density(draw.state, mean, chol);
  return draw;
}

Proposal::Draw LearnedProposalSampler::sample(std::size_t t, const Vector& x_prev,
                                              const Vector& y, RandomStream& rng) const {
  Vector mean;
  Matrix cov;
  proposal_moments(proposal_, t, x_prev, y, &mean, &cov);
  const double base_jitter = 1e-6 * trace(cov) / static_cast<double>(cov.rows());
  const CholeskyFactor chol = cholesky(cov, base_jitter);
  Draw draw;
  draw.state = sample_mvn(mean, chol, rng).value;
  draw.log_density = mvn_log_density(draw.state, mean, chol);
  return draw;
}

void sis_step(ParticleEnsemble& ensemble, const Model& model, const Proposal& proposal,
              const Vector& y_t, const StreamKey& step_key) {
  if (ensemble.particle_count == 0) throw DimensionMismatch("sis_step: empty ensemble");
  const std::size_t t = static_cast<std::size_t>(ensemble.time + 1);

  for (std::size_t k = 0; k < ensemble.particle_count; ++k) {
    GaussianStream stream = step_key.child(k).stream();
    const Vector& x_prev =
        (t == 0) ? model.initial_mean() : ensemble.trajectories[k].back();
    Proposal::Draw draw = proposal.sample(t, x_prev, y_t, stream);
    const double log_prior = (t == 0) ? model.log_initial_density(draw.state)
                                      : model.log_transition_density(draw.state, x_prev);
    const double log_meas = model.log_measurement_density(y_t, draw.state);
    double next = ensemble.log_weights[k] + (log_meas + log_prior - draw.log_density);
    // inf - inf from two degenerate densities counts as a dead particle.
    if (std::isnan(next)) next = kNegInf;
    ensemble.log_weights[k] = next;
    ensemble.trajectories[k].push_back(std::move(draw.state));
  }
  ensemble.time = static_cast<int>(t);

  bool any_alive = false;
  for (double lw : ensemble.log_weights) {
    if (lw > kNegInf) {
      any_alive = true;
      break;
    }
  }
  if (!any_alive) {
    throw AllWeightsDegenerate(
        "sis_step: every log-weight is -inf at t = " + std::to_string(t),
        static_cast<int>(t));
  }
}

std::vector<double> normalized_weights(const ParticleEnsemble& ensemble) {
  if (ensemble.log_weights.empty()) throw DimensionMismatch("normalized_weights: empty ensemble");
  double max_lw = kNegInf;
  for (double lw : ensemble.log_weights) max_lw = std::max(max_lw, lw);
  if (max_lw == kNegInf) {
    throw AllWeightsDegenerate("normalized_weights: every log-weight is -inf", ensemble.time);
  }
  double acc = 0.0;
  for (double lw : ensemble.log_weights) acc += std::exp(lw - max_lw);
  const double lse = max_lw + std::log(acc);
  std::vector<double> normalized(ensemble.log_weights.size());
  for (std::size_t k = 0; k < normalized.size(); ++k)
    normalized[k] = std::exp(ensemble.log_weights[k] - lse);
  return normalized;
}

double effective_sample_size(const std::vector<double>& normalized) {
  double sum_sq = 0.0;
  for (double w : normalized) sum_sq += w * w;
  return 1.0 / sum_sq;
}

double effective_sample_size(const ParticleEnsemble& ensemble) {
  return effective_sample_size(normalized_weights(ensemble));
}

void resample(ParticleEnsemble& ensemble, RandomStream& rng) {
  const std::vector<double> weights = normalized_weights(ensemble);
  const std::size_t k_count = ensemble.particle_count;
  std::vector<double> cdf(k_count);
  double acc = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) {
    acc += weights[k];
    cdf[k] = acc;
  }

  std::vector<std::vector<Vector>> offspring;
  offspring.reserve(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const std::size_t ancestor =
        std::min(static_cast<std::size_t>(it - cdf.begin()), k_count - 1);
    offspring.push_back(ensemble.trajectories[ancestor]);
  }
  ensemble.trajectories = std::move(offspring);
  ensemble.log_weights.assign(k_count, -std::log(static_cast<double>(k_count)));
}

Vector estimate_state(const ParticleEnsemble& ensemble, const std::vector<double>& weights) {
  const std::size_t dim = ensemble.trajectories.front().back().dim();
  Vector estimate(dim);
  for (std::size_t k = 0; k < ensemble.particle_count; ++k) {
    const Vector& state = ensemble.trajectories[k].back();
    for (std::size_t i = 0; i < dim; ++i) estimate[i] += weights[k] * state[i];
  }
  return estimate;
}

Vector estimate_state(const ParticleEnsemble& ensemble) {
  return estimate_state(ensemble, normalized_weights(ensemble));
}

FilterResult run_filter(const Model& model, const Proposal& proposal,
                        const std::vector<Vector>& measurements, std::size_t particle_count,
                        bool resampling, const StreamKey& run_key) {
  FilterResult result;
  ParticleEnsemble ensemble = make_ensemble(particle_count);
  const StreamKey step_keys = run_key.child(stream_tag::kFilterRun);
  const StreamKey resample_keys = run_key.child(stream_tag::kResample);
  const double threshold = static_cast<double>(particle_count) / 3.0;

  for (std::size_t t = 0; t < measurements.size(); ++t) {
    sis_step(ensemble, model, proposal, measurements[t], step_keys.child(t));
    std::vector<double> weights = normalized_weights(ensemble);
    result.estimates.push_back(estimate_state(ensemble, weights));
    result.ess.push_back(effective_sample_size(weights));
    result.weights.push_back(std::move(weights));
    if (resampling && result.ess.back() < threshold) {
      GaussianStream stream = resample_keys.child(t).stream();
      resample(ensemble, stream);
    }
  }
  return result;
}

}  // namespace sispf
