#pragma once

#include <cstddef>
#include <vector>

#include "sispf/linalg.hpp"
#include "sispf/models.hpp"
#include "sispf/nn.hpp"
#include "sispf/rng.hpp"

namespace sispf {

// K weighted trajectories. Weights live in the log domain, unnormalized;
// they may be -inf (dead particle) but never NaN, and at least one stays
// finite (otherwise the updating step throws AllWeightsDegenerate).
struct ParticleEnsemble {
  std::size_t particle_count = 0;
  std::vector<std::vector<Vector>> trajectories;  // K x (time+1)
  std::vector<double> log_weights;
  int time = -1;  // last completed step; -1 before the first step
};

ParticleEnsemble make_ensemble(std::size_t particle_count);

// One-step proposal π(x_t | x_{t-1}, y_t). sample() must return the exact
// log-density of the distribution the state was drawn from. At t = 0 the
// filter passes the model's initial mean as x_prev.
class Proposal {
 public:
  struct Draw {
    Vector state;
    double log_density;
  };

  virtual ~Proposal() = default;
  virtual Draw sample(std::size_t t, const Vector& x_prev, const Vector& y,
                      RandomStream& rng) const = 0;
};

// Samples the assumed transition density itself (the initial density at
// t = 0). The weight increment then collapses to the measurement likelihood,
// which makes this the exact-cancellation test fixture.
class BootstrapProposal final : public Proposal {
 public:
  explicit BootstrapProposal(const GaussianStateSpace& model) : model_(model) {}
  Draw sample(std::size_t t, const Vector& x_prev, const Vector& y,
              RandomStream& rng) const override;

 private:
  const GaussianStateSpace& model_;
};

// The minimum-degeneracy proposal p(x_t | x_{t-1}, y_t) for (non)linear
// Gaussian models, in precision form:
//   Σ* = (Σ_v⁻¹ + CᵀΣ_w⁻¹C)⁻¹,  m* = Σ*(Σ_v⁻¹ m_prior + CᵀΣ_w⁻¹ y),
// with m_prior the model's transition mean. At t = 0 the same construction
// runs with (μ⁰, Σ⁰) in place of (m_prior, Σ_v). The covariances do not
// depend on x_prev or y, so they are factored once.
class OptimalGaussianProposal final : public Proposal {
 public:
  explicit OptimalGaussianProposal(const GaussianStateSpace& model);

  Draw sample(std::size_t t, const Vector& x_prev, const Vector& y,
              RandomStream& rng) const override;

  Vector mean_for(std::size_t t, const Vector& x_prev, const Vector& y) const;
  const Matrix& covariance() const { return sigma_star_; }
  const Matrix& covariance_t0() const { return sigma_star_t0_; }

 private:
  const GaussianStateSpace& model_;
  Matrix sigma_star_;
  Matrix sigma_star_t0_;
  Matrix prior_gain_;     // Σ* Σ_v⁻¹
  Matrix meas_gain_;      // Σ* CᵀΣ_w⁻¹
  Matrix meas_gain_t0_;   // Σ*₀ CᵀΣ_w⁻¹
  Vector prior_pull_t0_;  // Σ*₀ Σ⁰⁻¹ μ⁰
  CholeskyFactor chol_;
  CholeskyFactor chol_t0_;
};

// Samples N(μ_t(x_prev, y), Σ(x_prev, y)) from a LearnedProposal, factoring
// the symmetrized covariance under the 1e-6·trace/N jitter policy.
class LearnedProposalSampler final : public Proposal {
 public:
  explicit LearnedProposalSampler(const LearnedProposal& proposal) : proposal_(proposal) {}
  Draw sample(std::size_t t, const Vector& x_prev, const Vector& y,
              RandomStream& rng) const override;

 private:
  const LearnedProposal& proposal_;
};

// Advances the ensemble one step: sample, append, and update
//   log w_t = log w_{t-1} + log p(y_t|x_t) + log p(x_t|x_{t-1}) - log π(·)
// (initial density in place of the transition at t = 0). Particle k draws
// from step_key.child(k), so execution order never matters.
void sis_step(ParticleEnsemble& ensemble, const Model& model, const Proposal& proposal,
              const Vector& y_t, const StreamKey& step_key);

// Softmax of the log-weights via shifted logsumexp; sums to 1.
std::vector<double> normalized_weights(const ParticleEnsemble& ensemble);

double effective_sample_size(const std::vector<double>& normalized);
double effective_sample_size(const ParticleEnsemble& ensemble);

// Multinomial resampling: K ancestor draws with replacement proportional to
// the normalized weights; trajectories copied whole, weights reset to 1/K.
void resample(ParticleEnsemble& ensemble, RandomStream& rng);

// Eq. 5 estimate with f = identity of the latest state.
Vector estimate_state(const ParticleEnsemble& ensemble);
Vector estimate_state(const ParticleEnsemble& ensemble, const std::vector<double>& weights);

struct FilterResult {
  std::vector<Vector> estimates;             // per step, pre-resampling
  std::vector<double> ess;                   // per step, pre-resampling
  std::vector<std::vector<double>> weights;  // per step, normalized, pre-resampling
};

// Runs the filter over the whole measurement sequence. When resampling is on,
// the trigger is ESS < K/3, checked after estimates are recorded, so
// resampling only influences later steps.
FilterResult run_filter(const Model& model, const Proposal& proposal,
                        const std::vector<Vector>& measurements, std::size_t particle_count,
                        bool resampling, const StreamKey& run_key);

}  // namespace sispf
