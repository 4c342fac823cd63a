#include "sispf/baselines.hpp"

#include <cstddef>

#include "sispf/filter.hpp"

namespace sispf {

namespace {

// X = S^{-1} B for SPD S given its Cholesky factor, columnwise.
Matrix spd_solve_columns(const CholeskyFactor& chol, const Matrix& b) {
  const std::size_t n = b.rows();
  Matrix x(n, b.cols());
  Vector col(n);
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) col[i] = b(i, c);
    const Vector solved = back_substitute_transposed(chol.lower, forward_substitute(chol.lower, col));
    for (std::size_t i = 0; i < n; ++i) x(i, c) = solved[i];
  }
  return x;
}

}  // namespace

std::vector<KalmanState> kalman_filter(const GaussianStateSpace& model,
                                       const std::vector<Vector>& measurements) {
  const std::size_t n = model.state_dim();
  const Matrix& a = model.a();
  const Matrix& c = model.c_meas();
  const Matrix identity = Matrix::identity(n);

  std::vector<KalmanState> states;
  states.reserve(measurements.size());

  Vector mean_pred;
  Matrix cov_pred;
  for (std::size_t t = 0; t < measurements.size(); ++t) {
    if (t == 0) {
      mean_pred = model.initial_mean();
      cov_pred = model.sigma0();
    } else {
      mean_pred = matvec(a, states.back().mean);
      cov_pred = add(multiply(multiply(a, states.back().cov), transpose(a)), model.sigma_v());
      symmetrize_in_place(cov_pred);
    }

    Matrix innovation_cov = add(multiply(multiply(c, cov_pred), transpose(c)), model.sigma_w());
    symmetrize_in_place(innovation_cov);
    CholeskyFactor chol_s;
    try {
      chol_s = cholesky(innovation_cov, 0.0);
    } catch (const JitterCapExceeded&) {
      throw SingularInnovationCovariance("kalman_filter: innovation covariance not PD");
    } catch (const NotSymmetric&) {
      throw SingularInnovationCovariance("kalman_filter: innovation covariance not symmetric");
    }

    // K = P Cᵀ S⁻¹, via Kᵀ = S⁻¹ C P.
    const Matrix gain = transpose(spd_solve_columns(chol_s, multiply(c, cov_pred)));

    const Vector innovation = subtract(measurements[t], matvec(c, mean_pred));
    KalmanState state;
    state.mean = add(mean_pred, matvec(gain, innovation));

    const Matrix shrink = subtract(identity, multiply(gain, c));  // I - KC
    state.cov = add(multiply(multiply(shrink, cov_pred), transpose(shrink)),
                    multiply(multiply(gain, model.sigma_w()), transpose(gain)));
    symmetrize_in_place(state.cov);
    states.push_back(std::move(state));
  }
  return states;
}

std::vector<Vector> lln_estimate(const GaussianStateSpace& model,
                                 const std::vector<Vector>& measurements,
                                 std::size_t sample_count, RandomStream& rng) {
  const std::vector<KalmanState> posterior = kalman_filter(model, measurements);
  std::vector<Vector> estimates;
  estimates.reserve(posterior.size());
  for (const KalmanState& state : posterior) {
    const CholeskyFactor chol = cholesky(state.cov, 0.0);
    Vector mean(state.mean.dim());
    for (std::size_t s = 0; s < sample_count; ++s) {
      const Vector draw = sample_mvn(state.mean, chol, rng).value;
      for (std::size_t i = 0; i < mean.dim(); ++i) mean[i] += draw[i];
    }
    estimates.push_back(scale(mean, 1.0 / static_cast<double>(sample_count)));
  }
  return estimates;
}

std::pair<Vector, Matrix> optimal_proposal_params(const GaussianStateSpace& model,
                                                  const Vector& x_prev, const Vector& y_t) {
  const OptimalGaussianProposal proposal(model);
  return {proposal.mean_for(1, x_prev, y_t), proposal.covariance()};
}

}  // namespace sispf
