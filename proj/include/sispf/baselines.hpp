#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "sispf/linalg.hpp"
#include "sispf/models.hpp"
#include "sispf/rng.hpp"

namespace sispf {

struct KalmanState {
  Vector mean;  // m_{t|t}
  Matrix cov;   // P_{t|t}
};

// Exact filtered posterior for a *linear* Gaussian model (the transition mean
// must be A x). t = 0 is an update of the prior (mu0, Sigma0); covariance
// updates use the Joseph-stabilized form.
std::vector<KalmanState> kalman_filter(const GaussianStateSpace& model,
                                       const std::vector<Vector>& measurements);

// The law-of-large-numbers reference: at each step, average `sample_count`
// draws from the exact filtered marginal N(m_{t|t}, P_{t|t}). For the identity
// test function this matches sampling whole posterior trajectories.
std::vector<Vector> lln_estimate(const GaussianStateSpace& model,
                                 const std::vector<Vector>& measurements,
                                 std::size_t sample_count, RandomStream& rng);

// Mean and covariance of the minimum-degeneracy proposal p(x_t|x_{t-1}, y_t)
// for t >= 1 (one-shot form; the filter module caches the factorizations).
std::pair<Vector, Matrix> optimal_proposal_params(const GaussianStateSpace& model,
                                                  const Vector& x_prev, const Vector& y_t);

}  // namespace sispf
