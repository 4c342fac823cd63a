#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sispf/autodiff.hpp"
#include "sispf/linalg.hpp"
#include "sispf/rng.hpp"

namespace sispf {

// Hidden Markov model interface. Samplers draw from the true process; the
// log-density methods report the model the *filter assumes*, which for the
// uniform scenario deliberately differs from the simulator (model mismatch).
// Graph variants build the same densities on a tape so the training loss can
// differentiate through them; graph and plain values agree to the last bit.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::size_t state_dim() const = 0;
  virtual std::size_t meas_dim() const = 0;
  virtual const Vector& initial_mean() const = 0;

  virtual Vector sample_initial(RandomStream& rng) const = 0;
  virtual Vector sample_transition(const Vector& x_prev, RandomStream& rng) const = 0;
  virtual Vector sample_measurement(const Vector& x, RandomStream& rng) const = 0;

  virtual double log_initial_density(const Vector& x) const = 0;
  virtual double log_transition_density(const Vector& x, const Vector& x_prev) const = 0;
  virtual double log_measurement_density(const Vector& y, const Vector& x) const = 0;

  virtual NodeId log_initial_density_node(Tape& tape, NodeId x) const = 0;
  virtual NodeId log_transition_density_node(Tape& tape, NodeId x, NodeId x_prev) const = 0;
  virtual NodeId log_measurement_density_node(Tape& tape, NodeId y, NodeId x) const = 0;
};

// Gaussian state-space family: x_t = mean_v(x_{t-1}) + v_t, y_t = C x_t + w_t
// with v, w, x_0 Gaussian. The transition mean hook distinguishes the linear
// (A x) and nonlinear (|A x| entrywise) members.
class GaussianStateSpace : public Model {
 public:
  GaussianStateSpace(Matrix a, Matrix c_meas, Vector mu0, Matrix sigma0, Matrix sigma_v,
                     Matrix sigma_w);

  std::size_t state_dim() const override { return mu0_.dim(); }
  std::size_t meas_dim() const override { return c_meas_.rows(); }
  const Vector& initial_mean() const override { return mu0_; }

  const Matrix& a() const { return a_; }
  const Matrix& c_meas() const { return c_meas_; }
  const Matrix& sigma0() const { return sigma0_; }
  const Matrix& sigma_v() const { return sigma_v_; }
  const Matrix& sigma_w() const { return sigma_w_; }
  const CholeskyFactor& chol0() const { return chol0_; }
  const CholeskyFactor& chol_v() const { return chol_v_; }
  const CholeskyFactor& chol_w() const { return chol_w_; }

  virtual Vector transition_mean(const Vector& x_prev) const;
  virtual NodeId transition_mean_node(Tape& tape, NodeId x_prev) const;

  Vector sample_initial(RandomStream& rng) const override;
  Vector sample_transition(const Vector& x_prev, RandomStream& rng) const override;
  Vector sample_measurement(const Vector& x, RandomStream& rng) const override;

  double log_initial_density(const Vector& x) const override;
  double log_transition_density(const Vector& x, const Vector& x_prev) const override;
  double log_measurement_density(const Vector& y, const Vector& x) const override;

  NodeId log_initial_density_node(Tape& tape, NodeId x) const override;
  NodeId log_transition_density_node(Tape& tape, NodeId x, NodeId x_prev) const override;
  NodeId log_measurement_density_node(Tape& tape, NodeId y, NodeId x) const override;

 private:
  Matrix a_;
  Matrix c_meas_;
  Vector mu0_;
  Matrix sigma0_;
  Matrix sigma_v_;
  Matrix sigma_w_;
  CholeskyFactor chol0_;
  CholeskyFactor chol_v_;
  CholeskyFactor chol_w_;
};

class LinearGaussianModel final : public GaussianStateSpace {
 public:
  using GaussianStateSpace::GaussianStateSpace;
};

class NonlinearGaussianModel final : public GaussianStateSpace {
 public:
  using GaussianStateSpace::GaussianStateSpace;
  Vector transition_mean(const Vector& x_prev) const override;
  NodeId transition_mean_node(Tape& tape, NodeId x_prev) const override;
};

// Simulates with uniform noise (entrywise, moment-matched to the declared
// covariances) while the inherited density methods keep reporting the assumed
// Gaussian model with Sigma_v = sigma^2 I, Sigma_w = sigma^2 I, Sigma_0 = I.
class LinearUniformModel final : public GaussianStateSpace {
 public:
  LinearUniformModel(Matrix a, Matrix c_meas, Vector mu0, double sigma);

  double sigma() const { return sigma_; }

  Vector sample_initial(RandomStream& rng) const override;
  Vector sample_transition(const Vector& x_prev, RandomStream& rng) const override;
  Vector sample_measurement(const Vector& x, RandomStream& rng) const override;

 private:
  double sigma_;
};

enum class ScenarioKind { kLinear, kNonlinear, kUniform };

std::string scenario_name(ScenarioKind kind);
ScenarioKind scenario_from_name(const std::string& name);

struct ScenarioConfig {
  std::size_t state_dim = 10;  // N
  std::size_t meas_dim = 8;    // M
  std::size_t horizon = 12;    // T
  double snr_db = 10.0;
  std::uint64_t seed = 1;
  ScenarioKind scenario = ScenarioKind::kLinear;
};

// Adjacency matrix (0/1, symmetric, zero diagonal) of the Delaunay
// triangulation of the given points, by exhaustive empty-circumcircle testing.
// Throws DegenerateGeometry when the points are too close to a degenerate
// configuration (duplicates, near-cocircular quadruples, all collinear).
Matrix delaunay_adjacency(const std::vector<std::pair<double, double>>& points);

// Draws the system of §4: A from a random planar graph normalized to spectral
// norm 1, C_meas with two unit entries per row at distinct node pairs, noise
// scaled to the requested SNR. A and C_meas depend only on cfg.seed, never on
// snr_db, so SNR sweeps vary the noise scale alone.
std::unique_ptr<GaussianStateSpace> generate_scenario(const ScenarioConfig& cfg);

struct Trajectory {
  std::vector<Vector> states;
  std::vector<Vector> measurements;
};

// Ancestral sampling for t = 0..horizon-1 (with a measurement at every step,
// including t = 0).
Trajectory simulate(const Model& model, std::size_t horizon, RandomStream& rng);

}  // namespace sispf
