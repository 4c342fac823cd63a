#include "sispf/models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace sispf {

namespace {

constexpr double kSqrt3 = 1.7320508075688772935274463415059;

}  // namespace

GaussianStateSpace::GaussianStateSpace(Matrix a, Matrix c_meas, Vector mu0, Matrix sigma0,
                                       Matrix sigma_v, Matrix sigma_w)
    : a_(std::move(a)),
      c_meas_(std::move(c_meas)),
      mu0_(std::move(mu0)),
      sigma0_(std::move(sigma0)),
      sigma_v_(std::move(sigma_v)),
      sigma_w_(std::move(sigma_w)) {
  const std::size_t n = mu0_.dim();
  const std::size_t m = c_meas_.rows();
  if (a_.rows() != n || a_.cols() != n || c_meas_.cols() != n || sigma0_.rows() != n ||
      sigma_v_.rows() != n || sigma_w_.rows() != m) {
    throw DimensionMismatch("GaussianStateSpace: inconsistent dimensions");
  }
  chol0_ = cholesky(sigma0_, 0.0);
  chol_v_ = cholesky(sigma_v_, 0.0);
  chol_w_ = cholesky(sigma_w_, 0.0);
}

Vector GaussianStateSpace::transition_mean(const Vector& x_prev) const {
  return matvec(a_, x_prev);
}

NodeId GaussianStateSpace::transition_mean_node(Tape& tape, NodeId x_prev) const {
  return tape.matmul(tape.constant(a_), x_prev);
}

Vector GaussianStateSpace::sample_initial(RandomStream& rng) const {
  return sample_mvn(mu0_, chol0_, rng).value;
}

Vector GaussianStateSpace::sample_transition(const Vector& x_prev, RandomStream& rng) const {
  return sample_mvn(transition_mean(x_prev), chol_v_, rng).value;
}

Vector GaussianStateSpace::sample_measurement(const Vector& x, RandomStream& rng) const {
  return sample_mvn(matvec(c_meas_, x), chol_w_, rng).value;
}

double GaussianStateSpace::log_initial_density(const Vector& x) const {
  return mvn_log_density(x, mu0_, chol0_);
}

double GaussianStateSpace::log_transition_density(const Vector& x, const Vector& x_prev) const {
  return mvn_log_density(x, transition_mean(x_prev), chol_v_);
}

double GaussianStateSpace::log_measurement_density(const Vector& y, const Vector& x) const {
  return mvn_log_density(y, matvec(c_meas_, x), chol_w_);
}

NodeId GaussianStateSpace::log_initial_density_node(Tape& tape, NodeId x) const {
  return mvn_log_density_node(tape, x, tape.constant(Matrix::column(mu0_)),
                              tape.constant(chol0_.lower));
}

NodeId GaussianStateSpace::log_transition_density_node(Tape& tape, NodeId x,
                                                       NodeId x_prev) const {
  return mvn_log_density_node(tape, x, transition_mean_node(tape, x_prev),
                              tape.constant(chol_v_.lower));
}

NodeId GaussianStateSpace::log_measurement_density_node(Tape& tape, NodeId y, NodeId x) const {
  NodeId mean = tape.matmul(tape.constant(c_meas_), x);
  return mvn_log_density_node(tape, y, mean, tape.constant(chol_w_.lower));
}

Vector NonlinearGaussianModel::transition_mean(const Vector& x_prev) const {
  Vector mean = matvec(a(), x_prev);
  for (std::size_t i = 0; i < mean.dim(); ++i) mean[i] = std::abs(mean[i]);
  return mean;
}

NodeId NonlinearGaussianModel::transition_mean_node(Tape& tape, NodeId x_prev) const {
  return tape.abs(tape.matmul(tape.constant(a()), x_prev));
}

LinearUniformModel::LinearUniformModel(Matrix a, Matrix c_meas, Vector mu0, double sigma)
    // c_meas and mu0 are passed by copy below because the remaining arguments
    // read their sizes and argument evaluation order is unspecified.
    : GaussianStateSpace(std::move(a), c_meas, mu0, Matrix::identity(mu0.dim()),
                         scale(Matrix::identity(mu0.dim()), sigma * sigma),
                         scale(Matrix::identity(c_meas.rows()), sigma * sigma)),
      sigma_(sigma) {}

Vector LinearUniformModel::sample_initial(RandomStream& rng) const {
  // Entrywise uniform with mean mu0_i and unit variance: support mu0_i ± √3.
  Vector x(state_dim());
  for (std::size_t i = 0; i < x.dim(); ++i)
    x[i] = initial_mean()[i] + kSqrt3 * (2.0 * rng.uniform() - 1.0);
  return x;
}

Vector LinearUniformModel::sample_transition(const Vector& x_prev, RandomStream& rng) const {
  Vector x = transition_mean(x_prev);
  for (std::size_t i = 0; i < x.dim(); ++i)
    x[i] += sigma_ * kSqrt3 * (2.0 * rng.uniform() - 1.0);
  return x;
}

Vector LinearUniformModel::sample_measurement(const Vector& x, RandomStream& rng) const {
  Vector y = matvec(c_meas(), x);
  for (std::size_t i = 0; i < y.dim(); ++i)
    y[i] += sigma_ * kSqrt3 * (2.0 * rng.uniform() - 1.0);
  return y;
}

namespace {

// In-circle classification with an explicit ambiguity band: values within
// `tol` of the circle are neither inside nor outside, and the caller redraws.
struct Circumcircle {
  double cx, cy, r2;
  bool valid;
};

Circumcircle circumcircle(const std::pair<double, double>& p1, const std::pair<double, double>& p2,
                          const std::pair<double, double>& p3) {
  const double d = 2.0 * (p1.first * (p2.second - p3.second) +
                          p2.first * (p3.second - p1.second) +
                          p3.first * (p1.second - p2.second));
  if (std::abs(d) < 1e-12) return {0.0, 0.0, 0.0, false};
  const double q1 = p1.first * p1.first + p1.second * p1.second;
  const double q2 = p2.first * p2.first + p2.second * p2.second;
  const double q3 = p3.first * p3.first + p3.second * p3.second;
  Circumcircle c;
  c.cx = (q1 * (p2.second - p3.second) + q2 * (p3.second - p1.second) +
          q3 * (p1.second - p2.second)) /
         d;
  c.cy = (q1 * (p3.first - p2.first) + q2 * (p1.first - p3.first) +
          q3 * (p2.first - p1.first)) /
         d;
  const double dx = p1.first - c.cx;
  const double dy = p1.second - c.cy;
  c.r2 = dx * dx + dy * dy;
  c.valid = true;
  return c;
}

bool connected(const Matrix& adjacency) {
  const std::size_t n = adjacency.rows();
  std::vector<char> seen(n, 0);
  std::vector<std::size_t> stack{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    const std::size_t u = stack.back();
    stack.pop_back();
    for (std::size_t v = 0; v < n; ++v) {
      if (adjacency(u, v) != 0.0 && !seen[v]) {
        seen[v] = 1;
        ++count;
        stack.push_back(v);
      }
    }
  }
  return count == n;
}

}  // namespace

Matrix delaunay_adjacency(const std::vector<std::pair<double, double>>& points) {
  const std::size_t n = points.size();
  if (n < 3) throw DegenerateGeometry("delaunay_adjacency: need at least 3 points");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = points[i].first - points[j].first;
      const double dy = points[i].second - points[j].second;
      if (dx * dx + dy * dy < 1e-18) {
        throw DegenerateGeometry("delaunay_adjacency: duplicate points");
      }
    }
  }

  constexpr double kBand = 1e-12;
  Matrix adjacency(n, n);
  bool any_triangle = false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      for (std::size_t k = j + 1; k < n; ++k) {
        const Circumcircle c = circumcircle(points[i], points[j], points[k]);
        if (!c.valid) continue;  // collinear triple: no triangle
        bool empty = true;
        for (std::size_t q = 0; q < n && empty; ++q) {
          if (q == i || q == j || q == k) continue;
          const double dx = points[q].first - c.cx;
          const double dy = points[q].second - c.cy;
          const double dist2 = dx * dx + dy * dy;
          if (std::abs(dist2 - c.r2) <= kBand) {
            throw DegenerateGeometry("delaunay_adjacency: near-cocircular points");
          }
          if (dist2 < c.r2) empty = false;
        }
        if (empty) {
          any_triangle = true;
          adjacency(i, j) = adjacency(j, i) = 1.0;
          adjacency(j, k) = adjacency(k, j) = 1.0;
          adjacency(i, k) = adjacency(k, i) = 1.0;
        }
      }
    }
  }
  if (!any_triangle) throw DegenerateGeometry("delaunay_adjacency: all points collinear");
  return adjacency;
}

std::string scenario_name(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kLinear: return "linear";
    case ScenarioKind::kNonlinear: return "nonlinear";
    case ScenarioKind::kUniform: return "uniform";
  }
  throw std::invalid_argument("scenario_name: unknown scenario");
}

ScenarioKind scenario_from_name(const std::string& name) {
  if (name == "linear") return ScenarioKind::kLinear;
  if (name == "nonlinear") return ScenarioKind::kNonlinear;
  if (name == "uniform") return ScenarioKind::kUniform;
  throw std::invalid_argument("unknown scenario: " + name);
}

std::unique_ptr<GaussianStateSpace> generate_scenario(const ScenarioConfig& cfg) {
  if (cfg.state_dim == 0 || cfg.meas_dim == 0 || cfg.horizon == 0) {
    throw std::invalid_argument("generate_scenario: dimensions must be positive");
  }
  if (cfg.snr_db < 0.0 || cfg.snr_db > 10.0) {
    throw std::invalid_argument("generate_scenario: snr_db outside the swept range [0, 10]");
  }
  const std::size_t n = cfg.state_dim;
  const std::size_t m = cfg.meas_dim;
  if (m > n * (n - 1) / 2) {
    throw std::invalid_argument("generate_scenario: more measurement rows than node pairs");
  }

  const StreamKey root(cfg.seed);
  GaussianStream geometry = root.child(stream_tag::kScenarioGeometry).stream();

  Matrix adjacency;
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    std::vector<std::pair<double, double>> points(n);
    for (auto& p : points) {
      p.first = geometry.uniform();
      p.second = geometry.uniform();
    }
    try {
      adjacency = delaunay_adjacency(points);
      ok = connected(adjacency);
    } catch (const DegenerateGeometry&) {
      ok = false;
    }
  }
  if (!ok) throw DegenerateGeometry("generate_scenario: no valid point set in 100 attempts");

  const Matrix a = scale(adjacency, 1.0 / spectral_norm(adjacency));

  // All unordered node pairs, shuffled; the first M become measurement rows.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  for (std::size_t i = pairs.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(geometry.uniform() * static_cast<double>(i + 1));
    std::swap(pairs[i], pairs[std::min(j, i)]);
  }
  Matrix c_meas(m, n);
  for (std::size_t r = 0; r < m; ++r) {
    c_meas(r, pairs[r].first) = 1.0;
    c_meas(r, pairs[r].second) = 1.0;
  }

  const Vector mu0(n, 1.0);
  const double snr_linear = std::pow(10.0, cfg.snr_db / 10.0);
  const double mu0_norm2 = static_cast<double>(n);  // ‖mu0‖² for the all-ones prior mean

  if (cfg.scenario == ScenarioKind::kUniform) {
    const double sigma = std::sqrt(mu0_norm2 / snr_linear);
    return std::make_unique<LinearUniformModel>(a, c_meas, mu0, sigma);
  }

  const double noise_norm = std::sqrt(mu0_norm2 / snr_linear);
  GaussianStream cov_stream = root.child(stream_tag::kScenarioCovariance).stream();
  Matrix sigma_v = random_covariance(n, noise_norm, cov_stream);
  Matrix sigma_w = random_covariance(m, noise_norm, cov_stream);
  Matrix sigma0 = Matrix::identity(n);

  if (cfg.scenario == ScenarioKind::kNonlinear) {
    return std::make_unique<NonlinearGaussianModel>(a, c_meas, mu0, std::move(sigma0),
                                                    std::move(sigma_v), std::move(sigma_w));
  }
  return std::make_unique<LinearGaussianModel>(a, c_meas, mu0, std::move(sigma0),
                                               std::move(sigma_v), std::move(sigma_w));
}

Trajectory simulate(const Model& model, std::size_t horizon, RandomStream& rng) {
  if (horizon == 0) throw std::invalid_argument("simulate: horizon must be at least 1");
  Trajectory out;
  out.states.reserve(horizon);
  out.measurements.reserve(horizon);
  Vector x = model.sample_initial(rng);
  out.measurements.push_back(model.sample_measurement(x, rng));
  out.states.push_back(std::move(x));
  for (std::size_t t = 1; t < horizon; ++t) {
    Vector next = model.sample_transition(out.states.back(), rng);
    out.measurements.push_back(model.sample_measurement(next, rng));
    out.states.push_back(std::move(next));
  }
  return out;
}

}  // namespace sispf
