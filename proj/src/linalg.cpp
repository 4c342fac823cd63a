#include "sispf/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sispf {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void require(bool ok, const char* what) {
  if (!ok) throw DimensionMismatch(what);
}

}  // namespace

bool Vector::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows.begin() == rows.end() ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    require(r.size() == cols_, "ragged initializer for Matrix");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::column(const Vector& v) {
  Matrix m(v.dim(), 1);
  for (std::size_t i = 0; i < v.dim(); ++i) m(i, 0) = v[i];
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Vector Matrix::as_vector() const {
  require(cols_ == 1, "as_vector requires a single-column matrix");
  Vector v(rows_);
  for (std::size_t i = 0; i < rows_; ++i) v[i] = data_[i];
  return v;
}

Vector add(const Vector& a, const Vector& b) {
  require(a.dim() == b.dim(), "vector add: dimension mismatch");
  Vector out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] + b[i];
  return out;
}

Vector subtract(const Vector& a, const Vector& b) {
  require(a.dim() == b.dim(), "vector subtract: dimension mismatch");
  Vector out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] - b[i];
  return out;
}

Vector scale(const Vector& a, double s) {
  Vector out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] * s;
  return out;
}

double dot(const Vector& a, const Vector& b) {
  require(a.dim() == b.dim(), "dot: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(const Vector& a) { return std::sqrt(dot(a, a)); }

Matrix add(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "matrix add: shape mismatch");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "matrix subtract: shape mismatch");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

Matrix scale(const Matrix& a, double s) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * s;
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

namespace {

// Dot product with four independent accumulators. The fixed association order
// keeps results bit-reproducible while breaking the FP add latency chain that
// a naive loop would serialize on (the compiler cannot reassociate IEEE adds).
double unrolled_dot(const double* a, const double* b, std::size_t n) {
  double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    acc0 += a[j] * b[j];
    acc1 += a[j + 1] * b[j + 1];
    acc2 += a[j + 2] * b[j + 2];
    acc3 += a[j + 3] * b[j + 3];
  }
  for (; j < n; ++j) acc0 += a[j] * b[j];
  return (acc0 + acc1) + (acc2 + acc3);
}

}  // namespace

Matrix multiply(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  if (b.cols() == 1) {
    // Single-column case takes the matvec kernel so that graph-built and plain
    // computations of A·x agree bit for bit.
    for (std::size_t i = 0; i < a.rows(); ++i)
      out(i, 0) = unrolled_dot(a.row(i), b.data(), a.cols());
    return out;
  }
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Vector matvec(const Matrix& a, const Vector& x) {
  require(a.cols() == x.dim(), "matvec: dimension mismatch");
  Vector out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) out[i] = unrolled_dot(a.row(i), x.data(), a.cols());
  return out;
}

double trace(const Matrix& a) {
  require(a.rows() == a.cols(), "trace: matrix not square");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) acc += a(i, i);
  return acc;
}

double frobenius_norm(const Matrix& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * a.data()[i];
  return std::sqrt(acc);
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i]));
  return m;
}

void symmetrize_in_place(Matrix& a) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double v = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = v;
      a(j, i) = v;
    }
  }
}

namespace {

// Classical Cholesky of m + jitter*I; returns false on a nonpositive pivot.
bool try_factor(const Matrix& m, double jitter, Matrix& lower) {
  const std::size_t n = m.rows();
  lower = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = m(i, j);
      if (i == j) acc += jitter;
      for (std::size_t k = 0; k < j; ++k) acc -= lower(i, k) * lower(j, k);
      if (i == j) {
        if (!(acc > 0.0)) return false;
        lower(i, i) = std::sqrt(acc);
      } else {
        lower(i, j) = acc / lower(j, j);
      }
    }
  }
  return true;
}

}  // namespace

CholeskyFactor cholesky(const Matrix& m, double base_jitter) {
  require(m.rows() == m.cols(), "cholesky: matrix not square");
  const std::size_t n = m.rows();
  const double scale = std::max(1.0, max_abs(m));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (std::abs(m(i, j) - m(j, i)) > 1e-10 * scale) {
        throw NotSymmetric("cholesky: input is not symmetric");
      }
    }
  }

  const double tr = trace(m);
  const double cap = 1e-2 * tr / static_cast<double>(n);
  const double floor = 1e-12 * tr / static_cast<double>(n);

  CholeskyFactor out;
  double jitter = base_jitter;
  while (true) {
    if (try_factor(m, jitter, out.lower)) {
      out.jitter_used = jitter;
      return out;
    }
    const double next = jitter > 0.0 ? jitter * 10.0 : floor;
    if (!(next > jitter) || next > cap) {
      throw JitterCapExceeded("cholesky: jitter cap exceeded (badly conditioned covariance)");
    }
    jitter = next;
  }
}

Vector forward_substitute(const Matrix& lower, const Vector& b) {
  require(lower.rows() == lower.cols() && lower.rows() == b.dim(),
          "forward_substitute: dimension mismatch");
  const std::size_t n = b.dim();
  Vector y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = b[i];
    const double* row = lower.row(i);
    for (std::size_t j = 0; j < i; ++j) acc -= row[j] * y[j];
    y[i] = acc / row[i];
  }
  return y;
}

Vector back_substitute_transposed(const Matrix& lower, const Vector& b) {
  require(lower.rows() == lower.cols() && lower.rows() == b.dim(),
          "back_substitute: dimension mismatch");
  const std::size_t n = b.dim();
  Vector x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double acc = b[ii];
    for (std::size_t j = ii + 1; j < n; ++j) acc -= lower(j, ii) * x[j];
    x[ii] = acc / lower(ii, ii);
  }
  return x;
}

Matrix spd_inverse(const CholeskyFactor& chol) {
  const std::size_t n = chol.lower.rows();
  Matrix inv(n, n);
  Vector e(n);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = 0; i < n; ++i) e[i] = (i == c) ? 1.0 : 0.0;
    const Vector col = back_substitute_transposed(chol.lower, forward_substitute(chol.lower, e));
    for (std::size_t i = 0; i < n; ++i) inv(i, c) = col[i];
  }
  symmetrize_in_place(inv);
  return inv;
}

double spectral_norm(const Matrix& m) {
  require(m.rows() == m.cols(), "spectral_norm: matrix not square");
  const std::size_t n = m.rows();
  if (n == 0) return 0.0;

  // Power iteration on m^T m. The Gram product is formed once up front.
  const Matrix gram = multiply(transpose(m), m);
  Vector v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  double lambda = 0.0;
  for (int iter = 0; iter < 200; ++iter) {
    const Vector w = matvec(gram, v);
    const double wnorm = norm(w);
    if (wnorm == 0.0) return 0.0;
    const double rayleigh = dot(v, w);
    v = scale(w, 1.0 / wnorm);
    if (iter > 0 && std::abs(rayleigh - lambda) <= 1e-12 * std::max(std::abs(rayleigh), 1e-300)) {
      lambda = rayleigh;
      break;
    }
    lambda = rayleigh;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

double mvn_log_density(const Vector& x, const Vector& mean, const CholeskyFactor& chol) {
  if (x.dim() != mean.dim() || x.dim() != chol.lower.rows()) {
    throw DimensionMismatch("mvn_log_density: dimension mismatch");
  }
  const std::size_t n = x.dim();
  const Vector u = forward_substitute(chol.lower, subtract(x, mean));
  double log_det = 0.0;
  for (std::size_t i = 0; i < n; ++i) log_det += std::log(chol.lower(i, i));
  return -0.5 * dot(u, u) - log_det - 0.5 * static_cast<double>(n) * std::log(kTwoPi);
}

MvnDraw sample_mvn(const Vector& mean, const CholeskyFactor& chol, RandomStream& rng) {
  if (mean.dim() != chol.lower.rows()) {
    throw DimensionMismatch("sample_mvn: dimension mismatch");
  }
  const std::size_t n = mean.dim();
  MvnDraw draw;
  draw.noise = Vector(n);
  for (std::size_t i = 0; i < n; ++i) draw.noise[i] = rng.normal();
  draw.value = Vector(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = mean[i];
    const double* row = chol.lower.row(i);
    for (std::size_t j = 0; j <= i; ++j) acc += row[j] * draw.noise[j];
    draw.value[i] = acc;
  }
  return draw;
}

Matrix random_covariance(std::size_t dim, double target_spectral_norm, RandomStream& rng) {
  Matrix g(dim, dim);
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Matrix cov = multiply(g, transpose(g));
  // A square Wishart factor G G^T has eigenvalues arbitrarily close to zero,
  // which makes the precision (and every log-density built from it) blow up.
  // A trace-proportional ridge keeps the condition number around 20 so the
  // ensemble stays "random" without being nearly singular.
  const double ridge = 0.25 * trace(cov) / static_cast<double>(dim);
  for (std::size_t i = 0; i < dim; ++i) cov(i, i) += ridge;
  const double s = spectral_norm(cov);
  return scale(cov, target_spectral_norm / s);
}

}  // namespace sispf
