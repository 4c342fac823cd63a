#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "sispf/errors.hpp"
#include "sispf/rng.hpp"

namespace sispf {

// Dense real vector. Entries are plain doubles; all library code assumes they
// stay finite unless a routine documents otherwise.
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  Vector(std::initializer_list<double> values) : data_(values) {}

  std::size_t dim() const { return data_.size(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool all_finite() const;

 private:
  std::vector<double> data_;
};

// Dense real matrix, row-major.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix column(const Vector& v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  bool all_finite() const;
  Vector as_vector() const;  // requires cols == 1

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Elementwise and product kernels.
Vector add(const Vector& a, const Vector& b);
Vector subtract(const Vector& a, const Vector& b);
Vector scale(const Vector& a, double s);
double dot(const Vector& a, const Vector& b);
double norm(const Vector& a);

Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix transpose(const Matrix& a);
Matrix multiply(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, const Vector& x);
double trace(const Matrix& a);
double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
void symmetrize_in_place(Matrix& a);

// Lower-triangular Cholesky factor of a symmetric PSD matrix, together with
// the diagonal jitter that had to be added before factorization succeeded.
struct CholeskyFactor {
  Matrix lower;
  double jitter_used = 0.0;
};

// Factor m + jitter*I = L L^T. Jitter starts at base_jitter and escalates
// tenfold until the factorization succeeds, capped at 1e-2 * trace(m) / dim.
// Throws NotSymmetric or JitterCapExceeded.
CholeskyFactor cholesky(const Matrix& m, double base_jitter);

// Solve L y = b (forward substitution) and L^T x = b (back substitution).
Vector forward_substitute(const Matrix& lower, const Vector& b);
Vector back_substitute_transposed(const Matrix& lower, const Vector& b);

// Inverse of the SPD matrix underlying a Cholesky factor, via columnwise solves.
Matrix spd_inverse(const CholeskyFactor& chol);

// Largest singular value via power iteration on m^T m: at most 200 iterations,
// early exit when the Rayleigh quotient's relative change drops below 1e-12.
double spectral_norm(const Matrix& m);

// log N(x; mean, L L^T) computed with one triangular solve.
double mvn_log_density(const Vector& x, const Vector& mean, const CholeskyFactor& chol);

// Sample mean + L*eta with eta iid standard normal; eta is returned alongside
// the sample because the reparametrization path needs it.
struct MvnDraw {
  Vector value;
  Vector noise;
};
MvnDraw sample_mvn(const Vector& mean, const CholeskyFactor& chol, RandomStream& rng);

// G G^T with G standard normal, rescaled so its spectral norm hits the target.
Matrix random_covariance(std::size_t dim, double target_spectral_norm, RandomStream& rng);

}  // namespace sispf
