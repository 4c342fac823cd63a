#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstddef>

#include "doctest.h"
#include "sispf/errors.hpp"
#include "sispf/linalg.hpp"
#include "sispf/rng.hpp"

using namespace sispf;

TEST_CASE("cholesky reproduces the hand-worked 2x2 factor") {
  Matrix m(2, 2);
  m(0, 0) = 4.0; m(0, 1) = 2.0;
  m(1, 0) = 2.0; m(1, 1) = 5.0;
  const CholeskyFactor f = cholesky(m, 0.0);
  CHECK(f.jitter_used == 0.0);
  CHECK(f.lower(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(f.lower(0, 1) == 0.0);
  CHECK(f.lower(1, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(f.lower(1, 1) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("cholesky rejects asymmetric input and escalates jitter on PSD input") {
  Matrix bad(2, 2);
  bad(0, 0) = 1.0; bad(0, 1) = 0.5;
  bad(1, 0) = 0.2; bad(1, 1) = 1.0;
  CHECK_THROWS_AS(cholesky(bad, 0.0), NotSymmetric);

  // Rank-one PSD matrix: exact factorization fails without jitter, so the
  // policy must add some and record it.
  Matrix rank1(2, 2);
  rank1(0, 0) = 1.0; rank1(0, 1) = 1.0;
  rank1(1, 0) = 1.0; rank1(1, 1) = 1.0;
  const CholeskyFactor f = cholesky(rank1, 0.0);
  CHECK(f.jitter_used > 0.0);
  // L L^T must reproduce the jittered matrix.
  const Matrix rebuilt = multiply(f.lower, transpose(f.lower));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      const double expect = rank1(i, j) + (i == j ? f.jitter_used : 0.0);
      CHECK(rebuilt(i, j) == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("spectral norm on diagonal and nilpotent matrices") {
  Matrix d(2, 2);
  d(0, 0) = 3.0; d(1, 1) = 1.0;
  CHECK(spectral_norm(d) == doctest::Approx(3.0).epsilon(1e-10));

  Matrix n(2, 2);
  n(0, 1) = 2.0;  // singular values {2, 0} although both eigenvalues are 0
  CHECK(spectral_norm(n) == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("mvn log density matches the explicit 2x2 formula") {
  Matrix cov(2, 2);
  cov(0, 0) = 4.0; cov(0, 1) = 2.0;
  cov(1, 0) = 2.0; cov(1, 1) = 5.0;
  const CholeskyFactor f = cholesky(cov, 0.0);
  const Vector x{1.0, 2.0};
  const Vector mean(2, 0.0);
  // det = 16, inv = [[5,-2],[-2,4]]/16, quadratic = 13/16.
  const double expect = -0.5 * (2.0 * std::log(2.0 * 3.14159265358979323846) +
                                std::log(16.0) + 13.0 / 16.0);
  CHECK(mvn_log_density(x, mean, f) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(-3.63042142521).epsilon(1e-9));
}

TEST_CASE("sample_mvn matches its target moments at CLT tolerances") {
  Matrix cov(2, 2);
  cov(0, 0) = 4.0; cov(0, 1) = 2.0;
  cov(1, 0) = 2.0; cov(1, 1) = 5.0;
  const CholeskyFactor f = cholesky(cov, 0.0);
  const Vector mean{1.0, 1.0};
  GaussianStream rng = StreamKey(99).stream();

  const std::size_t draws = 100000;
  double s0 = 0.0, s1 = 0.0, s00 = 0.0, s01 = 0.0, s11 = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const MvnDraw d = sample_mvn(mean, f, rng);
    s0 += d.value[0];
    s1 += d.value[1];
    const double c0 = d.value[0] - mean[0];
    const double c1 = d.value[1] - mean[1];
    s00 += c0 * c0;
    s01 += c0 * c1;
    s11 += c1 * c1;
  }
  const double inv = 1.0 / static_cast<double>(draws);
  // Mean within 4 sigma of the estimator's own standard error.
  CHECK(std::abs(s0 * inv - 1.0) < 4.0 * std::sqrt(cov(0, 0) * inv));
  CHECK(std::abs(s1 * inv - 1.0) < 4.0 * std::sqrt(cov(1, 1) * inv));
  // Covariance within 5% relative Frobenius error.
  const double e00 = s00 * inv - cov(0, 0);
  const double e01 = s01 * inv - cov(0, 1);
  const double e11 = s11 * inv - cov(1, 1);
  const double err = std::sqrt(e00 * e00 + 2.0 * e01 * e01 + e11 * e11);
  const double ref = std::sqrt(cov(0, 0) * cov(0, 0) + 2.0 * cov(0, 1) * cov(0, 1) +
                               cov(1, 1) * cov(1, 1));
  CHECK(err / ref < 0.05);
}

TEST_CASE("random_covariance hits the requested spectral norm and stays SPD") {
  GaussianStream rng = StreamKey(5).stream();
  const Matrix cov = random_covariance(6, 2.5, rng);
  CHECK(spectral_norm(cov) == doctest::Approx(2.5).epsilon(1e-9));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(cov(i, j) == cov(j, i));
  CHECK_NOTHROW(cholesky(cov, 0.0));
}

TEST_CASE("triangular solves invert the factor") {
  GaussianStream rng = StreamKey(17).stream();
  const Matrix cov = random_covariance(5, 1.0, rng);
  const CholeskyFactor f = cholesky(cov, 0.0);
  Vector b(5);
  for (std::size_t i = 0; i < 5; ++i) b[i] = rng.normal();
  const Vector y = forward_substitute(f.lower, b);       // L y = b
  const Vector x = back_substitute_transposed(f.lower, y);  // L^T x = y
  // Then cov^{-1} b = x up to the round trip: cov * x = b.
  for (std::size_t i = 0; i < 5; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < 5; ++j) acc += cov(i, j) * x[j];
    CHECK(acc == doctest::Approx(b[i]).epsilon(1e-9));
  }
}

TEST_CASE("matrix multiply agrees between matvec dispatch and general path") {
  GaussianStream rng = StreamKey(23).stream();
  Matrix a(4, 3);
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  Matrix col(3, 1);
  for (std::size_t i = 0; i < col.size(); ++i) col.data()[i] = rng.normal();
  const Matrix fast = multiply(a, col);
  for (std::size_t r = 0; r < 4; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < 3; ++c) acc += a(r, c) * col(c, 0);
    CHECK(fast(r, 0) == doctest::Approx(acc).epsilon(1e-14));
  }
}

TEST_CASE("trace and frobenius norm") {
  Matrix m(2, 2);
  m(0, 0) = 1.0; m(0, 1) = 2.0;
  m(1, 0) = 3.0; m(1, 1) = 4.0;
  CHECK(trace(m) == 5.0);
  CHECK(frobenius_norm(m) == doctest::Approx(std::sqrt(30.0)).epsilon(1e-14));
}
