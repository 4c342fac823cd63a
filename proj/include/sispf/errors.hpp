#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sispf {

// Error types thrown across the library. Each names the condition it signals;
// all derive from std::runtime_error so callers can catch broadly or narrowly.

class DimensionMismatch : public std::runtime_error {
 public:
  explicit DimensionMismatch(const std::string& what) : std::runtime_error(what) {}
};

class ShapeMismatch : public std::runtime_error {
 public:
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

class NotSymmetric : public std::runtime_error {
 public:
  explicit NotSymmetric(const std::string& what) : std::runtime_error(what) {}
};

// A learned covariance was so badly conditioned that no jitter below the cap
// made it factorizable.
class JitterCapExceeded : public std::runtime_error {
 public:
  explicit JitterCapExceeded(const std::string& what) : std::runtime_error(what) {}
};

class RootNotScalar : public std::runtime_error {
 public:
  explicit RootNotScalar(const std::string& what) : std::runtime_error(what) {}
};

class TapeAlreadySwept : public std::runtime_error {
 public:
  explicit TapeAlreadySwept(const std::string& what) : std::runtime_error(what) {}
};

class TimeIndexOutOfRange : public std::runtime_error {
 public:
  explicit TimeIndexOutOfRange(const std::string& what) : std::runtime_error(what) {}
};

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& what) : std::runtime_error(what) {}
};

// Every particle weight underflowed to -inf; carries the step where it happened.
class AllWeightsDegenerate : public std::runtime_error {
 public:
  explicit AllWeightsDegenerate(const std::string& what, int time_step = -1)
      : std::runtime_error(what), time_step_(time_step) {}
  int time_step() const { return time_step_; }

 private:
  int time_step_;
};

class SingularInnovationCovariance : public std::runtime_error {
 public:
  explicit SingularInnovationCovariance(const std::string& what) : std::runtime_error(what) {}
};

class DegenerateGeometry : public std::runtime_error {
 public:
  explicit DegenerateGeometry(const std::string& what) : std::runtime_error(what) {}
};

class TooManyDivergedRuns : public std::runtime_error {
 public:
  explicit TooManyDivergedRuns(const std::string& what) : std::runtime_error(what) {}
};

// A relative-RMSE target had zero norm at some step; carries the step.
class ZeroTargetNorm : public std::runtime_error {
 public:
  explicit ZeroTargetNorm(const std::string& what, std::size_t time_step)
      : std::runtime_error(what), time_step_(time_step) {}
  std::size_t time_step() const { return time_step_; }

 private:
  std::size_t time_step_;
};

}  // namespace sispf
