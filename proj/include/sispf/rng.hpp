#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>

namespace sispf {

// Abstract source of random draws. Every sampling routine in the library takes
// one of these, so tests can substitute deterministic streams.
class RandomStream {
 public:
  virtual ~RandomStream() = default;
  // Uniform draw in [0, 1).
  virtual double uniform() = 0;
  // Standard normal draw.
  virtual double normal() = 0;
};

// mt19937_64-backed stream. Normals come from the Marsaglia polar method so
// the sequence is identical across standard-library implementations.
class GaussianStream final : public RandomStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}

  double uniform() override {
    // 53 random bits -> double in [0, 1).
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double normal() override {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double factor = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * factor;
    have_spare_ = true;
    return u * factor;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Test stream: normal() is always zero (forces MVN samples onto their mean),
// uniform() is always 1/2 (forces symmetric uniform noise onto zero).
class ConstantStream final : public RandomStream {
 public:
  ConstantStream() = default;
  ConstantStream(double uniform_value, double normal_value)
      : uniform_value_(uniform_value), normal_value_(normal_value) {}
  double uniform() override { return uniform_value_; }
  double normal() override { return normal_value_; }

 private:
  double uniform_value_ = 0.5;
  double normal_value_ = 0.0;
};

namespace detail {
// splitmix64 finalizer; used to hash-chain stream keys.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace detail

// Hierarchical seed key. child(tag) derives an independent key, so every
// (trial, run, step, particle) coordinate can own its own stream and results
// do not depend on execution order.
class StreamKey {
 public:
  explicit StreamKey(std::uint64_t root) : state_(detail::mix64(root)) {}

  StreamKey child(std::uint64_t tag) const {
    StreamKey key(*this);
    key.state_ = detail::mix64(state_ ^ detail::mix64(tag));
    return key;
  }

  std::uint64_t value() const { return state_; }

  GaussianStream stream() const { return GaussianStream(state_); }
  std::unique_ptr<RandomStream> make_stream() const {
    return std::make_unique<GaussianStream>(state_);
  }

 private:
  std::uint64_t state_;
};

// Stream tags. Kept in one place so derivations never collide.
namespace stream_tag {
inline constexpr std::uint64_t kScenarioGeometry = 0x01;
inline constexpr std::uint64_t kScenarioCovariance = 0x02;
inline constexpr std::uint64_t kProposalInit = 0x03;
inline constexpr std::uint64_t kTraining = 0x04;
inline constexpr std::uint64_t kTestSimulation = 0x05;
inline constexpr std::uint64_t kFilterRun = 0x06;
inline constexpr std::uint64_t kResample = 0x07;
inline constexpr std::uint64_t kLln = 0x08;
inline constexpr std::uint64_t kTrial = 0x09;
inline constexpr std::uint64_t kRunSimulation = 0x0A;
inline constexpr std::uint64_t kRunNoise = 0x0B;
inline constexpr std::uint64_t kDegeneracyEval = 0x0C;
}  // namespace stream_tag

}  // namespace sispf
