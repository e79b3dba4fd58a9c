#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace chemkernel {

/// Seed mixer for deriving independent streams from one run seed.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// How next-firing intervals are drawn. `expected_time` replaces every
/// exponential variate with its mean (1), giving deterministic 1/a intervals.
enum class VariateMode { sampled, expected_time };

/// The shared variate contract of both engines. mt19937_64 output is fully
/// specified by the standard; the conversion to (0,1] and Exp(1) is done here
/// rather than with std:: distributions, whose algorithms are unspecified.
class VariateStream {
 public:
  static constexpr std::string_view algorithm = "mt19937_64/u53/neg-log1p/v1";

  explicit VariateStream(std::uint64_t seed, VariateMode mode = VariateMode::sampled)
      : gen_(seed), mode_(mode) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() {
    ++draws_;
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  /// Exp(1) variate.
  double exponential() {
    if (mode_ == VariateMode::expected_time) {
      ++draws_;
      return 1.0;
    }
    return -std::log1p(-uniform());
  }

  VariateMode mode() const { return mode_; }
  std::uint64_t draws() const { return draws_; }

 private:
  std::mt19937_64 gen_;
  VariateMode mode_;
  std::uint64_t draws_ = 0;
};

}  // namespace chemkernel
