#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace aftsel {

// mt19937_64 stream with hand-rolled transforms. The standard pins the
// engine's output bit-for-bit across platforms; the distribution transforms
// here are fully specified so generated datasets are too.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // uniform on (0, 1]: 53-bit mantissa, never exactly 0
  double uniform01() {
    return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // Box-Muller, one value per call (no cached spare state)
  double normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // t with 3 degrees of freedom: Z / sqrt(chi2_3 / 3)
  double student_t3() {
    const double z = normal();
    const double a = normal(), b = normal(), c = normal();
    return z / std::sqrt((a * a + b * b + c * c) / 3.0);
  }

  bool bernoulli(double p) { return uniform01() <= p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace aftsel
