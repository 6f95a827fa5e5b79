#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace nsfde {

// splitmix64 finalizer; used to derive well-separated substream seeds from
// (seed, path index, mode index, purpose) labels so that every sampled path
// is reproducible independently of batch size or worker count.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t substream(std::uint64_t seed, std::uint64_t a,
                                  std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = mix64(seed ^ 0x9d1bc4f7a3735837ULL);
  s = mix64(s ^ mix64(a + 0x517cc1b727220a95ULL));
  s = mix64(s ^ mix64(b + 0x6c62272e07bb0142ULL));
  s = mix64(s ^ mix64(c + 0x2f653b1f8dd6d9ebULL));
  return s;
}

// Deterministic standard-normal stream: mt19937_64 + Box-Muller.
// std::normal_distribution is implementation-defined, which would break
// bit-for-bit reproducibility across standard libraries; this is not.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : gen_(seed) {}

  double next() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = unit();  // in [0,1)
    const double u2 = unit();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));  // log(1-u1), never log(0)
    const double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // uniform draw in [0,1) with 53 random bits
  double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

 private:
  static constexpr double kPi = 3.14159265358979323846;

  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace nsfde
