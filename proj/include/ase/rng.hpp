#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "ase/common.hpp"

namespace ase {

// splitmix64 mixing step; used to derive independent stream seeds so that
// per-chain / per-purpose streams never alias even for adjacent seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                 std::uint64_t b = 0) {
  std::uint64_t x = splitmix64(seed ^ 0x6A09E667F3BCC909ULL);
  x = splitmix64(x ^ splitmix64(a));
  return splitmix64(x ^ splitmix64(b ^ 0x510E527FADE682D1ULL));
}

// Stream tags for derive_seed; keeps the purposes of substreams disjoint.
enum StreamTag : std::uint64_t {
  kStreamInit = 1,
  kStreamBatch = 2,
  kStreamNoise = 3,
  kStreamTime = 4,
  kStreamChain = 5,
  kStreamProjection = 6,
  kStreamData = 7,
};

// Deterministic generator: mt19937_64 plus an explicit Box-Muller transform,
// so normal draws are bit-identical across standard libraries on one platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() {  // in [0, 1)
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // uniform integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) %
           n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  void fill_normal(Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = normal();
  }

  void fill_uniform(Mat& m, double lo, double hi) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        m(i, j) = lo + (hi - lo) * uniform();
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ase
