#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace unportrait {

// Row-major float plane, indexed (y, x).
using Plane = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using PlaneU8 = Eigen::Array<uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using PlaneI32 = Eigen::Array<int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Stable per-sample seed from a master seed and a sample index.
inline uint64_t derive_seed(uint64_t master, uint64_t index) {
  return splitmix64(splitmix64(master) ^ splitmix64(index * 0x9e3779b97f4a7c15ull + 1));
}

// mt19937_64 is bit-exact across implementations; the distribution transforms
// below are hand-rolled so streams are reproducible everywhere (std::*_distribution
// is implementation-defined).
class Rng {
public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, no spare caching: two draws per call, state-free apart from the engine.
  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  uint64_t bits() { return engine_(); }

  // Uniform integer in [0, n).
  uint64_t index(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index: n must be positive");
    // Rejection sampling keeps the draw unbiased.
    const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % n;
    uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

private:
  std::mt19937_64 engine_;
};

// Worker cap shared by the parallel-capable stages. UNPORTRAIT_THREADS overrides;
// results never depend on the value.
int worker_count();

}  // namespace unportrait
