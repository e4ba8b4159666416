#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <string_view>
#include <vector>

namespace fedrr {

// Seeded random stream. One root seed spawns independent named substreams
// (partition, per-client shuffle, attack noise, monitor randomization,
// calibration replications); the name plus indices select the substream.
// All draws go through our own transforms on top of mt19937_64, so the
// produced sequences are fixed for a given (seed, name, indices) tuple.
class RngStream {
 public:
  RngStream(std::uint64_t root_seed, std::string_view name,
            std::initializer_list<std::uint64_t> indices = {}) {
    std::vector<std::uint32_t> material;
    material.push_back(static_cast<std::uint32_t>(root_seed));
    material.push_back(static_cast<std::uint32_t>(root_seed >> 32));
    std::uint64_t h = fnv1a(name);
    material.push_back(static_cast<std::uint32_t>(h));
    material.push_back(static_cast<std::uint32_t>(h >> 32));
    for (std::uint64_t ix : indices) {
      material.push_back(static_cast<std::uint32_t>(ix));
      material.push_back(static_cast<std::uint32_t>(ix >> 32));
    }
    std::seed_seq seq(material.begin(), material.end());
    engine_.seed(seq);
  }

  std::uint64_t next_bits() { return engine_(); }

  // Uniform on the open interval (0,1); never returns 0 or 1.
  double uniform01() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1p-53;
  }

  // Uniform double on [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(engine_() >> 11) * 0x1p-53);
  }

  // Uniform integer in [0, n). Rejection sampling so each value is
  // exactly equally likely.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  double normal(double mean, double stddev) {
    // Box-Muller; uniform01() is strictly inside (0,1) so the log is safe.
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

  // Random permutation of {1,...,n}, each of the n! outcomes equally likely.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    std::iota(p.begin(), p.end(), 1);
    shuffle(p);
    return p;
  }

 private:
  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return h;
  }

  std::mt19937_64 engine_;
};

}  // namespace fedrr
