#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "breakdown/errors.hpp"
#include "breakdown/stats.hpp"

namespace breakdown {

// Counter-based SplitMix64 generator (Steele, Lea & Flood 2014): the i-th
// output is a pure function of (key, i). Substreams are keyed by
// (seed, stream), so draws are reproducible regardless of how work is
// interleaved across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : state_(mix(seed ^ mix(stream + 0x9e3779b97f4a7c15ull))) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform on the open interval (0,1); never returns an exact endpoint.
  double uniform01() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // Standard normal via the AS241 quantile applied to a uniform draw.
  double normal() { return normal_quantile(uniform01()); }

  // Index k with probability probs[k]; probs must sum to 1.
  int categorical(std::span<const double> probs) {
    const double u = uniform01();
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
      acc += probs[k];
      if (u < acc) return static_cast<int>(k);
    }
    return static_cast<int>(probs.size()) - 1;
  }

  // Beta(a,b) with small integer parameters, drawn as the a-th order
  // statistic of a+b-1 uniforms.
  double beta_int(int a, int b) {
    if (a < 1 || b < 1 || a + b > 64) {
      throw_input("beta-params", "beta_int needs integer parameters with a,b >= 1");
    }
    double draws[63];
    const int m = a + b - 1;
    for (int i = 0; i < m; ++i) draws[i] = uniform01();
    std::nth_element(draws, draws + (a - 1), draws + m);
    return draws[a - 1];
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace breakdown
