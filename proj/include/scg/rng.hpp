#pragma once

// Deterministic random streams. Every run owns a single master seed; components
// draw from named substreams so adding a new consumer never shifts the draws of
// an existing one. The generator (splitmix64 + Box-Muller) is implemented here
// rather than with std::distributions, whose output is implementation-defined.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace scg {

namespace detail {
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace detail

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ^ 0x5851f42d4c957f2dULL) {
    // decorrelate trivially related seeds
    detail::splitmix64(state_);
    detail::splitmix64(state_);
  }

  // Named substream: an independent generator derived from (seed, name).
  static Rng substream(uint64_t seed, const std::string& name) {
    return Rng(seed ^ detail::fnv1a(name));
  }
  Rng substream(const std::string& name) const {
    return Rng(state_ ^ detail::fnv1a(name));
  }

  uint64_t next_u64() { return detail::splitmix64(state_); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    // modulo bias is irrelevant for the small n used here
    return next_u64() % n;
  }

  // standard normal via Box-Muller, one spare cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // truncated Poisson via inversion, capped at max_k
  int poisson(double lambda, int max_k) {
    double L = std::exp(-lambda);
    double p = 1.0;
    int k = 0;
    while (k <= max_k) {
      p *= uniform();
      if (p <= L) break;
      ++k;
    }
    return k > max_k ? max_k : k;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_int(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace scg
