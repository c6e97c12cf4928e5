#pragma once

#include <cmath>
#include <cstdint>

namespace pifield {

// splitmix64 finalizer; the basis of all randomness in the project.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

// Stateful sequential generator for weight init and similar one-shot uses.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(mix64(seed ^ 0x5bf03635f0935ad1ull)) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix64(state_);
  }
  // Uniform in [0, 1) using the top 53 bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    u1 = u1 > 0.0 ? u1 : 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }
  uint64_t next_below(uint64_t n) { return n ? next_u64() % n : 0; }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Counter-based generator: a pure function of (seed, stream, counter).
// Parallel and serial runs over the same keys agree bit-exactly.
class CounterRng {
 public:
  CounterRng(uint64_t seed, uint64_t stream) : key_(hash_combine(seed, stream)) {}

  uint64_t u64_at(uint64_t counter) const { return mix64(key_ ^ mix64(counter * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull)); }
  double uniform_at(uint64_t counter) const {
    return static_cast<double>(u64_at(counter) >> 11) * 0x1.0p-53;
  }
  double uniform_at(uint64_t counter, double lo, double hi) const {
    return lo + (hi - lo) * uniform_at(counter);
  }
  // Box-Muller on counters (2i, 2i+1) relative to the caller's index.
  double normal_at(uint64_t counter) const {
    double u1 = uniform_at(2 * counter);
    double u2 = uniform_at(2 * counter + 1);
    u1 = u1 > 0.0 ? u1 : 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  uint64_t key_;
};

}  // namespace pifield
