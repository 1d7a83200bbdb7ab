#ifndef SEMBID_RNG_HPP_
#define SEMBID_RNG_HPP_

#include <cstdint>
#include <random>
#include <string_view>

namespace sembid {

std::uint64_t splitmix64(std::uint64_t x);

// Seeds for independent sub-streams. All randomness in the project flows from
// a root seed through these, so every component is reproducible on its own.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

// Portable random source. std::mt19937_64 has a standardized output sequence;
// the distribution transforms below are written out so results do not depend
// on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sembid

#endif  // SEMBID_RNG_HPP_
