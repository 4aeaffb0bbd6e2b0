#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tba {

// xoshiro256** seeded through SplitMix64. Every derived draw (uniform,
// normal, integer) is computed here with fixed formulas so a seed gives the
// same stream on every platform; std:: distributions are not used because
// their output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n); unbiased (rejection on the low range).
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller; the second variate is cached.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Independent child stream; used to give each component its own sequence
  // without the draws of one shifting another.
  Rng fork(std::uint64_t stream);

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

// Distinct indices sampled uniformly without replacement from [0, population),
// returned in ascending order.
std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t count,
                                                    Rng& rng);

}  // namespace tba
