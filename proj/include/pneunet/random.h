#ifndef PNEUNET_RANDOM_H_
#define PNEUNET_RANDOM_H_

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace pneunet {

// Seeded generator with a fixed, portable algorithm.
//
// The engine is std::mt19937_64, whose output sequence is pinned by the C++
// standard. The standard distributions are implementation-defined, so every
// derived quantity is computed here instead:
//   uniform()  = (next() >> 11) * 2^-53, in [0, 1)
//   below(n)   = rejection sampling on the top bits, unbiased
//   normal()   = Box-Muller on two uniform() draws, one value per call
//   shuffle()  = Fisher-Yates from the back, j = below(i + 1)
// The same seed therefore reproduces the same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t below(std::uint64_t n);

  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Independent child stream, e.g. one per epoch or per worker.
  Rng fork() { return Rng(next()); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace pneunet

#endif  // PNEUNET_RANDOM_H_
