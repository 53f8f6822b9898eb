#ifndef BFS_RNG_HPP
#define BFS_RNG_HPP

#include <cstdint>
#include <random>

namespace bfs {

// splitmix64 step; used to derive independent sub-stream seeds from a
// master seed so that components (data, init, per-column draws) can be
// varied independently without perturbing each other.
inline std::uint64_t mix_seed(std::uint64_t state) {
  std::uint64_t z = state + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return mix_seed(base ^ mix_seed(stream));
}

// Seeded random source. A thin wrapper so call sites never construct
// distributions with shared hidden state across traces.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  double gaussian(double sigma) {
    return std::normal_distribution<double>(0.0, sigma)(engine_);
  }

  std::uint64_t next_u64() { return engine_(); }

  // Independent child stream; deterministic function of this stream's state.
  Rng spawn() { return Rng(mix_seed(engine_())); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace bfs

#endif
