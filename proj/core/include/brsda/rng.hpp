#pragma once

#include <cstdint>
#include <random>

namespace brsda {

// splitmix64; used to derive independent stream seeds from a base seed so
// that e.g. data-order and augmentation streams never interleave.
inline std::uint64_t mix_seed(std::uint64_t seed) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                 std::uint64_t index = 0) {
  return mix_seed(mix_seed(base ^ (stream * 0x9e3779b97f4a7c15ULL)) + index);
}

// Stream tags for derive_seed.
namespace streams {
constexpr std::uint64_t kInit = 1;        // parameter initialization
constexpr std::uint64_t kDataOrder = 2;   // epoch shuffling
constexpr std::uint64_t kAugment = 3;     // masks and magnitude noise
constexpr std::uint64_t kSynthetic = 4;   // synthetic dataset generation
}  // namespace streams

// Single-owner random stream. Not shared across threads.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return uniform_(gen_); }
  double normal() { return normal_(gen_); }
  std::uint64_t next_u64() { return gen_(); }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace brsda
