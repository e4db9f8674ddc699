#ifndef MMNAS_RNG_HPP
#define MMNAS_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

namespace mmnas {

// SplitMix64. The exact output sequence is part of the reproducibility
// contract: every sampler documents how many draws it consumes, so a seed
// maps to the same architectures in any implementation of this generator.
class Rng {
 public:
  explicit constexpr Rng(std::uint64_t seed = 0) noexcept : state_(seed) {}

  constexpr std::uint64_t next_u64() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53 bits of resolution.
  constexpr double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Multiply-high range reduction, no rejection:
  // exactly one draw per call.
  constexpr std::uint64_t uniform_int(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // One draw. p = 0 never fires, p = 1 always fires.
  constexpr bool bernoulli(double p) noexcept { return uniform() < p; }

  // Box-Muller, two draws per call (the second variate is discarded).
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  constexpr std::uint64_t state() const noexcept { return state_; }
  constexpr void set_state(std::uint64_t s) noexcept { state_ = s; }

 private:
  std::uint64_t state_;
};

// Independent stream for a (seed, purpose) pair.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
  Rng r(seed ^ (tag * 0xd1b54a32d192ed03ULL));
  r.next_u64();
  return r.next_u64();
}

}  // namespace mmnas

#endif  // MMNAS_RNG_HPP
