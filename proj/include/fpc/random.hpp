#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace fpc {

/// splitmix64 finalizer; derives independent child seeds from (seed, salt).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

template <typename T>
void fill_normal(std::span<T> out, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : out) v = static_cast<T>(dist(rng));
}

}  // namespace fpc
