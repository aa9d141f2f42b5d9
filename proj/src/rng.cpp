#include "nekfac/rng.hpp"

#include <cmath>
#include <numbers>

namespace nekfac {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 kept away from 0 so log stays finite.
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Mat Rng::normal_mat(Index rows, Index cols) {
  Mat out(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) {
      out(i, j) = normal();
    }
  }
  return out;
}

Vec Rng::normal_vec(Index n) {
  Vec out(n);
  for (Index i = 0; i < n; ++i) out[i] = normal();
  return out;
}

Index Rng::uniform_index(Index n) {
  // Rejection sampling avoids modulo bias.
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - (UINT64_MAX % un);
  uint64_t draw = 0;
  do {
    draw = next_u64();
  } while (draw >= limit);
  return static_cast<Index>(draw % un);
}

std::vector<Index> Rng::permutation(Index n) {
  std::vector<Index> perm(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  for (Index i = n - 1; i > 0; --i) {
    const Index j = uniform_index(i + 1);
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }
  return perm;
}

uint64_t Rng::derive_seed(uint64_t seed, uint64_t stream) {
  // splitmix64 step mixes seed and stream id into a fresh seed.
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng Rng::derive(uint64_t seed, uint64_t stream) {
  return Rng(derive_seed(seed, stream));
}

}  // namespace nekfac
