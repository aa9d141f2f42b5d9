#pragma once

#include "nekfac/matrix.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace nekfac {

/// Seeded random source with a fixed draw discipline. Normal variates use an
/// explicit Box-Muller transform instead of std::normal_distribution, whose
/// draw sequence is implementation-defined; this keeps runs reproducible
/// across standard libraries, not just across invocations of one binary.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double normal();

  // Fills in column-major order (fixed draw order).
  Mat normal_mat(Index rows, Index cols);
  Vec normal_vec(Index n);

  // Uniform integer in [0, n).
  Index uniform_index(Index n);

  // Fisher-Yates permutation of {0, ..., n-1}.
  std::vector<Index> permutation(Index n);

  // Independent stream derived from this seed and a stream id.
  static Rng derive(uint64_t seed, uint64_t stream);
  // The seed that stream would use (for handing seeds across components).
  static uint64_t derive_seed(uint64_t seed, uint64_t stream);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nekfac
