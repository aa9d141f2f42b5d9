#pragma once

#include "nekfac/dataset.hpp"

#include <cstdint>

namespace nekfac {

/// y = x . w + noise_sigma * eps with x ~ N(0, I) and a fixed random weight
/// vector of unit expected norm. Known generative model for analytic checks.
Dataset make_linear_gaussian(Index n, Index d, double noise_sigma,
                             uint64_t seed);

/// Targets from a randomly initialized ReLU teacher d -> hidden -> 1 plus
/// Gaussian observation noise; x ~ N(0, I).
Dataset make_mlp_teacher(Index n, Index d, Index hidden, double noise_sigma,
                         uint64_t seed);

}  // namespace nekfac
