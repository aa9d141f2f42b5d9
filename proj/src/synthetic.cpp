#include "nekfac/synthetic.hpp"

#include "nekfac/network.hpp"

#include <cmath>
#include <stdexcept>

namespace nekfac {

Dataset make_linear_gaussian(Index n, Index d, double noise_sigma,
                             uint64_t seed) {
  if (n < 1 || d < 1) {
    throw std::invalid_argument("make_linear_gaussian: n and d must be >= 1");
  }
  Rng rng(Rng::derive(seed, 7));
  Dataset ds;
  ds.name = "synthetic-linear";
  ds.features = rng.normal_mat(n, d);
  const Vec w =
      rng.normal_mat(d, 1).col(0) / std::sqrt(static_cast<double>(d));
  ds.targets = ds.features * w + noise_sigma * rng.normal_mat(n, 1).col(0);
  return ds;
}

Dataset make_mlp_teacher(Index n, Index d, Index hidden, double noise_sigma,
                         uint64_t seed) {
  if (n < 1 || d < 1 || hidden < 1) {
    throw std::invalid_argument("make_mlp_teacher: sizes must be >= 1");
  }
  Rng data_rng(Rng::derive(seed, 7));
  Rng init_rng(Rng::derive(seed, 8));
  Network teacher({d, hidden, 1}, Task::kRegression);
  teacher.init_weights(init_rng);

  Dataset ds;
  ds.name = "synthetic-teacher";
  ds.features = data_rng.normal_mat(n, d);
  ds.targets = teacher.forward(ds.features).col(0) +
               noise_sigma * data_rng.normal_mat(n, 1).col(0);
  return ds;
}

}  // namespace nekfac
