#include "adaptable/random.hpp"

#include "adaptable/errors.hpp"

#include <cmath>

namespace adaptable {

Vector sample_dirichlet(Rng& rng, const Vector& alpha) {
  require(alpha.size() >= 1, ErrorCode::kInvalidArgument, "dirichlet needs >= 1 component");
  Vector draw(alpha.size());
  double total = 0.0;
  for (Eigen::Index j = 0; j < alpha.size(); ++j) {
    require(alpha(j) >= 0 && std::isfinite(alpha(j)), ErrorCode::kInvalidArgument,
            "dirichlet concentration must be finite and >= 0");
    if (alpha(j) == 0.0) {
      draw(j) = 0.0;
    } else {
      std::gamma_distribution<double> gamma(alpha(j), 1.0);
      draw(j) = gamma(rng);
    }
    total += draw(j);
  }
  if (total > 0.0) return draw / total;
  const double asum = alpha.sum();
  require(asum > 0, ErrorCode::kInvalidArgument, "dirichlet concentration is all zero");
  return alpha / asum;
}

size_t sample_categorical(Rng& rng, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0 && std::isfinite(w), ErrorCode::kInvalidArgument,
            "categorical weights must be finite and >= 0");
    total += w;
  }
  require(total > 0, ErrorCode::kInvalidArgument, "categorical weights sum to zero");
  std::uniform_real_distribution<double> unif(0.0, total);
  const double u = unif(rng);
  double acc = 0.0;
  size_t last_positive = 0;
  for (size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] <= 0) continue;
    last_positive = k;
    acc += weights[k];
    if (u < acc) return k;
  }
  return last_positive;
}

size_t sample_categorical(Rng& rng, const Vector& weights) {
  return sample_categorical(rng, std::span<const double>(weights.data(), static_cast<size_t>(weights.size())));
}

}  // namespace adaptable
