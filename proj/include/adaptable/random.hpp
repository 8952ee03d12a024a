#pragma once

#include "adaptable/types.hpp"

#include <cstdint>
#include <random>
#include <span>

namespace adaptable {

using Rng = std::mt19937_64;

// Dirichlet draw via independent Gamma(alpha_j, 1) variates. Components with
// alpha_j == 0 are exactly zero. If every Gamma draw underflows, the
// normalized concentration vector is returned instead.
Vector sample_dirichlet(Rng& rng, const Vector& alpha);

// Index drawn with probability proportional to `weights` (non-negative,
// positive sum).
size_t sample_categorical(Rng& rng, std::span<const double> weights);
size_t sample_categorical(Rng& rng, const Vector& weights);

}  // namespace adaptable
