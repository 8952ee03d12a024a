#pragma once

// Central finite-difference checks for every differentiable piece of the
// library: dense layers of each activation paired with each loss, the
// temperature losses, and the full calibrator.

#include <cstdint>
#include <string>
#include <vector>

namespace adaptable::testing {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdTolerance = 1e-4;

struct GradCheckResult {
  std::string name;
  double max_relative_error = 0.0;
  size_t entries_checked = 0;
};

// |analytic - numeric| / max(|analytic|, |numeric|), with the denominator
// floored at `floor` so that entries that are zero on both sides compare
// absolutely.
double relative_error(double analytic, double numeric, double floor = 1e-8);

// Two-layer nets (first layer relu, second layer of the named activation)
// under softmax cross-entropy, squared error, and the focal + calibration
// objective with the net output mapped to a temperature. Checks parameters
// and inputs.
std::vector<GradCheckResult> check_dense_layers(std::uint64_t seed);

// dLoss/dT of the focal + calibration objective for gamma in {0, 1, 2}.
std::vector<GradCheckResult> check_temperature_losses(std::uint64_t seed);

// Every calibrator parameter (categorical weights, projections, message
// passing layers, head) on a batch with numerical and categorical columns.
GradCheckResult check_calibrator(std::uint64_t seed, int message_layers = 2);

// All of the above.
std::vector<GradCheckResult> check_all_gradients(std::uint64_t seed);

}  // namespace adaptable::testing
