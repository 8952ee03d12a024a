#pragma once

#include "adaptable/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace adaptable::metrics {

struct ClassificationScores {
  double balanced_accuracy = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
};

// Balanced accuracy averages recall over classes present in `labels` plus
// classes that are predicted but absent (recall 0). Macro F1 skips classes
// with neither true nor predicted instances.
ClassificationScores classification_metrics(std::span<const ClassIndex> predictions,
                                            std::span<const ClassIndex> labels, int num_classes);

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  size_t count = 0;
};

struct ReliabilityReport {
  std::vector<ReliabilityBin> bins;
  double ece = 0.0;

  nlohmann::json to_json() const;
};

inline constexpr int kDefaultEceBins = 15;

// Equal-width bins on [0, 1]; bin index floor(conf * B), with conf == 1 in
// the last bin.
ReliabilityReport expected_calibration_error(std::span<const double> confidences,
                                             std::span<const std::uint8_t> correct,
                                             int num_bins = kDefaultEceBins);

// Max-probability confidence and argmax correctness of each row.
ReliabilityReport reliability_from_probabilities(const Matrix& probabilities,
                                                 std::span<const ClassIndex> labels,
                                                 int num_bins = kDefaultEceBins);

// Natural-log Jensen-Shannon divergence; 0 log 0 = 0.
double js_divergence(std::span<const double> p, std::span<const double> q);
double js_divergence(const Vector& p, const Vector& q);

// Unbiased MMD^2 with an RBF kernel exp(-d^2 / (2 s^2)). When `bandwidth` is
// empty, s^2 is the median squared distance over the pooled sample.
double mmd_rbf(const Matrix& a, const Matrix& b, std::optional<double> bandwidth = std::nullopt);

double median_heuristic_bandwidth(const Matrix& a, const Matrix& b);

struct PermutationTestResult {
  double statistic = 0.0;
  double null_quantile = 0.0;  // requested quantile of the permutation null
  double p_value = 1.0;
  bool reject = false;
};

// Bandwidth is fixed from the pooled sample and shared by all permutations.
PermutationTestResult mmd_permutation_test(const Matrix& a, const Matrix& b, int permutations,
                                           std::uint64_t seed, double quantile = 0.99);

// Spearman rank correlation with average ranks for ties.
double spearman_correlation(std::span<const double> x, std::span<const double> y);

// Mean and standard error (sample std / sqrt(n)); stderr is 0 for n < 2.
struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};
MeanStderr mean_and_stderr(std::span<const double> values);

// ---------------------------------------------------------------------------
// Exact check of the label-shift error-gap bound on a finite instance.

struct DiscreteGlsInstance {
  Matrix source_conditional;  // C x m, rows P(x | y) on the source domain
  Matrix target_conditional;  // must equal source_conditional
  Vector source_prior;        // p_s(y)
  Vector target_prior;        // p_t(y)
  Vector online_estimate;     // p_oe(y)
  Matrix source_logits;       // m x C classifier scores on the source domain
  Matrix target_logits;       // m x C classifier scores on the target domain
};

struct BoundReport {
  double lhs = 0.0;
  double source_error = 0.0;
  double adapted_target_error = 0.0;
  double k1 = 0.0;
  double k2 = 0.0;
  double bse = 0.0;
  double delta_ce = 0.0;
  double l1_term = 0.0;
  double rhs = 0.0;
  bool bound_holds = false;

  nlohmann::json to_json() const;
};

BoundReport theorem_bound_check(const DiscreteGlsInstance& instance);

struct GlsInstanceOptions {
  int min_classes = 2;
  int max_classes = 4;
  int min_inputs = 2;
  int max_inputs = 12;
  double logit_scale = 2.0;
  double max_domain_perturbation = 0.5;  // target logits = source + N(0, s^2), s ~ U(0, max)
};

DiscreteGlsInstance random_gls_instance(std::uint64_t seed, const GlsInstanceOptions& options = {});

}  // namespace adaptable::metrics
