#pragma once

// Shifted test-stream construction: feature corruptions, importance-based
// column shifts, label-shift samplers and a synthetic label-shift generator.

#include "adaptable/tabular.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace adaptable::shift {

enum class CorruptionKind { kGaussian, kUniform, kRandomDrop, kColumnDrop, kNumerical, kCategorical };

const char* corruption_name(CorruptionKind k);
CorruptionKind corruption_from_name(const std::string& name);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kGaussian;
  double scale = 0.1;  // gaussian std / uniform half-width, in source std units
  double rate = 0.2;   // drop probability
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static CorruptionSpec from_json(const nlohmann::json& doc);
};

struct CorruptionTally {
  size_t cells_modified = 0;
  size_t categorical_cells_skipped = 0;  // noise corruptions leave categories alone
  size_t cells_masked = 0;
  size_t cells_considered = 0;
  size_t columns_dropped = 0;
  int important_column = -1;             // numerical / categorical shifts only

  double mask_rate() const;
  nlohmann::json to_json() const;
};

// Population std of every raw numerical column of `source` (1 where the std
// is below 1e-12, 0 for categorical columns).
std::vector<double> source_column_stds(const data::Dataset& source);

// Materializes one corrupted copy of `test`. Drop replacements and importance
// statistics come from the raw `source` dataset.
data::Dataset apply_corruption(const data::Dataset& test, const data::Dataset& source,
                               const CorruptionSpec& spec, CorruptionTally* tally = nullptr);

// |standardized coefficient| of a multinomial logistic regression fitted on
// the encoded source, reduced per original column by the maximum over
// classes and encoded slots. One-hot slots are scaled by their std.
std::vector<double> feature_importance(const data::Dataset& source, std::uint64_t seed);

// Highest-importance column of the given kind; ties go to the lowest index.
size_t most_important_column(const data::Dataset& source, data::ColumnKind kind, std::uint64_t seed);

// Normalized inverse likelihoods from log-likelihoods, computed stably.
Vector inverse_likelihood_probabilities(std::span<const double> log_likelihoods);

// Rows drawn with replacement, |test| of them, with probability inversely
// proportional to the source likelihood of the most important column.
struct ResampleResult {
  data::Dataset data;
  std::vector<size_t> row_ids;
  Vector probabilities;  // per test row
  size_t column = 0;
};

ResampleResult resample_by_importance(const data::Dataset& test, const data::Dataset& source,
                                      data::ColumnKind kind, std::uint64_t seed);

// ---------------------------------------------------------------------------

enum class LabelShiftKind { kNone, kClassImbalance, kTemporal };

const char* label_shift_name(LabelShiftKind k);
LabelShiftKind label_shift_from_name(const std::string& name);

struct LabelShiftSpec {
  LabelShiftKind kind = LabelShiftKind::kNone;
  double rho = 10.0;
  int window = 5;
  double eta = 1e-6;
  size_t length = 0;  // 0 = number of test rows
  bool with_replacement = true;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static LabelShiftSpec from_json(const nlohmann::json& doc);
};

struct LabelShiftStream {
  std::vector<size_t> rows;
  // Class imbalance: normalized per-row sampling probabilities.
  Vector row_probabilities;
  // Temporal: smoothed pi_i and window distribution P_i after each draw.
  std::vector<Vector> pi;
  std::vector<Vector> window;
};

// Per-row unnormalized weight rank(y)/C (rho - 1) + 1, with classes ranked by
// ascending source frequency (ties by class index).
Vector class_imbalance_weights(std::span<const ClassIndex> labels, const Vector& source_label_dist,
                               double rho);

LabelShiftStream sample_label_shifted_stream(const data::Dataset& test, const Vector& source_label_dist,
                                             const LabelShiftSpec& spec);

// ---------------------------------------------------------------------------

struct SyntheticSpec {
  int num_classes = 2;
  int num_numerical = 4;
  int num_categorical = 0;
  int categories_per_column = 3;
  size_t n_source = 5000;
  size_t n_target = 5000;
  std::vector<double> source_label_dist{0.7, 0.3};
  std::vector<double> target_label_dist{0.3, 0.7};
  // Distance between any two class means of the unit-variance Gaussians.
  double class_separation = 2.0;
  // Mixing weight of a class-dependent component in categorical columns.
  double categorical_signal = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& doc);
};

data::Schema synthetic_schema(const SyntheticSpec& spec);

// Class-conditional Gaussians shared by both domains; only P(y) differs.
std::pair<data::Dataset, data::Dataset> generate_synthetic_dataset(const SyntheticSpec& spec);

// Writes `d` as CSV plus `<path>.provenance.json` holding `provenance`.
void write_with_provenance(const data::Dataset& d, const std::filesystem::path& path,
                           const nlohmann::json& provenance);

}  // namespace adaptable::shift
