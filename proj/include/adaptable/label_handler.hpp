#pragma once

#include "adaptable/types.hpp"

#include <json.hpp>

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace adaptable::calib {
class Calibrator;
}

namespace adaptable::handler {

enum class Mode { kFull, kAlignOnly, kSourceOnly };

const char* mode_name(Mode m);
Mode mode_from_name(const std::string& name);

struct HandlerConfig {
  double alpha = 0.1;
  double q_low = 0.25;
  double q_high = 0.75;
  Mode mode = Mode::kFull;
  // Ablation switch: build the debiased estimates from softmax(z / T_i)
  // instead of the uncalibrated softmax(z).
  bool estimate_from_calibrated = false;

  void validate() const;
  nlohmann::json to_json() const;
  static HandlerConfig from_json(const nlohmann::json& doc);
};

struct HandlerState {
  Vector p_oe;  // online target label estimate
  size_t batch_index = 0;

  static HandlerState uniform(int num_classes);
  void validate() const;
};

struct AdaptedBatch {
  Matrix probabilities;          // p-bar, N x C
  Vector temperatures;           // stage-1 T_i
  Vector uncertainties;          // delta_i >= 1
  Vector stage_two_temperatures; // T-tilde_i
  Matrix debiased;               // p^de rows
  Vector target_estimate;        // p_t(y) for this batch
  std::vector<ClassIndex> predictions;
};

// T = 1.5 rho / (rho - 1 + 1e-6). Logs a warning at rho == 1.
double base_temperature(double imbalance_ratio);

// Reciprocal of p_j1 - p_j2 under softmax(logits / T), margin clamped at
// 1e-12. The two-argument form ranks classes on the logits themselves.
double margin_uncertainty(const RowVector& logits, double temperature);
double margin_uncertainty(const RowVector& logits, double temperature, ClassIndex top,
                          ClassIndex runner_up);

// Linear-interpolation quantile, h = q (n - 1).
double quantile(std::span<const double> values, double q);

// T where delta >= Q(q_high), else 1/T where delta <= Q(q_low), else 1.
Vector stage_two_temperature(const Vector& uncertainties, double base_temperature, double q_low,
                             double q_high);

RowVector debias_prediction(const RowVector& p, const Vector& source_prior);

// (1 - alpha) * mean of the debiased rows + alpha * p_oe.
Vector estimate_target_distribution(const Matrix& debiased, const Vector& p_oe, double alpha);

// norm(p * p_t / p_s).
RowVector align_distribution_baseline(const RowVector& p, const Vector& target_prior,
                                      const Vector& source_prior);

// (softmax(z / T~) + its aligned counterpart) / 2.
RowVector ensemble_prediction(const RowVector& logits, double stage_two_temperature,
                              const Vector& target_prior, const Vector& source_prior);

void update_online_estimator(HandlerState& state, const Matrix& probabilities, double alpha);

// Index of the largest entry; the lowest index wins ties.
ClassIndex argmax(const RowVector& row);

// Stateful wrapper: source prior and base temperature are fixed at
// construction, p_oe evolves batch by batch.
class LabelHandler {
 public:
  LabelHandler(Vector source_prior, HandlerConfig cfg);

  int num_classes() const { return static_cast<int>(source_prior_.size()); }
  const HandlerConfig& config() const { return cfg_; }
  const HandlerState& state() const { return state_; }
  HandlerState& state() { return state_; }
  const Vector& source_prior() const { return source_prior_; }
  double base_temperature() const { return base_temperature_; }

  // `temperatures` holds the calibrator's T_i; an empty vector means T_i = 1.
  AdaptedBatch adapt(const Matrix& logits, const Vector& temperatures);

  // Runs the calibrator on the encoded batch first.
  AdaptedBatch adapt(const Matrix& logits, const Matrix& encoded, const calib::Calibrator& calibrator);

 private:
  Vector source_prior_;
  HandlerConfig cfg_;
  HandlerState state_;
  double base_temperature_ = 1.0;
};

// One-shot form: applies the handler to one batch and advances `state`.
AdaptedBatch adapt_batch(const Matrix& logits, const Vector& temperatures, const Vector& source_prior,
                         const HandlerConfig& cfg, HandlerState& state);

void write_trace_header(std::ostream& out, int num_classes);
void write_trace_rows(std::ostream& out, size_t batch_index, std::span<const size_t> sample_ids,
                      const AdaptedBatch& batch);

}  // namespace adaptable::handler
