#pragma once

// Shift-aware uncertainty calibrator: per-column batch trends feed a message
// passing network over the fully connected column graph, whose pooled
// embedding is combined with each sample's logits to emit a temperature.

#include "adaptable/nn.hpp"
#include "adaptable/source_model.hpp"
#include "adaptable/tabular.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace adaptable::calib {

inline constexpr double kTemperatureOffset = 0.05;
inline constexpr size_t kNodeFeatures = 4;  // mean, std, min, max of s_u

// s_u for every original column u, stored column-wise: values(i, u).
struct ShiftTrend {
  Matrix values;  // N x D
};

// Categorical groups are reduced to one value per sample with a learned
// weight vector: s_iu = w_u . (x_i,group - mean_group). Numerical columns use
// x_iu - mean_u directly. `categorical_weights` is indexed by original column
// and ignored for numerical columns.
ShiftTrend compute_shift_trend(const Matrix& encoded, const std::vector<data::ColumnGroup>& groups,
                               const Vector& column_means,
                               const std::vector<Vector>& categorical_weights);

struct CalibratorConfig {
  nn::TrainConfig train{};
  double gamma = 2.0;
  double lambda_cal = 0.1;
  size_t node_width = 16;
  size_t head_width = 32;
  int message_layers = 2;

  void validate() const;
  nlohmann::json to_json() const;
  static CalibratorConfig from_json(const nlohmann::json& doc);
};

struct CalibratorGradient;
struct CalibratorTape;

class Calibrator {
 public:
  Calibrator() = default;

  // Fresh parameters, Glorot-initialized from `seed`.
  Calibrator(std::vector<data::ColumnGroup> groups, Vector column_means, int num_classes,
             const CalibratorConfig& cfg, std::uint64_t seed);

  int num_classes() const { return num_classes_; }
  size_t num_columns() const { return groups_.size(); }
  const CalibratorConfig& config() const { return cfg_; }
  const std::vector<data::ColumnGroup>& groups() const { return groups_; }
  const Vector& column_means() const { return column_means_; }

  ShiftTrend trend(const Matrix& encoded) const;

  // Temperatures T_i > 0.05 for one batch of encoded rows and their logits.
  Vector temperatures(const Matrix& encoded, const Matrix& logits) const;
  Vector temperatures(const Matrix& encoded, const Matrix& logits, CalibratorTape& tape) const;

  // Accumulates dL/dparams given dL/dT.
  void backward(const CalibratorTape& tape, const Vector& grad_temperatures,
                CalibratorGradient& grads) const;

  CalibratorGradient zero_gradient() const;
  void append_slots(CalibratorGradient& grads, std::vector<nn::ParamSlot>& slots);

  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);
  size_t num_parameters() const;

  // Zero the output head so that every T_i equals softplus(0) + 0.05.
  void zero_head();

  // Direct access for tests.
  nn::DenseNet& numerical_projection() { return num_proj_; }
  nn::DenseNet& categorical_projection() { return cat_proj_; }
  std::vector<nn::DenseNet>& message_layers() { return mp_; }
  nn::DenseNet& head() { return head_; }
  std::vector<Vector>& categorical_weights() { return cat_weights_; }

  void save(const std::filesystem::path& path) const;
  static Calibrator load(const std::filesystem::path& path);

 private:
  CalibratorConfig cfg_;
  std::vector<data::ColumnGroup> groups_;
  Vector column_means_;
  int num_classes_ = 0;
  std::vector<Vector> cat_weights_;
  nn::DenseNet num_proj_;
  nn::DenseNet cat_proj_;
  std::vector<nn::DenseNet> mp_;
  nn::DenseNet head_;
};

struct CalibratorGradient {
  std::vector<Vector> categorical_weights;
  nn::NetGradient numerical_projection;
  nn::NetGradient categorical_projection;
  std::vector<nn::NetGradient> message_layers;
  nn::NetGradient head;

  void set_zero();
  bool all_finite() const;
};

struct CalibratorTape {
  Matrix centered;         // N x encoded width, x - mean
  ShiftTrend trend;
  Matrix node_features;    // D x 4
  std::vector<Eigen::Index> argmin;
  std::vector<Eigen::Index> argmax;
  std::vector<size_t> numerical_nodes;
  std::vector<size_t> categorical_nodes;
  nn::ForwardTape numerical_projection;
  nn::ForwardTape categorical_projection;
  std::vector<nn::ForwardTape> message_layers;
  nn::ForwardTape head;
};

// ---------------------------------------------------------------------------
// Post-training objective.

struct LossValue {
  double focal = 0.0;        // mean focal term
  double calibration = 0.0;  // mean calibration term
  double total = 0.0;        // focal + lambda * calibration
};

// Per-sample focal loss -(1-p_y)^gamma log p_y at p = softmax(z / T).
double focal_loss(const RowVector& logits, double temperature, ClassIndex label, double gamma);

// 1 - p* + p** when the top class is correct, else p* - p**.
double calibration_penalty(const RowVector& logits, double temperature, ClassIndex label);

// Mean of focal + lambda * calibration over the batch. When `grad` is given
// it receives dLoss/dT_i.
LossValue calibration_objective(const Matrix& logits, const Vector& temperatures,
                                std::span<const ClassIndex> labels, double gamma, double lambda_cal,
                                Vector* grad = nullptr);

struct CalibratorLog {
  std::vector<double> epoch_loss;
};

// Fits the calibrator on the labeled source set through the frozen model.
Calibrator post_train_calibrator(const data::Dataset& source, const model::SourceModel& model,
                                 const data::SourceStats& stats, const CalibratorConfig& cfg,
                                 CalibratorLog* log = nullptr);

}  // namespace adaptable::calib
