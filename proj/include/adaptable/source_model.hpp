#pragma once

#include "adaptable/nn.hpp"
#include "adaptable/tabular.hpp"

#include <filesystem>
#include <vector>

namespace adaptable::model {

struct SourceModelConfig {
  std::vector<size_t> hidden{128, 128};
  nn::TrainConfig train{};
  // Seeded hold-out used for early stopping on macro F1. 0 disables it.
  double validation_fraction = 0.1;
  int patience = 10;

  void validate() const;
  nlohmann::json to_json() const;
  static SourceModelConfig from_json(const nlohmann::json& doc);
};

struct TrainingLog {
  std::vector<double> epoch_loss;       // mean training loss per epoch
  std::vector<double> validation_f1;    // empty when validation is off
  int best_epoch = -1;
};

// Frozen classifier f_theta together with the encoder it was trained on.
class SourceModel {
 public:
  SourceModel() = default;
  SourceModel(nn::DenseNet net, data::Preprocessor pre, int num_classes);

  int num_classes() const { return num_classes_; }
  const nn::DenseNet& net() const { return net_; }
  nn::DenseNet& net() { return net_; }
  const data::Preprocessor& preprocessor() const { return pre_; }

  // Rows of already-encoded inputs -> logits (N x C).
  Matrix predict_logits(const Matrix& encoded) const;
  Matrix predict_logits(const data::Dataset& d) const;

  void save(const std::filesystem::path& model_path) const;
  static SourceModel load(const std::filesystem::path& model_path);

 private:
  nn::DenseNet net_;
  data::Preprocessor pre_;
  int num_classes_ = 0;
};

SourceModel train_source_classifier(const data::Dataset& source, const data::Preprocessor& pre,
                                    const SourceModelConfig& cfg, TrainingLog* log = nullptr);

struct LogitsBatch {
  Matrix logits;                // N x C
  std::vector<size_t> row_ids;  // positions in the aligned target dataset
};

// Headerless CSV of N rows x C numbers, batched in file order. Files whose
// rows all look like probabilities (entries in [0,1], sums 1 +- 1e-6) are
// converted with ln(p + 1e-12) and a warning is logged.
struct ImportedLogits {
  std::vector<LogitsBatch> batches;
  bool converted_from_probabilities = false;
};

ImportedLogits import_logits(const std::filesystem::path& path, int num_classes, size_t batch_size);
ImportedLogits import_logits(std::istream& in, int num_classes, size_t batch_size);

std::vector<LogitsBatch> split_logits(const Matrix& logits, size_t batch_size);

}  // namespace adaptable::model
