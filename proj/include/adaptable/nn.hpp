#pragma once

// Fixed-topology dense networks with hand-written reverse mode and SGD/Adam.

#include "adaptable/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace adaptable::nn {

enum class Activation { kRelu, kIdentity, kSoftplus };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Numerically stable log(1 + e^x).
double softplus(double x);

struct DenseLayer {
  Matrix weight;  // in x out
  RowVector bias;
  Activation activation = Activation::kIdentity;

  size_t in_dim() const { return static_cast<size_t>(weight.rows()); }
  size_t out_dim() const { return static_cast<size_t>(weight.cols()); }
};

struct LayerCache {
  Matrix input;
  Matrix pre_activation;
};

struct ForwardTape {
  std::vector<LayerCache> layers;
};

struct LayerGradient {
  Matrix weight;
  RowVector bias;
};

class DenseNet;

struct NetGradient {
  std::vector<LayerGradient> layers;

  static NetGradient zeros_like(const DenseNet& net);
  void set_zero();
  double norm() const;
};

class DenseNet {
 public:
  DenseNet() = default;

  // dims = {input, hidden..., output}; one activation per layer. Weights are
  // uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.
  DenseNet(const std::vector<size_t>& dims, const std::vector<Activation>& activations,
           std::uint64_t seed);

  static DenseNet from_layers(std::vector<DenseLayer> layers, std::uint64_t seed = 0);

  size_t input_dim() const;
  size_t output_dim() const;
  size_t num_layers() const { return layers_.size(); }
  size_t num_parameters() const;
  std::uint64_t seed() const { return seed_; }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  Matrix forward(const Matrix& inputs) const;
  Matrix forward(const Matrix& inputs, ForwardTape& tape) const;

  // Accumulates parameter gradients into `grads` and returns dL/dinputs.
  Matrix backward(const ForwardTape& tape, const Matrix& grad_outputs, NetGradient& grads) const;

  // Layer by layer: weight (row-major) then bias.
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);

  nlohmann::json header() const;
  static DenseNet from_header(const nlohmann::json& header);

  void set_zero();

 private:
  std::vector<DenseLayer> layers_;
  std::uint64_t seed_ = 0;
};

enum class OptimizerKind { kSgd, kAdam };

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 20;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double l2_penalty = 0.0;
  size_t batch_size = 64;

  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& doc);
  static TrainConfig from_json(const nlohmann::json& doc, TrainConfig defaults);
};

// One trainable tensor seen by the optimizer. `decay` enables the L2 term.
struct ParamSlot {
  std::span<double> value;
  std::span<const double> grad;
  bool decay = true;
};

// Moment buffers are bound to slot positions, so callers must pass the same
// slot layout on every step.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg);

  void step(std::span<const ParamSlot> slots);
  long steps_taken() const { return t_; }

 private:
  TrainConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

void append_slots(DenseNet& net, const NetGradient& grads, std::vector<ParamSlot>& slots);

struct StepReport {
  std::vector<double> layer_grad_norms;
};

// Backprop `grad_outputs` through `net`, then apply one optimizer step.
// Throws kNumeric naming the layer when a gradient is not finite.
StepReport backward_and_step(DenseNet& net, const ForwardTape& tape, const Matrix& grad_outputs,
                             Optimizer& optimizer);

// Throws kNumeric if any entry is not finite.
void check_finite(const NetGradient& grads, const std::string& what);

// ---------------------------------------------------------------------------
// Losses over logits. Each returns the mean loss and, when requested, the
// gradient with respect to its first argument.

Matrix softmax_rows(const Matrix& logits);
RowVector softmax(const RowVector& logits);

double softmax_cross_entropy(const Matrix& logits, std::span<const ClassIndex> labels,
                             Matrix* grad = nullptr);

double squared_error(const Matrix& predictions, const Matrix& targets, Matrix* grad = nullptr);

// ---------------------------------------------------------------------------
// Parameter files: one JSON header line, then `num_parameters` float64 values
// in little-endian order.

void write_parameter_file(const std::filesystem::path& path, nlohmann::json header,
                          std::span<const double> values);
std::pair<nlohmann::json, std::vector<double>> read_parameter_file(const std::filesystem::path& path);

void save_net(const DenseNet& net, const std::filesystem::path& path);
DenseNet load_net(const std::filesystem::path& path);

}  // namespace adaptable::nn
