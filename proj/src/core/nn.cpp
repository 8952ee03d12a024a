#include "adaptable/nn.hpp"

#include "adaptable/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace adaptable::nn {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
    case Activation::kSoftplus: return "softplus";
  }
  return "identity";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "identity") return Activation::kIdentity;
  if (name == "softplus") return Activation::kSoftplus;
  fail(ErrorCode::kParse, "unknown activation '" + name + "'");
}

double softplus(double x) {
  // log1p(exp(x)) without overflow for large x.
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix activate(const Matrix& z, Activation a) {
  switch (a) {
    case Activation::kRelu: return z.cwiseMax(0.0);
    case Activation::kIdentity: return z;
    case Activation::kSoftplus: return z.unaryExpr([](double v) { return softplus(v); });
  }
  return z;
}

Matrix activation_derivative(const Matrix& z, Activation a) {
  switch (a) {
    case Activation::kRelu: return z.unaryExpr([](double v) { return v > 0 ? 1.0 : 0.0; });
    case Activation::kIdentity: return Matrix::Ones(z.rows(), z.cols());
    case Activation::kSoftplus: return z.unaryExpr([](double v) { return sigmoid(v); });
  }
  return Matrix::Ones(z.rows(), z.cols());
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

// ---------------------------------------------------------------------------
// NetGradient

NetGradient NetGradient::zeros_like(const DenseNet& net) {
  NetGradient g;
  for (const auto& layer : net.layers()) {
    g.layers.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                        RowVector::Zero(layer.bias.size())});
  }
  return g;
}

void NetGradient::set_zero() {
  for (auto& l : layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

double NetGradient::norm() const {
  double sq = 0.0;
  for (const auto& l : layers) sq += l.weight.squaredNorm() + l.bias.squaredNorm();
  return std::sqrt(sq);
}

// ---------------------------------------------------------------------------
// DenseNet

DenseNet::DenseNet(const std::vector<size_t>& dims, const std::vector<Activation>& activations,
                   std::uint64_t seed)
    : seed_(seed) {
  require(dims.size() >= 2, ErrorCode::kInvalidArgument, "DenseNet needs at least in/out dims");
  require(activations.size() == dims.size() - 1, ErrorCode::kInvalidArgument,
          "DenseNet needs one activation per layer");
  std::mt19937_64 rng(seed);
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    const size_t in = dims[l];
    const size_t out = dims[l + 1];
    require(in > 0 && out > 0, ErrorCode::kInvalidArgument, "DenseNet layer dims must be > 0");
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer;
    layer.weight.resize(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = dist(rng);
    }
    layer.bias = RowVector::Zero(static_cast<Eigen::Index>(out));
    layer.activation = activations[l];
    layers_.push_back(std::move(layer));
  }
}

DenseNet DenseNet::from_layers(std::vector<DenseLayer> layers, std::uint64_t seed) {
  require(!layers.empty(), ErrorCode::kInvalidArgument, "DenseNet needs at least one layer");
  for (size_t l = 0; l < layers.size(); ++l) {
    require(layers[l].bias.size() == layers[l].weight.cols(), ErrorCode::kDimension,
            "layer " + std::to_string(l) + " bias width != weight columns");
    if (l > 0) {
      require(layers[l].in_dim() == layers[l - 1].out_dim(), ErrorCode::kDimension,
              "layer " + std::to_string(l) + " input does not match previous output");
    }
  }
  DenseNet net;
  net.layers_ = std::move(layers);
  net.seed_ = seed;
  return net;
}

size_t DenseNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
size_t DenseNet::output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

size_t DenseNet::num_parameters() const {
  size_t n = 0;
  for (const auto& l : layers_) n += static_cast<size_t>(l.weight.size() + l.bias.size());
  return n;
}

Matrix DenseNet::forward(const Matrix& inputs) const {
  require(static_cast<size_t>(inputs.cols()) == input_dim(), ErrorCode::kDimension,
          "net input width " + std::to_string(inputs.cols()) + " != " + std::to_string(input_dim()));
  Matrix a = inputs;
  for (const auto& layer : layers_) {
    Matrix z = a * layer.weight;
    z.rowwise() += layer.bias;
    a = activate(z, layer.activation);
  }
  return a;
}

Matrix DenseNet::forward(const Matrix& inputs, ForwardTape& tape) const {
  require(static_cast<size_t>(inputs.cols()) == input_dim(), ErrorCode::kDimension,
          "net input width " + std::to_string(inputs.cols()) + " != " + std::to_string(input_dim()));
  tape.layers.clear();
  tape.layers.reserve(layers_.size());
  Matrix a = inputs;
  for (const auto& layer : layers_) {
    Matrix z = a * layer.weight;
    z.rowwise() += layer.bias;
    Matrix next = activate(z, layer.activation);
    tape.layers.push_back({std::move(a), std::move(z)});
    a = std::move(next);
  }
  return a;
}

Matrix DenseNet::backward(const ForwardTape& tape, const Matrix& grad_outputs,
                          NetGradient& grads) const {
  require(tape.layers.size() == layers_.size(), ErrorCode::kInvalidArgument,
          "backward called without a matching forward tape");
  if (grads.layers.size() != layers_.size()) grads = NetGradient::zeros_like(*this);
  Matrix delta = grad_outputs;
  for (size_t k = layers_.size(); k-- > 0;) {
    const auto& layer = layers_[k];
    const auto& cache = tape.layers[k];
    require(delta.rows() == cache.pre_activation.rows() &&
                delta.cols() == cache.pre_activation.cols(),
            ErrorCode::kDimension, "gradient shape mismatch at layer " + std::to_string(k));
    Matrix dz = delta.cwiseProduct(activation_derivative(cache.pre_activation, layer.activation));
    grads.layers[k].weight.noalias() += cache.input.transpose() * dz;
    grads.layers[k].bias += dz.colwise().sum();
    delta = dz * layer.weight.transpose();
  }
  return delta;
}

std::vector<double> DenseNet::flatten() const {
  std::vector<double> out;
  out.reserve(num_parameters());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return out;
}

void DenseNet::unflatten(std::span<const double> values) {
  require(values.size() == num_parameters(), ErrorCode::kDimension,
          "parameter count " + std::to_string(values.size()) + " != " +
              std::to_string(num_parameters()));
  size_t k = 0;
  for (auto& l : layers_) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(k), l.weight.size(), l.weight.data());
    k += static_cast<size_t>(l.weight.size());
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(k), l.bias.size(), l.bias.data());
    k += static_cast<size_t>(l.bias.size());
  }
}

nlohmann::json DenseNet::header() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    layers.push_back({{"in", l.in_dim()}, {"out", l.out_dim()},
                      {"activation", activation_name(l.activation)}});
  }
  return {{"format", "adaptable-dense-v1"}, {"layers", layers}, {"seed", seed_},
          {"num_parameters", num_parameters()}};
}

DenseNet DenseNet::from_header(const nlohmann::json& header) {
  std::vector<DenseLayer> layers;
  try {
    for (const auto& l : header.at("layers")) {
      DenseLayer layer;
      const auto in = l.at("in").get<Eigen::Index>();
      const auto out = l.at("out").get<Eigen::Index>();
      layer.weight = Matrix::Zero(in, out);
      layer.bias = RowVector::Zero(out);
      layer.activation = activation_from_name(l.at("activation").get<std::string>());
      layers.push_back(std::move(layer));
    }
    return from_layers(std::move(layers), header.value("seed", std::uint64_t{0}));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("malformed network header: ") + e.what());
  }
}

void DenseNet::set_zero() {
  for (auto& l : layers_) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

// ---------------------------------------------------------------------------
// Training configuration and optimizer

void TrainConfig::validate() const {
  require(learning_rate > 0 && std::isfinite(learning_rate), ErrorCode::kConfig,
          "learning_rate must be > 0");
  require(epochs >= 1, ErrorCode::kConfig, "epochs must be >= 1");
  require(l2_penalty >= 0, ErrorCode::kConfig, "l2_penalty must be >= 0");
  require(batch_size >= 1, ErrorCode::kConfig, "batch_size must be >= 1");
  if (optimizer == OptimizerKind::kAdam) {
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0,
            ErrorCode::kConfig, "adam needs 0 <= beta < 1 and epsilon > 0");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"epochs", epochs}, {"seed", seed},
          {"optimizer", optimizer == OptimizerKind::kAdam ? "adam" : "sgd"},
          {"beta1", beta1}, {"beta2", beta2}, {"epsilon", epsilon},
          {"l2_penalty", l2_penalty}, {"batch_size", batch_size}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc) { return from_json(doc, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const nlohmann::json& doc, TrainConfig cfg) {
  try {
    cfg.learning_rate = doc.value("learning_rate", cfg.learning_rate);
    cfg.epochs = doc.value("epochs", cfg.epochs);
    cfg.seed = doc.value("seed", cfg.seed);
    if (doc.contains("optimizer")) {
      const auto name = doc.at("optimizer").get<std::string>();
      require(name == "adam" || name == "sgd", ErrorCode::kConfig,
              "optimizer must be 'adam' or 'sgd'");
      cfg.optimizer = name == "adam" ? OptimizerKind::kAdam : OptimizerKind::kSgd;
    }
    cfg.beta1 = doc.value("beta1", cfg.beta1);
    cfg.beta2 = doc.value("beta2", cfg.beta2);
    cfg.epsilon = doc.value("epsilon", cfg.epsilon);
    cfg.l2_penalty = doc.value("l2_penalty", cfg.l2_penalty);
    cfg.batch_size = doc.value("batch_size", cfg.batch_size);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed training config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

Optimizer::Optimizer(const TrainConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

void Optimizer::step(std::span<const ParamSlot> slots) {
  ++t_;
  if (m_.size() != slots.size()) {
    m_.assign(slots.size(), {});
    v_.assign(slots.size(), {});
  }
  const double lr = cfg_.learning_rate;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t s = 0; s < slots.size(); ++s) {
    const auto& slot = slots[s];
    require(slot.value.size() == slot.grad.size(), ErrorCode::kDimension,
            "optimizer slot value/grad size mismatch");
    const double decay = slot.decay ? cfg_.l2_penalty : 0.0;
    if (cfg_.optimizer == OptimizerKind::kSgd) {
      for (size_t i = 0; i < slot.value.size(); ++i) {
        slot.value[i] -= lr * (slot.grad[i] + decay * slot.value[i]);
      }
      continue;
    }
    auto& m = m_[s];
    auto& v = v_[s];
    if (m.size() != slot.value.size()) {
      m.assign(slot.value.size(), 0.0);
      v.assign(slot.value.size(), 0.0);
    }
    for (size_t i = 0; i < slot.value.size(); ++i) {
      const double g = slot.grad[i] + decay * slot.value[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      slot.value[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

void append_slots(DenseNet& net, const NetGradient& grads, std::vector<ParamSlot>& slots) {
  require(grads.layers.size() == net.num_layers(), ErrorCode::kDimension,
          "gradient layout does not match network");
  for (size_t k = 0; k < net.num_layers(); ++k) {
    auto& layer = net.layers()[k];
    const auto& g = grads.layers[k];
    slots.push_back({std::span<double>(layer.weight.data(), static_cast<size_t>(layer.weight.size())),
                     std::span<const double>(g.weight.data(), static_cast<size_t>(g.weight.size())),
                     true});
    slots.push_back({std::span<double>(layer.bias.data(), static_cast<size_t>(layer.bias.size())),
                     std::span<const double>(g.bias.data(), static_cast<size_t>(g.bias.size())),
                     false});
  }
}

void check_finite(const NetGradient& grads, const std::string& what) {
  for (size_t k = 0; k < grads.layers.size(); ++k) {
    require(all_finite(grads.layers[k].weight) && grads.layers[k].bias.allFinite(),
            ErrorCode::kNumeric,
            "non-finite gradient in " + what + " layer " + std::to_string(k));
  }
}

StepReport backward_and_step(DenseNet& net, const ForwardTape& tape, const Matrix& grad_outputs,
                             Optimizer& optimizer) {
  NetGradient grads = NetGradient::zeros_like(net);
  net.backward(tape, grad_outputs, grads);
  check_finite(grads, "network");
  StepReport report;
  for (const auto& l : grads.layers) {
    report.layer_grad_norms.push_back(std::sqrt(l.weight.squaredNorm() + l.bias.squaredNorm()));
  }
  std::vector<ParamSlot> slots;
  append_slots(net, grads, slots);
  optimizer.step(slots);
  return report;
}

// ---------------------------------------------------------------------------
// Losses

RowVector softmax(const RowVector& logits) {
  const double m = logits.maxCoeff();
  RowVector e = (logits.array() - m).exp();
  return e / e.sum();
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) out.row(i) = softmax(logits.row(i));
  return out;
}

double softmax_cross_entropy(const Matrix& logits, std::span<const ClassIndex> labels,
                             Matrix* grad) {
  require(static_cast<size_t>(logits.rows()) == labels.size(), ErrorCode::kDimension,
          "cross-entropy: logits rows != labels");
  require(logits.rows() > 0, ErrorCode::kInvalidArgument, "cross-entropy on empty batch");
  const auto n = static_cast<double>(logits.rows());
  double loss = 0.0;
  if (grad) grad->resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto y = static_cast<Eigen::Index>(labels[static_cast<size_t>(i)]);
    require(y >= 0 && y < logits.cols(), ErrorCode::kInvalidArgument, "label out of range");
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    loss += lse - logits(i, y);
    if (grad) {
      grad->row(i) = (logits.row(i).array() - lse).exp().matrix() / n;
      (*grad)(i, y) -= 1.0 / n;
    }
  }
  return loss / n;
}

double squared_error(const Matrix& predictions, const Matrix& targets, Matrix* grad) {
  require(predictions.rows() == targets.rows() && predictions.cols() == targets.cols(),
          ErrorCode::kDimension, "squared error: shape mismatch");
  require(predictions.rows() > 0, ErrorCode::kInvalidArgument, "squared error on empty batch");
  const auto n = static_cast<double>(predictions.rows());
  const Matrix diff = predictions - targets;
  if (grad) *grad = 2.0 * diff / n;
  return diff.squaredNorm() / n;
}

// ---------------------------------------------------------------------------
// Parameter files

namespace {

void to_little_endian(double v, char* out) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out[b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
}

double from_little_endian(const unsigned char* in) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(in[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_parameter_file(const std::filesystem::path& path, nlohmann::json header,
                          std::span<const double> values) {
  header["num_parameters"] = values.size();
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << header.dump() << '\n';
  std::vector<char> buf(values.size() * 8);
  for (size_t i = 0; i < values.size(); ++i) to_little_endian(values[i], buf.data() + 8 * i);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "short write to " + path.string());
}

std::pair<nlohmann::json, std::vector<double>> read_parameter_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::kParse,
          path.string() + ": missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": bad header: " + e.what());
  }
  const auto count = header.value("num_parameters", size_t{0});
  std::vector<unsigned char> buf(count * 8);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  require(static_cast<size_t>(in.gcount()) == buf.size(), ErrorCode::kParse,
          path.string() + ": truncated parameter array");
  std::vector<double> values(count);
  for (size_t i = 0; i < count; ++i) values[i] = from_little_endian(buf.data() + 8 * i);
  return {std::move(header), std::move(values)};
}

void save_net(const DenseNet& net, const std::filesystem::path& path) {
  const auto values = net.flatten();
  write_parameter_file(path, net.header(), values);
}

DenseNet load_net(const std::filesystem::path& path) {
  auto [header, values] = read_parameter_file(path);
  DenseNet net = DenseNet::from_header(header);
  net.unflatten(values);
  return net;
}

}  // namespace adaptable::nn
