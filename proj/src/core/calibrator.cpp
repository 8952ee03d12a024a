#include "adaptable/calibrator.hpp"

#include "adaptable/errors.hpp"
#include "adaptable/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace adaptable::calib {

namespace {

using data::ColumnKind;

size_t encoded_width(const std::vector<data::ColumnGroup>& groups) {
  size_t w = 0;
  for (const auto& g : groups) w = std::max(w, g.start + g.width);
  return w;
}

ShiftTrend trend_from_centered(const Matrix& centered, const std::vector<data::ColumnGroup>& groups,
                               const std::vector<Vector>& cat_weights) {
  ShiftTrend t;
  t.values.resize(centered.rows(), static_cast<Eigen::Index>(groups.size()));
  for (size_t u = 0; u < groups.size(); ++u) {
    const auto& g = groups[u];
    const auto col = static_cast<Eigen::Index>(u);
    const auto start = static_cast<Eigen::Index>(g.start);
    if (g.kind == ColumnKind::kNumerical) {
      t.values.col(col) = centered.col(start);
    } else {
      const Vector& w = cat_weights[u];
      require(w.size() == static_cast<Eigen::Index>(g.width), ErrorCode::kDimension,
              "categorical projection width mismatch for column " + std::to_string(u));
      t.values.col(col) = centered.middleCols(start, static_cast<Eigen::Index>(g.width)) * w;
    }
  }
  return t;
}

Matrix broadcast_rows(const RowVector& row, Eigen::Index n) {
  return row.replicate(n, 1);
}

// [H | mean(H)] for every node.
Matrix with_global_mean(const Matrix& h) {
  Matrix x(h.rows(), 2 * h.cols());
  x.leftCols(h.cols()) = h;
  x.rightCols(h.cols()) = broadcast_rows(h.colwise().mean(), h.rows());
  return x;
}

struct TopTwo {
  Eigen::Index first = 0;
  Eigen::Index second = 1;
};

TopTwo top_two(const RowVector& z) {
  TopTwo t;
  t.first = 0;
  for (Eigen::Index k = 1; k < z.size(); ++k) {
    if (z(k) > z(t.first)) t.first = k;
  }
  t.second = t.first == 0 ? 1 : 0;
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    if (k != t.first && z(k) > z(t.second)) t.second = k;
  }
  return t;
}

}  // namespace

ShiftTrend compute_shift_trend(const Matrix& encoded, const std::vector<data::ColumnGroup>& groups,
                               const Vector& column_means,
                               const std::vector<Vector>& categorical_weights) {
  require(encoded.rows() >= 1, ErrorCode::kInvalidArgument, "shift trend needs N >= 1");
  require(static_cast<size_t>(encoded.cols()) == encoded_width(groups) &&
              column_means.size() == encoded.cols(),
          ErrorCode::kDimension,
          "shift trend: batch width " + std::to_string(encoded.cols()) +
              " does not match the column layout (" + std::to_string(encoded_width(groups)) + ")");
  require(categorical_weights.size() == groups.size(), ErrorCode::kDimension,
          "shift trend: one projection slot per column expected");
  const Matrix centered = encoded.rowwise() - column_means.transpose();
  return trend_from_centered(centered, groups, categorical_weights);
}

// ---------------------------------------------------------------------------

void CalibratorConfig::validate() const {
  train.validate();
  require(gamma >= 0, ErrorCode::kConfig, "gamma must be >= 0");
  require(lambda_cal >= 0, ErrorCode::kConfig, "lambda_cal must be >= 0");
  require(node_width >= 1 && head_width >= 1, ErrorCode::kConfig, "calibrator widths must be >= 1");
  require(message_layers >= 0, ErrorCode::kConfig, "message_layers must be >= 0");
}

nlohmann::json CalibratorConfig::to_json() const {
  nlohmann::json j = train.to_json();
  j["gamma"] = gamma;
  j["lambda_cal"] = lambda_cal;
  j["node_width"] = node_width;
  j["head_width"] = head_width;
  j["message_layers"] = message_layers;
  return j;
}

CalibratorConfig CalibratorConfig::from_json(const nlohmann::json& doc) {
  CalibratorConfig cfg;
  try {
    cfg.train = nn::TrainConfig::from_json(doc, cfg.train);
    cfg.gamma = doc.value("gamma", cfg.gamma);
    cfg.lambda_cal = doc.value("lambda_cal", cfg.lambda_cal);
    cfg.node_width = doc.value("node_width", cfg.node_width);
    cfg.head_width = doc.value("head_width", cfg.head_width);
    cfg.message_layers = doc.value("message_layers", cfg.message_layers);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed calibrator config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------

Calibrator::Calibrator(std::vector<data::ColumnGroup> groups, Vector column_means, int num_classes,
                       const CalibratorConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), groups_(std::move(groups)), column_means_(std::move(column_means)),
      num_classes_(num_classes) {
  cfg_.validate();
  require(!groups_.empty(), ErrorCode::kInvalidArgument, "calibrator needs at least one column");
  require(num_classes_ >= 2, ErrorCode::kInvalidArgument, "calibrator needs C >= 2");
  require(static_cast<size_t>(column_means_.size()) == encoded_width(groups_), ErrorCode::kDimension,
          "column means do not match the encoded width");

  Rng rng(seed);
  cat_weights_.resize(groups_.size());
  for (size_t u = 0; u < groups_.size(); ++u) {
    const auto& g = groups_[u];
    if (g.kind != ColumnKind::kCategorical) continue;
    const double bound = std::sqrt(6.0 / static_cast<double>(g.width + 1));
    std::uniform_real_distribution<double> dist(-bound, bound);
    cat_weights_[u].resize(static_cast<Eigen::Index>(g.width));
    for (auto& w : cat_weights_[u]) w = dist(rng);
  }
  const size_t w = cfg_.node_width;
  using nn::Activation;
  num_proj_ = nn::DenseNet({kNodeFeatures, w}, {Activation::kRelu}, seed + 1);
  cat_proj_ = nn::DenseNet({kNodeFeatures, w}, {Activation::kRelu}, seed + 2);
  for (int l = 0; l < cfg_.message_layers; ++l) {
    mp_.emplace_back(std::vector<size_t>{2 * w, w}, std::vector<Activation>{Activation::kRelu},
                     seed + 3 + static_cast<std::uint64_t>(l));
  }
  const size_t head_in = w + static_cast<size_t>(num_classes_) + groups_.size();
  head_ = nn::DenseNet({head_in, cfg_.head_width, 1}, {Activation::kRelu, Activation::kSoftplus},
                       seed + 101);
}

ShiftTrend Calibrator::trend(const Matrix& encoded) const {
  return compute_shift_trend(encoded, groups_, column_means_, cat_weights_);
}

Vector Calibrator::temperatures(const Matrix& encoded, const Matrix& logits) const {
  CalibratorTape tape;
  return temperatures(encoded, logits, tape);
}

Vector Calibrator::temperatures(const Matrix& encoded, const Matrix& logits,
                                CalibratorTape& tape) const {
  require(logits.rows() == encoded.rows(), ErrorCode::kDimension,
          "calibrator: logits have " + std::to_string(logits.rows()) + " rows, batch has " +
              std::to_string(encoded.rows()));
  require(logits.cols() == num_classes_, ErrorCode::kDimension,
          "calibrator: logit width != number of classes");
  tape.trend = trend(encoded);
  tape.centered = encoded.rowwise() - column_means_.transpose();

  const auto n = encoded.rows();
  const auto d = static_cast<Eigen::Index>(groups_.size());
  const auto& s = tape.trend.values;
  tape.node_features.resize(d, static_cast<Eigen::Index>(kNodeFeatures));
  tape.argmin.assign(static_cast<size_t>(d), 0);
  tape.argmax.assign(static_cast<size_t>(d), 0);
  for (Eigen::Index u = 0; u < d; ++u) {
    const auto col = s.col(u);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().mean();
    tape.node_features(u, 0) = mean;
    tape.node_features(u, 1) = std::sqrt(var);
    tape.node_features(u, 2) = col.minCoeff(&tape.argmin[static_cast<size_t>(u)]);
    tape.node_features(u, 3) = col.maxCoeff(&tape.argmax[static_cast<size_t>(u)]);
  }

  tape.numerical_nodes.clear();
  tape.categorical_nodes.clear();
  for (size_t u = 0; u < groups_.size(); ++u) {
    (groups_[u].kind == ColumnKind::kNumerical ? tape.numerical_nodes : tape.categorical_nodes)
        .push_back(u);
  }
  const auto width = static_cast<Eigen::Index>(cfg_.node_width);
  Matrix h(d, width);
  auto project = [&](const std::vector<size_t>& nodes, const nn::DenseNet& net, nn::ForwardTape& t) {
    if (nodes.empty()) return;
    Matrix x(static_cast<Eigen::Index>(nodes.size()), static_cast<Eigen::Index>(kNodeFeatures));
    for (size_t k = 0; k < nodes.size(); ++k) {
      x.row(static_cast<Eigen::Index>(k)) = tape.node_features.row(static_cast<Eigen::Index>(nodes[k]));
    }
    const Matrix out = net.forward(x, t);
    for (size_t k = 0; k < nodes.size(); ++k) {
      h.row(static_cast<Eigen::Index>(nodes[k])) = out.row(static_cast<Eigen::Index>(k));
    }
  };
  project(tape.numerical_nodes, num_proj_, tape.numerical_projection);
  project(tape.categorical_nodes, cat_proj_, tape.categorical_projection);

  tape.message_layers.resize(mp_.size());
  for (size_t l = 0; l < mp_.size(); ++l) {
    h = mp_[l].forward(with_global_mean(h), tape.message_layers[l]);
  }

  const RowVector pooled = h.colwise().mean();
  Matrix head_in(n, width + num_classes_ + d);
  head_in.leftCols(width) = broadcast_rows(pooled, n);
  head_in.middleCols(width, num_classes_) = logits;
  head_in.rightCols(d) = s;
  const Matrix out = head_.forward(head_in, tape.head);
  return out.col(0).array() + kTemperatureOffset;
}

void Calibrator::backward(const CalibratorTape& tape, const Vector& grad_temperatures,
                          CalibratorGradient& grads) const {
  const auto n = tape.trend.values.rows();
  const auto d = static_cast<Eigen::Index>(groups_.size());
  const auto width = static_cast<Eigen::Index>(cfg_.node_width);
  require(grad_temperatures.size() == n, ErrorCode::kDimension,
          "calibrator backward: gradient length != batch size");
  const Matrix d_out = grad_temperatures;
  const Matrix d_head_in = head_.backward(tape.head, d_out, grads.head);

  const RowVector d_pooled = d_head_in.leftCols(width).colwise().sum();
  Matrix d_h = broadcast_rows(d_pooled / static_cast<double>(d), d);
  Matrix d_s = d_head_in.rightCols(d);

  for (size_t l = mp_.size(); l-- > 0;) {
    const Matrix d_x = mp_[l].backward(tape.message_layers[l], d_h, grads.message_layers[l]);
    const RowVector d_mean = d_x.rightCols(width).colwise().sum() / static_cast<double>(d);
    d_h = d_x.leftCols(width) + broadcast_rows(d_mean, d);
  }

  Matrix d_features = Matrix::Zero(d, static_cast<Eigen::Index>(kNodeFeatures));
  auto unproject = [&](const std::vector<size_t>& nodes, const nn::DenseNet& net,
                       const nn::ForwardTape& t, nn::NetGradient& g) {
    if (nodes.empty()) return;
    Matrix dy(static_cast<Eigen::Index>(nodes.size()), width);
    for (size_t k = 0; k < nodes.size(); ++k) {
      dy.row(static_cast<Eigen::Index>(k)) = d_h.row(static_cast<Eigen::Index>(nodes[k]));
    }
    const Matrix dx = net.backward(t, dy, g);
    for (size_t k = 0; k < nodes.size(); ++k) {
      d_features.row(static_cast<Eigen::Index>(nodes[k])) = dx.row(static_cast<Eigen::Index>(k));
    }
  };
  unproject(tape.numerical_nodes, num_proj_, tape.numerical_projection, grads.numerical_projection);
  unproject(tape.categorical_nodes, cat_proj_, tape.categorical_projection,
            grads.categorical_projection);

  const auto& s = tape.trend.values;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index u = 0; u < d; ++u) {
    const double mean = tape.node_features(u, 0);
    const double sd = tape.node_features(u, 1);
    d_s.col(u).array() += d_features(u, 0) * inv_n;
    if (sd > 0) {
      d_s.col(u).array() += d_features(u, 1) * (s.col(u).array() - mean) * (inv_n / sd);
    }
    d_s(tape.argmin[static_cast<size_t>(u)], u) += d_features(u, 2);
    d_s(tape.argmax[static_cast<size_t>(u)], u) += d_features(u, 3);
  }

  for (size_t u = 0; u < groups_.size(); ++u) {
    const auto& g = groups_[u];
    if (g.kind != ColumnKind::kCategorical) continue;
    grads.categorical_weights[u] +=
        tape.centered.middleCols(static_cast<Eigen::Index>(g.start), static_cast<Eigen::Index>(g.width))
            .transpose() *
        d_s.col(static_cast<Eigen::Index>(u));
  }
}

CalibratorGradient Calibrator::zero_gradient() const {
  CalibratorGradient g;
  g.categorical_weights.resize(cat_weights_.size());
  for (size_t u = 0; u < cat_weights_.size(); ++u) {
    g.categorical_weights[u] = Vector::Zero(cat_weights_[u].size());
  }
  g.numerical_projection = nn::NetGradient::zeros_like(num_proj_);
  g.categorical_projection = nn::NetGradient::zeros_like(cat_proj_);
  for (const auto& net : mp_) g.message_layers.push_back(nn::NetGradient::zeros_like(net));
  g.head = nn::NetGradient::zeros_like(head_);
  return g;
}

void Calibrator::append_slots(CalibratorGradient& grads, std::vector<nn::ParamSlot>& slots) {
  for (size_t u = 0; u < cat_weights_.size(); ++u) {
    if (cat_weights_[u].size() == 0) continue;
    slots.push_back({std::span<double>(cat_weights_[u].data(), static_cast<size_t>(cat_weights_[u].size())),
                     std::span<const double>(grads.categorical_weights[u].data(),
                                             static_cast<size_t>(grads.categorical_weights[u].size())),
                     true});
  }
  nn::append_slots(num_proj_, grads.numerical_projection, slots);
  nn::append_slots(cat_proj_, grads.categorical_projection, slots);
  for (size_t l = 0; l < mp_.size(); ++l) nn::append_slots(mp_[l], grads.message_layers[l], slots);
  nn::append_slots(head_, grads.head, slots);
}

void CalibratorGradient::set_zero() {
  for (auto& w : categorical_weights) w.setZero();
  numerical_projection.set_zero();
  categorical_projection.set_zero();
  for (auto& g : message_layers) g.set_zero();
  head.set_zero();
}

bool CalibratorGradient::all_finite() const {
  auto net_ok = [](const nn::NetGradient& g) {
    for (const auto& l : g.layers) {
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    }
    return true;
  };
  for (const auto& w : categorical_weights) {
    if (!w.allFinite()) return false;
  }
  if (!net_ok(numerical_projection) || !net_ok(categorical_projection) || !net_ok(head)) return false;
  return std::all_of(message_layers.begin(), message_layers.end(), net_ok);
}

std::vector<double> Calibrator::flatten() const {
  std::vector<double> out;
  for (const auto& w : cat_weights_) out.insert(out.end(), w.data(), w.data() + w.size());
  auto add = [&](const nn::DenseNet& net) {
    const auto v = net.flatten();
    out.insert(out.end(), v.begin(), v.end());
  };
  add(num_proj_);
  add(cat_proj_);
  for (const auto& net : mp_) add(net);
  add(head_);
  return out;
}

size_t Calibrator::num_parameters() const {
  size_t n = num_proj_.num_parameters() + cat_proj_.num_parameters() + head_.num_parameters();
  for (const auto& w : cat_weights_) n += static_cast<size_t>(w.size());
  for (const auto& net : mp_) n += net.num_parameters();
  return n;
}

void Calibrator::unflatten(std::span<const double> values) {
  require(values.size() == num_parameters(), ErrorCode::kDimension,
          "calibrator parameter count mismatch: got " + std::to_string(values.size()) +
              ", expected " + std::to_string(num_parameters()));
  size_t pos = 0;
  for (auto& w : cat_weights_) {
    for (auto& v : w) v = values[pos++];
  }
  auto take = [&](nn::DenseNet& net) {
    const size_t k = net.num_parameters();
    net.unflatten(values.subspan(pos, k));
    pos += k;
  };
  take(num_proj_);
  take(cat_proj_);
  for (auto& net : mp_) take(net);
  take(head_);
}

void Calibrator::zero_head() { head_.set_zero(); }

void Calibrator::save(const std::filesystem::path& path) const {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : groups_) {
    groups.push_back({{"kind", g.kind == ColumnKind::kNumerical ? "numerical" : "categorical"},
                      {"start", g.start},
                      {"width", g.width}});
  }
  nlohmann::json mp = nlohmann::json::array();
  for (const auto& net : mp_) mp.push_back(net.header());
  nlohmann::json header = {
      {"format", "adaptable-calibrator-v1"},
      {"gamma", cfg_.gamma},
      {"lambda_cal", cfg_.lambda_cal},
      {"config", cfg_.to_json()},
      {"num_classes", num_classes_},
      {"groups", groups},
      {"column_means", std::vector<double>(column_means_.data(), column_means_.data() + column_means_.size())},
      {"layers",
       {{"numerical_projection", num_proj_.header()},
        {"categorical_projection", cat_proj_.header()},
        {"message_passing", mp},
        {"head", head_.header()}}}};
  nn::write_parameter_file(path, header, flatten());
}

Calibrator Calibrator::load(const std::filesystem::path& path) {
  auto [header, values] = nn::read_parameter_file(path);
  Calibrator c;
  try {
    require(header.value("format", std::string()) == "adaptable-calibrator-v1", ErrorCode::kParse,
            path.string() + ": not a calibrator parameter file");
    c.cfg_ = CalibratorConfig::from_json(header.at("config"));
    c.num_classes_ = header.at("num_classes").get<int>();
    for (const auto& g : header.at("groups")) {
      data::ColumnGroup group;
      group.kind = g.at("kind").get<std::string>() == "numerical" ? ColumnKind::kNumerical
                                                                 : ColumnKind::kCategorical;
      group.start = g.at("start").get<size_t>();
      group.width = g.at("width").get<size_t>();
      c.groups_.push_back(group);
    }
    const auto means = header.at("column_means").get<std::vector<double>>();
    c.column_means_ = Eigen::Map<const Vector>(means.data(), static_cast<Eigen::Index>(means.size()));
    const auto& layers = header.at("layers");
    c.num_proj_ = nn::DenseNet::from_header(layers.at("numerical_projection"));
    c.cat_proj_ = nn::DenseNet::from_header(layers.at("categorical_projection"));
    for (const auto& h : layers.at("message_passing")) c.mp_.push_back(nn::DenseNet::from_header(h));
    c.head_ = nn::DenseNet::from_header(layers.at("head"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": malformed calibrator header: " + e.what());
  }
  c.cat_weights_.resize(c.groups_.size());
  for (size_t u = 0; u < c.groups_.size(); ++u) {
    if (c.groups_[u].kind == ColumnKind::kCategorical) {
      c.cat_weights_[u] = Vector::Zero(static_cast<Eigen::Index>(c.groups_[u].width));
    }
  }
  c.unflatten(values);
  return c;
}

// ---------------------------------------------------------------------------
// Objective

namespace {

struct SampleTerms {
  double focal = 0.0;
  double calibration = 0.0;
  double d_temperature = 0.0;  // d(focal + lambda * calibration)/dT
};

SampleTerms sample_terms(const RowVector& z, double temperature, ClassIndex y, double gamma,
                         double lambda_cal, bool want_grad) {
  require(temperature > 0, ErrorCode::kNumeric, "temperature must be > 0");
  require(y >= 0 && y < z.size(), ErrorCode::kInvalidArgument, "label out of range");
  const RowVector a = z / temperature;
  const double m = a.maxCoeff();
  const double lse = m + std::log((a.array() - m).exp().sum());
  const RowVector p = (a.array() - lse).exp();
  const double log_py = a(y) - lse;
  const double py = p(y);
  const double q = 1.0 - py;

  SampleTerms t;
  t.focal = -std::pow(q, gamma) * log_py;
  const TopTwo top = top_two(z);
  const double p1 = p(top.first);
  const double p2 = p(top.second);
  const bool correct = top.first == y;
  t.calibration = correct ? 1.0 - p1 + p2 : p1 - p2;
  if (!want_grad) return t;

  // Gradient with respect to a = z / T.
  double coef = std::pow(q, gamma);
  if (gamma != 0.0 && q > 0.0) coef -= gamma * std::pow(q, gamma - 1.0) * py * log_py;
  RowVector da = -coef * (-p);
  da(y) += -coef;

  const double sign = correct ? -1.0 : 1.0;
  // d p_j / d a_k = p_j (1{j=k} - p_k)
  RowVector dp1 = -p1 * p;
  dp1(top.first) += p1;
  RowVector dp2 = -p2 * p;
  dp2(top.second) += p2;
  da += lambda_cal * sign * (dp1 - dp2);

  t.d_temperature = -(da.array() * z.array()).sum() / (temperature * temperature);
  return t;
}

}  // namespace

double focal_loss(const RowVector& logits, double temperature, ClassIndex label, double gamma) {
  return sample_terms(logits, temperature, label, gamma, 0.0, false).focal;
}

double calibration_penalty(const RowVector& logits, double temperature, ClassIndex label) {
  return sample_terms(logits, temperature, label, 0.0, 0.0, false).calibration;
}

LossValue calibration_objective(const Matrix& logits, const Vector& temperatures,
                                std::span<const ClassIndex> labels, double gamma, double lambda_cal,
                                Vector* grad) {
  const auto n = logits.rows();
  require(n >= 1, ErrorCode::kInvalidArgument, "calibration objective on an empty batch");
  require(temperatures.size() == n && labels.size() == static_cast<size_t>(n), ErrorCode::kDimension,
          "calibration objective: length mismatch");
  require(logits.cols() >= 2, ErrorCode::kInvalidArgument, "calibration objective needs C >= 2");
  LossValue v;
  if (grad) grad->resize(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto t = sample_terms(logits.row(i), temperatures(i), labels[static_cast<size_t>(i)], gamma,
                                lambda_cal, grad != nullptr);
    v.focal += t.focal * inv_n;
    v.calibration += t.calibration * inv_n;
    if (grad) (*grad)(i) = t.d_temperature * inv_n;
  }
  v.total = v.focal + lambda_cal * v.calibration;
  return v;
}

// ---------------------------------------------------------------------------

Calibrator post_train_calibrator(const data::Dataset& source, const model::SourceModel& model,
                                 const data::SourceStats& stats, const CalibratorConfig& cfg,
                                 CalibratorLog* log) {
  cfg.validate();
  require(source.has_labels(), ErrorCode::kInvalidArgument, "calibrator post-training needs labels");
  const Matrix encoded = model.preprocessor().apply(source);
  const Matrix logits = model.predict_logits(encoded);
  const auto& labels = *source.labels;

  Calibrator cal(model.preprocessor().groups(), stats.column_means, model.num_classes(), cfg,
                 cfg.train.seed);
  nn::Optimizer opt(cfg.train);
  CalibratorGradient grads = cal.zero_gradient();
  std::vector<nn::ParamSlot> slots;
  cal.append_slots(grads, slots);

  Rng rng(cfg.train.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<size_t> order(source.rows());
  std::iota(order.begin(), order.end(), size_t{0});
  const size_t bs = cfg.train.batch_size;

  CalibratorLog local;
  Matrix xb, zb;
  std::vector<ClassIndex> yb;
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += bs) {
      const size_t end = std::min(order.size(), start + bs);
      const auto rows = static_cast<Eigen::Index>(end - start);
      xb.resize(rows, encoded.cols());
      zb.resize(rows, logits.cols());
      yb.clear();
      for (size_t k = start; k < end; ++k) {
        const auto r = static_cast<Eigen::Index>(order[k]);
        xb.row(static_cast<Eigen::Index>(k - start)) = encoded.row(r);
        zb.row(static_cast<Eigen::Index>(k - start)) = logits.row(r);
        yb.push_back(labels[order[k]]);
      }
      CalibratorTape tape;
      const Vector temps = cal.temperatures(xb, zb, tape);
      Vector d_temps;
      const auto loss = calibration_objective(zb, temps, yb, cfg.gamma, cfg.lambda_cal, &d_temps);
      require(std::isfinite(loss.total), ErrorCode::kNumeric,
              "calibrator post-training diverged at epoch " + std::to_string(epoch + 1));
      loss_sum += loss.total * static_cast<double>(rows);
      grads.set_zero();
      cal.backward(tape, d_temps, grads);
      require(grads.all_finite(), ErrorCode::kNumeric,
              "calibrator gradient is not finite at epoch " + std::to_string(epoch + 1));
      opt.step(slots);
    }
    local.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
  }
  if (log) *log = std::move(local);
  return cal;
}

}  // namespace adaptable::calib
