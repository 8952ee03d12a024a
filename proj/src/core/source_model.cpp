#include "adaptable/source_model.hpp"

#include "adaptable/errors.hpp"
#include "adaptable/metrics.hpp"
#include "text_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace adaptable::model {

void SourceModelConfig::validate() const {
  train.validate();
  require(validation_fraction >= 0 && validation_fraction < 1, ErrorCode::kConfig,
          "validation_fraction must be in [0, 1)");
  require(patience >= 1, ErrorCode::kConfig, "patience must be >= 1");
  for (auto h : hidden) require(h > 0, ErrorCode::kConfig, "hidden widths must be > 0");
}

nlohmann::json SourceModelConfig::to_json() const {
  nlohmann::json j = train.to_json();
  j["hidden"] = hidden;
  j["validation_fraction"] = validation_fraction;
  j["patience"] = patience;
  return j;
}

SourceModelConfig SourceModelConfig::from_json(const nlohmann::json& doc) {
  SourceModelConfig cfg;
  try {
    cfg.train = nn::TrainConfig::from_json(doc, cfg.train);
    cfg.hidden = doc.value("hidden", cfg.hidden);
    cfg.validation_fraction = doc.value("validation_fraction", cfg.validation_fraction);
    cfg.patience = doc.value("patience", cfg.patience);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed source_model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

SourceModel::SourceModel(nn::DenseNet net, data::Preprocessor pre, int num_classes)
    : net_(std::move(net)), pre_(std::move(pre)), num_classes_(num_classes) {
  require(net_.output_dim() == static_cast<size_t>(num_classes_), ErrorCode::kDimension,
          "source model output width != number of classes");
  require(net_.input_dim() == pre_.encoded_width(), ErrorCode::kDimension,
          "source model input width != encoded width");
}

Matrix SourceModel::predict_logits(const Matrix& encoded) const {
  require(static_cast<size_t>(encoded.cols()) == net_.input_dim(), ErrorCode::kDimension,
          "encoded width " + std::to_string(encoded.cols()) + " != model input " +
              std::to_string(net_.input_dim()));
  return net_.forward(encoded);
}

Matrix SourceModel::predict_logits(const data::Dataset& d) const {
  return predict_logits(pre_.apply(d));
}

void SourceModel::save(const std::filesystem::path& model_path) const {
  auto header = net_.header();
  header["num_classes"] = num_classes_;
  header["preprocessor"] = pre_.to_json();
  const auto values = net_.flatten();
  nn::write_parameter_file(model_path, header, values);
}

SourceModel SourceModel::load(const std::filesystem::path& model_path) {
  auto [header, values] = nn::read_parameter_file(model_path);
  nn::DenseNet net = nn::DenseNet::from_header(header);
  net.unflatten(values);
  return SourceModel(std::move(net), data::Preprocessor::from_json(header.at("preprocessor")),
                     header.at("num_classes").get<int>());
}

SourceModel train_source_classifier(const data::Dataset& source, const data::Preprocessor& pre,
                                    const SourceModelConfig& cfg, TrainingLog* log) {
  cfg.validate();
  require(source.has_labels(), ErrorCode::kInvalidArgument, "source classifier needs labels");
  const int num_classes = source.num_classes();
  require(num_classes >= 2, ErrorCode::kInvalidArgument, "source classifier needs C >= 2");

  const Matrix encoded = pre.apply(source);
  const auto& labels = *source.labels;
  const size_t n = source.rows();

  std::mt19937_64 rng(cfg.train.seed);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  size_t n_val = static_cast<size_t>(std::floor(cfg.validation_fraction * static_cast<double>(n)));
  if (n - n_val < 1) n_val = 0;
  std::vector<size_t> val_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<size_t> train_rows(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  Matrix val_x(static_cast<Eigen::Index>(val_rows.size()), encoded.cols());
  std::vector<ClassIndex> val_y;
  for (size_t k = 0; k < val_rows.size(); ++k) {
    val_x.row(static_cast<Eigen::Index>(k)) = encoded.row(static_cast<Eigen::Index>(val_rows[k]));
    val_y.push_back(labels[val_rows[k]]);
  }

  std::vector<size_t> dims{pre.encoded_width()};
  std::vector<nn::Activation> acts;
  for (auto h : cfg.hidden) {
    dims.push_back(h);
    acts.push_back(nn::Activation::kRelu);
  }
  dims.push_back(static_cast<size_t>(num_classes));
  acts.push_back(nn::Activation::kIdentity);
  nn::DenseNet net(dims, acts, cfg.train.seed);
  nn::Optimizer opt(cfg.train);

  TrainingLog local_log;
  std::vector<double> best_params = net.flatten();
  double best_f1 = -1.0;
  int since_best = 0;

  const size_t bs = cfg.train.batch_size;
  Matrix xb;
  std::vector<ClassIndex> yb;
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    std::shuffle(train_rows.begin(), train_rows.end(), rng);
    double loss_sum = 0.0;
    for (size_t start = 0; start < train_rows.size(); start += bs) {
      const size_t end = std::min(train_rows.size(), start + bs);
      xb.resize(static_cast<Eigen::Index>(end - start), encoded.cols());
      yb.clear();
      for (size_t k = start; k < end; ++k) {
        xb.row(static_cast<Eigen::Index>(k - start)) =
            encoded.row(static_cast<Eigen::Index>(train_rows[k]));
        yb.push_back(labels[train_rows[k]]);
      }
      nn::ForwardTape tape;
      const Matrix logits = net.forward(xb, tape);
      Matrix grad;
      const double loss = nn::softmax_cross_entropy(logits, yb, &grad);
      require(std::isfinite(loss), ErrorCode::kNumeric,
              "source training diverged at epoch " + std::to_string(epoch + 1));
      loss_sum += loss * static_cast<double>(end - start);
      nn::backward_and_step(net, tape, grad, opt);
    }
    local_log.epoch_loss.push_back(loss_sum / static_cast<double>(train_rows.size()));

    if (n_val > 0) {
      const Matrix val_logits = net.forward(val_x);
      std::vector<ClassIndex> pred(val_y.size());
      for (Eigen::Index i = 0; i < val_logits.rows(); ++i) {
        Eigen::Index arg = 0;
        val_logits.row(i).maxCoeff(&arg);
        pred[static_cast<size_t>(i)] = static_cast<ClassIndex>(arg);
      }
      const double f1 = metrics::classification_metrics(pred, val_y, num_classes).macro_f1;
      local_log.validation_f1.push_back(f1);
      if (f1 > best_f1) {
        best_f1 = f1;
        best_params = net.flatten();
        local_log.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    } else {
      local_log.best_epoch = epoch;
    }
  }
  if (n_val > 0) net.unflatten(best_params);
  if (log) *log = std::move(local_log);
  return SourceModel(std::move(net), pre, num_classes);
}

std::vector<LogitsBatch> split_logits(const Matrix& logits, size_t batch_size) {
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  std::vector<LogitsBatch> out;
  const auto n = static_cast<size_t>(logits.rows());
  for (size_t start = 0; start < n; start += batch_size) {
    const size_t end = std::min(n, start + batch_size);
    LogitsBatch b;
    b.logits = logits.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start));
    b.row_ids.resize(end - start);
    std::iota(b.row_ids.begin(), b.row_ids.end(), start);
    out.push_back(std::move(b));
  }
  return out;
}

ImportedLogits import_logits(std::istream& in, int num_classes, size_t batch_size) {
  require(num_classes >= 2, ErrorCode::kInvalidArgument, "import_logits needs C >= 2");
  std::vector<std::vector<double>> rows;
  std::string line;
  size_t record = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++record;
    const auto fields = detail::split_csv_line(line);
    require(fields.size() == static_cast<size_t>(num_classes), ErrorCode::kParse,
            "logit row " + std::to_string(record) + ": expected " + std::to_string(num_classes) +
                " values, found " + std::to_string(fields.size()));
    std::vector<double> row;
    for (const auto& f : fields) {
      const auto v = detail::parse_double(f);
      require(v.has_value() && std::isfinite(*v), ErrorCode::kParse,
              "logit row " + std::to_string(record) + ": not a finite number: '" + f + "'");
      row.push_back(*v);
    }
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), ErrorCode::kParse, "logit file has no rows");

  Matrix logits(static_cast<Eigen::Index>(rows.size()), num_classes);
  bool looks_like_probabilities = true;
  for (size_t i = 0; i < rows.size(); ++i) {
    double sum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
      const double v = rows[i][static_cast<size_t>(c)];
      logits(static_cast<Eigen::Index>(i), c) = v;
      sum += v;
      if (v < 0.0 || v > 1.0) looks_like_probabilities = false;
    }
    if (std::abs(sum - 1.0) > 1e-6) looks_like_probabilities = false;
  }
  ImportedLogits out;
  if (looks_like_probabilities) {
    log_warning("imported rows look like probabilities; converting with ln(p + 1e-12)");
    logits = (logits.array() + 1e-12).log().matrix();
    out.converted_from_probabilities = true;
  }
  out.batches = split_logits(logits, batch_size);
  return out;
}

ImportedLogits import_logits(const std::filesystem::path& path, int num_classes, size_t batch_size) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open logits " + path.string());
  return import_logits(in, num_classes, batch_size);
}

}  // namespace adaptable::model
