#include "adaptable/shift_sim.hpp"

#include "adaptable/errors.hpp"
#include "adaptable/nn.hpp"
#include "adaptable/random.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>

namespace adaptable::shift {

using data::ColumnKind;
using data::Dataset;

namespace {

// Inverse-CDF draws from a fixed weight vector.
class CdfSampler {
 public:
  explicit CdfSampler(const Vector& weights) : cdf_(static_cast<size_t>(weights.size())) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      require(weights(i) >= 0 && std::isfinite(weights(i)), ErrorCode::kInvalidArgument,
              "sampling weights must be finite and >= 0");
      acc += weights(i);
      cdf_[static_cast<size_t>(i)] = acc;
    }
    require(acc > 0, ErrorCode::kInvalidArgument, "sampling weights sum to zero");
  }

  size_t operator()(Rng& rng) const {
    std::uniform_real_distribution<double> unif(0.0, cdf_.back());
    const double u = unif(rng);
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) --it;
    return static_cast<size_t>(it - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
};

double population_std(const Eigen::Ref<const Vector>& c) {
  const double mean = c.mean();
  return std::sqrt((c.array() - mean).square().mean());
}

}  // namespace

// ---------------------------------------------------------------------------

const char* corruption_name(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::kGaussian: return "gaussian";
    case CorruptionKind::kUniform: return "uniform";
    case CorruptionKind::kRandomDrop: return "random_drop";
    case CorruptionKind::kColumnDrop: return "column_drop";
    case CorruptionKind::kNumerical: return "numerical";
    case CorruptionKind::kCategorical: return "categorical";
  }
  return "gaussian";
}

CorruptionKind corruption_from_name(const std::string& name) {
  for (auto k : {CorruptionKind::kGaussian, CorruptionKind::kUniform, CorruptionKind::kRandomDrop,
                 CorruptionKind::kColumnDrop, CorruptionKind::kNumerical, CorruptionKind::kCategorical}) {
    if (name == corruption_name(k)) return k;
  }
  fail(ErrorCode::kConfig, "unknown corruption kind '" + name + "'");
}

void CorruptionSpec::validate() const {
  require(scale > 0 && std::isfinite(scale), ErrorCode::kConfig, "corruption scale must be > 0");
  require(rate >= 0 && rate <= 1, ErrorCode::kConfig, "corruption rate must lie in [0, 1]");
}

nlohmann::json CorruptionSpec::to_json() const {
  return {{"kind", corruption_name(kind)}, {"scale", scale}, {"rate", rate}, {"seed", seed}};
}

CorruptionSpec CorruptionSpec::from_json(const nlohmann::json& doc) {
  CorruptionSpec s;
  try {
    s.kind = corruption_from_name(doc.at("kind").get<std::string>());
    s.scale = doc.value("scale", s.scale);
    s.rate = doc.value("rate", s.rate);
    s.seed = doc.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed corruption spec: ") + e.what());
  }
  s.validate();
  return s;
}

double CorruptionTally::mask_rate() const {
  return cells_considered == 0 ? 0.0
                               : static_cast<double>(cells_masked) / static_cast<double>(cells_considered);
}

nlohmann::json CorruptionTally::to_json() const {
  nlohmann::json j = {{"cells_modified", cells_modified},
                      {"categorical_cells_skipped", categorical_cells_skipped},
                      {"cells_masked", cells_masked},
                      {"cells_considered", cells_considered},
                      {"columns_dropped", columns_dropped}};
  if (important_column >= 0) j["important_column"] = important_column;
  return j;
}

std::vector<double> source_column_stds(const Dataset& source) {
  std::vector<double> out(source.cols(), 0.0);
  for (size_t j = 0; j < source.cols(); ++j) {
    if (source.schema.columns[j].kind != ColumnKind::kNumerical) continue;
    const double sd = population_std(source.cells.col(static_cast<Eigen::Index>(j)));
    out[j] = sd < 1e-12 ? 1.0 : sd;
  }
  return out;
}

Dataset apply_corruption(const Dataset& test, const Dataset& source, const CorruptionSpec& spec,
                         CorruptionTally* tally) {
  spec.validate();
  require(test.cols() == source.cols(), ErrorCode::kDimension,
          "corruption: test and source column counts differ");
  CorruptionTally t;
  if (spec.kind == CorruptionKind::kNumerical || spec.kind == CorruptionKind::kCategorical) {
    auto r = resample_by_importance(test, source,
                                    spec.kind == CorruptionKind::kNumerical ? ColumnKind::kNumerical
                                                                            : ColumnKind::kCategorical,
                                    spec.seed);
    t.important_column = static_cast<int>(r.column);
    t.cells_considered = test.rows() * test.cols();
    if (tally) *tally = t;
    return std::move(r.data);
  }
  require(source.rows() >= 1, ErrorCode::kInvalidArgument, "corruption needs a non-empty source");

  Dataset out = test;
  Rng rng(spec.seed);
  const auto n = static_cast<Eigen::Index>(test.rows());
  const auto d = static_cast<Eigen::Index>(test.cols());
  const auto& cols = test.schema.columns;
  std::uniform_int_distribution<Eigen::Index> source_row(0, static_cast<Eigen::Index>(source.rows()) - 1);
  t.cells_considered = test.rows() * test.cols();

  switch (spec.kind) {
    case CorruptionKind::kGaussian:
    case CorruptionKind::kUniform: {
      const auto sd = source_column_stds(source);
      std::normal_distribution<double> gauss(0.0, spec.scale);
      std::uniform_real_distribution<double> unif(-spec.scale, spec.scale);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
          if (cols[static_cast<size_t>(j)].kind != ColumnKind::kNumerical) {
            ++t.categorical_cells_skipped;
            continue;
          }
          const double z = spec.kind == CorruptionKind::kGaussian ? gauss(rng) : unif(rng);
          out.cells(i, j) += z * sd[static_cast<size_t>(j)];
          ++t.cells_modified;
        }
      }
      break;
    }
    case CorruptionKind::kRandomDrop: {
      std::bernoulli_distribution mask(spec.rate);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
          if (!mask(rng)) continue;
          out.cells(i, j) = source.cells(source_row(rng), j);
          ++t.cells_masked;
          ++t.cells_modified;
        }
      }
      break;
    }
    case CorruptionKind::kColumnDrop: {
      std::bernoulli_distribution mask(spec.rate);
      std::vector<bool> dropped(static_cast<size_t>(d));
      for (Eigen::Index j = 0; j < d; ++j) dropped[static_cast<size_t>(j)] = mask(rng);
      for (Eigen::Index j = 0; j < d; ++j) {
        if (!dropped[static_cast<size_t>(j)]) continue;
        ++t.columns_dropped;
        for (Eigen::Index i = 0; i < n; ++i) out.cells(i, j) = source.cells(source_row(rng), j);
        t.cells_masked += test.rows();
        t.cells_modified += test.rows();
      }
      break;
    }
    default:
      break;
  }
  if (tally) *tally = t;
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> feature_importance(const Dataset& source, std::uint64_t seed) {
  require(source.has_labels(), ErrorCode::kInvalidArgument, "feature importance needs source labels");
  const auto pre = data::Preprocessor::fit(source);
  const Matrix x = pre.apply(source);
  const int c = source.num_classes();

  nn::TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.l2_penalty = 1e-3;
  cfg.seed = seed;
  nn::DenseNet lr({pre.encoded_width(), static_cast<size_t>(c)}, {nn::Activation::kIdentity}, seed);
  nn::Optimizer opt(cfg);
  for (int step = 0; step < 300; ++step) {
    nn::ForwardTape tape;
    const Matrix logits = lr.forward(x, tape);
    Matrix grad;
    const double loss = nn::softmax_cross_entropy(logits, *source.labels, &grad);
    require(std::isfinite(loss), ErrorCode::kNumeric, "importance regression diverged");
    nn::backward_and_step(lr, tape, grad, opt);
  }

  const Matrix& w = lr.layers()[0].weight;  // encoded x C
  std::vector<double> importance(pre.num_columns(), 0.0);
  for (size_t u = 0; u < pre.num_columns(); ++u) {
    const auto& g = pre.groups()[u];
    for (size_t k = 0; k < g.width; ++k) {
      const auto row = static_cast<Eigen::Index>(g.start + k);
      double scale = 1.0;
      if (g.kind == ColumnKind::kCategorical) scale = population_std(x.col(row));
      importance[u] = std::max(importance[u], w.row(row).cwiseAbs().maxCoeff() * scale);
    }
  }
  return importance;
}

size_t most_important_column(const Dataset& source, ColumnKind kind, std::uint64_t seed) {
  const auto imp = feature_importance(source, seed);
  std::optional<size_t> best;
  for (size_t u = 0; u < imp.size(); ++u) {
    if (source.schema.columns[u].kind != kind) continue;
    if (!best || imp[u] > imp[*best]) best = u;
  }
  require(best.has_value(), ErrorCode::kInvalidArgument,
          std::string("no ") + (kind == ColumnKind::kNumerical ? "numerical" : "categorical") +
              " column to shift");
  return *best;
}

Vector inverse_likelihood_probabilities(std::span<const double> log_likelihoods) {
  require(!log_likelihoods.empty(), ErrorCode::kInvalidArgument, "no likelihoods");
  Vector neg(static_cast<Eigen::Index>(log_likelihoods.size()));
  for (size_t i = 0; i < log_likelihoods.size(); ++i) {
    require(std::isfinite(log_likelihoods[i]), ErrorCode::kNumeric, "non-finite log-likelihood");
    neg(static_cast<Eigen::Index>(i)) = -log_likelihoods[i];
  }
  const Vector e = (neg.array() - neg.maxCoeff()).exp();
  return e / e.sum();
}

ResampleResult resample_by_importance(const Dataset& test, const Dataset& source, ColumnKind kind,
                                      std::uint64_t seed) {
  require(test.cols() == source.cols(), ErrorCode::kDimension,
          "resampling: test and source column counts differ");
  require(test.rows() >= 1, ErrorCode::kInvalidArgument, "resampling: empty test set");
  ResampleResult r;
  r.column = most_important_column(source, kind, seed);
  const auto j = static_cast<Eigen::Index>(r.column);
  const auto src = source.cells.col(j);
  std::vector<double> loglik(test.rows());

  if (kind == ColumnKind::kNumerical) {
    const double mu = src.mean();
    const double sd = population_std(src);
    require(sd >= 1e-12, ErrorCode::kInvalidArgument,
            "most important numerical column '" + source.schema.columns[r.column].name +
                "' has zero variance on the source; choose a different column");
    const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * sd * sd);
    for (size_t i = 0; i < test.rows(); ++i) {
      const double z = (test.cells(static_cast<Eigen::Index>(i), j) - mu) / sd;
      loglik[i] = log_norm - 0.5 * z * z;
    }
  } else {
    const size_t k = source.schema.columns[r.column].categories.size();
    std::vector<double> p(k, 0.0);
    for (Eigen::Index i = 0; i < src.size(); ++i) p[static_cast<size_t>(src(i))] += 1.0;
    for (auto& v : p) v = std::max(v / static_cast<double>(src.size()), kClampEps);
    for (size_t i = 0; i < test.rows(); ++i) {
      const double code = test.cells(static_cast<Eigen::Index>(i), j);
      loglik[i] = std::log(code < 0 ? kClampEps : p[static_cast<size_t>(code)]);
    }
  }
  r.probabilities = inverse_likelihood_probabilities(loglik);
  const CdfSampler draw(r.probabilities);
  Rng rng(seed);
  r.row_ids.resize(test.rows());
  for (auto& id : r.row_ids) id = draw(rng);
  r.data = test.subset(r.row_ids);
  return r;
}

// ---------------------------------------------------------------------------

const char* label_shift_name(LabelShiftKind k) {
  switch (k) {
    case LabelShiftKind::kNone: return "none";
    case LabelShiftKind::kClassImbalance: return "class_imbalance";
    case LabelShiftKind::kTemporal: return "temporal";
  }
  return "none";
}

LabelShiftKind label_shift_from_name(const std::string& name) {
  for (auto k : {LabelShiftKind::kNone, LabelShiftKind::kClassImbalance, LabelShiftKind::kTemporal}) {
    if (name == label_shift_name(k)) return k;
  }
  fail(ErrorCode::kConfig, "unknown label shift kind '" + name + "'");
}

void LabelShiftSpec::validate() const {
  require(rho >= 1, ErrorCode::kConfig, "label shift rho must be >= 1");
  require(window >= 1, ErrorCode::kConfig, "label shift window must be >= 1");
  require(eta > 0, ErrorCode::kConfig, "label shift eta must be > 0");
}

nlohmann::json LabelShiftSpec::to_json() const {
  return {{"kind", label_shift_name(kind)}, {"rho", rho}, {"window", window}, {"eta", eta},
          {"length", length}, {"with_replacement", with_replacement}, {"seed", seed}};
}

LabelShiftSpec LabelShiftSpec::from_json(const nlohmann::json& doc) {
  LabelShiftSpec s;
  try {
    s.kind = label_shift_from_name(doc.value("kind", std::string("none")));
    s.rho = doc.value("rho", s.rho);
    s.window = doc.value("window", s.window);
    s.eta = doc.value("eta", s.eta);
    s.length = doc.value("length", s.length);
    s.with_replacement = doc.value("with_replacement", s.with_replacement);
    s.seed = doc.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed label shift spec: ") + e.what());
  }
  s.validate();
  return s;
}

Vector class_imbalance_weights(std::span<const ClassIndex> labels, const Vector& source_label_dist,
                               double rho) {
  const auto c = static_cast<size_t>(source_label_dist.size());
  require(c >= 1, ErrorCode::kInvalidArgument, "class imbalance needs C >= 1");
  std::vector<size_t> order(c);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return source_label_dist(static_cast<Eigen::Index>(a)) < source_label_dist(static_cast<Eigen::Index>(b));
  });
  std::vector<double> rank(c);
  for (size_t r = 0; r < c; ++r) rank[order[r]] = static_cast<double>(r + 1);
  Vector w(static_cast<Eigen::Index>(labels.size()));
  for (size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && static_cast<size_t>(labels[i]) < c, ErrorCode::kInvalidArgument,
            "label out of range");
    w(static_cast<Eigen::Index>(i)) = rank[static_cast<size_t>(labels[i])] / static_cast<double>(c) * (rho - 1.0) + 1.0;
  }
  return w;
}

LabelShiftStream sample_label_shifted_stream(const Dataset& test, const Vector& source_label_dist,
                                             const LabelShiftSpec& spec) {
  spec.validate();
  require(test.has_labels(), ErrorCode::kInvalidArgument, "label-shift sampling needs test labels");
  require(source_label_dist.size() == test.num_classes(), ErrorCode::kDimension,
          "source label distribution length != number of classes");
  const auto& labels = *test.labels;
  const size_t n = test.rows();
  const size_t length = spec.length == 0 ? n : spec.length;
  Rng rng(spec.seed);
  LabelShiftStream s;

  switch (spec.kind) {
    case LabelShiftKind::kNone: {
      require(length <= n || spec.with_replacement, ErrorCode::kInvalidArgument,
              "stream longer than the test set without replacement");
      s.rows.resize(length);
      for (size_t i = 0; i < length; ++i) s.rows[i] = i % n;
      break;
    }
    case LabelShiftKind::kClassImbalance: {
      const Vector w = class_imbalance_weights(labels, source_label_dist, spec.rho);
      s.row_probabilities = w / w.sum();
      if (spec.with_replacement) {
        const CdfSampler draw(w);
        s.rows.resize(length);
        for (auto& r : s.rows) r = draw(rng);
      } else {
        require(length <= n, ErrorCode::kInvalidArgument,
                "requested stream of " + std::to_string(length) + " rows exceeds the " +
                    std::to_string(n) + " test rows and replacement is disabled");
        // Weighted sampling without replacement via keys u^(1/w).
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        std::vector<std::pair<double, size_t>> keys(n);
        for (size_t i = 0; i < n; ++i) {
          keys[i] = {std::log(unif(rng)) / w(static_cast<Eigen::Index>(i)), i};
        }
        std::stable_sort(keys.begin(), keys.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (size_t i = 0; i < length; ++i) s.rows.push_back(keys[i].second);
      }
      break;
    }
    case LabelShiftKind::kTemporal: {
      const int c = test.num_classes();
      std::vector<std::vector<size_t>> pool(static_cast<size_t>(c));
      for (size_t i = 0; i < n; ++i) pool[static_cast<size_t>(labels[i])].push_back(i);
      Vector p_prev = Vector::Constant(c, 1.0 / c);
      std::deque<ClassIndex> recent;
      std::vector<double> counts(static_cast<size_t>(c), 0.0);
      for (size_t i = 0; i < length; ++i) {
        Vector pi = sample_dirichlet(rng, p_prev).cwiseMax(spec.eta);
        pi /= pi.sum();
        s.pi.push_back(pi);
        for (int k = 0; k < c; ++k) {
          if (pool[static_cast<size_t>(k)].empty()) pi(k) = 0.0;
        }
        const auto y = static_cast<ClassIndex>(sample_categorical(rng, pi));
        const auto& rows = pool[static_cast<size_t>(y)];
        std::uniform_int_distribution<size_t> pick(0, rows.size() - 1);
        s.rows.push_back(rows[pick(rng)]);

        recent.push_back(y);
        counts[static_cast<size_t>(y)] += 1.0;
        if (recent.size() > static_cast<size_t>(spec.window)) {
          counts[static_cast<size_t>(recent.front())] -= 1.0;
          recent.pop_front();
        }
        Vector p(c);
        for (int k = 0; k < c; ++k) p(k) = counts[static_cast<size_t>(k)] / static_cast<double>(recent.size());
        s.window.push_back(p);
        p_prev = p;
      }
      break;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------

namespace {

Vector checked_dist(const std::vector<double>& d, int c, const char* what, bool strictly_positive) {
  require(static_cast<int>(d.size()) == c, ErrorCode::kInvalidArgument,
          std::string(what) + " must have one entry per class");
  Vector v = Eigen::Map<const Vector>(d.data(), static_cast<Eigen::Index>(d.size()));
  require((v.array() >= 0).all() && std::abs(v.sum() - 1.0) <= 1e-9, ErrorCode::kInvalidArgument,
          std::string(what) + " is not a probability vector");
  if (strictly_positive) {
    require((v.array() > 0).all(), ErrorCode::kInvalidArgument,
            std::string(what) + " must give every class positive mass");
  }
  return v;
}

}  // namespace

void SyntheticSpec::validate() const {
  require(num_classes >= 2, ErrorCode::kConfig, "synthetic data needs C >= 2");
  require(num_numerical >= num_classes, ErrorCode::kConfig,
          "synthetic data needs at least one numerical column per class");
  require(num_categorical >= 0, ErrorCode::kConfig, "num_categorical must be >= 0");
  require(num_categorical == 0 || categories_per_column >= 1, ErrorCode::kConfig,
          "categories_per_column must be >= 1");
  require(n_source >= 1 && n_target >= 1, ErrorCode::kConfig, "synthetic sizes must be >= 1");
  require(class_separation >= 0 && std::isfinite(class_separation), ErrorCode::kConfig,
          "class_separation must be >= 0");
  require(categorical_signal >= 0 && categorical_signal <= 1, ErrorCode::kConfig,
          "categorical_signal must lie in [0, 1]");
  checked_dist(source_label_dist, num_classes, "source_label_dist", true);
  checked_dist(target_label_dist, num_classes, "target_label_dist", false);
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"num_classes", num_classes},
          {"num_numerical", num_numerical},
          {"num_categorical", num_categorical},
          {"categories_per_column", categories_per_column},
          {"n_source", n_source},
          {"n_target", n_target},
          {"source_label_dist", source_label_dist},
          {"target_label_dist", target_label_dist},
          {"class_separation", class_separation},
          {"categorical_signal", categorical_signal},
          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& doc) {
  SyntheticSpec s;
  try {
    s.num_classes = doc.value("num_classes", s.num_classes);
    s.num_numerical = doc.value("num_numerical", s.num_numerical);
    s.num_categorical = doc.value("num_categorical", s.num_categorical);
    s.categories_per_column = doc.value("categories_per_column", s.categories_per_column);
    s.n_source = doc.value("n_source", s.n_source);
    s.n_target = doc.value("n_target", s.n_target);
    s.source_label_dist = doc.value("source_label_dist", s.source_label_dist);
    s.target_label_dist = doc.value("target_label_dist", s.target_label_dist);
    s.class_separation = doc.value("class_separation", s.class_separation);
    s.categorical_signal = doc.value("categorical_signal", s.categorical_signal);
    s.seed = doc.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

data::Schema synthetic_schema(const SyntheticSpec& spec) {
  data::Schema schema;
  for (int j = 0; j < spec.num_numerical; ++j) {
    schema.columns.push_back({"num_" + std::to_string(j + 1), ColumnKind::kNumerical, {}});
  }
  for (int j = 0; j < spec.num_categorical; ++j) {
    data::ColumnSchema col{"cat_" + std::to_string(j + 1), ColumnKind::kCategorical, {}};
    for (int k = 0; k < spec.categories_per_column; ++k) col.categories.push_back("c" + std::to_string(k));
    schema.columns.push_back(std::move(col));
  }
  schema.label = {"label", spec.num_classes};
  schema.validate();
  return schema;
}

std::pair<Dataset, Dataset> generate_synthetic_dataset(const SyntheticSpec& spec) {
  spec.validate();
  const data::Schema schema = synthetic_schema(spec);
  const double offset = spec.class_separation / std::numbers::sqrt2;
  Rng rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  auto make = [&](size_t n, const std::vector<double>& dist) {
    const Vector p = Eigen::Map<const Vector>(dist.data(), static_cast<Eigen::Index>(dist.size()));
    Dataset d;
    d.schema = schema;
    d.cells.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(schema.num_columns()));
    d.labels.emplace(n);
    const int k_cat = spec.categories_per_column;
    for (size_t i = 0; i < n; ++i) {
      const auto y = static_cast<ClassIndex>(sample_categorical(rng, p));
      (*d.labels)[i] = y;
      const auto row = static_cast<Eigen::Index>(i);
      for (int j = 0; j < spec.num_numerical; ++j) {
        d.cells(row, j) = noise(rng) + (j == y % spec.num_numerical ? offset : 0.0);
      }
      for (int j = 0; j < spec.num_categorical; ++j) {
        Vector q = Vector::Constant(k_cat, (1.0 - spec.categorical_signal) / k_cat);
        q(y % k_cat) += spec.categorical_signal;
        d.cells(row, spec.num_numerical + j) = static_cast<double>(sample_categorical(rng, q));
      }
    }
    return d;
  };
  Dataset source = make(spec.n_source, spec.source_label_dist);
  Dataset target = make(spec.n_target, spec.target_label_dist);
  return {std::move(source), std::move(target)};
}

void write_with_provenance(const Dataset& d, const std::filesystem::path& path,
                           const nlohmann::json& provenance) {
  data::write_dataset_csv(d, path);
  std::ofstream out(path.string() + ".provenance.json");
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write provenance for " + path.string());
  out << provenance.dump(2) << '\n';
}

}  // namespace adaptable::shift
