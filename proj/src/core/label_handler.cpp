#include "adaptable/label_handler.hpp"

#include "adaptable/calibrator.hpp"
#include "adaptable/errors.hpp"
#include "adaptable/nn.hpp"
#include "text_io.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <vector>

namespace adaptable::handler {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::kFull: return "full";
    case Mode::kAlignOnly: return "align_only";
    case Mode::kSourceOnly: return "source_only";
  }
  return "full";
}

Mode mode_from_name(const std::string& name) {
  if (name == "full") return Mode::kFull;
  if (name == "align_only") return Mode::kAlignOnly;
  if (name == "source_only") return Mode::kSourceOnly;
  fail(ErrorCode::kConfig, "unknown mode '" + name + "' (expected full, align_only, source_only)");
}

void HandlerConfig::validate() const {
  require(alpha >= 0 && alpha <= 1, ErrorCode::kConfig, "alpha must lie in [0, 1]");
  require(q_low >= 0 && q_low < q_high && q_high <= 1, ErrorCode::kConfig,
          "quantiles must satisfy 0 <= q_low < q_high <= 1");
}

nlohmann::json HandlerConfig::to_json() const {
  return {{"alpha", alpha}, {"q_low", q_low}, {"q_high", q_high}, {"mode", mode_name(mode)},
          {"estimate_from_calibrated", estimate_from_calibrated}};
}

HandlerConfig HandlerConfig::from_json(const nlohmann::json& doc) {
  HandlerConfig cfg;
  try {
    cfg.alpha = doc.value("alpha", cfg.alpha);
    cfg.q_low = doc.value("q_low", cfg.q_low);
    cfg.q_high = doc.value("q_high", cfg.q_high);
    if (doc.contains("mode")) cfg.mode = mode_from_name(doc.at("mode").get<std::string>());
    cfg.estimate_from_calibrated = doc.value("estimate_from_calibrated", cfg.estimate_from_calibrated);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed handler config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

HandlerState HandlerState::uniform(int num_classes) {
  require(num_classes >= 2, ErrorCode::kInvalidArgument, "handler needs C >= 2");
  HandlerState s;
  s.p_oe = Vector::Constant(num_classes, 1.0 / num_classes);
  return s;
}

void HandlerState::validate() const {
  require(p_oe.size() >= 2 && (p_oe.array() >= 0).all() && std::abs(p_oe.sum() - 1.0) <= 1e-9,
          ErrorCode::kInvalidArgument, "handler state p_oe is not a probability vector");
}

// ---------------------------------------------------------------------------

double base_temperature(double rho) {
  require(rho >= 1.0 && std::isfinite(rho), ErrorCode::kInvalidArgument,
          "imbalance ratio must be finite and >= 1");
  if (rho == 1.0) {
    log_warning("balanced source (rho = 1): base temperature 1.5 rho / (rho - 1 + 1e-6) is about 1.5e6");
  }
  return 1.5 * rho / (rho - 1.0 + 1e-6);
}

ClassIndex argmax(const RowVector& row) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < row.size(); ++k) {
    if (row(k) > row(best)) best = k;
  }
  return static_cast<ClassIndex>(best);
}

namespace {

std::pair<ClassIndex, ClassIndex> top_two(const RowVector& v) {
  const ClassIndex first = argmax(v);
  ClassIndex second = first == 0 ? 1 : 0;
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (k != first && v(k) > v(second)) second = static_cast<ClassIndex>(k);
  }
  return {first, second};
}

RowVector normalized(const RowVector& v) {
  return v / std::max(v.sum(), kClampEps);
}

Vector clamped(const Vector& v) { return v.cwiseMax(kClampEps); }

}  // namespace

double margin_uncertainty(const RowVector& logits, double temperature, ClassIndex top,
                          ClassIndex runner_up) {
  require(temperature > 0, ErrorCode::kInvalidArgument, "temperature must be > 0");
  require(logits.size() >= 2, ErrorCode::kInvalidArgument, "margin needs C >= 2");
  const RowVector p = nn::softmax(logits / temperature);
  const double margin = std::max(p(top) - p(runner_up), kClampEps);
  return 1.0 / margin;
}

double margin_uncertainty(const RowVector& logits, double temperature) {
  require(logits.size() >= 2, ErrorCode::kInvalidArgument, "margin needs C >= 2");
  const auto [a, b] = top_two(logits);
  return margin_uncertainty(logits, temperature, a, b);
}

double quantile(std::span<const double> values, double q) {
  require(!values.empty(), ErrorCode::kInvalidArgument, "quantile of an empty list");
  require(q >= 0 && q <= 1, ErrorCode::kInvalidArgument, "quantile level must lie in [0, 1]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<size_t>(std::floor(h));
  const auto hi = std::min(v.size() - 1, static_cast<size_t>(std::ceil(h)));
  const double frac = h - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

Vector stage_two_temperature(const Vector& delta, double t, double q_low, double q_high) {
  require(delta.size() >= 1, ErrorCode::kInvalidArgument, "stage-two temperature needs N >= 1");
  require(t > 0, ErrorCode::kInvalidArgument, "base temperature must be > 0");
  const std::span<const double> view(delta.data(), static_cast<size_t>(delta.size()));
  const double hi = quantile(view, q_high);
  const double lo = quantile(view, q_low);
  Vector out(delta.size());
  for (Eigen::Index i = 0; i < delta.size(); ++i) {
    if (delta(i) >= hi) {
      out(i) = t;
    } else if (delta(i) <= lo) {
      out(i) = 1.0 / t;
    } else {
      out(i) = 1.0;
    }
  }
  return out;
}

RowVector debias_prediction(const RowVector& p, const Vector& p_s) {
  require(p.size() == p_s.size(), ErrorCode::kDimension, "debias: length mismatch");
  return normalized(p.cwiseQuotient(clamped(p_s).transpose()));
}

Vector estimate_target_distribution(const Matrix& debiased, const Vector& p_oe, double alpha) {
  require(debiased.rows() >= 1, ErrorCode::kInvalidArgument, "target estimate needs N >= 1");
  require(debiased.cols() == p_oe.size(), ErrorCode::kDimension, "target estimate: width mismatch");
  const Vector mean = debiased.colwise().mean().transpose();
  return (1.0 - alpha) * mean + alpha * p_oe;
}

RowVector align_distribution_baseline(const RowVector& p, const Vector& p_t, const Vector& p_s) {
  require(p.size() == p_t.size() && p.size() == p_s.size(), ErrorCode::kDimension,
          "alignment: length mismatch");
  return normalized(p.cwiseProduct(p_t.transpose()).cwiseQuotient(clamped(p_s).transpose()));
}

RowVector ensemble_prediction(const RowVector& logits, double t_tilde, const Vector& p_t,
                              const Vector& p_s) {
  require(t_tilde > 0, ErrorCode::kInvalidArgument, "stage-two temperature must be > 0");
  const RowVector p = nn::softmax(logits / t_tilde);
  return 0.5 * (p + align_distribution_baseline(p, p_t, p_s));
}

void update_online_estimator(HandlerState& state, const Matrix& probabilities, double alpha) {
  require(probabilities.rows() >= 1, ErrorCode::kInvalidArgument, "online update needs N >= 1");
  require(probabilities.cols() == state.p_oe.size(), ErrorCode::kDimension,
          "online update: width mismatch");
  const Vector mean = probabilities.colwise().mean().transpose();
  state.p_oe = (1.0 - alpha) * mean + alpha * state.p_oe;
  ++state.batch_index;
}

// ---------------------------------------------------------------------------

namespace {

AdaptedBatch run_handler(const Matrix& logits, const Vector& temperatures, const Vector& p_s,
                         double base_t, const HandlerConfig& cfg, HandlerState& state) {
  const auto n = logits.rows();
  const auto c = logits.cols();
  require(n >= 1, ErrorCode::kInvalidArgument, "adapt: empty batch");
  require(c == p_s.size() && c == state.p_oe.size(), ErrorCode::kDimension,
          "adapt: logit width does not match the number of classes");
  require(temperatures.size() == 0 || temperatures.size() == n, ErrorCode::kDimension,
          "adapt: one temperature per sample expected");
  require(logits.allFinite(), ErrorCode::kNumeric, "adapt: non-finite logits");

  AdaptedBatch out;
  out.temperatures = temperatures.size() == 0 ? Vector::Ones(n) : temperatures;
  require((out.temperatures.array() > 0).all(), ErrorCode::kNumeric, "adapt: temperatures must be > 0");
  out.uncertainties.resize(n);
  out.stage_two_temperatures = Vector::Ones(n);
  out.debiased.resize(n, c);
  out.probabilities.resize(n, c);
  out.predictions.resize(static_cast<size_t>(n));

  const Matrix p = nn::softmax_rows(logits);

  if (cfg.mode == Mode::kSourceOnly) {
    out.probabilities = p;
    out.debiased = p;
    out.target_estimate = state.p_oe;
    for (Eigen::Index i = 0; i < n; ++i) {
      out.uncertainties(i) = margin_uncertainty(logits.row(i), 1.0);
      out.predictions[static_cast<size_t>(i)] = argmax(p.row(i));
    }
    return out;
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [top, second] = top_two(p.row(i));
    out.uncertainties(i) = margin_uncertainty(logits.row(i), out.temperatures(i), top, second);
    const RowVector basis =
        cfg.estimate_from_calibrated ? RowVector(nn::softmax(logits.row(i) / out.temperatures(i)))
                                     : RowVector(p.row(i));
    out.debiased.row(i) = debias_prediction(basis, p_s);
  }
  out.target_estimate = estimate_target_distribution(out.debiased, state.p_oe, cfg.alpha);

  if (cfg.mode == Mode::kAlignOnly) {
    for (Eigen::Index i = 0; i < n; ++i) {
      out.probabilities.row(i) = align_distribution_baseline(p.row(i), out.target_estimate, p_s);
    }
  } else {
    out.stage_two_temperatures = stage_two_temperature(out.uncertainties, base_t, cfg.q_low, cfg.q_high);
    for (Eigen::Index i = 0; i < n; ++i) {
      out.probabilities.row(i) =
          ensemble_prediction(logits.row(i), out.stage_two_temperatures(i), out.target_estimate, p_s);
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    out.predictions[static_cast<size_t>(i)] = argmax(out.probabilities.row(i));
  }
  update_online_estimator(state, out.probabilities, cfg.alpha);
  return out;
}

double imbalance_of(const Vector& p_s) {
  return p_s.maxCoeff() / std::max(p_s.minCoeff(), kClampEps);
}

void check_prior(const Vector& p_s) {
  require(p_s.size() >= 2, ErrorCode::kInvalidArgument, "source prior needs C >= 2");
  require((p_s.array() > 0).all() && std::abs(p_s.sum() - 1.0) <= 1e-9, ErrorCode::kInvalidArgument,
          "source prior must be a strictly positive probability vector");
}

}  // namespace

LabelHandler::LabelHandler(Vector source_prior, HandlerConfig cfg)
    : source_prior_(std::move(source_prior)), cfg_(cfg) {
  cfg_.validate();
  check_prior(source_prior_);
  state_ = HandlerState::uniform(static_cast<int>(source_prior_.size()));
  if (cfg_.mode == Mode::kFull) base_temperature_ = handler::base_temperature(imbalance_of(source_prior_));
}

AdaptedBatch LabelHandler::adapt(const Matrix& logits, const Vector& temperatures) {
  return run_handler(logits, temperatures, source_prior_, base_temperature_, cfg_, state_);
}

AdaptedBatch LabelHandler::adapt(const Matrix& logits, const Matrix& encoded,
                                 const calib::Calibrator& calibrator) {
  if (cfg_.mode == Mode::kSourceOnly) return adapt(logits, Vector());
  return adapt(logits, calibrator.temperatures(encoded, logits));
}

AdaptedBatch adapt_batch(const Matrix& logits, const Vector& temperatures, const Vector& source_prior,
                         const HandlerConfig& cfg, HandlerState& state) {
  cfg.validate();
  check_prior(source_prior);
  state.validate();
  const double t = cfg.mode == Mode::kFull ? base_temperature(imbalance_of(source_prior)) : 1.0;
  return run_handler(logits, temperatures, source_prior, t, cfg, state);
}

// ---------------------------------------------------------------------------

void write_trace_header(std::ostream& out, int num_classes) {
  out << "batch_index,sample_id,T_i,delta_i,T_tilde_i";
  for (int c = 1; c <= num_classes; ++c) out << ",p_bar_" << c;
  out << ",predicted_class\n";
}

void write_trace_rows(std::ostream& out, size_t batch_index, std::span<const size_t> sample_ids,
                      const AdaptedBatch& b) {
  require(sample_ids.size() == static_cast<size_t>(b.probabilities.rows()), ErrorCode::kDimension,
          "trace: sample id count != batch size");
  using detail::format_double;
  for (Eigen::Index i = 0; i < b.probabilities.rows(); ++i) {
    out << batch_index << ',' << sample_ids[static_cast<size_t>(i)] << ','
        << format_double(b.temperatures(i)) << ',' << format_double(b.uncertainties(i)) << ','
        << format_double(b.stage_two_temperatures(i));
    for (Eigen::Index c = 0; c < b.probabilities.cols(); ++c) {
      out << ',' << format_double(b.probabilities(i, c));
    }
    out << ',' << b.predictions[static_cast<size_t>(i)] + 1 << '\n';
  }
}

}  // namespace adaptable::handler
