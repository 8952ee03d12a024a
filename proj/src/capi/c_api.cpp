#include "adaptable/adaptable.h"

#include "adaptable/config.hpp"
#include "adaptable/errors.hpp"
#include "adaptable/label_handler.hpp"
#include "adaptable/metrics.hpp"
#include "adaptable/pipeline.hpp"

#include <cstring>
#include <memory>
#include <optional>
#include <string>

struct at_handler {
  std::unique_ptr<adaptable::handler::LabelHandler> impl;
};

struct at_run {
  adaptable::config::RunConfig cfg;
  adaptable::pipeline::RunOptions options;
  std::optional<std::string> summary;
  std::string out_dir;
};

namespace {

thread_local std::string g_last_error;

at_status to_status(adaptable::ErrorCode code) {
  using adaptable::ErrorCode;
  switch (code) {
    case ErrorCode::kInvalidArgument: return AT_ERR_INVALID_ARGUMENT;
    case ErrorCode::kParse: return AT_ERR_PARSE;
    case ErrorCode::kSchema: return AT_ERR_SCHEMA;
    case ErrorCode::kDimension: return AT_ERR_DIMENSION;
    case ErrorCode::kNumeric: return AT_ERR_NUMERIC;
    case ErrorCode::kIo: return AT_ERR_IO;
    case ErrorCode::kConfig: return AT_ERR_CONFIG;
  }
  return AT_ERR_INTERNAL;
}

template <typename F>
at_status guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return AT_OK;
  } catch (const adaptable::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return AT_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return AT_ERR_INTERNAL;
  }
}

adaptable::handler::Mode to_mode(at_mode m) {
  switch (m) {
    case AT_MODE_FULL: return adaptable::handler::Mode::kFull;
    case AT_MODE_ALIGN_ONLY: return adaptable::handler::Mode::kAlignOnly;
    case AT_MODE_SOURCE_ONLY: return adaptable::handler::Mode::kSourceOnly;
  }
  adaptable::fail(adaptable::ErrorCode::kInvalidArgument, "unknown mode value");
}

void need(const void* p, const char* what) {
  adaptable::require(p != nullptr, adaptable::ErrorCode::kInvalidArgument,
                     std::string(what) + " must not be NULL");
}

}  // namespace

extern "C" {

const char* at_version(void) { return ADAPTABLE_VERSION_STRING; }

const char* at_status_string(at_status status) {
  switch (status) {
    case AT_OK: return "ok";
    case AT_ERR_INVALID_ARGUMENT: return "invalid argument";
    case AT_ERR_PARSE: return "parse error";
    case AT_ERR_SCHEMA: return "schema error";
    case AT_ERR_DIMENSION: return "dimension mismatch";
    case AT_ERR_NUMERIC: return "numeric error";
    case AT_ERR_IO: return "i/o error";
    case AT_ERR_CONFIG: return "configuration error";
    case AT_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* at_last_error(void) { return g_last_error.c_str(); }

void at_set_warnings(int enabled) { adaptable::set_warnings_enabled(enabled != 0); }

at_status at_handler_create(const double* source_prior, int num_classes, double alpha, double q_low,
                            double q_high, at_mode mode, at_handler** out) {
  return guarded([&] {
    need(source_prior, "source_prior");
    need(out, "out");
    adaptable::require(num_classes >= 2, adaptable::ErrorCode::kInvalidArgument, "num_classes must be >= 2");
    adaptable::handler::HandlerConfig cfg;
    cfg.alpha = alpha;
    cfg.q_low = q_low;
    cfg.q_high = q_high;
    cfg.mode = to_mode(mode);
    adaptable::Vector prior = Eigen::Map<const adaptable::Vector>(source_prior, num_classes);
    auto h = std::make_unique<at_handler>();
    h->impl = std::make_unique<adaptable::handler::LabelHandler>(std::move(prior), cfg);
    *out = h.release();
  });
}

at_status at_handler_adapt(at_handler* h, const double* logits, size_t n, const double* temperatures,
                           double* out_probs, int32_t* out_pred) {
  return guarded([&] {
    need(h, "handler");
    need(logits, "logits");
    adaptable::require(n >= 1, adaptable::ErrorCode::kInvalidArgument, "batch must have n >= 1 rows");
    const int c = h->impl->num_classes();
    const auto rows = static_cast<Eigen::Index>(n);
    const adaptable::Matrix z = Eigen::Map<const adaptable::Matrix>(logits, rows, c);
    adaptable::Vector t;
    if (temperatures) t = Eigen::Map<const adaptable::Vector>(temperatures, rows);
    const auto out = h->impl->adapt(z, t);
    if (out_probs) Eigen::Map<adaptable::Matrix>(out_probs, rows, c) = out.probabilities;
    if (out_pred) {
      for (size_t i = 0; i < n; ++i) out_pred[i] = out.predictions[i];
    }
  });
}

at_status at_handler_online_estimate(const at_handler* h, double* out) {
  return guarded([&] {
    need(h, "handler");
    need(out, "out");
    const auto& p = h->impl->state().p_oe;
    std::memcpy(out, p.data(), sizeof(double) * static_cast<size_t>(p.size()));
  });
}

void at_handler_destroy(at_handler* h) { delete h; }

at_status at_run_open(const char* config_path, const char* out_dir, at_run** out) {
  return guarded([&] {
    need(config_path, "config_path");
    need(out, "out");
    auto run = std::make_unique<at_run>();
    run->cfg = adaptable::config::load_run_config(config_path);
    if (out_dir && *out_dir) run->options.out = std::filesystem::path(out_dir);
    *out = run.release();
  });
}

at_status at_run_set_seed(at_run* run, uint64_t seed) {
  return guarded([&] {
    need(run, "run");
    run->options.seed = seed;
  });
}

at_status at_run_set_mode(at_run* run, at_mode mode) {
  return guarded([&] {
    need(run, "run");
    run->options.mode = to_mode(mode);
  });
}

at_status at_run_stage(at_run* run, const char* stage) {
  return guarded([&] {
    need(run, "run");
    need(stage, "stage");
    const auto s = adaptable::pipeline::stage_from_name(stage);
    adaptable::pipeline::Run r(run->cfg, run->options);
    run->out_dir = r.output_dir().string();
    r.execute(s);
    if (r.report()) run->summary = r.report()->summary_json().dump(2) + "\n";
  });
}

const char* at_run_output_dir(at_run* run) {
  if (!run) return "";
  try {
    run->out_dir = adaptable::config::resolve_output_dir(run->cfg, run->options.out).string();
  } catch (...) {
    run->out_dir.clear();
  }
  return run->out_dir.c_str();
}

at_status at_run_summary_json(at_run* run, char* buf, size_t capacity, size_t* needed) {
  return guarded([&] {
    need(run, "run");
    adaptable::require(run->summary.has_value(), adaptable::ErrorCode::kInvalidArgument,
                       "no summary yet: run the evaluate or pipeline stage first");
    const auto& s = *run->summary;
    if (needed) *needed = s.size() + 1;
    if (buf && capacity >= s.size() + 1) std::memcpy(buf, s.c_str(), s.size() + 1);
  });
}

void at_run_close(at_run* run) { delete run; }

at_status at_classification_metrics(const int32_t* predictions, const int32_t* labels, size_t n,
                                    int num_classes, double* balanced_accuracy, double* macro_f1) {
  return guarded([&] {
    need(predictions, "predictions");
    need(labels, "labels");
    const std::vector<adaptable::ClassIndex> p(predictions, predictions + n);
    const std::vector<adaptable::ClassIndex> y(labels, labels + n);
    const auto s = adaptable::metrics::classification_metrics(p, y, num_classes);
    if (balanced_accuracy) *balanced_accuracy = s.balanced_accuracy;
    if (macro_f1) *macro_f1 = s.macro_f1;
  });
}

at_status at_js_divergence(const double* p, const double* q, size_t len, double* out) {
  return guarded([&] {
    need(p, "p");
    need(q, "q");
    need(out, "out");
    *out = adaptable::metrics::js_divergence(std::span<const double>(p, len), std::span<const double>(q, len));
  });
}

at_status at_expected_calibration_error(const double* confidences, const uint8_t* correct, size_t n,
                                        int num_bins, double* out) {
  return guarded([&] {
    need(confidences, "confidences");
    need(correct, "correct");
    need(out, "out");
    *out = adaptable::metrics::expected_calibration_error(std::span<const double>(confidences, n),
                                                          std::span<const std::uint8_t>(correct, n),
                                                          num_bins)
               .ece;
  });
}

}  // extern "C"
