#include "adaptable/pipeline.hpp"

#include "adaptable/calibrator.hpp"
#include "adaptable/errors.hpp"
#include "adaptable/metrics.hpp"
#include "adaptable/random.hpp"
#include "text_io.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace adaptable::pipeline {

namespace fs = std::filesystem;
using detail::format_double;

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kTrain: return "train";
    case Stage::kCalibrate: return "calibrate";
    case Stage::kSimulate: return "simulate";
    case Stage::kAdapt: return "adapt";
    case Stage::kEvaluate: return "evaluate";
    case Stage::kPipeline: return "pipeline";
  }
  return "pipeline";
}

Stage stage_from_name(const std::string& name) {
  for (auto s : {Stage::kTrain, Stage::kCalibrate, Stage::kSimulate, Stage::kAdapt, Stage::kEvaluate,
                 Stage::kPipeline}) {
    if (name == stage_name(s)) return s;
  }
  fail(ErrorCode::kInvalidArgument, "unknown stage '" + name + "'");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t repetition, std::uint64_t salt) {
  // splitmix64 finalizer over the combined inputs
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (repetition + 1) + (salt << 32);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

enum Salt : std::uint64_t { kData = 1, kSourceModel = 2, kCalib = 3, kLabelShift = 4, kMmd = 5, kCorruption = 16 };

constexpr size_t kMmdSampleRows = 400;

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorCode::kIo, "short write to " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo,
          "missing artifact " + path.string() + " (run the earlier stages first)");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorCode::kIo, "cannot create directory " + dir.string());
}

void require_artifact(const fs::path& path) {
  require(fs::exists(path), ErrorCode::kIo,
          "missing artifact " + path.string() + " (run the earlier stages first)");
}

// Numeric CSV with a header row; returns the header and the rows.
struct NumericTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  size_t column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    require(it != header.end(), ErrorCode::kParse, "CSV lacks column '" + name + "'");
    return static_cast<size_t>(it - header.begin());
  }
};

NumericTable read_numeric_csv(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo,
          "missing artifact " + path.string() + " (run the earlier stages first)");
  NumericTable t;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::kParse, path.string() + ": empty file");
  t.header = detail::split_csv_line(line);
  size_t record = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++record;
    const auto fields = detail::split_csv_line(line);
    require(fields.size() == t.header.size(), ErrorCode::kParse,
            path.string() + " row " + std::to_string(record) + ": wrong number of cells");
    std::vector<double> row;
    for (const auto& f : fields) {
      const auto v = detail::parse_double(f);
      require(v.has_value(), ErrorCode::kParse,
              path.string() + " row " + std::to_string(record) + ": not a number '" + f + "'");
      row.push_back(*v);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

Matrix take_rows(const Matrix& m, std::span<const size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (size_t k = 0; k < rows.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
  }
  return out;
}

Matrix seeded_subsample(const Matrix& m, size_t max_rows, std::uint64_t seed) {
  std::vector<size_t> idx(static_cast<size_t>(m.rows()));
  std::iota(idx.begin(), idx.end(), size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(idx.size(), max_rows));
  return take_rows(m, idx);
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// Report

bool RunReport::empty() const {
  for (const auto& [shift, modes] : metrics) {
    for (const auto& [mode, table] : modes) {
      if (!table.empty()) return false;
    }
  }
  return true;
}

namespace {

nlohmann::json series_json(const std::vector<double>& values) {
  const auto ms = metrics::mean_and_stderr(values);
  return {{"per_seed", values}, {"mean", ms.mean}, {"stderr", ms.stderr_}};
}

}  // namespace

nlohmann::json RunReport::summary_json() const {
  nlohmann::json shifts = nlohmann::json::object();
  for (const auto& [shift, modes] : metrics) {
    nlohmann::json block;
    nlohmann::json mode_block = nlohmann::json::object();
    for (const auto& [mode, table] : modes) {
      nlohmann::json m = nlohmann::json::object();
      for (const auto& [name, values] : table) m[name] = series_json(values);
      mode_block[mode] = m;
    }
    block["modes"] = mode_block;

    nlohmann::json comparisons = nlohmann::json::object();
    const auto base = modes.find(handler::mode_name(handler::Mode::kSourceOnly));
    if (base != modes.end()) {
      for (const auto& [mode, table] : modes) {
        if (mode == base->first) continue;
        for (const char* metric : {"macro_f1", "balanced_accuracy"}) {
          const auto a = table.find(metric);
          const auto b = base->second.find(metric);
          if (a == table.end() || b == base->second.end()) continue;
          std::vector<double> gain(a->second.size());
          for (size_t k = 0; k < gain.size(); ++k) gain[k] = a->second[k] - b->second[k];
          comparisons[std::string(metric) + "_gain_" + mode + "_vs_source_only"] = series_json(gain);
        }
      }
    }
    block["comparisons"] = comparisons;
    nlohmann::json sm = nlohmann::json::object();
    if (auto it = shift_metrics.find(shift); it != shift_metrics.end()) {
      for (const auto& [name, values] : it->second) sm[name] = series_json(values);
    }
    block["shift_metrics"] = sm;
    shifts[shift] = block;
  }
  return {{"schema_version", config::kSchemaVersion},
          {"version", ADAPTABLE_VERSION_STRING},
          {"seeds", seeds},
          {"units", {{"js_divergence", "nats"}, {"ece_bins", metrics::kDefaultEceBins},
                     {"mmd", "unbiased squared MMD, RBF kernel, median bandwidth"}}},
          {"shifts", shifts}};
}

void write_report(const RunReport& report, const config::RunConfig& cfg, const fs::path& dir) {
  require(!report.empty(), ErrorCode::kInvalidArgument, "report has no metrics");
  ensure_dir(dir);
  write_json(dir / "summary.json", report.summary_json());
  nlohmann::json modes = nlohmann::json::array();
  for (auto m : cfg.modes) modes.push_back(handler::mode_name(m));
  write_json(dir / "provenance.json", {{"config_hash", config::config_hash(cfg)},
                                       {"config", nlohmann::json::parse(cfg.canonical)},
                                       {"seeds", report.seeds},
                                       {"modes", modes},
                                       {"version", ADAPTABLE_VERSION_STRING},
                                       {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                                             std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                                             std::to_string(EIGEN_MINOR_VERSION)}});
}

// ---------------------------------------------------------------------------
// Run

Run::Run(config::RunConfig cfg, const RunOptions& options) : cfg_(std::move(cfg)) {
  if (options.seed) cfg_.seeds = {*options.seed};
  if (options.mode) cfg_.modes = {*options.mode};
  cfg_.validate();
  cfg_.canonical = cfg_.to_json().dump();
  out_ = config::resolve_output_dir(cfg_, options.out);
}

fs::path Run::seed_dir(std::uint64_t seed) const { return out_ / ("seed_" + std::to_string(seed)); }

void Run::execute(Stage stage) {
  if (stage == Stage::kPipeline) {
    for (auto s : {Stage::kTrain, Stage::kCalibrate, Stage::kSimulate, Stage::kAdapt, Stage::kEvaluate}) {
      execute(s);
    }
    return;
  }
  try {
    ensure_dir(out_);
    switch (stage) {
      case Stage::kTrain:
        for (auto s : cfg_.seeds) train(s);
        break;
      case Stage::kCalibrate:
        for (auto s : cfg_.seeds) calibrate(s);
        break;
      case Stage::kSimulate:
        for (auto s : cfg_.seeds) simulate(s);
        break;
      case Stage::kAdapt:
        for (auto s : cfg_.seeds) adapt(s);
        break;
      case Stage::kEvaluate:
        evaluate();
        break;
      case Stage::kPipeline:
        break;
    }
  } catch (const Error& e) {
    throw Error(e.code(), std::string("[") + stage_name(stage) + "] " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kIo, std::string("[") + stage_name(stage) + "] " + e.what());
  }
}

void Run::train(std::uint64_t seed) {
  const fs::path data_dir = seed_dir(seed) / "data";
  const fs::path model_dir = seed_dir(seed) / "model";
  ensure_dir(data_dir);
  ensure_dir(model_dir);

  data::Dataset source, target;
  if (cfg_.data.synthetic) {
    auto spec = *cfg_.data.synthetic;
    spec.seed = derive_seed(spec.seed, seed, kData);
    std::tie(source, target) = shift::generate_synthetic_dataset(spec);
    const nlohmann::json prov = {{"generator", "synthetic"}, {"spec", spec.to_json()}};
    shift::write_with_provenance(source, data_dir / "source.csv", prov);
    shift::write_with_provenance(target, data_dir / "target.csv", prov);
  } else {
    source = data::load_dataset(cfg_.data.source_csv, cfg_.data.schema, data::DatasetRole::kSource);
    target = data::load_dataset(cfg_.data.target_csv, cfg_.data.schema, data::DatasetRole::kTarget);
    data::write_dataset_csv(source, data_dir / "source.csv");
    data::write_dataset_csv(target, data_dir / "target.csv");
  }
  write_json(data_dir / "schema.json", source.schema.to_json());
  require(source.has_labels(), ErrorCode::kInvalidArgument, "source data must carry labels");

  const auto pre = data::Preprocessor::fit(source);
  const auto stats = data::compute_source_stats(source, pre);
  auto mcfg = cfg_.source_model;
  mcfg.train.seed = derive_seed(mcfg.train.seed, seed, kSourceModel);
  model::TrainingLog log;
  const auto model = model::train_source_classifier(source, pre, mcfg, &log);
  model.save(model_dir / "source_model.bin");
  write_json(model_dir / "source_stats.json", stats.to_json());
  write_json(model_dir / "training_log.json",
             {{"epoch_loss", log.epoch_loss}, {"validation_f1", log.validation_f1},
              {"best_epoch", log.best_epoch}, {"config", mcfg.to_json()}});
}

void Run::calibrate(std::uint64_t seed) {
  const fs::path dir = seed_dir(seed);
  require_artifact(dir / "model" / "source_model.bin");
  const auto source = data::load_dataset(dir / "data" / "source.csv", dir / "data" / "schema.json",
                                         data::DatasetRole::kSource);
  const auto model = model::SourceModel::load(dir / "model" / "source_model.bin");
  const auto stats = data::SourceStats::from_json(read_json(dir / "model" / "source_stats.json"));
  auto ccfg = cfg_.calibrator;
  ccfg.train.seed = derive_seed(ccfg.train.seed, seed, kCalib);
  calib::CalibratorLog log;
  const auto cal = calib::post_train_calibrator(source, model, stats, ccfg, &log);
  cal.save(dir / "model" / "calibrator.bin");
  write_json(dir / "model" / "calibrator_log.json", {{"epoch_loss", log.epoch_loss}, {"config", ccfg.to_json()}});
}

void Run::simulate(std::uint64_t seed) {
  const fs::path dir = seed_dir(seed);
  const fs::path schema = dir / "data" / "schema.json";
  require_artifact(schema);
  const auto source = data::load_dataset(dir / "data" / "source.csv", schema, data::DatasetRole::kSource);
  const auto target = data::load_dataset(dir / "data" / "target.csv", schema, data::DatasetRole::kTarget);
  const auto stats = data::SourceStats::from_json(read_json(dir / "model" / "source_stats.json"));

  for (const auto& spec : cfg_.shifts) {
    const fs::path shift_dir = dir / "shifts" / spec.name;
    ensure_dir(shift_dir);
    data::Dataset d = target;
    nlohmann::json applied = nlohmann::json::array();
    for (size_t k = 0; k < spec.corruptions.size(); ++k) {
      auto c = spec.corruptions[k];
      c.seed = derive_seed(c.seed, seed, kCorruption + k);
      shift::CorruptionTally tally;
      d = shift::apply_corruption(d, source, c, &tally);
      applied.push_back({{"spec", c.to_json()}, {"tally", tally.to_json()}});
    }
    auto ls = spec.label_shift;
    ls.seed = derive_seed(ls.seed, seed, kLabelShift);
    require(d.has_labels(), ErrorCode::kInvalidArgument,
            "target data needs labels to build a label-shifted stream and to score it");
    const auto stream = shift::sample_label_shifted_stream(d, stats.label_dist, ls);
    const auto shifted = d.subset(stream.rows);
    shift::write_with_provenance(shifted, shift_dir / "stream.csv",
                                 {{"shift", spec.name}, {"corruptions", applied},
                                  {"label_shift", ls.to_json()}, {"rows", shifted.rows()}});
  }
}

void Run::adapt(std::uint64_t seed) {
  const fs::path dir = seed_dir(seed);
  const fs::path schema = dir / "data" / "schema.json";
  require_artifact(dir / "model" / "source_model.bin");
  const auto model = model::SourceModel::load(dir / "model" / "source_model.bin");
  const auto stats = data::SourceStats::from_json(read_json(dir / "model" / "source_stats.json"));
  const int c = model.num_classes();

  std::optional<calib::Calibrator> calibrator;
  for (auto m : cfg_.modes) {
    if (m != handler::Mode::kSourceOnly && !calibrator) {
      require_artifact(dir / "model" / "calibrator.bin");
      calibrator = calib::Calibrator::load(dir / "model" / "calibrator.bin");
    }
  }

  for (const auto& spec : cfg_.shifts) {
    const fs::path shift_dir = dir / "shifts" / spec.name;
    require_artifact(shift_dir / "stream.csv");
    auto stream = data::load_dataset(shift_dir / "stream.csv", schema, data::DatasetRole::kTarget);
    stream.labels.reset();  // the handler never sees target labels
    const Matrix encoded = model.preprocessor().apply(stream);
    const Matrix logits = model.predict_logits(encoded);

    for (auto mode : cfg_.modes) {
      const fs::path mode_dir = shift_dir / handler::mode_name(mode);
      ensure_dir(mode_dir);
      auto hcfg = cfg_.handler;
      hcfg.mode = mode;
      handler::LabelHandler h(stats.label_dist, hcfg);

      std::ofstream trace(mode_dir / "trace.csv");
      std::ofstream est(mode_dir / "estimates.csv");
      require(static_cast<bool>(trace) && static_cast<bool>(est), ErrorCode::kIo,
              "cannot write adaptation outputs under " + mode_dir.string());
      handler::write_trace_header(trace, c);
      est << "batch_index,size";
      for (int k = 1; k <= c; ++k) est << ",estimate_" << k;
      for (int k = 1; k <= c; ++k) est << ",pseudo_label_" << k;
      est << '\n';

      data::BatchStream batches(stream.rows(), cfg_.batch_size, data::BatchOrder::kGiven);
      std::vector<size_t> rows;
      size_t b = 0;
      while (batches.next(rows)) {
        const Matrix z = take_rows(logits, rows);
        const auto out = mode == handler::Mode::kSourceOnly
                             ? h.adapt(z, Vector())
                             : h.adapt(z, take_rows(encoded, rows), *calibrator);
        handler::write_trace_rows(trace, b, rows, out);
        Vector pseudo = Vector::Zero(c);
        const Matrix p = nn::softmax_rows(z);
        for (Eigen::Index i = 0; i < p.rows(); ++i) pseudo(handler::argmax(p.row(i))) += 1.0;
        pseudo /= static_cast<double>(p.rows());
        est << b << ',' << rows.size();
        for (int k = 0; k < c; ++k) est << ',' << format_double(out.target_estimate(k));
        for (int k = 0; k < c; ++k) est << ',' << format_double(pseudo(k));
        est << '\n';
        ++b;
      }
      require(static_cast<bool>(trace) && static_cast<bool>(est), ErrorCode::kIo,
              "short write under " + mode_dir.string());
    }
  }
}

void Run::evaluate() {
  RunReport report;
  report.seeds = cfg_.seeds;
  for (auto seed : cfg_.seeds) {
    const fs::path dir = seed_dir(seed);
    const fs::path schema = dir / "data" / "schema.json";
    require_artifact(dir / "model" / "source_model.bin");
    const auto model = model::SourceModel::load(dir / "model" / "source_model.bin");
    const auto source = data::load_dataset(dir / "data" / "source.csv", schema, data::DatasetRole::kSource);
    const Matrix source_sample =
        seeded_subsample(model.preprocessor().apply(source), kMmdSampleRows, derive_seed(0, seed, kMmd));
    const int c = model.num_classes();

    for (const auto& spec : cfg_.shifts) {
      const fs::path shift_dir = dir / "shifts" / spec.name;
      const auto stream = data::load_dataset(shift_dir / "stream.csv", schema, data::DatasetRole::kTarget);
      require(stream.has_labels(), ErrorCode::kInvalidArgument, "stream " + spec.name + " has no labels");
      const auto& labels = *stream.labels;
      const Matrix stream_sample = seeded_subsample(model.preprocessor().apply(stream), kMmdSampleRows,
                                                    derive_seed(1, seed, kMmd));
      report.shift_metrics[spec.name]["mmd_source_vs_stream"].push_back(
          source_sample.rows() >= 2 && stream_sample.rows() >= 2
              ? metrics::mmd_rbf(source_sample, stream_sample)
              : 0.0);

      for (auto mode : cfg_.modes) {
        const fs::path mode_dir = shift_dir / handler::mode_name(mode);
        const auto trace = read_numeric_csv(mode_dir / "trace.csv");
        const auto est = read_numeric_csv(mode_dir / "estimates.csv");
        require(trace.rows.size() == stream.rows(), ErrorCode::kParse,
                "trace for " + spec.name + " does not cover the stream");

        const size_t col_sample = trace.column("sample_id");
        const size_t col_t = trace.column("T_i");
        const size_t col_pred = trace.column("predicted_class");
        const size_t col_p = trace.column("p_bar_1");
        std::vector<ClassIndex> pred(trace.rows.size()), truth(trace.rows.size());
        Matrix probs(static_cast<Eigen::Index>(trace.rows.size()), c);
        std::vector<double> temps;
        for (size_t i = 0; i < trace.rows.size(); ++i) {
          const auto& r = trace.rows[i];
          pred[i] = static_cast<ClassIndex>(r[col_pred]) - 1;
          truth[i] = labels[static_cast<size_t>(r[col_sample])];
          for (int k = 0; k < c; ++k) probs(static_cast<Eigen::Index>(i), k) = r[col_p + static_cast<size_t>(k)];
          temps.push_back(r[col_t]);
        }
        const auto scores = metrics::classification_metrics(pred, truth, c);
        const auto rel = metrics::reliability_from_probabilities(probs, truth);

        // Per-batch JS divergence against the true label frequencies.
        std::ofstream js(mode_dir / "batch_js.csv");
        require(static_cast<bool>(js), ErrorCode::kIo, "cannot write " + (mode_dir / "batch_js.csv").string());
        js << "batch_index,size,js_handler,js_pseudo_label\n";
        std::vector<double> js_handler, js_pseudo;
        size_t offset = 0;
        const size_t col_size = est.column("size");
        const size_t col_est = est.column("estimate_1");
        const size_t col_pl = est.column("pseudo_label_1");
        for (size_t b = 0; b < est.rows.size(); ++b) {
          const auto& r = est.rows[b];
          const auto n = static_cast<size_t>(r[col_size]);
          Vector freq = Vector::Zero(c), e(c), pl(c);
          for (size_t i = offset; i < offset + n; ++i) {
            freq(truth[i]) += 1.0;
          }
          freq /= static_cast<double>(n);
          for (int k = 0; k < c; ++k) {
            e(k) = r[col_est + static_cast<size_t>(k)];
            pl(k) = r[col_pl + static_cast<size_t>(k)];
          }
          js_handler.push_back(metrics::js_divergence(e, freq));
          js_pseudo.push_back(metrics::js_divergence(pl, freq));
          js << b << ',' << n << ',' << format_double(js_handler.back()) << ','
             << format_double(js_pseudo.back()) << '\n';
          offset += n;
        }

        const nlohmann::json m = {{"balanced_accuracy", scores.balanced_accuracy},
                                  {"macro_f1", scores.macro_f1},
                                  {"accuracy", scores.accuracy},
                                  {"ece", rel.ece},
                                  {"js_handler_mean", mean_of(js_handler)},
                                  {"js_pseudo_label_mean", mean_of(js_pseudo)},
                                  {"mean_temperature", mean_of(temps)}};
        write_json(mode_dir / "metrics.json", {{"metrics", m}, {"reliability", rel.to_json()}});
        auto& table = report.metrics[spec.name][handler::mode_name(mode)];
        for (const auto& [k, v] : m.items()) table[k].push_back(v.get<double>());
      }
    }
  }
  write_report(report, cfg_, out_);
  report_ = std::move(report);
}

RunReport run_pipeline(const config::RunConfig& cfg, const RunOptions& options) {
  Run run(cfg, options);
  run.execute(Stage::kPipeline);
  return *run.report();
}

}  // namespace adaptable::pipeline
