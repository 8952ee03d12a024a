#pragma once

// Stage orchestration: train -> calibrate -> simulate -> adapt -> evaluate.
// Each stage reads the previous stage's artifacts from the output directory,
// so the CLI verbs can run independently and `pipeline` simply chains them.

#include "adaptable/config.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace adaptable::pipeline {

enum class Stage { kTrain, kCalibrate, kSimulate, kAdapt, kEvaluate, kPipeline };

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);

struct RunOptions {
  std::optional<std::uint64_t> seed;           // replaces the seed list
  std::optional<handler::Mode> mode;           // replaces the mode list
  std::optional<std::filesystem::path> out;    // highest-priority output dir
};

// metric name -> one value per seed, in seed order.
using MetricTable = std::map<std::string, std::vector<double>>;

struct RunReport {
  std::vector<std::uint64_t> seeds;
  // shift name -> mode name -> metrics
  std::map<std::string, std::map<std::string, MetricTable>> metrics;
  // shift name -> metrics that do not depend on the mode
  std::map<std::string, MetricTable> shift_metrics;

  bool empty() const;
  // Deterministic: no paths, timestamps or host details.
  nlohmann::json summary_json() const;
};

// Writes summary.json and provenance.json under `dir`. Throws on an empty
// report or an unwritable directory.
void write_report(const RunReport& report, const config::RunConfig& cfg, const std::filesystem::path& dir);

class Run {
 public:
  Run(config::RunConfig cfg, const RunOptions& options);

  const config::RunConfig& config() const { return cfg_; }
  const std::filesystem::path& output_dir() const { return out_; }

  // Errors are re-raised with a "[stage]" prefix; artifacts already written
  // stay on disk.
  void execute(Stage stage);

  const std::optional<RunReport>& report() const { return report_; }

 private:
  void train(std::uint64_t seed);
  void calibrate(std::uint64_t seed);
  void simulate(std::uint64_t seed);
  void adapt(std::uint64_t seed);
  void evaluate();

  std::filesystem::path seed_dir(std::uint64_t seed) const;

  config::RunConfig cfg_;
  std::filesystem::path out_;
  std::optional<RunReport> report_;
};

RunReport run_pipeline(const config::RunConfig& cfg, const RunOptions& options = {});

// Seed for one component of one repetition.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t repetition, std::uint64_t salt);

}  // namespace adaptable::pipeline
