#pragma once

#include "adaptable/calibrator.hpp"
#include "adaptable/label_handler.hpp"
#include "adaptable/shift_sim.hpp"
#include "adaptable/source_model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace adaptable::config {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kOutputDirEnv = "ADAPTABLE_OUT_DIR";

struct DataSource {
  std::optional<shift::SyntheticSpec> synthetic;
  std::filesystem::path source_csv;
  std::filesystem::path target_csv;
  std::filesystem::path schema;
};

struct ShiftSpec {
  std::string name;
  std::vector<shift::CorruptionSpec> corruptions;  // applied in order
  shift::LabelShiftSpec label_shift;
};

struct RunConfig {
  DataSource data;
  model::SourceModelConfig source_model;
  calib::CalibratorConfig calibrator;
  handler::HandlerConfig handler;
  std::vector<ShiftSpec> shifts;
  size_t batch_size = 64;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<handler::Mode> modes{handler::Mode::kSourceOnly, handler::Mode::kFull};
  std::filesystem::path output_dir = "adaptable_out";
  // Canonical dump of the parsed document, used for hashing.
  std::string canonical;

  void validate() const;
  nlohmann::json to_json() const;
};

// Relative paths resolve against `base_dir`. Errors carry kConfig.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// 64-bit FNV-1a over the canonical config text, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

// --out, then the environment override, then the config value.
std::filesystem::path resolve_output_dir(const RunConfig& cfg,
                                         const std::optional<std::filesystem::path>& cli_out);

}  // namespace adaptable::config
