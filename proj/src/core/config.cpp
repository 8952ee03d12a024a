#include "adaptable/config.hpp"

#include "adaptable/errors.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

namespace adaptable::config {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    require(ok.count(key) > 0, ErrorCode::kConfig, "unknown key '" + key + "' in " + where);
  }
}

}  // namespace

void RunConfig::validate() const {
  if (data.synthetic) {
    data.synthetic->validate();
  } else {
    require(!data.source_csv.empty() && !data.target_csv.empty() && !data.schema.empty(),
            ErrorCode::kConfig,
            "config needs either data.synthetic or data.source_csv, data.target_csv and data.schema");
    for (const auto* p : {&data.source_csv, &data.target_csv, &data.schema}) {
      require(std::filesystem::exists(*p), ErrorCode::kConfig, "file not found: " + p->string());
    }
  }
  source_model.validate();
  calibrator.validate();
  handler.validate();
  require(batch_size >= 2, ErrorCode::kConfig, "batch_size must be >= 2");
  require(!seeds.empty(), ErrorCode::kConfig, "seeds must be non-empty");
  require(!modes.empty(), ErrorCode::kConfig, "modes must be non-empty");
  require(!shifts.empty(), ErrorCode::kConfig, "at least one shift spec is required");
  std::set<std::string> names;
  for (const auto& s : shifts) {
    require(!s.name.empty(), ErrorCode::kConfig, "shift names must be non-empty");
    require(s.name.find_first_of("/\\") == std::string::npos && s.name != "." && s.name != "..",
            ErrorCode::kConfig, "shift name '" + s.name + "' is not a valid directory name");
    require(names.insert(s.name).second, ErrorCode::kConfig, "duplicate shift name '" + s.name + "'");
    for (const auto& c : s.corruptions) c.validate();
    s.label_shift.validate();
  }
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  if (data.synthetic) {
    j["data"] = {{"synthetic", data.synthetic->to_json()}};
  } else {
    j["data"] = {{"source_csv", data.source_csv.string()},
                 {"target_csv", data.target_csv.string()},
                 {"schema", data.schema.string()}};
  }
  j["source_model"] = source_model.to_json();
  j["calibrator"] = calibrator.to_json();
  j["handler"] = handler.to_json();
  nlohmann::json shift_list = nlohmann::json::array();
  for (const auto& s : shifts) {
    nlohmann::json cs = nlohmann::json::array();
    for (const auto& c : s.corruptions) cs.push_back(c.to_json());
    shift_list.push_back({{"name", s.name}, {"corruptions", cs}, {"label_shift", s.label_shift.to_json()}});
  }
  j["shifts"] = shift_list;
  j["batch_size"] = batch_size;
  j["seeds"] = seeds;
  nlohmann::json ms = nlohmann::json::array();
  for (auto m : modes) ms.push_back(handler::mode_name(m));
  j["modes"] = ms;
  return j;
}

RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  require(doc.is_object(), ErrorCode::kConfig, "config must be a JSON object");
  reject_unknown_keys(doc,
                      {"schema_version", "data", "source_model", "calibrator", "handler", "shifts",
                       "batch_size", "seeds", "modes", "output_dir"},
                      "config");
  RunConfig cfg;
  try {
    require(doc.contains("schema_version"), ErrorCode::kConfig, "config is missing schema_version");
    const int version = doc.at("schema_version").get<int>();
    require(version == kSchemaVersion, ErrorCode::kConfig,
            "unsupported schema_version " + std::to_string(version));

    require(doc.contains("data"), ErrorCode::kConfig,
            "config is missing 'data' (dataset paths or a synthetic spec)");
    const auto& data = doc.at("data");
    reject_unknown_keys(data, {"synthetic", "source_csv", "target_csv", "schema"}, "data");
    if (data.contains("synthetic")) {
      cfg.data.synthetic = shift::SyntheticSpec::from_json(data.at("synthetic"));
    } else {
      if (data.contains("source_csv")) cfg.data.source_csv = resolve(base_dir, data.at("source_csv").get<std::string>());
      if (data.contains("target_csv")) cfg.data.target_csv = resolve(base_dir, data.at("target_csv").get<std::string>());
      if (data.contains("schema")) cfg.data.schema = resolve(base_dir, data.at("schema").get<std::string>());
    }
    if (doc.contains("source_model")) cfg.source_model = model::SourceModelConfig::from_json(doc.at("source_model"));
    if (doc.contains("calibrator")) cfg.calibrator = calib::CalibratorConfig::from_json(doc.at("calibrator"));
    if (doc.contains("handler")) cfg.handler = handler::HandlerConfig::from_json(doc.at("handler"));
    if (doc.contains("shifts")) {
      for (const auto& s : doc.at("shifts")) {
        reject_unknown_keys(s, {"name", "corruptions", "label_shift"}, "shift spec");
        ShiftSpec spec;
        spec.name = s.at("name").get<std::string>();
        if (s.contains("corruptions")) {
          for (const auto& c : s.at("corruptions")) spec.corruptions.push_back(shift::CorruptionSpec::from_json(c));
        }
        if (s.contains("label_shift")) spec.label_shift = shift::LabelShiftSpec::from_json(s.at("label_shift"));
        cfg.shifts.push_back(std::move(spec));
      }
    } else {
      cfg.shifts.push_back({"label_shift", {}, {}});
    }
    cfg.batch_size = doc.value("batch_size", cfg.batch_size);
    if (doc.contains("seeds")) cfg.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
    if (doc.contains("modes")) {
      cfg.modes.clear();
      for (const auto& m : doc.at("modes")) cfg.modes.push_back(handler::mode_from_name(m.get<std::string>()));
    }
    if (doc.contains("output_dir")) cfg.output_dir = resolve(base_dir, doc.at("output_dir").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed config: ") + e.what());
  }
  cfg.validate();
  cfg.canonical = cfg.to_json().dump();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  return parse_run_config(doc, std::filesystem::absolute(path).parent_path());
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : cfg.canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::filesystem::path resolve_output_dir(const RunConfig& cfg,
                                         const std::optional<std::filesystem::path>& cli_out) {
  if (cli_out && !cli_out->empty()) return *cli_out;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return cfg.output_dir;
}

}  // namespace adaptable::config
