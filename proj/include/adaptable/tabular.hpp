#pragma once

#include "adaptable/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace adaptable::data {

enum class ColumnKind { kNumerical, kCategorical };

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::kNumerical;
  std::vector<std::string> categories;  // categorical only; code = position
};

struct LabelSpec {
  std::string name;
  int num_classes = 0;
};

struct Schema {
  std::vector<ColumnSchema> columns;
  LabelSpec label;

  // Throws kSchema on duplicate names, empty category lists, C < 1.
  void validate() const;
  size_t num_columns() const { return columns.size(); }
  std::optional<size_t> index_of(const std::string& name) const;

  static Schema from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

Schema load_schema(const std::filesystem::path& path);

// Source datasets reject categories missing from the schema. Target datasets
// keep them as code -1 so the encoder can zero them out.
enum class DatasetRole { kSource, kTarget };

inline constexpr double kUnseenCategory = -1.0;

struct Dataset {
  Schema schema;
  // N x D raw cells. Categorical cells hold the category code.
  Matrix cells;
  std::optional<std::vector<ClassIndex>> labels;
  // Target loads only: count of cells whose category was not in the schema.
  size_t unseen_category_cells = 0;

  size_t rows() const { return static_cast<size_t>(cells.rows()); }
  size_t cols() const { return static_cast<size_t>(cells.cols()); }
  int num_classes() const { return schema.label.num_classes; }
  bool has_labels() const { return labels.has_value(); }

  void validate() const;
  Dataset subset(std::span<const size_t> row_ids) const;
};

Dataset parse_dataset(std::istream& csv, const Schema& schema, DatasetRole role);
Dataset load_dataset(const std::filesystem::path& csv_path,
                     const std::filesystem::path& schema_path,
                     DatasetRole role = DatasetRole::kSource);

// Header row plus one line per sample. Categories are written by name and
// labels as 1..C. Doubles use round-trip precision.
void write_dataset_csv(const Dataset& d, std::ostream& out);
void write_dataset_csv(const Dataset& d, const std::filesystem::path& path);

// Layout of one original column inside the encoded matrix.
struct ColumnGroup {
  ColumnKind kind = ColumnKind::kNumerical;
  size_t start = 0;
  size_t width = 1;
};

class Preprocessor {
 public:
  Preprocessor() = default;

  // Population statistics over `source`; sigma < 1e-12 is stored as 1.
  static Preprocessor fit(const Dataset& source);

  // Unseen categories become an all-zero block and are counted, never fatal.
  Matrix apply(const Dataset& d, size_t* unseen_cells = nullptr) const;

  size_t encoded_width() const { return width_; }
  size_t num_columns() const { return groups_.size(); }
  const std::vector<ColumnGroup>& groups() const { return groups_; }
  // Indexed by original column; zero/one for categorical columns.
  const std::vector<double>& means() const { return means_; }
  const std::vector<double>& stds() const { return stds_; }

  nlohmann::json to_json() const;
  static Preprocessor from_json(const nlohmann::json& doc);

 private:
  std::vector<ColumnGroup> groups_;
  std::vector<double> means_;
  std::vector<double> stds_;
  size_t width_ = 0;
};

struct SourceStats {
  Vector column_means;  // per encoded column, over the encoded source
  Vector label_dist;    // p_s(y)
  double imbalance_ratio = 1.0;

  nlohmann::json to_json() const;
  static SourceStats from_json(const nlohmann::json& doc);
};

SourceStats compute_source_stats(const Dataset& source, const Preprocessor& pre);

// Empirical class frequencies; requires labels.
Vector label_distribution(const Dataset& d);

enum class BatchOrder { kGiven, kSeededShuffle };

// Single-consumer iterator over row-index batches. The last batch may be
// shorter than `batch_size`.
class BatchStream {
 public:
  BatchStream(size_t num_rows, size_t batch_size, BatchOrder order, std::uint64_t seed = 0);

  bool next(std::vector<size_t>& batch);
  size_t num_batches() const;
  void reset() { cursor_ = 0; }

 private:
  std::vector<size_t> order_;
  size_t batch_size_;
  size_t cursor_ = 0;
};

std::vector<std::vector<size_t>> stream_batches(const Dataset& d, size_t batch_size,
                                                BatchOrder order, std::uint64_t seed = 0);

}  // namespace adaptable::data
