#include "adaptable/tabular.hpp"

#include "adaptable/errors.hpp"
#include "text_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace adaptable::data {

namespace {

using detail::format_double;
using detail::parse_double;
using detail::parse_int;
using detail::split_csv_line;

const char* kind_name(ColumnKind kind) {
  return kind == ColumnKind::kNumerical ? "numerical" : "categorical";
}

std::string row_context(size_t line_no) { return "row " + std::to_string(line_no); }

}  // namespace

// ---------------------------------------------------------------------------
// Schema

void Schema::validate() const {
  require(!columns.empty(), ErrorCode::kSchema, "schema declares no feature columns");
  std::set<std::string> names;
  for (const auto& col : columns) {
    require(!col.name.empty(), ErrorCode::kSchema, "schema column with empty name");
    require(names.insert(col.name).second, ErrorCode::kSchema,
            "duplicate column name '" + col.name + "'");
    if (col.kind == ColumnKind::kCategorical) {
      require(!col.categories.empty(), ErrorCode::kSchema,
              "categorical column '" + col.name + "' has no categories");
      std::set<std::string> cats(col.categories.begin(), col.categories.end());
      require(cats.size() == col.categories.size(), ErrorCode::kSchema,
              "categorical column '" + col.name + "' lists a category twice");
    }
  }
  require(!label.name.empty(), ErrorCode::kSchema, "schema has no label column");
  require(names.count(label.name) == 0, ErrorCode::kSchema,
          "label column '" + label.name + "' also declared as a feature");
  require(label.num_classes >= 1, ErrorCode::kSchema, "label.num_classes must be >= 1");
}

std::optional<size_t> Schema::index_of(const std::string& name) const {
  for (size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].name == name) return i;
  }
  return std::nullopt;
}

Schema Schema::from_json(const nlohmann::json& doc) {
  Schema schema;
  try {
    for (const auto& c : doc.at("columns")) {
      ColumnSchema col;
      col.name = c.at("name").get<std::string>();
      const auto kind = c.at("kind").get<std::string>();
      if (kind == "numerical") {
        col.kind = ColumnKind::kNumerical;
      } else if (kind == "categorical") {
        col.kind = ColumnKind::kCategorical;
        for (const auto& cat : c.at("categories")) {
          col.categories.push_back(cat.is_string() ? cat.get<std::string>() : cat.dump());
        }
      } else {
        fail(ErrorCode::kSchema, "column '" + col.name + "' has unknown kind '" + kind + "'");
      }
      schema.columns.push_back(std::move(col));
    }
    const auto& label = doc.at("label");
    schema.label.name = label.at("name").get<std::string>();
    schema.label.num_classes = label.at("num_classes").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchema, std::string("malformed schema: ") + e.what());
  }
  schema.validate();
  return schema;
}

nlohmann::json Schema::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : columns) {
    nlohmann::json j = {{"name", c.name}, {"kind", kind_name(c.kind)}};
    if (c.kind == ColumnKind::kCategorical) j["categories"] = c.categories;
    cols.push_back(std::move(j));
  }
  return {{"columns", cols}, {"label", {{"name", label.name}, {"num_classes", label.num_classes}}}};
}

Schema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open schema " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchema, "schema " + path.string() + " is not valid JSON: " + e.what());
  }
  return Schema::from_json(doc);
}

// ---------------------------------------------------------------------------
// Dataset

void Dataset::validate() const {
  require(cells.rows() >= 1, ErrorCode::kInvalidArgument, "dataset has no rows");
  require(cols() == schema.columns.size(), ErrorCode::kDimension,
          "dataset width does not match schema");
  if (labels) {
    require(labels->size() == rows(), ErrorCode::kDimension, "label count != row count");
    for (auto y : *labels) {
      require(y >= 0 && y < num_classes(), ErrorCode::kInvalidArgument,
              "label out of range 1.." + std::to_string(num_classes()));
    }
  }
  for (size_t j = 0; j < cols(); ++j) {
    const auto& col = schema.columns[j];
    for (size_t i = 0; i < rows(); ++i) {
      const double v = cells(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      require(std::isfinite(v), ErrorCode::kInvalidArgument,
              "non-finite cell at row " + std::to_string(i) + ", column '" + col.name + "'");
      if (col.kind == ColumnKind::kCategorical) {
        const bool ok = v == kUnseenCategory ||
                        (v >= 0 && v < static_cast<double>(col.categories.size()) &&
                         v == std::floor(v));
        require(ok, ErrorCode::kSchema, "invalid category code in column '" + col.name + "'");
      }
    }
  }
}

Dataset Dataset::subset(std::span<const size_t> row_ids) const {
  Dataset out;
  out.schema = schema;
  out.cells.resize(static_cast<Eigen::Index>(row_ids.size()), cells.cols());
  if (labels) out.labels.emplace();
  for (size_t k = 0; k < row_ids.size(); ++k) {
    require(row_ids[k] < rows(), ErrorCode::kInvalidArgument, "subset row out of range");
    out.cells.row(static_cast<Eigen::Index>(k)) = cells.row(static_cast<Eigen::Index>(row_ids[k]));
    if (labels) out.labels->push_back((*labels)[row_ids[k]]);
  }
  return out;
}

Dataset parse_dataset(std::istream& csv, const Schema& schema, DatasetRole role) {
  schema.validate();
  std::string line;
  require(static_cast<bool>(std::getline(csv, line)), ErrorCode::kParse, "CSV has no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);

  // Map schema columns to CSV positions.
  std::vector<size_t> position(schema.columns.size());
  std::unordered_map<std::string, size_t> header_pos;
  for (size_t k = 0; k < header.size(); ++k) {
    require(header_pos.emplace(header[k], k).second, ErrorCode::kParse,
            "CSV header repeats column '" + header[k] + "'");
  }
  for (size_t j = 0; j < schema.columns.size(); ++j) {
    auto it = header_pos.find(schema.columns[j].name);
    require(it != header_pos.end(), ErrorCode::kSchema,
            "CSV lacks schema column '" + schema.columns[j].name + "'");
    position[j] = it->second;
  }
  std::optional<size_t> label_pos;
  if (auto it = header_pos.find(schema.label.name); it != header_pos.end()) label_pos = it->second;
  require(header.size() == schema.columns.size() + (label_pos ? 1u : 0u), ErrorCode::kSchema,
          "CSV header has columns not declared in the schema");

  std::vector<std::unordered_map<std::string, double>> codes(schema.columns.size());
  for (size_t j = 0; j < schema.columns.size(); ++j) {
    const auto& cats = schema.columns[j].categories;
    for (size_t k = 0; k < cats.size(); ++k) codes[j].emplace(cats[k], static_cast<double>(k));
  }

  std::vector<std::vector<double>> rows;
  std::vector<ClassIndex> labels;
  size_t unseen = 0;
  size_t record = 0;
  while (std::getline(csv, line)) {
    if (detail::trim(line).empty()) continue;
    ++record;
    const auto fields = split_csv_line(line);
    require(fields.size() == header.size(), ErrorCode::kParse,
            row_context(record) + ": expected " + std::to_string(header.size()) +
                " cells, found " + std::to_string(fields.size()));
    std::vector<double> row(schema.columns.size());
    for (size_t j = 0; j < schema.columns.size(); ++j) {
      const auto& col = schema.columns[j];
      const auto& text = fields[position[j]];
      require(!text.empty(), ErrorCode::kParse,
              row_context(record) + ": missing cell in column '" + col.name + "'");
      if (col.kind == ColumnKind::kNumerical) {
        const auto v = parse_double(text);
        require(v.has_value() && std::isfinite(*v), ErrorCode::kParse,
                row_context(record) + ": column '" + col.name + "' is not a number: '" + text + "'");
        row[j] = *v;
      } else {
        auto it = codes[j].find(text);
        if (it != codes[j].end()) {
          row[j] = it->second;
        } else {
          require(role == DatasetRole::kTarget, ErrorCode::kSchema,
                  row_context(record) + ": unknown category '" + text + "' in column '" +
                      col.name + "'");
          row[j] = kUnseenCategory;
          ++unseen;
        }
      }
    }
    if (label_pos) {
      const auto y = parse_int(fields[*label_pos]);
      require(y.has_value() && *y >= 1 && *y <= schema.label.num_classes, ErrorCode::kParse,
              row_context(record) + ": label '" + fields[*label_pos] + "' outside 1.." +
                  std::to_string(schema.label.num_classes));
      labels.push_back(static_cast<ClassIndex>(*y - 1));
    }
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), ErrorCode::kParse, "CSV has no data rows");

  Dataset d;
  d.schema = schema;
  d.cells.resize(static_cast<Eigen::Index>(rows.size()),
                 static_cast<Eigen::Index>(schema.columns.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < rows[i].size(); ++j) {
      d.cells(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  if (label_pos) d.labels = std::move(labels);
  d.unseen_category_cells = unseen;
  if (unseen > 0) log_warning(std::to_string(unseen) + " cells hold categories unseen in the schema");
  return d;
}

Dataset load_dataset(const std::filesystem::path& csv_path, const std::filesystem::path& schema_path,
                     DatasetRole role) {
  const Schema schema = load_schema(schema_path);
  std::ifstream in(csv_path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open dataset " + csv_path.string());
  return parse_dataset(in, schema, role);
}

void write_dataset_csv(const Dataset& d, std::ostream& out) {
  for (size_t j = 0; j < d.cols(); ++j) out << (j ? "," : "") << d.schema.columns[j].name;
  if (d.labels) out << ',' << d.schema.label.name;
  out << '\n';
  for (size_t i = 0; i < d.rows(); ++i) {
    for (size_t j = 0; j < d.cols(); ++j) {
      if (j) out << ',';
      const double v = d.cells(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      const auto& col = d.schema.columns[j];
      if (col.kind == ColumnKind::kCategorical) {
        out << (v == kUnseenCategory ? std::string("__unseen__")
                                     : col.categories[static_cast<size_t>(v)]);
      } else {
        out << format_double(v);
      }
    }
    if (d.labels) out << ',' << ((*d.labels)[i] + 1);
    out << '\n';
  }
}

void write_dataset_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  write_dataset_csv(d, out);
}

// ---------------------------------------------------------------------------
// Preprocessor

Preprocessor Preprocessor::fit(const Dataset& source) {
  source.validate();
  Preprocessor pre;
  const auto n = static_cast<double>(source.rows());
  size_t offset = 0;
  for (size_t j = 0; j < source.cols(); ++j) {
    const auto& col = source.schema.columns[j];
    ColumnGroup g;
    g.kind = col.kind;
    g.start = offset;
    if (col.kind == ColumnKind::kNumerical) {
      const auto c = source.cells.col(static_cast<Eigen::Index>(j));
      const double mean = c.sum() / n;
      const double var = (c.array() - mean).square().sum() / n;
      double sd = std::sqrt(var);
      if (sd < 1e-12) sd = 1.0;
      pre.means_.push_back(mean);
      pre.stds_.push_back(sd);
      g.width = 1;
    } else {
      pre.means_.push_back(0.0);
      pre.stds_.push_back(1.0);
      g.width = col.categories.size();
    }
    offset += g.width;
    pre.groups_.push_back(g);
  }
  pre.width_ = offset;
  return pre;
}

Matrix Preprocessor::apply(const Dataset& d, size_t* unseen_cells) const {
  require(d.cols() == groups_.size(), ErrorCode::kDimension,
          "dataset has " + std::to_string(d.cols()) + " columns, preprocessor expects " +
              std::to_string(groups_.size()));
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(d.rows()), static_cast<Eigen::Index>(width_));
  size_t unseen = 0;
  for (size_t j = 0; j < groups_.size(); ++j) {
    const auto& g = groups_[j];
    const auto jj = static_cast<Eigen::Index>(j);
    if (g.kind == ColumnKind::kNumerical) {
      out.col(static_cast<Eigen::Index>(g.start)) =
          (d.cells.col(jj).array() - means_[j]) / stds_[j];
    } else {
      for (Eigen::Index i = 0; i < d.cells.rows(); ++i) {
        const double code = d.cells(i, jj);
        if (code >= 0 && code < static_cast<double>(g.width)) {
          out(i, static_cast<Eigen::Index>(g.start + static_cast<size_t>(code))) = 1.0;
        } else {
          ++unseen;
        }
      }
    }
  }
  if (unseen_cells) *unseen_cells = unseen;
  return out;
}

nlohmann::json Preprocessor::to_json() const {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : groups_) {
    groups.push_back({{"kind", kind_name(g.kind)}, {"start", g.start}, {"width", g.width}});
  }
  return {{"groups", groups}, {"means", means_}, {"stds", stds_}, {"width", width_}};
}

Preprocessor Preprocessor::from_json(const nlohmann::json& doc) {
  Preprocessor pre;
  try {
    for (const auto& g : doc.at("groups")) {
      ColumnGroup group;
      group.kind = g.at("kind").get<std::string>() == "numerical" ? ColumnKind::kNumerical
                                                                  : ColumnKind::kCategorical;
      group.start = g.at("start").get<size_t>();
      group.width = g.at("width").get<size_t>();
      pre.groups_.push_back(group);
    }
    pre.means_ = doc.at("means").get<std::vector<double>>();
    pre.stds_ = doc.at("stds").get<std::vector<double>>();
    pre.width_ = doc.at("width").get<size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("malformed preprocessor: ") + e.what());
  }
  return pre;
}

// ---------------------------------------------------------------------------
// Source statistics

Vector label_distribution(const Dataset& d) {
  require(d.has_labels(), ErrorCode::kInvalidArgument, "dataset has no labels");
  Vector dist = Vector::Zero(d.num_classes());
  for (auto y : *d.labels) dist(y) += 1.0;
  return dist / static_cast<double>(d.labels->size());
}

SourceStats compute_source_stats(const Dataset& source, const Preprocessor& pre) {
  require(source.has_labels(), ErrorCode::kInvalidArgument, "source stats need labels");
  SourceStats stats;
  const Matrix encoded = pre.apply(source);
  stats.column_means = encoded.colwise().mean().transpose();
  stats.label_dist = label_distribution(source);
  for (Eigen::Index c = 0; c < stats.label_dist.size(); ++c) {
    require(stats.label_dist(c) > 0, ErrorCode::kInvalidArgument,
            "class " + std::to_string(c + 1) + " has no source samples; imbalance ratio undefined");
  }
  stats.imbalance_ratio = stats.label_dist.maxCoeff() / stats.label_dist.minCoeff();
  return stats;
}

nlohmann::json SourceStats::to_json() const {
  return {{"column_means", std::vector<double>(column_means.data(), column_means.data() + column_means.size())},
          {"label_dist", std::vector<double>(label_dist.data(), label_dist.data() + label_dist.size())},
          {"imbalance_ratio", imbalance_ratio}};
}

SourceStats SourceStats::from_json(const nlohmann::json& doc) {
  SourceStats s;
  const auto means = doc.at("column_means").get<std::vector<double>>();
  const auto dist = doc.at("label_dist").get<std::vector<double>>();
  s.column_means = Eigen::Map<const Vector>(means.data(), static_cast<Eigen::Index>(means.size()));
  s.label_dist = Eigen::Map<const Vector>(dist.data(), static_cast<Eigen::Index>(dist.size()));
  s.imbalance_ratio = doc.at("imbalance_ratio").get<double>();
  return s;
}

// ---------------------------------------------------------------------------
// Batching

BatchStream::BatchStream(size_t num_rows, size_t batch_size, BatchOrder order, std::uint64_t seed)
    : order_(num_rows), batch_size_(batch_size) {
  require(batch_size >= 2, ErrorCode::kInvalidArgument, "batch_size must be >= 2");
  std::iota(order_.begin(), order_.end(), size_t{0});
  if (order == BatchOrder::kSeededShuffle) {
    std::mt19937_64 rng(seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

bool BatchStream::next(std::vector<size_t>& batch) {
  batch.clear();
  if (cursor_ >= order_.size()) return false;
  const size_t end = std::min(order_.size(), cursor_ + batch_size_);
  batch.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
               order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return true;
}

size_t BatchStream::num_batches() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::vector<std::vector<size_t>> stream_batches(const Dataset& d, size_t batch_size,
                                                BatchOrder order, std::uint64_t seed) {
  BatchStream stream(d.rows(), batch_size, order, seed);
  std::vector<std::vector<size_t>> out;
  std::vector<size_t> batch;
  while (stream.next(batch)) out.push_back(batch);
  return out;
}

}  // namespace adaptable::data
