#include "adaptable/errors.hpp"
#include "adaptable/shift_sim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace adaptable;
using namespace adaptable::shift;

namespace {

data::Dataset numeric_column(const std::vector<double>& values, const std::vector<ClassIndex>& labels, int classes = 2) {
  data::Dataset d;
  d.schema.columns = {{"x", data::ColumnKind::kNumerical, {}}};
  d.schema.label = {"y", classes};
  d.cells.resize(static_cast<Eigen::Index>(values.size()), 1);
  for (size_t i = 0; i < values.size(); ++i) d.cells(static_cast<Eigen::Index>(i), 0) = values[i];
  d.labels = labels;
  return d;
}

std::vector<ClassIndex> alternating(size_t n, int c) {
  std::vector<ClassIndex> y(n);
  for (size_t i = 0; i < n; ++i) y[i] = static_cast<ClassIndex>(i % static_cast<size_t>(c));
  return y;
}

}  // namespace

TEST(Corruption, GaussianNoiseScalesWithSourceStd) {
  // Source column [-2, 2, -2, 2, ...] has population std 2, so the added
  // noise has std 0.1 * 2 = 0.2.
  const size_t n = 100000;
  std::vector<double> src(n);
  for (size_t i = 0; i < n; ++i) src[i] = i % 2 == 0 ? -2.0 : 2.0;
  const auto source = numeric_column(src, alternating(n, 2));
  const auto test = numeric_column(std::vector<double>(n, 0.0), alternating(n, 2));
  CorruptionSpec spec;
  spec.kind = CorruptionKind::kGaussian;
  spec.seed = 5;
  CorruptionTally tally;
  const auto out = apply_corruption(test, source, spec, &tally);
  const double mean = out.cells.col(0).mean();
  const double var = (out.cells.col(0).array() - mean).square().mean();
  EXPECT_NEAR(mean, 0.0, 0.003);
  EXPECT_NEAR(std::sqrt(var), 0.2, 0.002);
  EXPECT_EQ(tally.cells_modified, n);
}

TEST(Corruption, UniformNoiseStaysInRange) {
  const auto source = numeric_column({-1, 1, -1, 1}, {0, 1, 0, 1});
  const auto test = numeric_column(std::vector<double>(1000, 3.0), alternating(1000, 2));
  CorruptionSpec spec;
  spec.kind = CorruptionKind::kUniform;
  spec.seed = 2;
  const auto out = apply_corruption(test, source, spec);
  EXPECT_LE((out.cells.array() - 3.0).abs().maxCoeff(), 0.1);
}

TEST(Corruption, RandomDropRate) {
  data::Dataset test;
  test.schema.label = {"y", 2};
  for (int j = 0; j < 10; ++j) test.schema.columns.push_back({"c" + std::to_string(j), data::ColumnKind::kNumerical, {}});
  test.cells = Matrix::Constant(1000, 10, 7.0);
  test.labels = alternating(1000, 2);
  data::Dataset source = test;
  source.cells = Matrix::Constant(1000, 10, -7.0);
  CorruptionSpec spec;
  spec.kind = CorruptionKind::kRandomDrop;
  spec.rate = 0.2;
  spec.seed = 77;
  CorruptionTally tally;
  const auto out = apply_corruption(test, source, spec, &tally);
  EXPECT_EQ(tally.cells_considered, 10000u);
  EXPECT_NEAR(tally.mask_rate(), 0.2, 0.02);
  // Masked cells are replaced by source draws, here always -7.
  EXPECT_EQ(static_cast<size_t>((out.cells.array() == -7.0).count()), tally.cells_masked);
}

TEST(Corruption, ColumnDropReplacesWholeColumns) {
  data::Dataset test;
  test.schema.label = {"y", 2};
  for (int j = 0; j < 40; ++j) test.schema.columns.push_back({"c" + std::to_string(j), data::ColumnKind::kNumerical, {}});
  test.cells = Matrix::Constant(50, 40, 1.0);
  test.labels = alternating(50, 2);
  data::Dataset source = test;
  source.cells = Matrix::Constant(50, 40, 0.0);
  CorruptionSpec spec;
  spec.kind = CorruptionKind::kColumnDrop;
  spec.seed = 3;
  CorruptionTally tally;
  const auto out = apply_corruption(test, source, spec, &tally);
  size_t dropped = 0;
  for (Eigen::Index j = 0; j < 40; ++j) {
    const auto col = out.cells.col(j);
    const bool all_replaced = (col.array() == 0.0).all();
    const bool untouched = (col.array() == 1.0).all();
    EXPECT_TRUE(all_replaced || untouched) << "column " << j;
    if (all_replaced) ++dropped;
  }
  EXPECT_EQ(dropped, tally.columns_dropped);
  EXPECT_GT(dropped, 0u);
}

TEST(Corruption, NoiseSkipsCategoricalCells) {
  data::Dataset test;
  test.schema.columns = {{"x", data::ColumnKind::kNumerical, {}}, {"k", data::ColumnKind::kCategorical, {"a", "b"}}};
  test.schema.label = {"y", 2};
  test.cells.resize(4, 2);
  test.cells << 0, 0, 1, 1, 2, 0, 3, 1;
  test.labels = alternating(4, 2);
  CorruptionSpec spec;
  CorruptionTally tally;
  const auto out = apply_corruption(test, test, spec, &tally);
  EXPECT_EQ(out.cells.col(1), test.cells.col(1));
  EXPECT_EQ(tally.categorical_cells_skipped, 4u);
}

TEST(Corruption, SameSeedSameOutput) {
  const auto source = numeric_column({-1, 0, 1, 2}, {0, 1, 0, 1});
  CorruptionSpec spec;
  spec.seed = 9;
  EXPECT_EQ(apply_corruption(source, source, spec).cells, apply_corruption(source, source, spec).cells);
}

TEST(Importance, InverseLikelihoodProbabilities) {
  const std::vector<double> ll{std::log(0.4), std::log(0.1)};
  const Vector p = inverse_likelihood_probabilities(ll);
  EXPECT_NEAR(p(0), 0.2, 1e-15);
  EXPECT_NEAR(p(1), 0.8, 1e-15);
}

TEST(Importance, EqualLikelihoodsAreUniform) {
  const std::vector<double> ll(5, -3.2);
  EXPECT_TRUE(inverse_likelihood_probabilities(ll).isApproxToConstant(0.2, 1e-15));
}

TEST(Importance, ExtremeLogLikelihoodsStayFinite) {
  const std::vector<double> ll{-2000.0, -1.0, 0.0};
  const Vector p = inverse_likelihood_probabilities(ll);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_NEAR(p(0), 1.0, 1e-12);
}

TEST(Importance, CategoricalMleCounts) {
  data::Dataset d;
  d.schema.columns = {{"x", data::ColumnKind::kNumerical, {}}, {"k", data::ColumnKind::kCategorical, {"a", "b"}}};
  d.schema.label = {"y", 2};
  d.cells.resize(4, 2);
  d.cells << 0.1, 0, -0.4, 0, 0.9, 1, 0.3, 1;
  d.labels = std::vector<ClassIndex>{0, 0, 1, 1};
  const auto r = resample_by_importance(d, d, data::ColumnKind::kCategorical, 4);
  EXPECT_EQ(r.column, 1u);
  EXPECT_TRUE(r.probabilities.isApproxToConstant(0.25, 1e-15));
  EXPECT_EQ(r.data.rows(), 4u);
}

TEST(Importance, ZeroVarianceNumericalColumnRejected) {
  const auto d = numeric_column({1, 1, 1, 1}, {0, 1, 0, 1});
  EXPECT_THROW(resample_by_importance(d, d, data::ColumnKind::kNumerical, 1), Error);
}

TEST(Importance, PicksTheInformativeColumn) {
  SyntheticSpec spec;
  spec.num_numerical = 3;
  spec.n_source = 800;
  spec.class_separation = 3.0;
  spec.seed = 12;
  const auto [source, target] = generate_synthetic_dataset(spec);
  // Class means differ along column y mod D, i.e. columns 0 and 1 for C = 2.
  const auto imp = feature_importance(source, 1);
  EXPECT_LT(imp[2], imp[0]);
  EXPECT_LT(imp[2], imp[1]);
}

TEST(LabelShift, ClassImbalanceWeights) {
  const std::vector<ClassIndex> y{0, 1};
  const Vector w = class_imbalance_weights(y, (Vector(2) << 0.7, 0.3).finished(), 10.0);
  EXPECT_DOUBLE_EQ(w(1), 5.5);
  EXPECT_DOUBLE_EQ(w(0), 10.0);
}

TEST(LabelShift, TemporalSmoothingOfDegenerateWindow) {
  // Only class 0 has rows, so every window is [1, 0] before smoothing.
  const auto test = numeric_column(std::vector<double>(20, 0.0), std::vector<ClassIndex>(20, 0));
  LabelShiftSpec spec;
  spec.kind = LabelShiftKind::kTemporal;
  spec.length = 8;
  spec.seed = 1;
  const auto s = sample_label_shifted_stream(test, (Vector(2) << 0.5, 0.5).finished(), spec);
  ASSERT_EQ(s.pi.size(), 8u);
  for (size_t i = 1; i < s.pi.size(); ++i) {
    EXPECT_NEAR(s.pi[i](0), 1.0 / (1.0 + 1e-6), 1e-15);
    EXPECT_NEAR(s.pi[i](1), 1e-6 / (1.0 + 1e-6), 1e-15);
  }
  EXPECT_EQ(s.window[4], (Vector(2) << 1.0, 0.0).finished());
}

TEST(LabelShift, TemporalWindowMatchesLastDraws) {
  const size_t n = 300;
  const auto test = numeric_column(std::vector<double>(n, 0.0), alternating(n, 3), 3);
  LabelShiftSpec spec;
  spec.kind = LabelShiftKind::kTemporal;
  spec.window = 5;
  spec.seed = 8;
  const auto s = sample_label_shifted_stream(test, Vector::Constant(3, 1.0 / 3), spec);
  ASSERT_EQ(s.rows.size(), n);
  for (size_t i = 0; i < n; ++i) {
    const size_t lo = i + 1 >= 5 ? i + 1 - 5 : 0;
    Vector counts = Vector::Zero(3);
    for (size_t k = lo; k <= i; ++k) counts((*test.labels)[s.rows[k]]) += 1.0;
    EXPECT_TRUE(s.window[i].isApprox(counts / static_cast<double>(i + 1 - lo), 1e-15)) << "draw " << i;
  }
}

TEST(LabelShift, WithoutReplacementLengthChecked) {
  const auto test = numeric_column({0, 0, 0, 0}, {0, 1, 0, 1});
  LabelShiftSpec spec;
  spec.kind = LabelShiftKind::kClassImbalance;
  spec.with_replacement = false;
  spec.length = 10;
  EXPECT_THROW(sample_label_shifted_stream(test, (Vector(2) << 0.5, 0.5).finished(), spec), Error);
}

TEST(Synthetic, LabelFrequenciesMatchSpec) {
  SyntheticSpec spec;
  spec.seed = 31;
  const auto [source, target] = generate_synthetic_dataset(spec);
  const Vector ps = data::label_distribution(source);
  const Vector pt = data::label_distribution(target);
  EXPECT_NEAR(ps(0), 0.7, 0.02);
  EXPECT_NEAR(pt(0), 0.3, 0.02);
  EXPECT_EQ(source.rows(), 5000u);
}

TEST(Synthetic, SameSeedSameData) {
  SyntheticSpec spec;
  spec.n_source = 100;
  spec.n_target = 50;
  spec.num_categorical = 2;
  spec.seed = 4;
  const auto a = generate_synthetic_dataset(spec);
  const auto b = generate_synthetic_dataset(spec);
  EXPECT_EQ(a.first.cells, b.first.cells);
  EXPECT_EQ(*a.second.labels, *b.second.labels);
}

TEST(Synthetic, ClassMeansAreSeparationApart) {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.num_numerical = 4;
  spec.n_source = 60000;
  spec.n_target = 10;
  spec.source_label_dist = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  spec.target_label_dist = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  spec.class_separation = 2.5;
  spec.seed = 6;
  const auto [source, target] = generate_synthetic_dataset(spec);
  std::vector<RowVector> means(3, RowVector::Zero(4));
  std::vector<double> counts(3, 0.0);
  for (size_t i = 0; i < source.rows(); ++i) {
    const auto y = static_cast<size_t>((*source.labels)[i]);
    means[y] += source.cells.row(static_cast<Eigen::Index>(i));
    counts[y] += 1.0;
  }
  for (size_t k = 0; k < 3; ++k) means[k] /= counts[k];
  EXPECT_NEAR((means[0] - means[1]).norm(), 2.5, 0.06);
  EXPECT_NEAR((means[1] - means[2]).norm(), 2.5, 0.06);
}

TEST(Synthetic, ProvenanceSidecarWritten) {
  SyntheticSpec spec;
  spec.n_source = 10;
  spec.n_target = 10;
  const auto [source, target] = generate_synthetic_dataset(spec);
  const auto path = std::filesystem::temp_directory_path() / "adaptable_synth.csv";
  write_with_provenance(source, path, spec.to_json());
  std::ifstream side(path.string() + ".provenance.json");
  ASSERT_TRUE(side.good());
  const auto doc = nlohmann::json::parse(side);
  EXPECT_EQ(SyntheticSpec::from_json(doc).n_source, 10u);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".provenance.json");
}
