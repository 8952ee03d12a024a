#include "adaptable/errors.hpp"
#include "adaptable/metrics.hpp"
#include "adaptable/random.hpp"
#include "adaptable/source_model.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace adaptable;

namespace {

data::Schema two_column_schema(int classes = 2) {
  data::Schema s;
  s.columns = {{"x0", data::ColumnKind::kNumerical, {}}, {"x1", data::ColumnKind::kNumerical, {}}};
  s.label = {"y", classes};
  return s;
}

// Two well separated Gaussian blobs, alternating labels.
data::Dataset blobs(size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 0.5);
  data::Dataset d;
  d.schema = two_column_schema();
  d.cells.resize(static_cast<Eigen::Index>(n), 2);
  std::vector<ClassIndex> y(n);
  for (size_t i = 0; i < n; ++i) {
    y[i] = static_cast<ClassIndex>(i % 2);
    const double c = y[i] == 0 ? -3.0 : 3.0;
    d.cells(static_cast<Eigen::Index>(i), 0) = c + noise(rng);
    d.cells(static_cast<Eigen::Index>(i), 1) = -c + noise(rng);
  }
  d.labels = y;
  return d;
}

model::SourceModelConfig small_config(int epochs) {
  model::SourceModelConfig cfg;
  cfg.hidden = {16};
  cfg.train.epochs = epochs;
  cfg.train.learning_rate = 1e-2;
  cfg.train.batch_size = 32;
  cfg.train.seed = 3;
  cfg.validation_fraction = 0.0;
  return cfg;
}

}  // namespace

TEST(TrainSourceClassifier, SeparableBlobsAreFitted) {
  const auto d = blobs(200, 1);
  const auto pre = data::Preprocessor::fit(d);
  const auto m = model::train_source_classifier(d, pre, small_config(50));
  const Matrix logits = m.predict_logits(d);
  std::vector<ClassIndex> pred(d.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) logits.row(i).maxCoeff(&pred[static_cast<size_t>(i)]);
  const auto s = metrics::classification_metrics(pred, *d.labels, 2);
  EXPECT_GE(s.balanced_accuracy, 0.95);
}

TEST(TrainSourceClassifier, SingleClassRejected) {
  auto d = blobs(20, 2);
  d.schema.label.num_classes = 1;
  d.labels->assign(d.rows(), 0);
  EXPECT_THROW(model::train_source_classifier(d, data::Preprocessor::fit(d), small_config(2)), Error);
}

TEST(TrainSourceClassifier, SeedFixedRerunIsIdentical) {
  const auto d = blobs(120, 4);
  const auto pre = data::Preprocessor::fit(d);
  auto cfg = small_config(5);
  cfg.validation_fraction = 0.2;
  model::TrainingLog a, b;
  const auto m1 = model::train_source_classifier(d, pre, cfg, &a);
  const auto m2 = model::train_source_classifier(d, pre, cfg, &b);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(a.validation_f1, b.validation_f1);
  EXPECT_EQ(m1.net().flatten(), m2.net().flatten());
}

TEST(TrainSourceClassifier, EarlyStoppingRecordsBestEpoch) {
  const auto d = blobs(200, 5);
  auto cfg = small_config(30);
  cfg.validation_fraction = 0.2;
  cfg.patience = 3;
  model::TrainingLog log;
  model::train_source_classifier(d, data::Preprocessor::fit(d), cfg, &log);
  ASSERT_FALSE(log.validation_f1.empty());
  EXPECT_GE(log.best_epoch, 0);
  EXPECT_LT(static_cast<size_t>(log.best_epoch), log.validation_f1.size());
}

TEST(PredictLogits, ZeroNetGivesUniformSoftmax) {
  const auto d = blobs(10, 6);
  nn::DenseNet net({2, 4, 2}, {nn::Activation::kRelu, nn::Activation::kIdentity}, 1);
  net.set_zero();
  const model::SourceModel m(net, data::Preprocessor::fit(d), 2);
  const Matrix p = nn::softmax_rows(m.predict_logits(d));
  EXPECT_TRUE(p.isApproxToConstant(0.5, 1e-15));
}

TEST(PredictLogits, DuplicatedRowsGiveDuplicatedLogits) {
  const auto d = blobs(10, 7);
  const auto pre = data::Preprocessor::fit(d);
  const auto m = model::train_source_classifier(d, pre, small_config(2));
  Matrix enc = pre.apply(d);
  enc.row(3) = enc.row(0);
  const Matrix z = m.predict_logits(enc);
  EXPECT_EQ(z.row(3), z.row(0));
  EXPECT_TRUE(z.allFinite());
}

TEST(SourceModel, SaveLoadRoundTrip) {
  const auto d = blobs(40, 8);
  const auto pre = data::Preprocessor::fit(d);
  const auto m = model::train_source_classifier(d, pre, small_config(3));
  const auto path = std::filesystem::temp_directory_path() / "adaptable_source_model.bin";
  m.save(path);
  const auto back = model::SourceModel::load(path);
  EXPECT_EQ(back.predict_logits(d), m.predict_logits(d));
  EXPECT_EQ(back.num_classes(), 2);
  std::filesystem::remove(path);
}

TEST(ImportLogits, FourRowsInTwoBatches) {
  std::istringstream in("1,2\n3,4\n5,6\n7,8\n");
  const auto r = model::import_logits(in, 2, 2);
  ASSERT_EQ(r.batches.size(), 2u);
  EXPECT_EQ(r.batches[0].logits.rows(), 2);
  EXPECT_EQ(r.batches[1].row_ids, (std::vector<size_t>{2, 3}));
  EXPECT_DOUBLE_EQ(r.batches[1].logits(1, 1), 8.0);
  EXPECT_FALSE(r.converted_from_probabilities);
}

TEST(ImportLogits, RaggedRowRejected) {
  std::istringstream in("1,2\n3\n");
  EXPECT_THROW(model::import_logits(in, 2, 2), Error);
}

TEST(ImportLogits, ProbabilityFilesAreConverted) {
  set_warnings_enabled(false);
  std::istringstream in("0.25,0.75\n1,0\n");
  const auto r = model::import_logits(in, 2, 64);
  set_warnings_enabled(true);
  EXPECT_TRUE(r.converted_from_probabilities);
  EXPECT_NEAR(r.batches[0].logits(0, 0), std::log(0.25 + 1e-12), 1e-15);
}
