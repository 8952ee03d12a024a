#include "adaptable/errors.hpp"
#include "adaptable/nn.hpp"

#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace adaptable;
using namespace adaptable::nn;

namespace {

DenseNet single_layer(Matrix w, Activation act) {
  DenseLayer l;
  l.bias = RowVector::Zero(w.cols());
  l.weight = std::move(w);
  l.activation = act;
  return DenseNet::from_layers({l});
}

}  // namespace

TEST(DenseNet, IdentityLayerCopiesInput) {
  const auto net = single_layer(Matrix::Identity(3, 3), Activation::kIdentity);
  Matrix x(2, 3);
  x << 1, -2, 3, 0.5, 0, -7;
  EXPECT_EQ(net.forward(x), x);
}

TEST(DenseNet, ReluClampsNegatives) {
  const auto net = single_layer(Matrix::Identity(2, 2), Activation::kRelu);
  Matrix x(1, 2);
  x << -1, 2;
  const Matrix y = net.forward(x);
  EXPECT_DOUBLE_EQ(y(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(y(0, 1), 2.0);
}

TEST(DenseNet, SoftplusAtZero) {
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(softplus(800.0), 800.0, 1e-12);
  EXPECT_GT(softplus(-800.0), -1e-300);
}

TEST(DenseNet, InputWidthMismatchIsDimensionError) {
  const DenseNet net({3, 4, 2}, {Activation::kRelu, Activation::kIdentity}, 1);
  try {
    net.forward(Matrix::Zero(2, 5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimension);
  }
}

TEST(DenseNet, GlorotInitWithinBound) {
  const DenseNet net({10, 6}, {Activation::kIdentity}, 3);
  const double bound = std::sqrt(6.0 / 16.0);
  EXPECT_LE(net.layers()[0].weight.cwiseAbs().maxCoeff(), bound);
  EXPECT_TRUE(net.layers()[0].bias.isZero());
}

TEST(Backprop, ZeroLossGradientLeavesParametersUnchanged) {
  DenseNet net({3, 4, 2}, {Activation::kRelu, Activation::kIdentity}, 5);
  const auto before = net.flatten();
  TrainConfig cfg;
  Optimizer opt(cfg);
  ForwardTape tape;
  const Matrix out = net.forward(Matrix::Random(5, 3), tape);
  backward_and_step(net, tape, Matrix::Zero(out.rows(), out.cols()), opt);
  EXPECT_EQ(net.flatten(), before);
}

TEST(Backprop, LinearSquaredErrorMatchesHandDerivation) {
  Matrix w(2, 1);
  w << 0.5, -1.0;
  auto net = single_layer(w, Activation::kIdentity);
  Matrix x(1, 2), y(1, 1);
  x << 2.0, 3.0;
  y << 1.0;
  ForwardTape tape;
  const Matrix yhat = net.forward(x, tape);
  Matrix g;
  squared_error(yhat, y, &g);
  auto grads = NetGradient::zeros_like(net);
  net.backward(tape, g, grads);
  const double r = yhat(0, 0) - 1.0;  // -3
  EXPECT_NEAR(grads.layers[0].weight(0, 0), 2.0 * r * 2.0, 1e-12);
  EXPECT_NEAR(grads.layers[0].weight(1, 0), 2.0 * r * 3.0, 1e-12);
  EXPECT_NEAR(grads.layers[0].bias(0), 2.0 * r, 1e-12);
}

TEST(Backprop, NonFiniteGradientNamesLayer) {
  DenseNet net({2, 2}, {Activation::kIdentity}, 1);
  TrainConfig cfg;
  Optimizer opt(cfg);
  ForwardTape tape;
  net.forward(Matrix::Ones(1, 2), tape);
  Matrix g(1, 2);
  g << std::nan(""), 0.0;
  try {
    backward_and_step(net, tape, g, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumeric);
    EXPECT_NE(std::string(e.what()).find("layer"), std::string::npos) << e.what();
  }
}

TEST(GradCheck, EveryLayerAndLossCombination) {
  for (const auto& r : adaptable::testing::check_dense_layers(7)) {
    EXPECT_LT(r.max_relative_error, adaptable::testing::kFdTolerance) << r.name;
    EXPECT_GT(r.entries_checked, 0u) << r.name;
  }
}

TEST(GradCheck, TemperatureLosses) {
  for (const auto& r : adaptable::testing::check_temperature_losses(8)) {
    EXPECT_LT(r.max_relative_error, adaptable::testing::kFdTolerance) << r.name;
  }
}

TEST(Optimizer, SameSeedSameTrajectory) {
  auto run = [] {
    DenseNet net({3, 5, 2}, {Activation::kRelu, Activation::kIdentity}, 42);
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    Optimizer opt(cfg);
    const Matrix x = Matrix::Constant(4, 3, 0.3);
    const std::vector<ClassIndex> y{0, 1, 1, 0};
    for (int s = 0; s < 10; ++s) {
      ForwardTape tape;
      Matrix g;
      softmax_cross_entropy(net.forward(x, tape), y, &g);
      backward_and_step(net, tape, g, opt);
    }
    return net.flatten();
  };
  EXPECT_EQ(run(), run());
}

TEST(Optimizer, SgdStepIsLearningRateTimesGradient) {
  Matrix w(1, 1);
  w << 1.0;
  auto net = single_layer(w, Activation::kIdentity);
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.learning_rate = 0.1;
  Optimizer opt(cfg);
  ForwardTape tape;
  net.forward(Matrix::Constant(1, 1, 2.0), tape);
  backward_and_step(net, tape, Matrix::Constant(1, 1, 1.0), opt);
  EXPECT_NEAR(net.layers()[0].weight(0, 0), 1.0 - 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(net.layers()[0].bias(0), -0.1, 1e-15);
}

TEST(TrainConfig, ValidationRejectsBadValues) {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.l2_penalty = -1.0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Serialization, NetRoundTripIsBitExact) {
  const DenseNet net({4, 3, 2}, {Activation::kSoftplus, Activation::kIdentity}, 77);
  const auto path = std::filesystem::temp_directory_path() / "adaptable_nn_roundtrip.bin";
  save_net(net, path);
  const auto back = load_net(path);
  EXPECT_EQ(back.flatten(), net.flatten());
  EXPECT_EQ(back.layers()[0].activation, Activation::kSoftplus);
  EXPECT_EQ(back.seed(), 77u);
  std::filesystem::remove(path);
}

TEST(Losses, SoftmaxRowsSumToOne) {
  const Matrix p = softmax_rows(Matrix::Random(6, 4) * 50.0);
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
}
