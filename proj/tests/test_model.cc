#include <gtest/gtest.h>

#include "pneunet/error.h"
#include "pneunet/model.h"

using namespace pneunet;

namespace {

// Independent count from the architecture description: conv k*k*in*out + out,
// batchnorm gamma+beta, dense in*out + out.
std::size_t expected_parameter_count(const ModelConfig& c, const std::vector<std::pair<int, int>>& stages) {
  const std::size_t bn = c.batchnorm ? 2 : 0;
  auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return k * k * in * out + out; };
  std::size_t total = conv(c.channels, c.base_channels, 3) + bn * c.base_channels;
  std::size_t in = c.base_channels;
  for (auto [mult, stride] : stages) {
    const std::size_t out = c.base_channels * mult;
    total += conv(in, out, 3) + conv(out, out, 3) + 2 * bn * out;
    if (in != out || stride != 1) total += conv(in, out, 1) + bn * out;
    in = out;
  }
  return total + in * c.head_units + c.head_units + c.head_units + 1;
}

}  // namespace

TEST(Model, ParameterCountMatchesOracle) {
  ModelConfig c;
  const ModelGraph m = build_model(c, 1);
  EXPECT_EQ(m.parameter_count(), 21493u);
  EXPECT_EQ(m.parameter_count(), expected_parameter_count(c, {{1, 1}, {2, 2}, {4, 1}}));

  c.backbone_preset = "small";
  c.batchnorm = false;
  c.channels = 1;
  c.height = c.width = 128;
  EXPECT_EQ(build_model(c, 1).parameter_count(),
            expected_parameter_count(c, {{1, 1}, {2, 2}, {4, 2}, {8, 1}}));
}

TEST(Model, ForwardShapesAndProbabilityRange) {
  const ModelGraph m = build_model(ModelConfig{}, 3);
  Rng rng(4);
  std::vector<float> data(2 * 3 * 64 * 64);
  for (float& v : data) v = static_cast<float>(rng.uniform());
  Tape tape;
  const ForwardPass pass = m.forward(tape, Tensor(Shape{2, 3, 64, 64}, data), {});
  EXPECT_EQ(tape.shape(pass.features), (Shape{2, 32, 8, 8}));
  EXPECT_EQ(tape.shape(pass.probabilities), (Shape{2, 1}));
  for (float p : tape.value(pass.probabilities).data()) {
    EXPECT_GT(p, 0.0f);
    EXPECT_LT(p, 1.0f);
  }
}

TEST(Model, SameSeedSameWeights) {
  EXPECT_EQ(build_model(ModelConfig{}, 9), build_model(ModelConfig{}, 9));
  EXPECT_NE(build_model(ModelConfig{}, 9).parameters(), build_model(ModelConfig{}, 10).parameters());
}

TEST(Model, RejectsInputTooSmall) {
  ModelConfig c;
  c.height = c.width = 16;
  EXPECT_THROW(build_model(c, 1), ConfigError);
  c.height = c.width = 32;
  EXPECT_NO_THROW(build_model(c, 1));
  c.backbone_preset = "huge";
  EXPECT_THROW(build_model(c, 1), ConfigError);
}

TEST(Model, ForwardRejectsWrongInputShape) {
  const ModelGraph m = build_model(ModelConfig{}, 1);
  Tape tape;
  EXPECT_THROW(m.forward(tape, Tensor::zeros(Shape{1, 1, 64, 64}), {}), ShapeError);
}

TEST(Model, FreezeAndUnfreeze) {
  ModelGraph m = build_model(ModelConfig{}, 1);
  freeze_backbone(m);
  EXPECT_FALSE(m.backbone_trainable());
  for (const std::string& n : m.trainable_names()) EXPECT_FALSE(m.is_backbone(n)) << n;
  EXPECT_TRUE(m.trainable("head_out.weight"));
  unfreeze_all(m);
  EXPECT_TRUE(m.backbone_trainable());
  EXPECT_TRUE(m.trainable("stem.weight"));
  EXPECT_FALSE(m.trainable("stem_bn.running_mean"));
}

TEST(Model, TransferCopiesBackboneOnly) {
  const ModelGraph src = build_model(ModelConfig{}, 1).backbone_only();
  EXPECT_FALSE(src.has_head());
  ModelGraph dst = build_model(ModelConfig{}, 2);
  const Tensor head_before = dst.parameter("head_out.weight");
  const std::size_t n = transfer_weights(src, dst);
  EXPECT_EQ(n, src.parameters().size());
  EXPECT_EQ(dst.parameter("stem.weight"), src.parameter("stem.weight"));
  EXPECT_EQ(dst.parameter("head_out.weight"), head_before);

  ModelConfig other;
  other.base_channels = 4;
  ModelGraph mismatch = build_model(other, 1);
  EXPECT_THROW(transfer_weights(src, mismatch), ShapeError);
}

TEST(Model, FrozenBackboneIgnoresBatchStatistics) {
  ModelGraph m = build_model(ModelConfig{}, 1);
  freeze_backbone(m);
  Rng rng(2);
  std::vector<float> data(4 * 3 * 64 * 64);
  for (float& v : data) v = static_cast<float>(rng.uniform());
  const Tensor batch(Shape{4, 3, 64, 64}, data);
  Tape tape;
  const ForwardPass pass = m.forward(tape, batch, {.mode = Mode::kTrain, .rng = &rng});
  EXPECT_TRUE(pass.buffer_updates.empty());
}

TEST(Model, PredictBatchMatchesSinglePredict) {
  const ModelGraph m = build_model(ModelConfig{}, 5);
  Rng rng(6);
  std::vector<float> data(2 * 3 * 64 * 64);
  for (float& v : data) v = static_cast<float>(rng.uniform());
  const Tensor batch(Shape{2, 3, 64, 64}, data);
  const auto probs = predict_batch(m, batch);
  const Tensor first(Shape{3, 64, 64}, std::vector<float>(data.begin(), data.begin() + 3 * 64 * 64));
  EXPECT_NEAR(predict(m, first), probs[0], 1e-6);
}

TEST(ModelConfig, JsonRoundTrip) {
  ModelConfig c;
  c.channels = 1;
  c.backbone_preset = "small";
  c.threshold = 0.3;
  EXPECT_EQ(ModelConfig::from_json(c.to_json()), c);
  nlohmann::json bad = c.to_json();
  bad["dropout_p"] = 1.5;
  EXPECT_THROW(ModelConfig::from_json(bad), ConfigError);
}
