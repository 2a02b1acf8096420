#include <gtest/gtest.h>

#include <cmath>

#include "dehaze/objectives.hpp"
#include "dehaze/training.hpp"
#include "test_util.hpp"

namespace dehaze {
namespace {

using testing::random_tensor;

std::vector<std::int64_t> conv_widths(const ModelConfig& cfg) {
  std::vector<std::int64_t> w;
  for (const auto& l : cfg.encoder_table) {
    if (l.kind == LayerKind::kConv) w.push_back(l.out_channels);
  }
  return w;
}

TEST(ModelConfig, FullScaleEncoderWidths) {
  const auto cfg = ModelConfig::standard(Scale::kFull);
  EXPECT_EQ(conv_widths(cfg), (std::vector<std::int64_t>{64, 64, 128, 128, 256, 256, 256, 512}));
  EXPECT_EQ(cfg.skip_channels(), (std::array<std::int64_t, 3>{64, 128, 256}));
  EXPECT_NO_THROW(cfg.validate());
}

TEST(ModelConfig, TinyScaleDividesWidthsByEight) {
  const auto cfg = ModelConfig::standard(Scale::kTiny);
  EXPECT_EQ(conv_widths(cfg), (std::vector<std::int64_t>{8, 8, 16, 16, 32, 32, 32, 64}));
  EXPECT_EQ(cfg.skip_channels(), (std::array<std::int64_t, 3>{8, 16, 32}));
  EXPECT_EQ(cfg.decoder_table.back().out_channels, 3);
  EXPECT_EQ(cfg.decoder_table.back().activation, Activation::kTanh);
}

TEST(ModelConfig, StructuralInvariants) {
  const auto cfg = ModelConfig::standard(Scale::kFull);
  int pools = 0, tconvs = 0;
  for (const auto& l : cfg.encoder_table) {
    pools += l.kind == LayerKind::kMaxPool;
    EXPECT_FALSE(l.trainable) << l.name;
  }
  for (const auto& l : cfg.decoder_table) {
    if (l.kind == LayerKind::kTConv) {
      ++tconvs;
      EXPECT_EQ(l.kernel, 4);
      EXPECT_EQ(l.stride, 2);
      EXPECT_EQ(l.padding, 1);
    }
  }
  EXPECT_EQ(pools, 3);
  EXPECT_EQ(tconvs, 3);
  EXPECT_EQ(cfg.decoder_table.front().kind, LayerKind::kConv);
  // Every later conv/tconv is preceded by a norm layer.
  for (std::size_t i = 1; i < cfg.decoder_table.size(); ++i) {
    if (cfg.decoder_table[i].kind != LayerKind::kNorm) {
      EXPECT_EQ(cfg.decoder_table[i - 1].kind, LayerKind::kNorm) << cfg.decoder_table[i].name;
    }
  }
}

TEST(ModelConfig, ValidateRejectsBrokenTables) {
  auto cfg = ModelConfig::standard(Scale::kTiny);
  cfg.encoder_table[0].trainable = true;
  EXPECT_THROW(cfg.validate(), InvalidArgument);

  cfg = ModelConfig::standard(Scale::kTiny);
  cfg.decoder_table[0].out_channels += 1;
  EXPECT_THROW(cfg.validate(), Error);

  cfg = ModelConfig::standard(Scale::kTiny);
  auto it = std::find_if(cfg.encoder_table.begin(), cfg.encoder_table.end(),
                         [](const LayerSpec& l) { return l.kind == LayerKind::kMaxPool; });
  cfg.encoder_table.erase(it);
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(ModelConfig, JsonRoundTrip) {
  const auto cfg = ModelConfig::standard(Scale::kTiny, NormKind::kBatch, NormKind::kNone);
  EXPECT_EQ(ModelConfig::from_json(cfg.to_json()), cfg);
}

TEST(Forward, PreservesSpatialSize) {
  auto model = build_model<float>(ModelConfig::standard(Scale::kTiny), nullptr, 1);
  for (std::int64_t h : {32, 64, 96}) {
    for (std::int64_t w : {32, 64, 160}) {
      const auto x = random_tensor<float>({1, 3, h, w}, static_cast<std::uint64_t>(h * w), -2, 2);
      const auto y = model.forward(x);
      EXPECT_EQ(y.shape(), (Shape{1, 3, h, w}));
      for (float v : y.values()) ASSERT_TRUE(v >= -1.0f && v <= 1.0f);
    }
  }
}

TEST(Forward, NonSquareBatchAtFullScale) {
  auto model = build_model<float>(ModelConfig::standard(Scale::kFull), nullptr, 2);
  const auto x = random_tensor<float>({1, 3, 64, 64}, 3, -2, 2);
  const auto y = model.forward(x);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 64, 64}));
  for (float v : y.values()) ASSERT_TRUE(v >= -1.0f && v <= 1.0f);
  EXPECT_EQ(model.bottleneck(x).shape(), (Shape{1, 512, 8, 8}));
}

TEST(Forward, TinyBatchOfTwoNonSquare) {
  auto model = build_model<float>(ModelConfig::standard(Scale::kTiny), nullptr, 4);
  const auto x = random_tensor<float>({2, 3, 96, 160}, 5, -2, 2);
  EXPECT_EQ(model.forward(x).shape(), (Shape{2, 3, 96, 160}));
  EXPECT_EQ(model.bottleneck(x).shape(), (Shape{2, 64, 12, 20}));
}

TEST(Forward, RejectsBadInput) {
  auto model = build_model<float>(ModelConfig::standard(Scale::kTiny), nullptr, 1);
  EXPECT_THROW(model.forward(Tensor<float>({1, 3, 36, 32})), ShapeError);
  EXPECT_THROW(model.forward(Tensor<float>({1, 1, 32, 32})), ShapeError);
  EXPECT_THROW(model.forward(Tensor<float>({3, 32, 32})), ShapeError);
}

TEST(Forward, ActivationSignsPerLayer) {
  auto model = build_model<double>(ModelConfig::standard(Scale::kTiny), nullptr, 6);
  const auto x = random_tensor<double>({2, 3, 32, 32}, 7, -2, 2);
  EncoderTrace<double> enc;
  model.encode(x, "conv4_1", &enc);
  for (const auto& out : enc.outputs) {
    for (double v : out.values()) ASSERT_GE(v, 0.0);
  }
  ForwardTrace<double> trace;
  model.forward(x, {NormMode::kTrain, false}, &trace);
  const auto& layers = model.decoder_layers();
  ASSERT_EQ(trace.steps.size(), layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto act = layers[i].spec.activation;
    for (double v : trace.steps[i].output.values()) {
      if (act == Activation::kRelu) ASSERT_GE(v, 0.0) << layers[i].spec.name;
      if (act == Activation::kTanh) ASSERT_LE(std::abs(v), 1.0) << layers[i].spec.name;
    }
  }
}

TEST(SkipWiring, ZeroingSkipsChangesOutput) {
  for (NormKind k : {NormKind::kNone, NormKind::kBatch, NormKind::kInstance}) {
    auto model = build_model<float>(ModelConfig::standard(Scale::kTiny, k, k), nullptr, 8);
    const auto x = random_tensor<float>({2, 3, 32, 32}, 9, -2, 2);
    const auto a = model.forward(x, {NormMode::kTrain, false});
    const auto b = model.forward(x, {NormMode::kTrain, true});
    double diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, double(std::abs(a[i] - b[i])));
    EXPECT_GT(diff, 1e-4) << to_string(k);
  }
}

TEST(SkipWiring, SkipOccupiesTrailingConcatChannels) {
  // With the skip-facing input channels of each post-concat conv zeroed, the
  // skips cannot influence the output.
  auto model = build_model<double>(
      ModelConfig::standard(Scale::kTiny, NormKind::kNone, NormKind::kNone), nullptr, 10);
  const auto skips = model.config().skip_channels();
  for (auto& l : model.decoder_layers()) {
    if (l.spec.name != "dec2_conv1" && l.spec.name != "dec3_conv1" && l.spec.name != "dec4_conv1") {
      continue;
    }
    const int block = l.spec.block;
    const std::int64_t skip = skips[static_cast<std::size_t>(4 - block)];
    const std::int64_t cin = l.weight.dim(1);
    for (std::int64_t o = 0; o < l.weight.dim(0); ++o) {
      for (std::int64_t c = cin - skip; c < cin; ++c) {
        for (std::int64_t k = 0; k < 9; ++k) l.weight.at(o, c, k / 3, k % 3) = 0.0;
      }
    }
  }
  const auto x = random_tensor<double>({1, 3, 32, 32}, 11, -2, 2);
  EXPECT_EQ(model.forward(x), model.forward(x, {NormMode::kEval, true}));
}

TEST(Freezing, EncoderBitwiseUnchangedAfterTenSteps) {
  auto model = build_model<float>(ModelConfig::standard(Scale::kTiny), nullptr, 12);
  std::vector<Tensor<float>> before;
  for (const auto& l : model.encoder_layers()) {
    before.push_back(l.weight);
    before.push_back(l.bias);
  }
  const std::string digest = model.encoder_digest();
  EncoderFeatures<float> features(model);
  auto params = model.parameters();
  SgdState<float> state;
  const auto x = random_tensor<float>({2, 3, 32, 32}, 13, -2, 2);
  const auto target = random_tensor<float>({2, 3, 32, 32}, 14, 0, 1);
  const auto decoder_before = model.decoder_layers()[0].weight;
  for (int step = 0; step < 10; ++step) {
    ForwardTrace<float> trace;
    auto pred = model.forward(x, {NormMode::kTrain, false}, &trace);
    for (auto& v : pred.values()) v = (v + 1) / 2;
    auto loss = total_loss<float>(pred, target, &features, LossConfig{1.0});
    for (auto& g : loss.grad_pred.values()) g *= 0.5f;
    model.zero_grad();
    model.backward(trace, loss.grad_pred);
    sgd_step(params, state, 0.1, SgdOptions{0.9, 1e-4});
  }
  std::size_t i = 0;
  for (const auto& l : model.encoder_layers()) {
    EXPECT_EQ(l.weight, before[i++]) << l.spec.name;
    EXPECT_EQ(l.bias, before[i++]) << l.spec.name;
  }
  EXPECT_EQ(model.encoder_digest(), digest);
  EXPECT_NE(model.decoder_layers()[0].weight, decoder_before);
  for (const auto& p : params) {
    if (p.name.rfind("encoder.", 0) == 0) {
      EXPECT_FALSE(p.trainable);
      EXPECT_EQ(p.grad, nullptr);
    }
  }
}

TEST(Build, DeterministicInSeed) {
  const auto cfg = ModelConfig::standard(Scale::kTiny);
  const auto a = build_model<float>(cfg, nullptr, 5).to_archive();
  const auto b = build_model<float>(cfg, nullptr, 5).to_archive();
  const auto c = build_model<float>(cfg, nullptr, 6).to_archive();
  ASSERT_EQ(a.tensors().size(), b.tensors().size());
  bool any_diff = false;
  for (const auto& [name, t] : a.tensors()) {
    EXPECT_EQ(t, b.at(name)) << name;
    any_diff |= !(t == c.at(name));
  }
  EXPECT_TRUE(any_diff);
}

TEST(Build, InitializationScheme) {
  const auto model = build_model<double>(ModelConfig::standard(Scale::kFull), nullptr, 3);
  for (const auto& l : model.decoder_layers()) {
    if (l.spec.kind == LayerKind::kNorm) {
      for (double g : l.norm.gamma.values()) EXPECT_EQ(g, 1.0);
      for (double b : l.norm.beta_shift.values()) EXPECT_EQ(b, 0.0);
      continue;
    }
    for (double b : l.bias.values()) EXPECT_EQ(b, 0.0);
    // He-normal: sample std ≈ sqrt(2 / fan_in).
    double fan_in = static_cast<double>(l.spec.in_channels) * l.spec.kernel * l.spec.kernel;
    if (l.spec.kind == LayerKind::kTConv) fan_in /= l.spec.stride * l.spec.stride;
    double sq = 0;
    for (double w : l.weight.values()) sq += w * w;
    const double sd = std::sqrt(sq / static_cast<double>(l.weight.size()));
    if (l.weight.size() > 10000) EXPECT_NEAR(sd / std::sqrt(2.0 / fan_in), 1.0, 0.05) << l.spec.name;
  }
}

TEST(Build, MissingEncoderTensorIsNamed) {
  const auto cfg = ModelConfig::standard(Scale::kTiny);
  TensorArchive archive = build_model<float>(cfg, nullptr, 1).to_archive();
  TensorArchive partial;
  for (const auto& [name, t] : archive.tensors()) {
    if (name != "encoder.conv2_1.weight") partial.put(name, t);
  }
  try {
    build_model<float>(cfg, &partial, 1);
    FAIL() << "expected a missing-tensor error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.conv2_1.weight"), std::string::npos);
  }
}

TEST(Build, EncoderShapeMismatchThrows) {
  const auto full = build_model<float>(ModelConfig::standard(Scale::kFull), nullptr, 1).to_archive();
  EXPECT_THROW(build_model<float>(ModelConfig::standard(Scale::kTiny), &full, 1), ShapeError);
}

TEST(Build, LoadsEncoderFromArchive) {
  const auto cfg = ModelConfig::standard(Scale::kTiny);
  const auto src = build_model<float>(cfg, nullptr, 77);
  const auto archive = src.to_archive();
  const auto dst = build_model<float>(cfg, &archive, 1);
  EXPECT_EQ(dst.encoder_digest(), src.encoder_digest());
}

TEST(Checkpoint, ArchiveRoundTripReproducesOutputs) {
  for (NormKind k : {NormKind::kBatch, NormKind::kInstance}) {
    auto model = build_model<float>(ModelConfig::standard(Scale::kTiny, k, k), nullptr, 21);
    const auto x = random_tensor<float>({2, 3, 32, 32}, 22, -2, 2);
    model.forward(x, {NormMode::kTrain, false});  // accumulates BN statistics
    const auto archive = model.to_archive();
    auto restored = load_model<float>(archive);
    EXPECT_EQ(restored.forward(x), model.forward(x)) << to_string(k);
    EXPECT_EQ(restored.config(), model.config());
  }
}

TEST(Checkpoint, BatchNormBuffersAreSaved) {
  auto model = build_model<float>(ModelConfig::standard(Scale::kTiny, NormKind::kBatch, NormKind::kBatch),
                                  nullptr, 1);
  const auto archive = model.to_archive();
  EXPECT_TRUE(archive.contains("skip.skip1_norm.running_mean"));
  EXPECT_TRUE(archive.contains("decoder.dec1_conv2_norm.running_var"));
  EXPECT_TRUE(archive.contains("decoder.dec1_conv2_norm.num_batches"));
  EXPECT_TRUE(archive.metadata().contains("model_config"));
}

TEST(DehazeImage, PadsAndCropsArbitrarySizes) {
  auto model = build_model<float>(ModelConfig::standard(Scale::kTiny), nullptr, 1);
  const Image img = testing::random_image(3, 61, 77, 3);
  const Image out = dehaze_image(model, img);
  EXPECT_EQ(out.height(), 61);
  EXPECT_EQ(out.width(), 77);
  for (float v : out.pixels.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST(DehazeImage, Errors) {
  auto model = build_model<float>(ModelConfig::standard(Scale::kTiny), nullptr, 1);
  EXPECT_THROW(dehaze_image(model, testing::random_image(1, 32, 32, 1)), ShapeError);
  EXPECT_THROW(dehaze_image(model, testing::random_image(3, 15, 32, 1)), ShapeError);
}

TEST(DehazeImage, UntrainedBatchNormInEvalModeThrows) {
  auto model = build_model<float>(
      ModelConfig::standard(Scale::kTiny, NormKind::kBatch, NormKind::kBatch), nullptr, 1);
  EXPECT_THROW(dehaze_image(model, testing::random_image(3, 32, 32, 1)), InvalidArgument);
}

// End-to-end check of the decoder gradients: image → network → total loss
// (λ = 1, real encoder tap), on a sample of 1% of the decoder parameters.
class DecoderGradient : public ::testing::TestWithParam<NormKind> {};

TEST_P(DecoderGradient, SampledParametersMatchFiniteDifferences) {
  const NormKind k = GetParam();
  auto model = build_model<double>(ModelConfig::standard(Scale::kTiny, k, k), nullptr, 31);
  EncoderFeatures<double> features(model);
  const auto x = random_tensor<double>({2, 3, 32, 32}, 32, -2, 2);
  const auto target = random_tensor<double>({2, 3, 32, 32}, 33, 0, 1);

  auto loss_of = [&](ForwardTrace<double>* trace) {
    auto pred = model.forward(x, {NormMode::kTrain, false}, trace);
    for (auto& v : pred.values()) v = (v + 1) / 2;
    return total_loss<double>(pred, target, &features, LossConfig{1.0});
  };
  // Train-mode BN forwards mutate running statistics but not the output.
  ForwardTrace<double> trace;
  auto r = loss_of(&trace);
  for (auto& g : r.grad_pred.values()) g *= 0.5;
  model.zero_grad();
  model.backward(trace, r.grad_pred);

  std::vector<std::pair<Tensor<double>*, Tensor<double>*>> tensors;
  std::size_t total = 0;
  for (auto& p : model.parameters()) {
    if (!p.trainable || !p.grad) continue;
    tensors.emplace_back(p.value, p.grad);
    total += p.value->size();
  }
  // 1% of decoder parameters. Steps near 1e-3 are dominated by ReLU, max-pool
  // and normalization curvature; 1e-7 isolates the derivative itself.
  constexpr double kStep = 1e-7;
  std::mt19937_64 rng(34);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  const std::size_t samples = std::max<std::size_t>(total / 100, 20);
  for (std::size_t s = 0; s < samples; ++s) {
    std::size_t flat = pick(rng);
    std::size_t t = 0;
    while (flat >= tensors[t].first->size()) flat -= tensors[t++].first->size();
    double& value = (*tensors[t].first)[flat];
    const double analytic = (*tensors[t].second)[flat];
    const double numeric =
        testing::central_difference(value, [&] { return loss_of(nullptr).total; }, kStep);
    EXPECT_LT(testing::relative_error(analytic, numeric, 1e-6), 1e-2) << "tensor " << t << " index " << flat;
  }
}

INSTANTIATE_TEST_SUITE_P(Norms, DecoderGradient,
                         ::testing::Values(NormKind::kNone, NormKind::kBatch, NormKind::kInstance),
                         [](const auto& info) { return std::string(to_string(info.param)); });

}  // namespace
}  // namespace dehaze
