// Acceptance suite: one PASS/FAIL line per criterion with its runtime.
// Exit status is nonzero when any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dehaze/data.hpp"
#include "dehaze/haze_synth.hpp"
#include "dehaze/network.hpp"
#include "dehaze/normalization.hpp"
#include "dehaze/objectives.hpp"
#include "dehaze/training.hpp"
#include "test_util.hpp"

namespace dehaze {
namespace {

namespace fs = std::filesystem;
using testing::random_image;
using testing::random_tensor;
using testing::TempDir;

/// Collects failed checks and informational notes for one criterion.
class Verdict {
 public:
  void check(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& text) { notes_.push_back(text); }
  bool passed() const { return failures_.empty(); }
  std::string detail() const {
    std::string s;
    for (const auto& f : failures_) s += (s.empty() ? "" : "; ") + ("failed: " + f);
    for (const auto& n : notes_) s += (s.empty() ? "" : "; ") + n;
    return s;
  }

 private:
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string fmt(const char* format, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// 1. Normalization oracles.
void normalization_suite(Verdict& v) {
  const Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const auto y = instance_norm(x, NormParams<double>::identity_affine(NormKind::kInstance, 1));
  const double expected[] = {-1.3416, -0.4472, 0.4472, 1.3416};
  double hand = 0;
  for (int i = 0; i < 4; ++i) hand = std::max(hand, std::abs(y[i] - expected[i]));
  v.check(hand < 1e-4, fmt("2x2 hand example off by %.3g", hand));

  auto p = NormParams<double>::identity_affine(NormKind::kInstance, 3);
  p.gamma.fill(2.0);
  p.beta_shift.fill(-0.75);
  bool beta = true;
  const auto flat = instance_norm(Tensor<double>({2, 3, 4, 4}, 5.0), p);
  for (double out : flat.values()) beta &= out == -0.75;
  v.check(beta, "constant input does not map to beta_shift");

  double bn_in = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto z = random_tensor<double>({1, 4, 5, 7}, seed, -3, 3);
    auto pb = NormParams<double>::identity_affine(NormKind::kBatch, 4);
    pb.gamma = random_tensor<double>({4}, seed + 50, 0.5, 2.0);
    pb.beta_shift = random_tensor<double>({4}, seed + 60);
    auto pi = pb;
    pi.kind = NormKind::kInstance;
    auto stats = RunningStats<double>::zeros(4);
    bn_in = std::max(bn_in, max_abs_diff(batch_norm(z, pb, NormMode::kTrain, stats), instance_norm(z, pi)));
  }
  v.check(bn_in < 1e-5, fmt("BN(N=1) differs from IN by %.3g", bn_in));

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> scale(0.5, 4.0), shift(-3.0, 3.0);
  const auto pa = NormParams<double>::identity_affine(NormKind::kInstance, 2);
  double affine = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto z = random_tensor<double>({1, 2, 6, 6}, 100 + static_cast<std::uint64_t>(trial));
    const double a = scale(rng), b = shift(rng);
    Tensor<double> w = z;
    for (auto& e : w.values()) e = a * e + b;
    affine = std::max(affine, max_abs_diff(instance_norm(z, pa), instance_norm(w, pa)));
  }
  v.check(affine < 1e-4, fmt("affine invariance off by %.3g", affine));
  v.note(fmt("hand %.2g, BN(N=1) %.2g, affine %.2g", hand, bn_in, affine));
}

// 2. Gradient checks in double precision.
double norm_layer_gradient_error(NormKind kind) {
  auto x = random_tensor<double>({2, 3, 4, 4}, 31);
  const auto w = random_tensor<double>({2, 3, 4, 4}, 32);
  auto p = NormParams<double>::identity_affine(kind, 3);
  p.gamma = random_tensor<double>({3}, 33, 0.5, 1.5);
  p.beta_shift = random_tensor<double>({3}, 34);
  auto loss = [&] {
    auto stats = RunningStats<double>::zeros(3);
    const auto y = apply_norm(x, p, NormMode::kTrain, stats);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  };
  NormCache<double> cache;
  auto stats = RunningStats<double>::zeros(3);
  apply_norm(x, p, NormMode::kTrain, stats, &cache);
  Tensor<double> gg({3}), gb({3});
  const auto gx = norm_backward(w, p, cache, &gg, &gb);
  double worst = 0;
  auto check = [&](Tensor<double>& param, const Tensor<double>& grad) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double numeric = testing::central_difference(param[i], loss);
      worst = std::max(worst, testing::relative_error(grad[i], numeric, 1e-6));
    }
  };
  check(x, gx);
  check(p.gamma, gg);
  check(p.beta_shift, gb);
  return worst;
}

double loss_gradient_error(double lambda) {
  const auto model = build_model<double>(ModelConfig::standard(Scale::kTiny), nullptr, 11);
  EncoderFeatures<double> features(model);
  auto pred = random_tensor<double>({2, 3, 16, 16}, 21, 0.05, 0.95);
  const auto target = random_tensor<double>({2, 3, 16, 16}, 22, 0.05, 0.95);
  const LossConfig cfg{lambda};
  const auto r = total_loss<double>(pred, target, &features, cfg);
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> pick(0, pred.size() - 1);
  double diff2 = 0, norm2 = 0;
  for (int k = 0; k < 60; ++k) {
    const std::size_t i = pick(rng);
    const double numeric = testing::central_difference(
        pred[i], [&] { return total_loss<double>(pred, target, &features, cfg).total; }, 1e-6);
    diff2 += (numeric - r.grad_pred[i]) * (numeric - r.grad_pred[i]);
    norm2 += std::max(numeric * numeric, r.grad_pred[i] * r.grad_pred[i]);
  }
  return std::sqrt(diff2 / norm2);
}

struct SpotCheck {
  double coarse = 0;  // aggregate relative error at step 1e-3
  double fine = 0;    // aggregate relative error at step 1e-7
  double fine_worst = 0;
};

// Sampled 1% of decoder parameters through image → network → loss (λ = 1).
SpotCheck decoder_spot_check(NormKind k) {
  auto model = build_model<double>(ModelConfig::standard(Scale::kTiny, k, k), nullptr, 31);
  EncoderFeatures<double> features(model);
  const auto x = random_tensor<double>({2, 3, 32, 32}, 32, -2, 2);
  const auto target = random_tensor<double>({2, 3, 32, 32}, 33, 0, 1);
  auto loss_of = [&](ForwardTrace<double>* trace) {
    auto pred = model.forward(x, {NormMode::kTrain, false}, trace);
    for (auto& e : pred.values()) e = (e + 1) / 2;
    return total_loss<double>(pred, target, &features, LossConfig{1.0});
  };
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
  std::mt19937_64 rng(34);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  const std::size_t samples = std::max<std::size_t>(total / 100, 20);
  double d_coarse = 0, n_coarse = 0, d_fine = 0, n_fine = 0;
  SpotCheck out;
  auto f = [&] { return loss_of(nullptr).total; };
  for (std::size_t s = 0; s < samples; ++s) {
    std::size_t flat = pick(rng), t = 0;
    while (flat >= tensors[t].first->size()) flat -= tensors[t++].first->size();
    double& value = (*tensors[t].first)[flat];
    const double a = (*tensors[t].second)[flat];
    const double coarse = testing::central_difference(value, f, 1e-3);
    const double fine = testing::central_difference(value, f, 1e-7);
    d_coarse += (a - coarse) * (a - coarse);
    n_coarse += std::max(a * a, coarse * coarse);
    d_fine += (a - fine) * (a - fine);
    n_fine += std::max(a * a, fine * fine);
    out.fine_worst = std::max(out.fine_worst, testing::relative_error(a, fine, 1e-6));
  }
  out.coarse = std::sqrt(d_coarse / n_coarse);
  out.fine = std::sqrt(d_fine / n_fine);
  return out;
}

void gradient_suite(Verdict& v) {
  for (NormKind k : {NormKind::kInstance, NormKind::kBatch}) {
    const double e = norm_layer_gradient_error(k);
    v.check(e < 1e-3, std::string(to_string(k)) + fmt(" layer gradient rel err %.3g", e));
    v.note(std::string(to_string(k)) + fmt(" layer %.2g", e));
  }
  for (double lambda : {0.0, 1.0}) {
    const double e = loss_gradient_error(lambda);
    v.check(e < 1e-3, fmt("total_loss lambda=%g rel err %.3g", lambda, e));
    v.note(fmt("loss lambda=%g %.2g", lambda, e));
  }
  for (NormKind k : {NormKind::kNone, NormKind::kBatch, NormKind::kInstance}) {
    const SpotCheck s = decoder_spot_check(k);
    const std::string name(to_string(k));
    v.check(s.coarse < 1e-2, "decoder " + name + fmt(" spot check at step 1e-3 rel err %.3g", s.coarse));
    v.note("decoder " + name + fmt(" step 1e-3 %.3g, step 1e-7 %.2g (worst element %.2g)", s.coarse, s.fine,
                                   s.fine_worst));
  }
}

// 3. Physics.
void physics_suite(Verdict& v) {
  const Image j = random_image(3, 25, 40, 3);
  const TransmissionMap t{random_image(1, 25, 40, 4, 1e-3, 1.0)};
  const std::array<double, 3> a{0.72, 0.95, 0.81};
  const Image i = apply_scattering(j, t, a);
  int outside = 0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 25; ++y) {
      for (int x = 0; x < 40; ++x) {
        const float jv = j.at(c, y, x), av = static_cast<float>(a[static_cast<std::size_t>(c)]);
        outside += i.at(c, y, x) < std::min(jv, av) || i.at(c, y, x) > std::max(jv, av);
      }
    }
  }
  v.check(outside == 0, std::to_string(outside) + " of 1000 pixels outside [min(J,A), max(J,A)]");

  const auto t0 = transmission_from_depth(make_depth_map(Image(1, 3, 3, 0.0f), DepthScaling::kRaw), 1.3);
  bool one = true;
  for (float e : t0.values.pixels.values()) one &= e == 1.0f;
  v.check(one, "t(0) != 1");
  const auto tl =
      transmission_from_depth(make_depth_map(Image(1, 3, 3, static_cast<float>(std::log(2.0))), DepthScaling::kRaw), 1.0);
  bool half = true;
  for (float e : tl.values.pixels.values()) half &= e == 0.5f;
  v.check(half, "t(ln 2; beta=1) != 0.5");

  const Image jj = random_image(3, 16, 16, 6);
  const TransmissionMap tt{random_image(1, 16, 16, 7, 0.1, 1.0)};
  const std::array<double, 3> aa{0.7, 0.85, 1.0};
  const Image back = invert_scattering(apply_scattering(jj, tt, aa), tt, aa, 0.1);
  double inv = 0;
  for (std::size_t k = 0; k < jj.pixels.size(); ++k) {
    inv = std::max(inv, static_cast<double>(std::abs(back.pixels[k] - jj.pixels[k])));
  }
  v.check(inv <= 1e-5, fmt("inversion off by %.3g", inv));
  v.note(fmt("inversion max err %.2g", inv));
}

// 4. Metrics.
void metric_suite(Verdict& v) {
  const double p20 = psnr(Image(3, 16, 16, 0.0f), Image(3, 16, 16, 0.1f));
  v.check(std::abs(p20 - 20.0) < 1e-6, fmt("uniform 0.1 error gives %.9f dB", p20));
  const Image a = random_image(3, 32, 32, 1);
  v.check(ssim(a, a) == 1.0, fmt("SSIM(a,a) = %.17g", ssim(a, a)));
  const double c = ssim(Image(3, 32, 32, 0.5f), Image(3, 32, 32, 0.25f));
  v.check(std::abs(c - 0.8004) < 1e-3, fmt("constant-image SSIM %.6f", c));
  double asym = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Image x = random_image(3, 16, 16, 2 * seed), y = random_image(3, 16, 16, 2 * seed + 1);
    asym = std::max(asym, std::abs(ssim(x, y) - ssim(y, x)));
  }
  v.check(asym < 1e-12, fmt("SSIM asymmetry %.3g", asym));
  v.note(fmt("PSNR %.9f dB, constant SSIM %.6f, asymmetry %.2g", p20, c, asym));
}

// 5. Shapes and architecture.
void architecture_suite(Verdict& v) {
  auto tiny = build_model<float>(ModelConfig::standard(Scale::kTiny), nullptr, 1);
  bool range = true;
  for (std::int64_t h : {32, 64, 96}) {
    for (std::int64_t w : {32, 64, 160}) {
      const auto x = random_tensor<float>({1, 3, h, w}, static_cast<std::uint64_t>(h * w), -2, 2);
      const auto y = tiny.forward(x);
      v.check(y.shape() == Shape{1, 3, h, w}, "output shape for " + std::to_string(h) + "x" + std::to_string(w));
      for (float e : y.values()) range &= e >= -1.0f && e <= 1.0f;
    }
  }
  auto full = build_model<float>(ModelConfig::standard(Scale::kFull), nullptr, 2);
  const auto xf = random_tensor<float>({1, 3, 64, 96}, 3, -2, 2);
  v.check(full.bottleneck(xf).shape() == Shape{1, 512, 8, 12}, "full-scale bottleneck is not 512 x H/8 x W/8");
  const auto yf = full.forward(xf);
  for (float e : yf.values()) range &= e >= -1.0f && e <= 1.0f;
  v.check(range, "output outside [-1, 1]");

  for (NormKind k : {NormKind::kNone, NormKind::kBatch, NormKind::kInstance}) {
    auto m = build_model<float>(ModelConfig::standard(Scale::kTiny, k, k), nullptr, 8);
    const auto x = random_tensor<float>({2, 3, 32, 32}, 9, -2, 2);
    const auto with = m.forward(x, {NormMode::kTrain, false});
    const auto without = m.forward(x, {NormMode::kTrain, true});
    double diff = 0;
    for (std::size_t i = 0; i < with.size(); ++i) diff = std::max(diff, double(std::abs(with[i] - without[i])));
    v.check(diff > 1e-4, "zeroing skips does not change " + std::string(to_string(k)) + " output");
  }

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
  for (int step = 0; step < 10; ++step) {
    ForwardTrace<float> trace;
    auto pred = model.forward(x, {NormMode::kTrain, false}, &trace);
    for (auto& e : pred.values()) e = (e + 1) / 2;
    auto loss = total_loss<float>(pred, target, &features, LossConfig{1.0});
    for (auto& g : loss.grad_pred.values()) g *= 0.5f;
    model.zero_grad();
    model.backward(trace, loss.grad_pred);
    sgd_step(params, state, 0.1, SgdOptions{0.9, 1e-4});
  }
  std::size_t i = 0;
  bool frozen = true;
  for (const auto& l : model.encoder_layers()) {
    frozen &= l.weight == before[i++];
    frozen &= l.bias == before[i++];
  }
  v.check(frozen && model.encoder_digest() == digest, "encoder changed during 10 training steps");
}

// Shared toy overfit protocol: 8 pairs at 64x64, tiny scale, one batch of 8
// per epoch for 500 epochs.
TrainConfig overfit_config(double lambda, std::uint64_t seed, NormKind skip, NormKind dec) {
  TrainConfig cfg = TrainConfig::defaults(Scale::kTiny);
  cfg.batch_size = 8;
  cfg.epochs = 500;
  cfg.decay_start_epoch = 250;
  cfg.lambda = lambda;
  cfg.seed = seed;
  cfg.skip_norm = skip;
  cfg.decoder_norm = dec;
  cfg.crop = {64, true, false};
  return cfg;
}

struct OverfitRun {
  TrainHistory history;
  EvalReport report;
  double loss_ratio = 0;
  double gain_db = 0;
};

OverfitRun overfit(const PairedDataset& data, const TrainConfig& cfg) {
  auto model = build_model<float>(ModelConfig::standard(cfg.scale, cfg.skip_norm, cfg.decoder_norm), nullptr, cfg.seed);
  OverfitRun run;
  run.history = train(model, data, cfg);
  ModelDehazer dehazer(model);
  run.report = evaluate(dehazer, data);
  run.loss_ratio = run.history.epochs.back().mean_loss / run.history.epochs.front().mean_loss;
  run.gain_db = run.report.mean_dehazed.psnr_db - run.report.mean_baseline.psnr_db;
  return run;
}

// 6. Overfit smoke test with the default loss (λ = 1).
void overfit_suite(Verdict& v, const PairedDataset& data) {
  const OverfitRun r = overfit(data, overfit_config(1.0, 0, NormKind::kInstance, NormKind::kInstance));
  v.check(r.loss_ratio < 0.1, fmt("final/first epoch loss %.4f", r.loss_ratio));
  v.check(r.gain_db >= 3.0, fmt("PSNR gain %.2f dB (dehazed %.2f, hazy %.2f)", r.gain_db,
                                r.report.mean_dehazed.psnr_db, r.report.mean_baseline.psnr_db));
  v.note(fmt("lambda=1: loss ratio %.3f, gain %+.2f dB", r.loss_ratio, r.gain_db));
  for (double lambda : {0.0, 0.1}) {
    const OverfitRun alt = overfit(data, overfit_config(lambda, 0, NormKind::kInstance, NormKind::kInstance));
    v.note(fmt("info lambda=%g: loss ratio %.3f, gain %+.2f dB", lambda, alt.loss_ratio, alt.gain_db));
  }
}

// 7. Schedule and optimizer.
void schedule_suite(Verdict& v) {
  const TrainConfig cfg;
  v.check(lr_at(10, cfg) == 0.1, fmt("lr_at(10) = %g", lr_at(10, cfg)));
  v.check(lr_at(30, cfg) == 0.1, fmt("lr_at(30) = %g", lr_at(30, cfg)));
  v.check(std::abs(lr_at(45, cfg) - 0.05) < 1e-15, fmt("lr_at(45) = %.17g", lr_at(45, cfg)));

  std::vector<double> p{1.0}, g{0.5}, vel{0.0};
  sgd_update<double>(p, g, vel, 0.1, {0.9, 1e-4});
  v.check(std::abs(vel[0] - 0.5001) < 1e-9 && std::abs(p[0] - 0.94999) < 1e-9,
          fmt("hand example gives v=%.12f p=%.12f", vel[0], p[0]));

  auto q = random_tensor<double>({50}, 1);
  const auto q0 = q;
  const auto gq = random_tensor<double>({50}, 2);
  Tensor<double> vq({50});
  sgd_update<double>(q.values(), gq.values(), vq.values(), 0.0, {0.9, 1e-4});
  v.check(q == q0, "lr=0 step changed parameters");

  auto d = random_tensor<double>({20}, 3);
  const auto d0 = d;
  Tensor<double> gd({20}), vd({20});
  sgd_update<double>(d.values(), gd.values(), vd.values(), 0.1, {0.0, 1e-4});
  double shrink = 0;
  for (std::size_t i = 0; i < d.size(); ++i) shrink = std::max(shrink, std::abs(d[i] - d0[i] * (1 - 0.1 * 1e-4)));
  v.check(shrink < 1e-15, fmt("pure decay off by %.3g", shrink));
}

// 8. Directional ablation: IN-IN against NA-NA, reconstruction loss only.
void ablation_suite(Verdict& v, const fs::path& root) {
  double sum = 0;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    const PairedDataset data = make_toy_dataset(seed, 8, 64, root / ("toy" + std::to_string(seed)));
    const TrainConfig cfg = overfit_config(0.0, seed, NormKind::kInstance, NormKind::kInstance);
    const AblationReport rep = run_ablation({parse_ablation_cell("IN-IN-off"), parse_ablation_cell("NA-NA-off")}, cfg,
                                            data, data);
    const double diff = rep.entries[0].metrics.psnr_db - rep.entries[1].metrics.psnr_db;
    sum += diff;
    per_seed += fmt("seed %g: IN-IN %.2f NA-NA %.2f (%+.2f dB), ", static_cast<double>(seed),
                    rep.entries[0].metrics.psnr_db, rep.entries[1].metrics.psnr_db, diff);
  }
  const double mean = sum / 3.0;
  v.check(mean >= -0.5, fmt("IN-IN worse than NA-NA by %.2f dB on average over 3 seeds", -mean));
  v.note(per_seed + fmt("mean IN-IN minus NA-NA %+.2f dB", mean));
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// 9. Determinism.
void determinism_suite(Verdict& v, const fs::path& root, const PairedDataset& data) {
  make_toy_dataset(1, 8, 64, root / "again");
  bool same = true;
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(data.root)) {
    if (!e.is_regular_file()) continue;
    const fs::path twin = root / "again" / fs::relative(e.path(), data.root);
    same &= fs::exists(twin) && read_bytes(e.path()) == read_bytes(twin);
    ++files;
  }
  v.check(same && files > 0, "toy data bytes differ between identical seeds");

  const TrainConfig cfg = overfit_config(1.0, 0, NormKind::kInstance, NormKind::kInstance);
  const OverfitRun a = overfit(data, cfg);
  const OverfitRun b = overfit(data, cfg);
  bool losses = a.history.epochs.size() == b.history.epochs.size();
  for (std::size_t i = 0; losses && i < a.history.epochs.size(); ++i) {
    losses &= a.history.epochs[i].mean_loss == b.history.epochs[i].mean_loss;
  }
  v.check(losses, "TrainHistory losses differ between identical seeds");
  v.check(a.report.to_json() == b.report.to_json(), "EvalReport differs between identical seeds");
  v.note(std::to_string(files) + " data files, " + std::to_string(a.history.epochs.size()) + " epochs compared");
}

}  // namespace
}  // namespace dehaze

int main(int argc, char** argv) {
  using namespace dehaze;
  CLI::App app{"Acceptance suite"};
  std::vector<int> only;
  app.add_option("criteria", only, "Criterion numbers to run (default: all)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  TempDir scratch("dehaze-acceptance");
  std::unique_ptr<PairedDataset> toy;
  auto toy_data = [&]() -> const PairedDataset& {
    if (!toy) toy = std::make_unique<PairedDataset>(make_toy_dataset(1, 8, 64, scratch / "toy"));
    return *toy;
  };

  const std::vector<std::pair<std::string, std::function<void(Verdict&)>>> criteria{
      {"normalization oracles", normalization_suite},
      {"gradient checks", gradient_suite},
      {"physics", physics_suite},
      {"metric oracles", metric_suite},
      {"shapes and architecture", architecture_suite},
      {"overfit smoke test", [&](Verdict& v) { overfit_suite(v, toy_data()); }},
      {"schedule and optimizer", schedule_suite},
      {"ablation direction", [&](Verdict& v) { ablation_suite(v, scratch.path()); }},
      {"determinism", [&](Verdict& v) { determinism_suite(v, scratch.path(), toy_data()); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    const auto start = std::chrono::steady_clock::now();
    try {
      criteria[i].second(v);
    } catch (const std::exception& e) {
      v.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !v.passed();
    std::printf("%s criterion %d (%s) %.1fs: %s\n", v.passed() ? "PASS" : "FAIL", id, criteria[i].first.c_str(), secs,
                v.detail().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
