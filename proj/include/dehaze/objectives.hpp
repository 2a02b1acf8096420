#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <string>

#include "dehaze/imaging.hpp"
#include "dehaze/network.hpp"

namespace dehaze {

struct LossConfig {
  /// Weight of the perceptual term.
  double lambda = 1.0;
  /// Encoder layer whose post-ReLU output is the perceptual feature.
  std::string perceptual_layer = std::string(kPerceptualTap);

  void validate() const {
    if (!(lambda >= 0.0)) throw InvalidArgument("loss lambda must be non-negative");
  }
};

/// Differentiable feature map g used by the perceptual term. Inputs are
/// N×3×H×W images in [0, 1].
template <typename T>
class FeatureExtractor {
 public:
  struct Result {
    Tensor<T> features;
    /// Maps d(loss)/d(features) to d(loss)/d(input). Empty when not requested.
    std::function<Tensor<T>(const Tensor<T>&)> backward;
  };

  virtual ~FeatureExtractor() = default;
  virtual Result extract(const Tensor<T>& images, bool with_backward) const = 0;
};

template <typename T>
class IdentityFeatures final : public FeatureExtractor<T> {
 public:
  typename FeatureExtractor<T>::Result extract(const Tensor<T>& images, bool with_backward) const override {
    typename FeatureExtractor<T>::Result r{images, {}};
    if (with_backward) r.backward = [](const Tensor<T>& g) { return g; };
    return r;
  }
};

/// Frozen-encoder feature tap: ImageNet preprocessing, then the encoder up
/// to `layer` (post-ReLU).
template <typename T>
class EncoderFeatures final : public FeatureExtractor<T> {
 public:
  EncoderFeatures(const Model<T>& model, std::string layer = std::string(kPerceptualTap),
                  Vec3 mean = kImageNetMean, Vec3 std = kImageNetStd)
      : model_(model), layer_(std::move(layer)), mean_(mean), std_(std) {}

  typename FeatureExtractor<T>::Result extract(const Tensor<T>& images, bool with_backward) const override;

 private:
  const Model<T>& model_;
  std::string layer_;
  Vec3 mean_;
  Vec3 std_;
};

template <typename T>
struct LossResult {
  double total = 0.0;
  double reconstruction = 0.0;
  double perceptual = 0.0;
  Tensor<T> grad_pred;
};

/// mean((pred − target)²) + λ · mean((g(pred) − g(target))²), with the
/// gradient w.r.t. pred. `features` may be null when λ = 0.
template <typename T>
LossResult<T> total_loss(const Tensor<T>& pred, const Tensor<T>& target,
                         const FeatureExtractor<T>* features, const LossConfig& cfg);

struct MetricResult {
  double psnr_db = 0.0;
  double ssim = 0.0;
};

inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

/// 10·log10(peak² / MSE); +infinity for identical inputs.
double psnr(const Image& a, const Image& b, double peak = 1.0);

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), "valid" support,
/// computed per channel and averaged.
double ssim(const Image& a, const Image& b, double peak = 1.0);

inline MetricResult compute_metrics(const Image& a, const Image& b) {
  return {psnr(a, b), ssim(a, b)};
}

}  // namespace dehaze
