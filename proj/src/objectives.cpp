#include "dehaze/objectives.hpp"

#include <cmath>

namespace dehaze {

template <typename T>
typename FeatureExtractor<T>::Result EncoderFeatures<T>::extract(const Tensor<T>& images,
                                                                 bool with_backward) const {
  if (images.rank() != 4 || images.channels() != 3) {
    throw ShapeError("feature extractor expects N×3×H×W images");
  }
  Tensor<T> normalized = images;
  for (std::int64_t n = 0; n < images.batch(); ++n) {
    for (std::int64_t c = 0; c < 3; ++c) {
      T* p = normalized.plane_ptr(n, c);
      const T m = static_cast<T>(mean_[c]);
      const T s = static_cast<T>(std_[c]);
      for (std::size_t i = 0; i < normalized.plane(); ++i) p[i] = (p[i] - m) / s;
    }
  }
  typename FeatureExtractor<T>::Result result;
  if (!with_backward) {
    result.features = model_.encode(normalized, layer_);
    return result;
  }
  auto trace = std::make_shared<EncoderTrace<T>>();
  result.features = model_.encode(normalized, layer_, trace.get());
  result.backward = [this, trace](const Tensor<T>& grad) {
    Tensor<T> g = model_.encoder_backward(*trace, grad);
    for (std::int64_t n = 0; n < g.batch(); ++n) {
      for (std::int64_t c = 0; c < 3; ++c) {
        T* p = g.plane_ptr(n, c);
        const T s = static_cast<T>(std_[c]);
        for (std::size_t i = 0; i < g.plane(); ++i) p[i] /= s;
      }
    }
    return g;
  };
  return result;
}

namespace {

// mean((a − b)²) and, when grad is non-null, scale · 2(a − b)/M into *grad.
template <typename T>
double mean_squared(const Tensor<T>& a, const Tensor<T>& b, double scale, Tensor<T>* grad) {
  const double m = static_cast<double>(a.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
    if (grad) (*grad)[i] = static_cast<T>(scale * 2.0 * d / m);
  }
  return sum / m;
}

}  // namespace

template <typename T>
LossResult<T> total_loss(const Tensor<T>& pred, const Tensor<T>& target,
                         const FeatureExtractor<T>* features, const LossConfig& cfg) {
  cfg.validate();
  require_same_shape(pred, target, "total_loss");
  LossResult<T> r;
  r.grad_pred = Tensor<T>(pred.shape());
  r.reconstruction = mean_squared(pred, target, 1.0, &r.grad_pred);
  r.total = r.reconstruction;
  if (cfg.lambda > 0.0) {
    if (!features) throw InvalidArgument("total_loss: lambda > 0 requires a feature extractor");
    auto fp = features->extract(pred, true);
    const auto ft = features->extract(target, false);
    require_same_shape(fp.features, ft.features, "total_loss features");
    Tensor<T> grad_features(fp.features.shape());
    r.perceptual = mean_squared(fp.features, ft.features, cfg.lambda, &grad_features);
    r.total += cfg.lambda * r.perceptual;
    const Tensor<T> g = fp.backward(grad_features);
    for (std::size_t i = 0; i < g.size(); ++i) r.grad_pred[i] += g[i];
  }
  return r;
}

double psnr(const Image& a, const Image& b, double peak) {
  require_same_shape(a.pixels, b.pixels, "psnr");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.pixels.size());
  if (mse == 0.0) return kPsnrInfinity;
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    w[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable "valid" Gaussian filtering of an h×w plane.
std::vector<double> filter_valid(const std::vector<double>& src, std::int64_t h, std::int64_t w,
                                 const std::array<double, kSsimWindow>& k) {
  const std::int64_t oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h * ow));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) acc += k[i] * src[static_cast<std::size_t>(y * w + x + i)];
      rows[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t y = 0; y < oh; ++y) {
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) acc += k[i] * rows[static_cast<std::size_t>((y + i) * ow + x)];
      out[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b, double peak) {
  require_same_shape(a.pixels, b.pixels, "ssim");
  const auto h = a.height(), w = a.width();
  if (h < kSsimWindow || w < kSsimWindow) {
    throw ShapeError("ssim needs images of at least 11x11 pixels");
  }
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const auto window = gaussian_window();
  const std::size_t plane = a.plane();

  double total = 0.0;
  for (std::int64_t c = 0; c < a.channels(); ++c) {
    std::vector<double> pa(plane), pb(plane), aa(plane), bb(plane), ab(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      pa[i] = a.pixels[static_cast<std::size_t>(c) * plane + i];
      pb[i] = b.pixels[static_cast<std::size_t>(c) * plane + i];
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, h, w, window);
    const auto mu_b = filter_valid(pb, h, w, window);
    const auto e_aa = filter_valid(aa, h, w, window);
    const auto e_bb = filter_valid(bb, h, w, window);
    const auto e_ab = filter_valid(ab, h, w, window);
    double sum = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
      const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
      sum += num / den;
    }
    total += sum / static_cast<double>(mu_a.size());
  }
  return total / static_cast<double>(a.channels());
}

template class EncoderFeatures<float>;
template class EncoderFeatures<double>;
template LossResult<float> total_loss(const Tensor<float>&, const Tensor<float>&,
                                      const FeatureExtractor<float>*, const LossConfig&);
template LossResult<double> total_loss(const Tensor<double>&, const Tensor<double>&,
                                       const FeatureExtractor<double>*, const LossConfig&);

}  // namespace dehaze
