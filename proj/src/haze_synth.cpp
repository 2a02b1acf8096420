#include "dehaze/haze_synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace dehaze {

void HazeParams::validate() const {
  for (double a : airlight) {
    if (!(a > 0.0 && a <= 1.0)) throw InvalidArgument("atmospheric light must lie in (0, 1]");
  }
  if (!(beta > 0.0)) throw InvalidArgument("scattering coefficient must be positive");
}

void HazeRanges::validate() const {
  if (!(airlight_lo < airlight_hi) || airlight_lo < 0.0 || airlight_hi > 1.0) {
    throw InvalidArgument("invalid atmospheric light range");
  }
  if (!(beta_lo < beta_hi) || beta_lo < 0.0) throw InvalidArgument("invalid beta range");
}

DepthMap make_depth_map(Image depth, DepthScaling scaling) {
  if (depth.channels() != 1) throw ShapeError("depth map must have one channel");
  float max_depth = 0.0f;
  for (float d : depth.pixels.values()) {
    if (!(d >= 0.0f)) throw InvalidArgument("depth values must be non-negative");
    max_depth = std::max(max_depth, d);
  }
  if (scaling == DepthScaling::kNormalizeMax && max_depth > 0.0f) {
    for (float& d : depth.pixels.values()) d /= max_depth;
  }
  return DepthMap{std::move(depth)};
}

TransmissionMap transmission_from_depth(const DepthMap& depth, double beta) {
  if (!(beta > 0.0)) throw InvalidArgument("scattering coefficient must be positive");
  TransmissionMap t{depth.values};
  for (float& v : t.values.pixels.values()) {
    if (!(v >= 0.0f)) throw InvalidArgument("depth values must be non-negative");
    const double tv = std::exp(-beta * static_cast<double>(v));
    v = std::max(static_cast<float>(tv), std::numeric_limits<float>::min());
  }
  return t;
}

namespace {
void check_broadcast(const Image& img, const TransmissionMap& t) {
  if (t.values.channels() != 1 || t.values.height() != img.height() ||
      t.values.width() != img.width()) {
    throw ShapeError("transmission map " + shape_string(t.values.pixels.shape()) +
                     " does not broadcast over image " + shape_string(img.pixels.shape()));
  }
}
}  // namespace

Image apply_scattering(const Image& clear, const TransmissionMap& t,
                       const std::array<double, 3>& airlight) {
  check_broadcast(clear, t);
  if (clear.channels() != 3) throw ShapeError("scattering expects an RGB image");
  Image hazy(3, clear.height(), clear.width());
  const std::size_t plane = clear.plane();
  const float* tv = t.values.pixels.data();
  for (std::size_t c = 0; c < 3; ++c) {
    const float* j = clear.pixels.data() + c * plane;
    float* out = hazy.pixels.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const double ti = tv[i];
      out[i] = static_cast<float>(j[i] * ti + airlight[c] * (1.0 - ti));
    }
  }
  return hazy;
}

Image invert_scattering(const Image& hazy, const TransmissionMap& t,
                        const std::array<double, 3>& airlight, double t_min) {
  check_broadcast(hazy, t);
  Image clear(hazy.channels(), hazy.height(), hazy.width());
  const std::size_t plane = hazy.plane();
  const float* tv = t.values.pixels.data();
  for (std::size_t c = 0; c < static_cast<std::size_t>(hazy.channels()); ++c) {
    const float* in = hazy.pixels.data() + c * plane;
    float* out = clear.pixels.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const double ti = tv[i];
      if (ti < t_min) throw InvalidArgument("transmission below inversion threshold");
      out[i] = static_cast<float>((in[i] - airlight[c] * (1.0 - ti)) / ti);
    }
  }
  return clear;
}

HazeParams sample_haze_params(std::uint64_t seed, const HazeRanges& ranges) {
  ranges.validate();
  std::mt19937_64 rng(seed);
  // Open intervals: nudge the inclusive lower bound of uniform_real_distribution.
  std::uniform_real_distribution<double> a_dist(
      std::nextafter(ranges.airlight_lo, ranges.airlight_hi), ranges.airlight_hi);
  std::uniform_real_distribution<double> b_dist(std::nextafter(ranges.beta_lo, ranges.beta_hi),
                                                ranges.beta_hi);
  HazeParams p;
  for (double& a : p.airlight) a = a_dist(rng);
  p.beta = b_dist(rng);
  return p;
}

Image synthesize_hazy(const Image& clear, const Image& depth, const HazeParams& params,
                      DepthScaling scaling) {
  params.validate();
  const auto d = make_depth_map(depth, scaling);
  return apply_scattering(clear, transmission_from_depth(d, params.beta), params.airlight);
}

}  // namespace dehaze
