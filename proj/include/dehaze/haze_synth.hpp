#pragma once

#include <array>
#include <cstdint>

#include "dehaze/imaging.hpp"

namespace dehaze {

/// Per-image atmospheric light (RGB) and scattering coefficient.
struct HazeParams {
  std::array<double, 3> airlight{1.0, 1.0, 1.0};
  double beta = 1.0;

  void validate() const;
  friend bool operator==(const HazeParams&, const HazeParams&) = default;
};

/// Open sampling intervals for HazeParams. Defaults follow the RESIDE
/// generation protocol.
struct HazeRanges {
  double airlight_lo = 0.7;
  double airlight_hi = 1.0;
  double beta_lo = 0.6;
  double beta_hi = 1.8;

  void validate() const;
};

enum class DepthScaling { kNormalizeMax, kRaw };

/// Non-negative scene depth, 1×H×W.
struct DepthMap {
  Image values;
};

/// Medium transmission in (0, 1], 1×H×W.
struct TransmissionMap {
  Image values;
};

DepthMap make_depth_map(Image depth, DepthScaling scaling = DepthScaling::kNormalizeMax);

/// t = exp(-beta * d), evaluated in double precision.
TransmissionMap transmission_from_depth(const DepthMap& depth, double beta);

/// I = J·t + A·(1 − t), with t broadcast over channels.
Image apply_scattering(const Image& clear, const TransmissionMap& t,
                       const std::array<double, 3>& airlight);

/// Recovers J = (I − A(1 − t)) / t. Requires t ≥ t_min everywhere.
Image invert_scattering(const Image& hazy, const TransmissionMap& t,
                        const std::array<double, 3>& airlight, double t_min = 1e-3);

/// One (A, β) draw; independent uniform A per channel. Deterministic in seed.
HazeParams sample_haze_params(std::uint64_t seed, const HazeRanges& ranges = {});

/// Convenience: depth scaling, transmission and scattering in one call.
Image synthesize_hazy(const Image& clear, const Image& depth, const HazeParams& params,
                      DepthScaling scaling = DepthScaling::kNormalizeMax);

}  // namespace dehaze
