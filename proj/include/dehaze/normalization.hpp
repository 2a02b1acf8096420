#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dehaze/tensor.hpp"

namespace dehaze {

/// Normalization selectable per network site: none (identity), batch, instance.
enum class NormKind { kNone, kBatch, kInstance };

std::string_view to_string(NormKind kind);
/// Accepts "NA", "BN", "IN" (case-insensitive).
NormKind parse_norm_kind(std::string_view text);

enum class NormMode { kTrain, kEval };

inline constexpr double kNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel affine parameters. Statistics stay per (n, c) for IN and per c
/// for BN; gamma/beta_shift are shared across samples.
template <typename T>
struct NormParams {
  NormKind kind = NormKind::kInstance;
  Tensor<T> gamma;       // C
  Tensor<T> beta_shift;  // C
  double eps = kNormEps;

  static NormParams identity_affine(NormKind kind, std::int64_t channels);
  void validate(std::int64_t channels) const;
};

/// BN running statistics: r ← (1 − momentum)·r + momentum·batch_stat, with
/// the biased variance estimator.
template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;
  std::int64_t updates = 0;
  double momentum = kBatchNormMomentum;

  static RunningStats zeros(std::int64_t channels);
};

/// Saved forward state for the backward pass.
template <typename T>
struct NormCache {
  NormKind kind = NormKind::kNone;
  NormMode mode = NormMode::kTrain;
  Tensor<T> normalized;         // x̂
  std::vector<double> inv_std;  // one per statistics group
};

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const NormParams<T>& p, NormCache<T>* cache = nullptr);

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const NormParams<T>& p, NormMode mode,
                     RunningStats<T>& stats, NormCache<T>* cache = nullptr);

/// Dispatches on p.kind; kNone is the exact identity.
template <typename T>
Tensor<T> apply_norm(const Tensor<T>& x, const NormParams<T>& p, NormMode mode,
                     RunningStats<T>& stats, NormCache<T>* cache = nullptr);

/// Backward through any of the three kinds. Accumulates into grad_gamma and
/// grad_beta (when non-null) and returns the input gradient.
template <typename T>
Tensor<T> norm_backward(const Tensor<T>& grad_out, const NormParams<T>& p,
                        const NormCache<T>& cache, Tensor<T>* grad_gamma, Tensor<T>* grad_beta);

}  // namespace dehaze
