#include "dehaze/normalization.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace dehaze {

std::string_view to_string(NormKind kind) {
  switch (kind) {
    case NormKind::kNone: return "NA";
    case NormKind::kBatch: return "BN";
    case NormKind::kInstance: return "IN";
  }
  return "?";
}

NormKind parse_norm_kind(std::string_view text) {
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::toupper(ch)); });
  if (upper == "NA" || upper == "NONE") return NormKind::kNone;
  if (upper == "BN") return NormKind::kBatch;
  if (upper == "IN") return NormKind::kInstance;
  throw InvalidArgument("unknown normalization kind '" + std::string(text) + "'");
}

template <typename T>
NormParams<T> NormParams<T>::identity_affine(NormKind kind, std::int64_t channels) {
  return NormParams{kind, Tensor<T>({channels}, T{1}), Tensor<T>({channels}, T{0}), kNormEps};
}

template <typename T>
void NormParams<T>::validate(std::int64_t channels) const {
  if (!(eps > 0.0)) throw InvalidArgument("normalization eps must be positive");
  if (kind == NormKind::kNone) return;
  if (gamma.rank() != 1 || gamma.dim(0) != channels || beta_shift.rank() != 1 ||
      beta_shift.dim(0) != channels) {
    throw ShapeError("normalization affine parameters do not match " + std::to_string(channels) +
                     " channels");
  }
}

template <typename T>
RunningStats<T> RunningStats<T>::zeros(std::int64_t channels) {
  return RunningStats{Tensor<T>({channels}, T{0}), Tensor<T>({channels}, T{1}), 0,
                      kBatchNormMomentum};
}

namespace {

template <typename T>
void check_input(const Tensor<T>& x, const NormParams<T>& p) {
  if (x.rank() != 4) throw ShapeError("normalization expects an N×C×H×W feature map");
  p.validate(x.channels());
}

// Writes x̂ and the affine output for one statistics group spread over
// `count` planes of length `plane`.
template <typename T>
double normalize_group(const Tensor<T>& x, Tensor<T>& y, Tensor<T>* normalized,
                       const std::vector<std::int64_t>& offsets, std::size_t plane, double mean,
                       double inv_std, double gamma, double beta) {
  for (auto off : offsets) {
    const T* src = x.data() + off;
    T* dst = y.data() + off;
    T* xh = normalized ? normalized->data() + off : nullptr;
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = (static_cast<double>(src[i]) - mean) * inv_std;
      if (xh) xh[i] = static_cast<T>(v);
      dst[i] = static_cast<T>(gamma * v + beta);
    }
  }
  return inv_std;
}

template <typename T>
std::pair<double, double> group_moments(const Tensor<T>& x,
                                        const std::vector<std::int64_t>& offsets,
                                        std::size_t plane) {
  double sum = 0.0;
  for (auto off : offsets) {
    const T* src = x.data() + off;
    for (std::size_t i = 0; i < plane; ++i) sum += src[i];
  }
  const double count = static_cast<double>(plane * offsets.size());
  const double mean = sum / count;
  double sq = 0.0;
  for (auto off : offsets) {
    const T* src = x.data() + off;
    for (std::size_t i = 0; i < plane; ++i) {
      const double d = src[i] - mean;
      sq += d * d;
    }
  }
  return {mean, sq / count};
}

}  // namespace

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const NormParams<T>& p, NormCache<T>* cache) {
  check_input(x, p);
  const auto n = x.batch(), c = x.channels();
  const std::size_t plane = x.plane();
  Tensor<T> y(x.shape());
  if (cache) {
    cache->kind = NormKind::kInstance;
    cache->mode = NormMode::kTrain;
    cache->normalized = Tensor<T>(x.shape());
    cache->inv_std.assign(static_cast<std::size_t>(n * c), 0.0);
  }
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::vector<std::int64_t> offsets{(i * c + ch) * static_cast<std::int64_t>(plane)};
      const auto [mean, var] = group_moments(x, offsets, plane);
      const double inv_std = 1.0 / std::sqrt(var + p.eps);
      normalize_group(x, y, cache ? &cache->normalized : nullptr, offsets, plane, mean, inv_std,
                      p.gamma[ch], p.beta_shift[ch]);
      if (cache) cache->inv_std[static_cast<std::size_t>(i * c + ch)] = inv_std;
    }
  }
  return y;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const NormParams<T>& p, NormMode mode,
                     RunningStats<T>& stats, NormCache<T>* cache) {
  check_input(x, p);
  const auto n = x.batch(), c = x.channels();
  const std::size_t plane = x.plane();
  if (mode == NormMode::kEval && stats.updates == 0) {
    throw InvalidArgument("batch_norm: eval mode requires accumulated running statistics");
  }
  if (stats.mean.size() != static_cast<std::size_t>(c)) stats = RunningStats<T>::zeros(c);
  Tensor<T> y(x.shape());
  if (cache) {
    cache->kind = NormKind::kBatch;
    cache->mode = mode;
    cache->normalized = Tensor<T>(x.shape());
    cache->inv_std.assign(static_cast<std::size_t>(c), 0.0);
  }
  for (std::int64_t ch = 0; ch < c; ++ch) {
    std::vector<std::int64_t> offsets;
    for (std::int64_t i = 0; i < n; ++i) {
      offsets.push_back((i * c + ch) * static_cast<std::int64_t>(plane));
    }
    double mean, var;
    if (mode == NormMode::kTrain) {
      std::tie(mean, var) = group_moments(x, offsets, plane);
      const double m = stats.momentum;
      stats.mean[ch] = static_cast<T>((1.0 - m) * stats.mean[ch] + m * mean);
      stats.var[ch] = static_cast<T>((1.0 - m) * stats.var[ch] + m * var);
    } else {
      mean = stats.mean[ch];
      var = stats.var[ch];
    }
    const double inv_std = 1.0 / std::sqrt(var + p.eps);
    normalize_group(x, y, cache ? &cache->normalized : nullptr, offsets, plane, mean, inv_std,
                    p.gamma[ch], p.beta_shift[ch]);
    if (cache) cache->inv_std[static_cast<std::size_t>(ch)] = inv_std;
  }
  if (mode == NormMode::kTrain) ++stats.updates;
  return y;
}

template <typename T>
Tensor<T> apply_norm(const Tensor<T>& x, const NormParams<T>& p, NormMode mode,
                     RunningStats<T>& stats, NormCache<T>* cache) {
  switch (p.kind) {
    case NormKind::kNone:
      if (cache) cache->kind = NormKind::kNone;
      return x;
    case NormKind::kInstance: return instance_norm(x, p, cache);
    case NormKind::kBatch: return batch_norm(x, p, mode, stats, cache);
  }
  throw InvalidArgument("unknown normalization kind");
}

template <typename T>
Tensor<T> norm_backward(const Tensor<T>& grad_out, const NormParams<T>& p,
                        const NormCache<T>& cache, Tensor<T>* grad_gamma, Tensor<T>* grad_beta) {
  if (cache.kind == NormKind::kNone) return grad_out;
  const auto n = grad_out.batch(), c = grad_out.channels();
  const std::size_t plane = grad_out.plane();
  const bool per_instance = cache.kind == NormKind::kInstance;
  Tensor<T> dx(grad_out.shape());

  auto group_offsets = [&](std::int64_t i, std::int64_t ch) {
    std::vector<std::int64_t> offsets;
    if (per_instance) {
      offsets.push_back((i * c + ch) * static_cast<std::int64_t>(plane));
    } else {
      for (std::int64_t k = 0; k < n; ++k) {
        offsets.push_back((k * c + ch) * static_cast<std::int64_t>(plane));
      }
    }
    return offsets;
  };

  const std::int64_t groups_per_channel = per_instance ? n : 1;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double gamma = p.gamma[ch];
    double dgamma = 0.0, dbeta = 0.0;
    for (std::int64_t gi = 0; gi < groups_per_channel; ++gi) {
      const auto offsets = group_offsets(gi, ch);
      const double inv_std =
          cache.inv_std[static_cast<std::size_t>(per_instance ? gi * c + ch : ch)];
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (auto off : offsets) {
        const T* dy = grad_out.data() + off;
        const T* xh = cache.normalized.data() + off;
        for (std::size_t k = 0; k < plane; ++k) {
          sum_dy += dy[k];
          sum_dy_xhat += static_cast<double>(dy[k]) * xh[k];
        }
      }
      dgamma += sum_dy_xhat;
      dbeta += sum_dy;
      const double count = static_cast<double>(plane * offsets.size());
      for (auto off : offsets) {
        const T* dy = grad_out.data() + off;
        const T* xh = cache.normalized.data() + off;
        T* out = dx.data() + off;
        for (std::size_t k = 0; k < plane; ++k) {
          if (cache.mode == NormMode::kEval) {
            out[k] = static_cast<T>(gamma * inv_std * dy[k]);
          } else {
            out[k] = static_cast<T>(gamma * inv_std *
                                    (dy[k] - sum_dy / count - xh[k] * sum_dy_xhat / count));
          }
        }
      }
    }
    if (grad_gamma) (*grad_gamma)[ch] += static_cast<T>(dgamma);
    if (grad_beta) (*grad_beta)[ch] += static_cast<T>(dbeta);
  }
  return dx;
}

#define DEHAZE_INSTANTIATE_NORM(T)                                                             \
  template struct NormParams<T>;                                                               \
  template struct RunningStats<T>;                                                             \
  template Tensor<T> instance_norm(const Tensor<T>&, const NormParams<T>&, NormCache<T>*);     \
  template Tensor<T> batch_norm(const Tensor<T>&, const NormParams<T>&, NormMode,              \
                                RunningStats<T>&, NormCache<T>*);                              \
  template Tensor<T> apply_norm(const Tensor<T>&, const NormParams<T>&, NormMode,              \
                                RunningStats<T>&, NormCache<T>*);                              \
  template Tensor<T> norm_backward(const Tensor<T>&, const NormParams<T>&,                     \
                                   const NormCache<T>&, Tensor<T>*, Tensor<T>*);

DEHAZE_INSTANTIATE_NORM(float)
DEHAZE_INSTANTIATE_NORM(double)

}  // namespace dehaze
