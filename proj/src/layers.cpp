#include "dehaze/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace dehaze::nn {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

std::int64_t conv_out_size(std::int64_t in, ConvGeometry g) {
  return (in + 2 * g.padding - g.kernel) / g.stride + 1;
}

// cols has shape (C·k·k) × (Ho·Wo).
template <typename T>
void im2col(const T* x, std::int64_t channels, std::int64_t height, std::int64_t width,
            std::int64_t out_h, std::int64_t out_w, ConvGeometry g, T* cols) {
  const std::int64_t k = g.kernel;
  const std::int64_t out_plane = out_h * out_w;
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* xc = x + c * height * width;
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * out_plane;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ky;
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill_n(dst, out_w, T{0});
            continue;
          }
          const T* src = xc + iy * width;
          if (g.stride == 1) {
            const std::int64_t shift = kx - g.padding;
            const std::int64_t lo = std::max<std::int64_t>(0, -shift);
            const std::int64_t hi = std::min<std::int64_t>(out_w, width - shift);
            std::fill_n(dst, std::max<std::int64_t>(lo, 0), T{0});
            if (hi > lo) std::copy(src + lo + shift, src + hi + shift, dst + lo);
            if (hi < out_w) std::fill(dst + std::max(hi, lo), dst + out_w, T{0});
          } else {
            for (std::int64_t ox = 0; ox < out_w; ++ox) {
              const std::int64_t ix = ox * g.stride - g.padding + kx;
              dst[ox] = (ix >= 0 && ix < width) ? src[ix] : T{0};
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-and-adds columns back into x.
template <typename T>
void col2im(const T* cols, std::int64_t channels, std::int64_t height, std::int64_t width,
            std::int64_t out_h, std::int64_t out_w, ConvGeometry g, T* x) {
  const std::int64_t k = g.kernel;
  const std::int64_t out_plane = out_h * out_w;
  std::fill_n(x, channels * height * width, T{0});
  for (std::int64_t c = 0; c < channels; ++c) {
    T* xc = x + c * height * width;
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * out_plane;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= height) continue;
          const T* src = row + oy * out_w;
          T* dst = xc + iy * width;
          for (std::int64_t ox = 0; ox < out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv_shapes(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                       std::int64_t in_channels_axis, const char* op) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected rank-4 input and weight");
  }
  if (weight.dim(in_channels_axis) != x.channels()) {
    throw ShapeError(std::string(op) + ": weight " + shape_string(weight.shape()) +
                     " incompatible with input " + shape_string(x.shape()));
  }
  const std::int64_t out_axis = in_channels_axis == 1 ? 0 : 1;
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(out_axis)) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_string(bias.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 ConvGeometry g) {
  check_conv_shapes(x, weight, bias, 1, "conv2d");
  const auto n = x.batch(), cin = x.channels(), h = x.height(), w = x.width();
  const auto cout = weight.dim(0);
  const auto oh = conv_out_size(h, g), ow = conv_out_size(w, g);
  const auto ckk = cin * g.kernel * g.kernel;
  Tensor<T> y({n, cout, oh, ow});
  std::vector<T> cols(static_cast<std::size_t>(ckk * oh * ow));
  ConstMatrixMap<T> wm(weight.data(), cout, ckk);
  for (std::int64_t i = 0; i < n; ++i) {
    im2col(x.plane_ptr(i, 0), cin, h, w, oh, ow, g, cols.data());
    MatrixMap<T> ym(y.plane_ptr(i, 0), cout, oh * ow);
    ym.noalias() = wm * ConstMatrixMap<T>(cols.data(), ckk, oh * ow);
    for (std::int64_t c = 0; c < cout; ++c) ym.row(c).array() += bias[c];
  }
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     ConvGeometry g, Tensor<T>* grad_input, Tensor<T>* grad_weight,
                     Tensor<T>* grad_bias) {
  const auto n = x.batch(), cin = x.channels(), h = x.height(), w = x.width();
  const auto cout = weight.dim(0);
  const auto oh = grad_out.height(), ow = grad_out.width();
  const auto ckk = cin * g.kernel * g.kernel;
  std::vector<T> cols(static_cast<std::size_t>(ckk * oh * ow));
  ConstMatrixMap<T> wm(weight.data(), cout, ckk);
  if (grad_input) *grad_input = Tensor<T>(x.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    ConstMatrixMap<T> dy(grad_out.plane_ptr(i, 0), cout, oh * ow);
    if (grad_weight) {
      im2col(x.plane_ptr(i, 0), cin, h, w, oh, ow, g, cols.data());
      MatrixMap<T>(grad_weight->data(), cout, ckk).noalias() +=
          dy * ConstMatrixMap<T>(cols.data(), ckk, oh * ow).transpose();
    }
    if (grad_bias) {
      for (std::int64_t c = 0; c < cout; ++c) (*grad_bias)[c] += dy.row(c).sum();
    }
    if (grad_input) {
      MatrixMap<T>(cols.data(), ckk, oh * ow).noalias() = wm.transpose() * dy;
      col2im(cols.data(), cin, h, w, oh, ow, g, grad_input->plane_ptr(i, 0));
    }
  }
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           ConvGeometry g) {
  check_conv_shapes(x, weight, bias, 0, "conv_transpose2d");
  const auto n = x.batch(), cin = x.channels(), h = x.height(), w = x.width();
  const auto cout = weight.dim(1);
  const auto oh = (h - 1) * g.stride - 2 * g.padding + g.kernel;
  const auto ow = (w - 1) * g.stride - 2 * g.padding + g.kernel;
  const auto ckk = cout * g.kernel * g.kernel;
  Tensor<T> y({n, cout, oh, ow});
  std::vector<T> cols(static_cast<std::size_t>(ckk * h * w));
  ConstMatrixMap<T> wm(weight.data(), cin, ckk);
  for (std::int64_t i = 0; i < n; ++i) {
    MatrixMap<T>(cols.data(), ckk, h * w).noalias() =
        wm.transpose() * ConstMatrixMap<T>(x.plane_ptr(i, 0), cin, h * w);
    col2im(cols.data(), cout, oh, ow, h, w, g, y.plane_ptr(i, 0));
    MatrixMap<T> ym(y.plane_ptr(i, 0), cout, oh * ow);
    for (std::int64_t c = 0; c < cout; ++c) ym.row(c).array() += bias[c];
  }
  return y;
}

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& weight,
                               const Tensor<T>& grad_out, ConvGeometry g, Tensor<T>* grad_input,
                               Tensor<T>* grad_weight, Tensor<T>* grad_bias) {
  const auto n = x.batch(), cin = x.channels(), h = x.height(), w = x.width();
  const auto cout = weight.dim(1);
  const auto oh = grad_out.height(), ow = grad_out.width();
  const auto ckk = cout * g.kernel * g.kernel;
  std::vector<T> cols(static_cast<std::size_t>(ckk * h * w));
  ConstMatrixMap<T> wm(weight.data(), cin, ckk);
  if (grad_input) *grad_input = Tensor<T>(x.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    im2col(grad_out.plane_ptr(i, 0), cout, oh, ow, h, w, g, cols.data());
    ConstMatrixMap<T> dcols(cols.data(), ckk, h * w);
    if (grad_weight) {
      MatrixMap<T>(grad_weight->data(), cin, ckk).noalias() +=
          ConstMatrixMap<T>(x.plane_ptr(i, 0), cin, h * w) * dcols.transpose();
    }
    if (grad_bias) {
      ConstMatrixMap<T> dy(grad_out.plane_ptr(i, 0), cout, oh * ow);
      for (std::int64_t c = 0; c < cout; ++c) (*grad_bias)[c] += dy.row(c).sum();
    }
    if (grad_input) {
      MatrixMap<T>(grad_input->plane_ptr(i, 0), cin, h * w).noalias() = wm * dcols;
    }
  }
}

template <typename T>
Tensor<T> max_pool2x2(const Tensor<T>& x, std::vector<std::uint32_t>* argmax) {
  const auto n = x.batch(), c = x.channels(), h = x.height(), w = x.width();
  const auto oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw ShapeError("max_pool2x2: input too small " + shape_string(x.shape()));
  Tensor<T> y({n, c, oh, ow});
  if (argmax) argmax->resize(y.size());
  std::size_t out = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::size_t base = static_cast<std::size_t>((i * c + ch) * h * w);
      const T* src = x.data() + base;
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        for (std::int64_t ox = 0; ox < ow; ++ox, ++out) {
          std::size_t best = static_cast<std::size_t>(2 * oy * w + 2 * ox);
          for (std::size_t cand : {best + 1, best + static_cast<std::size_t>(w),
                                   best + static_cast<std::size_t>(w) + 1}) {
            if (src[cand] > src[best]) best = cand;
          }
          y[out] = src[best];
          if (argmax) (*argmax)[out] = static_cast<std::uint32_t>(base + best);
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> max_pool2x2_backward(const Shape& input_shape, const Tensor<T>& grad_out,
                               const std::vector<std::uint32_t>& argmax) {
  Tensor<T> dx(input_shape);
  for (std::size_t i = 0; i < grad_out.size(); ++i) dx[argmax[i]] += grad_out[i];
  return dx;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (T& v : x.values()) v = v > T{0} ? v : T{0};
}

template <typename T>
void relu_backward_inplace(const Tensor<T>& activated, Tensor<T>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(activated[i] > T{0})) grad[i] = T{0};
  }
}

template <typename T>
void tanh_inplace(Tensor<T>& x) {
  for (T& v : x.values()) v = std::tanh(v);
}

template <typename T>
void tanh_backward_inplace(const Tensor<T>& activated, Tensor<T>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= T{1} - activated[i] * activated[i];
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.batch() != b.batch() || a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("concat_channels: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const auto n = a.batch();
  Tensor<T> y({n, a.channels() + b.channels(), a.height(), a.width()});
  const std::size_t sa = a.size() / static_cast<std::size_t>(n);
  const std::size_t sb = b.size() / static_cast<std::size_t>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    T* dst = y.plane_ptr(i, 0);
    std::copy_n(a.plane_ptr(i, 0), sa, dst);
    std::copy_n(b.plane_ptr(i, 0), sb, dst + sa);
  }
  return y;
}

template <typename T>
void split_channels(const Tensor<T>& grad, std::int64_t channels_a, Tensor<T>& grad_a,
                    Tensor<T>& grad_b) {
  const auto n = grad.batch(), h = grad.height(), w = grad.width();
  grad_a = Tensor<T>({n, channels_a, h, w});
  grad_b = Tensor<T>({n, grad.channels() - channels_a, h, w});
  const std::size_t sa = grad_a.size() / static_cast<std::size_t>(n);
  const std::size_t sb = grad_b.size() / static_cast<std::size_t>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const T* src = grad.plane_ptr(i, 0);
    std::copy_n(src, sa, grad_a.plane_ptr(i, 0));
    std::copy_n(src + sa, sb, grad_b.plane_ptr(i, 0));
  }
}

#define DEHAZE_INSTANTIATE_LAYERS(T)                                                           \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                            ConvGeometry);                                                     \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                ConvGeometry, Tensor<T>*, Tensor<T>*, Tensor<T>*);             \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                      ConvGeometry);                                           \
  template void conv_transpose2d_backward(const Tensor<T>&, const Tensor<T>&,                  \
                                          const Tensor<T>&, ConvGeometry, Tensor<T>*,          \
                                          Tensor<T>*, Tensor<T>*);                             \
  template Tensor<T> max_pool2x2(const Tensor<T>&, std::vector<std::uint32_t>*);               \
  template Tensor<T> max_pool2x2_backward(const Shape&, const Tensor<T>&,                      \
                                          const std::vector<std::uint32_t>&);                  \
  template void relu_inplace(Tensor<T>&);                                                      \
  template void relu_backward_inplace(const Tensor<T>&, Tensor<T>&);                           \
  template void tanh_inplace(Tensor<T>&);                                                      \
  template void tanh_backward_inplace(const Tensor<T>&, Tensor<T>&);                           \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                      \
  template void split_channels(const Tensor<T>&, std::int64_t, Tensor<T>&, Tensor<T>&);

DEHAZE_INSTANTIATE_LAYERS(float)
DEHAZE_INSTANTIATE_LAYERS(double)

}  // namespace dehaze::nn
