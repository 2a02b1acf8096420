#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "dehaze/tensor.hpp"

namespace dehaze {

/// Floating-point image, C×H×W with C ∈ {1, 3}. RGB values live in [0, 1].
struct Image {
  Tensor<float> pixels;

  Image() = default;
  Image(std::int64_t channels, std::int64_t height, std::int64_t width, float fill = 0.0f);
  explicit Image(Tensor<float> chw);

  std::int64_t channels() const { return pixels.dim(0); }
  std::int64_t height() const { return pixels.dim(1); }
  std::int64_t width() const { return pixels.dim(2); }
  std::size_t plane() const { return static_cast<std::size_t>(height() * width()); }

  float& at(std::int64_t c, std::int64_t y, std::int64_t x) {
    return pixels[static_cast<std::size_t>((c * height() + y) * width() + x)];
  }
  const float& at(std::int64_t c, std::int64_t y, std::int64_t x) const {
    return pixels[static_cast<std::size_t>((c * height() + y) * width() + x)];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

using Vec3 = std::array<float, 3>;

/// Channel statistics of the ImageNet training set, the preprocessing the
/// pretrained VGG encoder expects.
inline constexpr Vec3 kImageNetMean = {0.485f, 0.456f, 0.406f};
inline constexpr Vec3 kImageNetStd = {0.229f, 0.224f, 0.225f};

enum class ModelSpace { kImageNet, kTanh };

/// Tensor in one of the two network-facing value conventions.
struct ModelSpaceTensor {
  Tensor<float> values;  // C×H×W
  ModelSpace space = ModelSpace::kImageNet;
};

// File I/O. PNG is read at 8 or 16 bits, JPEG at 8 bits; values are scaled by
// the maximum representable code value. Alpha is dropped.
Image load_image(const std::filesystem::path& path);
/// Loads and expands greyscale to three channels.
Image load_rgb(const std::filesystem::path& path);
/// Loads a single-channel depth map (first channel of colour files).
Image load_depth(const std::filesystem::path& path);
/// Width and height read from the file header without decoding pixels.
std::pair<std::int64_t, std::int64_t> read_image_size(const std::filesystem::path& path);

/// Quantizes to 8-bit PNG. Throws on NaN or values outside [0, 1].
void save_png(const std::filesystem::path& path, const Image& img);
/// Quantizes to 16-bit PNG (used for depth maps).
void save_png16(const std::filesystem::path& path, const Image& img);

ModelSpaceTensor to_model_space(const Image& img, const Vec3& mean = kImageNetMean,
                                const Vec3& std = kImageNetStd);
/// Maps tanh-range values to [0, 1] as (t + 1) / 2, clamped.
Image from_model_space(const ModelSpaceTensor& t);

/// Stacks same-sized images into an N×C×H×W batch.
Tensor<float> stack_images(const std::vector<Image>& images);
Image batch_item(const Tensor<float>& batch, std::int64_t n);

/// Reflect-pads (mirror without edge repetition) at the bottom and right.
Image reflect_pad(const Image& img, std::int64_t pad_bottom, std::int64_t pad_right);
Image crop(const Image& img, std::int64_t top, std::int64_t left, std::int64_t height,
           std::int64_t width);
Image flip_horizontal(const Image& img);

/// Side-by-side concatenation along width; all images must share height.
Image hconcat(const std::vector<Image>& images, std::int64_t gap = 0, float gap_value = 1.0f);

}  // namespace dehaze
