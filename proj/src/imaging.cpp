#include "dehaze/imaging.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

namespace dehaze {

namespace fs = std::filesystem;

Image::Image(std::int64_t channels, std::int64_t height, std::int64_t width, float fill)
    : pixels({channels, height, width}, fill) {}

Image::Image(Tensor<float> chw) : pixels(std::move(chw)) {
  if (pixels.rank() != 3) throw ShapeError("image tensor must be C×H×W");
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

bool has_png_signature(std::FILE* f) {
  unsigned char sig[8] = {};
  const auto n = std::fread(sig, 1, sizeof sig, f);
  std::rewind(f);
  return n == sizeof sig && png_sig_cmp(sig, 0, sizeof sig) == 0;
}

bool has_jpeg_signature(std::FILE* f) {
  unsigned char sig[3] = {};
  const auto n = std::fread(sig, 1, sizeof sig, f);
  std::rewind(f);
  return n == sizeof sig && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF;
}

[[noreturn]] void png_error_handler(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

Image read_png(std::FILE* f, const fs::path& path) {
  std::string err;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_handler, png_warning_handler);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("cannot decode PNG " + path.string() + ": " + err);
  }

  png_init_io(png, f);
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);

  if (bit_depth != 1 && bit_depth != 2 && bit_depth != 4 && bit_depth != 8 && bit_depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported PNG bit depth " + std::to_string(bit_depth) + " in " +
                  path.string());
  }
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_strip_alpha(png);
  }
  if (bit_depth == 16) png_set_swap(png);  // host little-endian order
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const auto rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (channels != 1 && channels != 3) {
    throw IoError("unsupported PNG channel layout in " + path.string());
  }
  Image img(channels, height, width);
  const float scale = out_depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
  for (png_uint_32 y = 0; y < height; ++y) {
    for (png_uint_32 x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        const std::size_t idx = static_cast<std::size_t>(x) * channels + c;
        float v;
        if (out_depth == 16) {
          std::uint16_t code;
          std::memcpy(&code, rows[y] + 2 * idx, 2);
          v = static_cast<float>(code) * scale;
        } else {
          v = static_cast<float>(rows[y][idx]) * scale;
        }
        img.at(c, y, x) = v;
      }
    }
  }
  return img;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, mgr->message);
  std::longjmp(mgr->jump, 1);
}

Image read_jpeg(std::FILE* f, const fs::path& path, bool header_only, std::int64_t* w,
                std::int64_t* h) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<unsigned char> buffer;
  Image img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("cannot decode JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  if (header_only) {
    *w = cinfo.image_width;
    *h = cinfo.image_height;
    jpeg_destroy_decompress(&cinfo);
    return {};
  }
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int channels = cinfo.output_components;
  const auto width = cinfo.output_width;
  const auto height = cinfo.output_height;
  buffer.resize(static_cast<std::size_t>(width) * channels);
  img = Image(channels, height, width);
  while (cinfo.output_scanline < height) {
    const auto y = cinfo.output_scanline;
    JSAMPROW row = buffer.data();
    jpeg_read_scanlines(&cinfo, &row, 1);
    for (std::size_t x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        img.at(c, y, x) = static_cast<float>(buffer[x * channels + c]) / 255.0f;
      }
    }
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

void check_saveable(const Image& img, const fs::path& path) {
  if (img.pixels.rank() != 3 || (img.channels() != 1 && img.channels() != 3)) {
    throw ShapeError("cannot save image with shape " + shape_string(img.pixels.shape()));
  }
  for (float v : img.pixels.values()) {
    if (std::isnan(v)) throw InvalidArgument("NaN pixel value while saving " + path.string());
    if (v < -1e-4f || v > 1.0f + 1e-4f) {
      throw InvalidArgument("pixel value " + std::to_string(v) + " outside [0,1] while saving " +
                            path.string());
    }
  }
}

void write_png(const fs::path& path, const Image& img, int bit_depth) {
  check_saveable(img, path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto f = open_file(path, "wb");
  std::string err;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_handler, png_warning_handler);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);

  const int channels = static_cast<int>(img.channels());
  const auto width = static_cast<png_uint_32>(img.width());
  const auto height = static_cast<png_uint_32>(img.height());
  const int bytes = bit_depth / 8;
  const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * bytes;
  std::vector<png_byte> buffer(rowbytes * height);
  const float max_code = bit_depth == 16 ? 65535.0f : 255.0f;
  for (png_uint_32 y = 0; y < height; ++y) {
    for (png_uint_32 x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        const auto code = static_cast<std::uint32_t>(std::lround(v * max_code));
        png_byte* dst = buffer.data() + y * rowbytes + (static_cast<std::size_t>(x) * channels + c) * bytes;
        if (bit_depth == 16) {
          dst[0] = static_cast<png_byte>(code >> 8);  // PNG is big-endian
          dst[1] = static_cast<png_byte>(code & 0xFF);
        } else {
          dst[0] = static_cast<png_byte>(code);
        }
      }
    }
  }
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot encode PNG " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, bit_depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image load_image(const fs::path& path) {
  auto f = open_file(path, "rb");
  if (has_png_signature(f.get())) return read_png(f.get(), path);
  if (has_jpeg_signature(f.get())) return read_jpeg(f.get(), path, false, nullptr, nullptr);
  throw IoError("unrecognised image format: " + path.string());
}

Image load_rgb(const fs::path& path) {
  Image img = load_image(path);
  if (img.channels() == 3) return img;
  Image rgb(3, img.height(), img.width());
  for (std::int64_t c = 0; c < 3; ++c) {
    std::copy_n(img.pixels.data(), img.plane(), rgb.pixels.data() + c * img.plane());
  }
  return rgb;
}

Image load_depth(const fs::path& path) {
  Image img = load_image(path);
  if (img.channels() == 1) return img;
  Image depth(1, img.height(), img.width());
  std::copy_n(img.pixels.data(), img.plane(), depth.pixels.data());
  return depth;
}

std::pair<std::int64_t, std::int64_t> read_image_size(const fs::path& path) {
  auto f = open_file(path, "rb");
  if (has_png_signature(f.get())) {
    // IHDR always follows the signature: 4-byte length, "IHDR", width, height.
    unsigned char header[24];
    if (std::fread(header, 1, sizeof header, f.get()) != sizeof header) {
      throw IoError("truncated PNG header: " + path.string());
    }
    auto be32 = [](const unsigned char* p) {
      return (std::int64_t{p[0]} << 24) | (std::int64_t{p[1]} << 16) | (std::int64_t{p[2]} << 8) |
             std::int64_t{p[3]};
    };
    return {be32(header + 16), be32(header + 20)};
  }
  if (has_jpeg_signature(f.get())) {
    std::int64_t w = 0, h = 0;
    read_jpeg(f.get(), path, true, &w, &h);
    return {w, h};
  }
  throw IoError("unrecognised image format: " + path.string());
}

void save_png(const fs::path& path, const Image& img) { write_png(path, img, 8); }

void save_png16(const fs::path& path, const Image& img) { write_png(path, img, 16); }

ModelSpaceTensor to_model_space(const Image& img, const Vec3& mean, const Vec3& std) {
  if (img.channels() != 3) throw ShapeError("to_model_space expects an RGB image");
  for (float s : std) {
    if (!(s > 0.0f)) throw InvalidArgument("standard deviation components must be positive");
  }
  ModelSpaceTensor out{img.pixels, ModelSpace::kImageNet};
  const std::size_t plane = img.plane();
  for (std::size_t c = 0; c < 3; ++c) {
    float* p = out.values.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - mean[c]) / std[c];
  }
  return out;
}

Image from_model_space(const ModelSpaceTensor& t) {
  Image out(t.values);
  for (float& v : out.pixels.values()) v = std::clamp((v + 1.0f) * 0.5f, 0.0f, 1.0f);
  return out;
}

Tensor<float> stack_images(const std::vector<Image>& images) {
  if (images.empty()) throw InvalidArgument("cannot stack an empty image list");
  const auto& first = images.front().pixels.shape();
  Tensor<float> batch({static_cast<std::int64_t>(images.size()), first[0], first[1], first[2]});
  const std::size_t item = shape_numel(first);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].pixels.shape() != first) {
      throw ShapeError("stack_images: image " + std::to_string(i) + " has shape " +
                       shape_string(images[i].pixels.shape()) + ", expected " +
                       shape_string(first));
    }
    std::copy_n(images[i].pixels.data(), item, batch.data() + i * item);
  }
  return batch;
}

Image batch_item(const Tensor<float>& batch, std::int64_t n) {
  Image img(batch.channels(), batch.height(), batch.width());
  const std::size_t item = img.pixels.size();
  std::copy_n(batch.data() + static_cast<std::size_t>(n) * item, item, img.pixels.data());
  return img;
}

namespace {
std::int64_t mirror(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}
}  // namespace

Image reflect_pad(const Image& img, std::int64_t pad_bottom, std::int64_t pad_right) {
  if (pad_bottom < 0 || pad_right < 0) throw InvalidArgument("negative padding");
  const auto h = img.height(), w = img.width();
  Image out(img.channels(), h + pad_bottom, w + pad_right);
  for (std::int64_t c = 0; c < img.channels(); ++c) {
    for (std::int64_t y = 0; y < out.height(); ++y) {
      for (std::int64_t x = 0; x < out.width(); ++x) {
        out.at(c, y, x) = img.at(c, mirror(y, h), mirror(x, w));
      }
    }
  }
  return out;
}

Image crop(const Image& img, std::int64_t top, std::int64_t left, std::int64_t height,
           std::int64_t width) {
  if (top < 0 || left < 0 || height <= 0 || width <= 0 || top + height > img.height() ||
      left + width > img.width()) {
    throw InvalidArgument("crop window outside image");
  }
  Image out(img.channels(), height, width);
  for (std::int64_t c = 0; c < img.channels(); ++c) {
    for (std::int64_t y = 0; y < height; ++y) {
      std::copy_n(&img.at(c, top + y, left), width, &out.at(c, y, 0));
    }
  }
  return out;
}

Image flip_horizontal(const Image& img) {
  Image out(img.channels(), img.height(), img.width());
  for (std::int64_t c = 0; c < img.channels(); ++c) {
    for (std::int64_t y = 0; y < img.height(); ++y) {
      for (std::int64_t x = 0; x < img.width(); ++x) {
        out.at(c, y, x) = img.at(c, y, img.width() - 1 - x);
      }
    }
  }
  return out;
}

Image hconcat(const std::vector<Image>& images, std::int64_t gap, float gap_value) {
  if (images.empty()) throw InvalidArgument("hconcat of an empty list");
  const auto c = images.front().channels();
  const auto h = images.front().height();
  std::int64_t total = gap * static_cast<std::int64_t>(images.size() - 1);
  for (const auto& img : images) {
    if (img.channels() != c || img.height() != h) throw ShapeError("hconcat: mismatched images");
    total += img.width();
  }
  Image out(c, h, total, gap_value);
  std::int64_t offset = 0;
  for (const auto& img : images) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (std::int64_t y = 0; y < h; ++y) {
        std::copy_n(&img.at(ch, y, 0), img.width(), &out.at(ch, y, offset));
      }
    }
    offset += img.width() + gap;
  }
  return out;
}

}  // namespace dehaze
