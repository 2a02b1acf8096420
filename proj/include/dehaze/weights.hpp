#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dehaze/archive.hpp"
#include "dehaze/network.hpp"

namespace dehaze {

/// Published Keras VGG16 notop weights (channels-last kernels, caffe input).
inline constexpr std::string_view kVgg16KerasUrl =
    "https://storage.googleapis.com/tensorflow/keras-applications/vgg16/"
    "vgg16_weights_tf_dim_ordering_tf_kernels_notop.h5";

/// Transport used by fetch_pretrained. Implementations append to `dest`
/// starting at `resume_from` bytes and throw NetworkError on failure.
class Downloader {
 public:
  virtual ~Downloader() = default;
  virtual void download(const std::string& url, const std::filesystem::path& dest,
                        std::uint64_t resume_from) = 0;
};

/// libcurl transport with HTTP range resume.
class CurlDownloader final : public Downloader {
 public:
  explicit CurlDownloader(long timeout_seconds = 600) : timeout_seconds_(timeout_seconds) {}
  void download(const std::string& url, const std::filesystem::path& dest,
                std::uint64_t resume_from) override;

 private:
  long timeout_seconds_;
};

enum class WeightFormat { kAuto, kArchive, kKerasH5 };

struct FetchOptions {
  std::string url{kVgg16KerasUrl};
  /// Empty: $DEHAZE_CACHE_DIR, else ~/.cache/dehaze.
  std::filesystem::path cache_dir;
  /// Lower-case hex SHA-256. Empty: accept and record whatever is downloaded.
  std::string expected_sha256;
  bool offline = false;
  WeightFormat format = WeightFormat::kAuto;
};

std::filesystem::path default_cache_dir();
/// Cache path for a URL: <cache_dir>/<sha256(url)[:16]>-<basename>.
std::filesystem::path cache_path_for(const FetchOptions& opts);

/// Returns the encoder weights as an archive with metadata "source_url" and
/// "sha256". A verified cached file is reused without network access.
/// Concurrent calls for the same URL share one download.
TensorArchive fetch_pretrained(const FetchOptions& opts, Downloader* downloader = nullptr);

/// Reads a Keras VGG16 HDF5 file (block{b}_conv{k} kernel/bias datasets)
/// and maps it onto the encoder layer names. Kernels are transposed from
/// H×W×I×O to O×I×H×W. The caffe preprocessing (BGR order, 0–255 range, mean
/// subtraction) is folded into conv1_1 so the result consumes ImageNet-space
/// RGB input.
TensorArchive convert_keras_vgg16(const std::filesystem::path& h5_path);

/// Writes a file in the Keras VGG16 layout from encoder tensors in O×I×H×W
/// form, without the preprocessing fold. Used to build fixtures.
void write_keras_vgg16(const std::filesystem::path& h5_path,
                       const std::map<std::string, Tensor<float>>& encoder_tensors);

/// Encoder tensors of a model in the archive naming scheme.
TensorArchive encoder_archive(const Model<float>& model);

struct ShapeMismatch {
  std::string name;
  Shape expected;
  Shape got;
};

struct VerifyReport {
  std::vector<std::string> matched;
  std::vector<std::string> missing;
  std::vector<ShapeMismatch> mismatched;

  bool ok() const { return missing.empty() && mismatched.empty(); }
  nlohmann::json to_json() const;
};

/// Compares the archive's encoder tensors against the config's encoder table.
VerifyReport verify_archive(const TensorArchive& archive, const ModelConfig& cfg);

}  // namespace dehaze
