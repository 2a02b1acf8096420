#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>

#include <json.hpp>

#include "dehaze/tensor.hpp"

namespace dehaze {

/// Named float32 tensors plus free-form JSON metadata.
///
/// On-disk layout (all integers little-endian):
///
///   bytes 0..7    magic "DHZARCH1"
///   bytes 8..15   uint64 header length L
///   bytes 16..    L bytes of UTF-8 JSON header
///   then          tensor blob
///
/// The header is
///   {"format": "dehaze-tensor-archive", "version": 1,
///    "metadata": {...},
///    "tensors": {"<name>": {"dtype": "f32le", "shape": [...],
///                           "offset": <byte offset into blob>, "nbytes": <n>}}}
///
/// Tensors are stored in lexicographic name order, densely packed.
class TensorArchive {
 public:
  static constexpr std::string_view kMagic = "DHZARCH1";

  void put(const std::string& name, Tensor<float> tensor);
  template <typename T>
  void put_converted(const std::string& name, const Tensor<T>& tensor) {
    put(name, tensor.template cast<float>());
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  /// Throws InvalidArgument naming the missing tensor.
  const Tensor<float>& at(const std::string& name) const;
  const std::map<std::string, Tensor<float>>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }

  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, Tensor<float>> tensors_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

/// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace dehaze
