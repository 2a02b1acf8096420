#include "dehaze/archive.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <memory>

namespace dehaze {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

void TensorArchive::put(const std::string& name, Tensor<float> tensor) {
  tensors_.insert_or_assign(name, std::move(tensor));
}

const Tensor<float>& TensorArchive::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw InvalidArgument("archive is missing tensor '" + name + "'");
  return it->second;
}

void TensorArchive::save(const fs::path& path) const {
  json header = {{"format", "dehaze-tensor-archive"}, {"version", 1}, {"metadata", metadata_}};
  json entries = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    const std::uint64_t nbytes = t.size() * sizeof(float);
    entries[name] = {{"dtype", "f32le"}, {"shape", t.shape()}, {"offset", offset}, {"nbytes", nbytes}};
    offset += nbytes;
  }
  header["tensors"] = std::move(entries);
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write archive " + path.string());
    const std::uint64_t len = text.size();
    out.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors_) {
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!out) throw IoError("short write on archive " + path.string());
  }
  fs::rename(tmp, path);
}

TensorArchive TensorArchive::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open archive " + path.string());
  char magic[8] = {};
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::string_view(magic, sizeof magic) != kMagic) {
    throw IoError("not a tensor archive: " + path.string());
  }
  const auto file_size = fs::file_size(path);
  if (len > file_size) throw IoError("corrupt archive header length in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated archive header in " + path.string());

  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError("malformed archive header in " + path.string() + ": " + e.what());
  }
  const std::uint64_t blob_start = sizeof magic + sizeof len + len;
  const std::uint64_t blob_size = file_size - blob_start;

  TensorArchive archive;
  archive.metadata_ = header.value("metadata", json::object());
  for (const auto& [name, entry] : header.at("tensors").items()) {
    if (entry.value("dtype", "") != "f32le") {
      throw IoError("tensor '" + name + "' has unsupported dtype in " + path.string());
    }
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (nbytes != shape_numel(shape) * sizeof(float) || offset + nbytes > blob_size) {
      throw IoError("tensor '" + name + "' has inconsistent extent in " + path.string());
    }
    std::vector<float> values(shape_numel(shape));
    in.seekg(static_cast<std::streamoff>(blob_start + offset));
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(nbytes));
    if (!in) throw IoError("truncated tensor '" + name + "' in " + path.string());
    archive.tensors_.emplace(name, Tensor<float>(shape, std::move(values)));
  }
  return archive;
}

namespace {
struct MdCtxDeleter {
  void operator()(EVP_MD_CTX* ctx) const noexcept { EVP_MD_CTX_free(ctx); }
};
using MdCtx = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;

std::string to_hex(const unsigned char* digest, unsigned len) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(2 * len, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = kHex[digest[i] >> 4];
    out[2 * i + 1] = kHex[digest[i] & 0xF];
  }
  return out;
}
}  // namespace

std::string sha256_hex(std::span<const unsigned char> bytes) {
  MdCtx ctx(EVP_MD_CTX_new());
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw Error("SHA-256 computation failed");
  }
  return to_hex(digest, len);
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  MdCtx ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 initialisation failed");
  }
  std::vector<char> buffer(1 << 16);
  while (in) {
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    const auto got = in.gcount();
    if (got > 0) EVP_DigestUpdate(ctx.get(), buffer.data(), static_cast<std::size_t>(got));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  return to_hex(digest, len);
}

}  // namespace dehaze
