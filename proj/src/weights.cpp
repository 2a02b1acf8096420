#include "dehaze/weights.hpp"

#include <hdf5.h>

#include <curl/curl.h>

#include <array>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <mutex>
#include <regex>

namespace dehaze {

namespace fs = std::filesystem;

namespace {

constexpr std::array<double, 3> kCaffeMeanBgr = {103.939, 116.779, 123.68};

struct CurlGlobal {
  CurlGlobal() { curl_global_init(CURL_GLOBAL_DEFAULT); }
  ~CurlGlobal() { curl_global_cleanup(); }
};

struct WriteTarget {
  CURL* curl;
  const fs::path* dest;
  std::uint64_t resume_from;
  std::ofstream out;
  bool opened = false;
};

std::size_t write_body(char* data, std::size_t size, std::size_t count, void* user) {
  auto* t = static_cast<WriteTarget*>(user);
  if (!t->opened) {
    long code = 0;
    curl_easy_getinfo(t->curl, CURLINFO_RESPONSE_CODE, &code);
    // A 200 reply to a range request carries the whole body.
    const bool append = t->resume_from > 0 && code == 206;
    t->out.open(*t->dest, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
    t->opened = true;
  }
  if (!t->out) return 0;
  t->out.write(data, static_cast<std::streamsize>(size * count));
  return t->out ? size * count : 0;
}

std::string hex_prefix(const std::string& text, std::size_t n) {
  const auto* p = reinterpret_cast<const unsigned char*>(text.data());
  return sha256_hex({p, text.size()}).substr(0, n);
}

std::mutex& url_lock(const std::string& url) {
  static std::mutex registry_mutex;
  static std::map<std::string, std::unique_ptr<std::mutex>> locks;
  std::lock_guard guard(registry_mutex);
  auto& slot = locks[url];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  std::string s;
  in >> s;
  return s;
}

WeightFormat sniff_format(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::array<char, 8> head{};
  in.read(head.data(), head.size());
  const std::string magic(head.data(), static_cast<std::size_t>(in.gcount()));
  if (magic == TensorArchive::kMagic) return WeightFormat::kArchive;
  if (magic == std::string("\x89HDF\r\n\x1a\n", 8)) return WeightFormat::kKerasH5;
  throw InvalidArgument("unrecognized weight file format: " + path.string());
}

// RAII wrapper for HDF5 identifiers.
struct H5Handle {
  hid_t id = H5I_INVALID_HID;
  herr_t (*close)(hid_t) = nullptr;
  H5Handle(hid_t i, herr_t (*c)(hid_t)) : id(i), close(c) {}
  H5Handle(const H5Handle&) = delete;
  H5Handle& operator=(const H5Handle&) = delete;
  ~H5Handle() {
    if (id >= 0 && close) close(id);
  }
};

void h5_check(hid_t id, const std::string& what) {
  if (id < 0) throw IoError("HDF5: " + what);
}

struct DatasetPaths {
  std::vector<std::string> names;
};

herr_t collect_datasets(hid_t, const char* name, const H5O_info_t* info, void* data) {
  if (info->type == H5O_TYPE_DATASET) static_cast<DatasetPaths*>(data)->names.emplace_back(name);
  return 0;
}

Tensor<float> read_dataset(hid_t file, const std::string& path) {
  H5Handle ds(H5Dopen2(file, path.c_str(), H5P_DEFAULT), H5Dclose);
  h5_check(ds.id, "cannot open dataset " + path);
  H5Handle space(H5Dget_space(ds.id), H5Sclose);
  const int rank = H5Sget_simple_extent_ndims(space.id);
  if (rank <= 0) throw IoError("HDF5: dataset " + path + " has no extent");
  std::vector<hsize_t> dims(static_cast<std::size_t>(rank));
  H5Sget_simple_extent_dims(space.id, dims.data(), nullptr);
  Tensor<float> t(Shape(dims.begin(), dims.end()));
  if (H5Dread(ds.id, H5T_NATIVE_FLOAT, H5S_ALL, H5S_ALL, H5P_DEFAULT, t.data()) < 0) {
    throw IoError("HDF5: cannot read dataset " + path);
  }
  return t;
}

void write_dataset(hid_t file, const std::string& path, const Tensor<float>& t) {
  std::vector<hsize_t> dims(t.shape().begin(), t.shape().end());
  H5Handle space(H5Screate_simple(static_cast<int>(dims.size()), dims.data(), nullptr), H5Sclose);
  H5Handle lcpl(H5Pcreate(H5P_LINK_CREATE), H5Pclose);
  H5Pset_create_intermediate_group(lcpl.id, 1);
  H5Handle ds(H5Dcreate2(file, path.c_str(), H5T_IEEE_F32LE, space.id, lcpl.id, H5P_DEFAULT,
                         H5P_DEFAULT),
              H5Dclose);
  h5_check(ds.id, "cannot create dataset " + path);
  if (H5Dwrite(ds.id, H5T_NATIVE_FLOAT, H5S_ALL, H5S_ALL, H5P_DEFAULT, t.data()) < 0) {
    throw IoError("HDF5: cannot write dataset " + path);
  }
}

// conv{b}_{k} <-> block{b}_conv{k}
std::string keras_layer_name(const std::string& encoder_name) {
  std::smatch m;
  static const std::regex re(R"(conv(\d)_(\d))");
  if (!std::regex_match(encoder_name, m, re)) {
    throw InvalidArgument("no Keras counterpart for layer " + encoder_name);
  }
  return "block" + m[1].str() + "_conv" + m[2].str();
}

}  // namespace

void CurlDownloader::download(const std::string& url, const fs::path& dest,
                              std::uint64_t resume_from) {
  static CurlGlobal global;
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), curl_easy_cleanup);
  if (!curl) throw NetworkError("cannot initialise libcurl");

  WriteTarget target{curl.get(), &dest, resume_from, {}, false};
  char errbuf[CURL_ERROR_SIZE] = {0};
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, write_body);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, &target);
  curl_easy_setopt(curl.get(), CURLOPT_ERRORBUFFER, errbuf);
  curl_easy_setopt(curl.get(), CURLOPT_TIMEOUT, timeout_seconds_);
  curl_easy_setopt(curl.get(), CURLOPT_CONNECTTIMEOUT, 30L);
  curl_easy_setopt(curl.get(), CURLOPT_RESUME_FROM_LARGE, static_cast<curl_off_t>(resume_from));

  const CURLcode rc = curl_easy_perform(curl.get());
  long code = 0;
  curl_easy_getinfo(curl.get(), CURLINFO_RESPONSE_CODE, &code);
  target.out.close();
  if (code == 416 && resume_from > 0) {
    // The partial file is not a prefix the server recognises; start over.
    fs::remove(dest);
    download(url, dest, 0);
    return;
  }
  if (rc != CURLE_OK) {
    throw NetworkError("download of " + url + " failed: " +
                       (errbuf[0] ? std::string(errbuf) : curl_easy_strerror(rc)));
  }
  if (code >= 400) {
    throw NetworkError("download of " + url + " failed with HTTP " + std::to_string(code));
  }
  if (!target.opened) {
    // Empty body: make sure the destination exists.
    std::ofstream(dest, std::ios::binary | std::ios::app);
  }
}

fs::path default_cache_dir() {
  if (const char* env = std::getenv("DEHAZE_CACHE_DIR"); env && *env) return env;
  if (const char* home = std::getenv("HOME"); home && *home) {
    return fs::path(home) / ".cache" / "dehaze";
  }
  return fs::temp_directory_path() / "dehaze-cache";
}

fs::path cache_path_for(const FetchOptions& opts) {
  const fs::path dir = opts.cache_dir.empty() ? default_cache_dir() : opts.cache_dir;
  std::string base = opts.url;
  if (const auto q = base.find_first_of("?#"); q != std::string::npos) base.resize(q);
  if (const auto slash = base.find_last_of('/'); slash != std::string::npos) {
    base = base.substr(slash + 1);
  }
  if (base.empty()) base = "weights";
  return dir / (hex_prefix(opts.url, 16) + "-" + base);
}

TensorArchive fetch_pretrained(const FetchOptions& opts, Downloader* downloader) {
  if (opts.url.empty()) throw InvalidArgument("weights URL is empty");
  const fs::path path = cache_path_for(opts);
  const fs::path part = fs::path(path.string() + ".part");
  const fs::path sidecar = fs::path(path.string() + ".sha256");

  std::string digest;
  {
    std::lock_guard guard(url_lock(opts.url));
    if (fs::exists(path)) {
      digest = sha256_file(path);
      const std::string want =
          !opts.expected_sha256.empty() ? opts.expected_sha256
                                        : (fs::exists(sidecar) ? read_text(sidecar) : std::string());
      if (!want.empty() && digest != want) {
        throw DigestMismatch("cached " + path.string() + " has sha256 " + digest + ", expected " +
                             want);
      }
    } else {
      if (opts.offline) {
        throw NetworkError("offline mode and no cached copy of " + opts.url + " at " +
                           path.string());
      }
      fs::create_directories(path.parent_path());
      CurlDownloader curl;
      Downloader& d = downloader ? *downloader : curl;
      const std::uint64_t have = fs::exists(part) ? fs::file_size(part) : 0;
      d.download(opts.url, part, have);
      digest = sha256_file(part);
      if (!opts.expected_sha256.empty() && digest != opts.expected_sha256) {
        fs::remove(part);
        throw DigestMismatch("download of " + opts.url + " has sha256 " + digest + ", expected " +
                             opts.expected_sha256);
      }
      fs::rename(part, path);
      std::ofstream(sidecar) << digest << '\n';
    }
  }

  WeightFormat format = opts.format;
  if (format == WeightFormat::kAuto) format = sniff_format(path);
  TensorArchive archive = format == WeightFormat::kArchive ? TensorArchive::load(path)
                                                           : convert_keras_vgg16(path);
  archive.metadata()["source_url"] = opts.url;
  archive.metadata()["sha256"] = digest;
  return archive;
}

TensorArchive convert_keras_vgg16(const fs::path& h5_path) {
  H5Handle file(H5Fopen(h5_path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT), H5Fclose);
  h5_check(file.id, "cannot open " + h5_path.string());
  DatasetPaths paths;
  if (H5Ovisit(file.id, H5_INDEX_NAME, H5_ITER_NATIVE, collect_datasets, &paths) <
      0) {
    throw IoError("HDF5: cannot walk " + h5_path.string());
  }

  const ModelConfig full = ModelConfig::standard(Scale::kFull);
  TensorArchive archive;
  for (const auto& spec : full.encoder_table) {
    if (spec.kind != LayerKind::kConv) continue;
    const std::string keras = keras_layer_name(spec.name);
    std::string kernel_path, bias_path;
    for (const auto& p : paths.names) {
      const auto slash = p.find('/');
      if (slash == std::string::npos || p.substr(0, slash) != keras) continue;
      const std::string leaf = p.substr(p.find_last_of('/') + 1);
      if (leaf.find("kernel") != std::string::npos || leaf.find("_W") != std::string::npos) {
        kernel_path = p;
      } else if (leaf.find("bias") != std::string::npos || leaf.find("_b") != std::string::npos) {
        bias_path = p;
      }
    }
    if (kernel_path.empty() || bias_path.empty()) {
      throw InvalidArgument("Keras file lacks kernel or bias for " + keras);
    }
    const Tensor<float> hwio = read_dataset(file.id, kernel_path);
    Tensor<float> bias = read_dataset(file.id, bias_path);
    if (hwio.rank() != 4 || bias.rank() != 1 || bias.dim(0) != hwio.dim(3)) {
      throw ShapeError("Keras tensors for " + keras + " have shapes " +
                       shape_string(hwio.shape()) + " and " + shape_string(bias.shape()));
    }
    const auto kh = hwio.dim(0), kw = hwio.dim(1), ci = hwio.dim(2), co = hwio.dim(3);
    Tensor<float> oihw({co, ci, kh, kw});
    for (std::int64_t y = 0; y < kh; ++y)
      for (std::int64_t x = 0; x < kw; ++x)
        for (std::int64_t i = 0; i < ci; ++i)
          for (std::int64_t o = 0; o < co; ++o)
            oihw.at(o, i, y, x) = hwio[static_cast<std::size_t>(((y * kw + x) * ci + i) * co + o)];

    if (spec.name == "conv1_1") {
      if (ci != 3) throw ShapeError("conv1_1 must take 3 input channels");
      // Caffe input is 255·BGR − mean; ours is (RGB − mean) / std.
      Tensor<float> folded(oihw.shape());
      for (std::int64_t o = 0; o < co; ++o) {
        double shift = 0.0;
        for (std::int64_t c = 0; c < 3; ++c) {
          const std::int64_t src = 2 - c;
          const double scale = 255.0 * kImageNetStd[static_cast<std::size_t>(c)];
          const double offset = 255.0 * kImageNetMean[static_cast<std::size_t>(c)] -
                                kCaffeMeanBgr[static_cast<std::size_t>(src)];
          for (std::int64_t y = 0; y < kh; ++y) {
            for (std::int64_t x = 0; x < kw; ++x) {
              const double w = oihw.at(o, src, y, x);
              folded.at(o, c, y, x) = static_cast<float>(w * scale);
              shift += w * offset;
            }
          }
        }
        bias[static_cast<std::size_t>(o)] =
            static_cast<float>(bias[static_cast<std::size_t>(o)] + shift);
      }
      oihw = std::move(folded);
    }
    archive.put("encoder." + spec.name + ".weight", std::move(oihw));
    archive.put("encoder." + spec.name + ".bias", std::move(bias));
  }
  archive.metadata()["converted_from"] = "keras-vgg16-h5";
  return archive;
}

void write_keras_vgg16(const fs::path& h5_path,
                       const std::map<std::string, Tensor<float>>& encoder_tensors) {
  H5Handle file(H5Fcreate(h5_path.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT), H5Fclose);
  h5_check(file.id, "cannot create " + h5_path.string());
  static const std::regex re(R"(encoder\.(conv\d_\d)\.(weight|bias))");
  for (const auto& [name, t] : encoder_tensors) {
    std::smatch m;
    if (!std::regex_match(name, m, re)) continue;
    const std::string keras = keras_layer_name(m[1].str());
    if (m[2] == "bias") {
      write_dataset(file.id, keras + "/" + keras + "/bias:0", t);
      continue;
    }
    const auto co = t.dim(0), ci = t.dim(1), kh = t.dim(2), kw = t.dim(3);
    Tensor<float> hwio({kh, kw, ci, co});
    for (std::int64_t o = 0; o < co; ++o)
      for (std::int64_t i = 0; i < ci; ++i)
        for (std::int64_t y = 0; y < kh; ++y)
          for (std::int64_t x = 0; x < kw; ++x)
            hwio[static_cast<std::size_t>(((y * kw + x) * ci + i) * co + o)] =
                t[static_cast<std::size_t>(((o * ci + i) * kh + y) * kw + x)];
    write_dataset(file.id, keras + "/" + keras + "/kernel:0", hwio);
  }
}

TensorArchive encoder_archive(const Model<float>& model) {
  TensorArchive archive;
  for (const auto& l : model.encoder_layers()) {
    if (l.spec.kind != LayerKind::kConv) continue;
    archive.put("encoder." + l.spec.name + ".weight", l.weight);
    archive.put("encoder." + l.spec.name + ".bias", l.bias);
  }
  archive.metadata()["model_config"] = model.config().to_json();
  return archive;
}

nlohmann::json VerifyReport::to_json() const {
  nlohmann::json mism = nlohmann::json::array();
  for (const auto& m : mismatched) {
    mism.push_back({{"name", m.name}, {"expected", m.expected}, {"got", m.got}});
  }
  return {{"ok", ok()}, {"matched", matched}, {"missing", missing}, {"mismatched", mism}};
}

VerifyReport verify_archive(const TensorArchive& archive, const ModelConfig& cfg) {
  VerifyReport report;
  for (const auto& spec : cfg.encoder_table) {
    if (spec.kind != LayerKind::kConv) continue;
    const std::pair<std::string, Shape> expected[] = {
        {"encoder." + spec.name + ".weight",
         {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}},
        {"encoder." + spec.name + ".bias", {spec.out_channels}}};
    for (const auto& [name, shape] : expected) {
      if (!archive.contains(name)) {
        report.missing.push_back(name);
      } else if (archive.at(name).shape() != shape) {
        report.mismatched.push_back({name, shape, archive.at(name).shape()});
      } else {
        report.matched.push_back(name);
      }
    }
  }
  return report;
}

}  // namespace dehaze
