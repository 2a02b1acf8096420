#include "dehaze/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>

namespace dehaze {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("missing directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  return files;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::string scaling_name(DepthScaling s) {
  return s == DepthScaling::kNormalizeMax ? "normalize_max" : "raw";
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ index);
}

PairedDataset load_paired_dataset(const fs::path& root, const CropPolicy& policy, Split split,
                                  const DatasetLayout& layout) {
  const auto hazy_files = list_images(root / layout.hazy_dir);
  const auto clear_files = list_images(root / layout.clear_dir);

  std::map<std::string, fs::path> clear_by_stem;
  for (const auto& p : clear_files) clear_by_stem.emplace(p.stem().string(), p);

  PairedDataset ds;
  ds.root = root;
  ds.split = split;
  ds.policy = policy;
  std::set<std::string> used;
  for (const auto& hazy : hazy_files) {
    const std::string stem = hazy.stem().string();
    const fs::path* match = nullptr;
    std::string match_stem;
    if (auto it = clear_by_stem.find(stem); it != clear_by_stem.end()) {
      match = &it->second;
      match_stem = it->first;
    } else {
      for (const auto& [clear_stem, path] : clear_by_stem) {
        if (stem.size() > clear_stem.size() + 1 && stem.compare(0, clear_stem.size(), clear_stem) == 0 &&
            stem[clear_stem.size()] == '_' && clear_stem.size() > match_stem.size()) {
          match = &path;
          match_stem = clear_stem;
        }
      }
    }
    if (!match) {
      ds.unmatched.push_back((fs::path(layout.hazy_dir) / hazy.filename()).string());
      continue;
    }
    const auto hazy_size = read_image_size(hazy);
    const auto clear_size = read_image_size(*match);
    if (hazy_size != clear_size) {
      throw ShapeError("pair " + stem + ": hazy is " + std::to_string(hazy_size.first) + "x" +
                       std::to_string(hazy_size.second) + ", clear is " +
                       std::to_string(clear_size.first) + "x" + std::to_string(clear_size.second));
    }
    used.insert(match_stem);
    ds.pairs.push_back({stem, hazy, *match});
  }
  for (const auto& [stem, path] : clear_by_stem) {
    if (!used.count(stem)) {
      ds.unmatched.push_back((fs::path(layout.clear_dir) / path.filename()).string());
    }
  }
  if (ds.pairs.empty()) throw IoError("empty dataset: no hazy/clear pairs under " + root.string());
  return ds;
}

PairedDataset synthesize_dataset(const fs::path& in_root, const fs::path& out_root,
                                 const SynthesisOptions& options) {
  options.ranges.validate();
  const auto& layout = options.layout;
  const auto clear_files = list_images(in_root / layout.clear_dir);
  const auto depth_files = list_images(in_root / layout.depth_dir);
  std::map<std::string, fs::path> depth_by_stem;
  for (const auto& p : depth_files) depth_by_stem.emplace(p.stem().string(), p);
  if (clear_files.empty()) throw IoError("no clear images under " + in_root.string());

  const fs::path hazy_dir = out_root / layout.hazy_dir;
  const fs::path clear_out = out_root / layout.clear_dir;
  fs::create_directories(hazy_dir);
  const bool copy_clear =
      !fs::exists(clear_out) || !fs::equivalent(clear_out, in_root / layout.clear_dir);

  json images = json::array();
  for (std::size_t i = 0; i < clear_files.size(); ++i) {
    const auto& clear_path = clear_files[i];
    const std::string stem = clear_path.stem().string();
    auto it = depth_by_stem.find(stem);
    if (it == depth_by_stem.end()) throw IoError("missing depth map for clear image " + stem);

    const std::uint64_t image_seed = derive_seed(options.seed, i);
    HazeParams params = sample_haze_params(image_seed, options.ranges);
    if (options.fixed_beta) params.beta = *options.fixed_beta;
    if (options.fixed_airlight) params.airlight = *options.fixed_airlight;

    const Image clear = load_rgb(clear_path);
    const Image depth = load_depth(it->second);
    if (depth.height() != clear.height() || depth.width() != clear.width()) {
      throw ShapeError("depth map for " + stem + " does not match the clear image size");
    }
    const Image hazy = synthesize_hazy(clear, depth, params, options.depth_scaling);
    const std::string file = stem + ".png";
    save_png(hazy_dir / file, hazy);
    if (copy_clear) save_png(clear_out / file, clear);

    images.push_back({{"name", stem},
                      {"clear", (fs::path(layout.clear_dir) / file).string()},
                      {"depth", (fs::path(layout.depth_dir) / it->second.filename()).string()},
                      {"hazy", (fs::path(layout.hazy_dir) / file).string()},
                      {"seed", image_seed},
                      {"airlight", params.airlight},
                      {"beta", params.beta}});
  }

  json manifest = {{"format", "dehaze-synthesis-manifest"},
                   {"version", 1},
                   {"seed", options.seed},
                   {"depth_scaling", scaling_name(options.depth_scaling)},
                   {"ranges",
                    {{"airlight", {options.ranges.airlight_lo, options.ranges.airlight_hi}},
                     {"beta", {options.ranges.beta_lo, options.ranges.beta_hi}}}},
                   {"images", std::move(images)}};
  std::ofstream out(out_root / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("cannot write manifest under " + out_root.string());
  out.close();

  return load_paired_dataset(out_root, {}, Split::kTrain, layout);
}

std::pair<Image, Image> render_toy_scene(std::uint64_t seed, std::int64_t size) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto color = [&] {
    return std::array<double, 3>{0.05 + 0.9 * unit(rng), 0.05 + 0.9 * unit(rng),
                                 0.05 + 0.9 * unit(rng)};
  };

  Image clear(3, size, size);
  Image depth(1, size, size);
  const auto top = color();
  const auto bottom = color();
  for (std::int64_t y = 0; y < size; ++y) {
    const double s = static_cast<double>(y) / static_cast<double>(size - 1);
    for (std::int64_t x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) {
        clear.at(c, y, x) = static_cast<float>((1.0 - s) * top[c] + s * bottom[c]);
      }
      // Background recedes towards the top of the frame.
      depth.at(0, y, x) = static_cast<float>(1.0 - 0.3 * s);
    }
  }

  struct Rect {
    std::int64_t y0, x0, h, w;
    double depth;
    std::array<double, 3> color;
    double shade;
  };
  std::uniform_int_distribution<int> count_dist(3, 6);
  const int count = count_dist(rng);
  std::vector<Rect> rects;
  for (int i = 0; i < count; ++i) {
    Rect r;
    r.h = std::max<std::int64_t>(2, static_cast<std::int64_t>(size * (0.125 + 0.375 * unit(rng))));
    r.w = std::max<std::int64_t>(2, static_cast<std::int64_t>(size * (0.125 + 0.375 * unit(rng))));
    r.y0 = static_cast<std::int64_t>(unit(rng) * static_cast<double>(size - r.h));
    r.x0 = static_cast<std::int64_t>(unit(rng) * static_cast<double>(size - r.w));
    r.depth = 0.1 + 0.6 * unit(rng);
    r.color = color();
    r.shade = 0.3 * unit(rng);
    rects.push_back(r);
  }
  // Painter's order: farthest first, so nearer layers occlude.
  std::stable_sort(rects.begin(), rects.end(),
                   [](const Rect& a, const Rect& b) { return a.depth > b.depth; });
  for (const auto& r : rects) {
    for (std::int64_t y = r.y0; y < r.y0 + r.h; ++y) {
      for (std::int64_t x = r.x0; x < r.x0 + r.w; ++x) {
        const double u = static_cast<double>(x - r.x0) / static_cast<double>(r.w);
        const double shade = 1.0 - r.shade * u;
        for (int c = 0; c < 3; ++c) clear.at(c, y, x) = static_cast<float>(r.color[c] * shade);
        depth.at(0, y, x) = static_cast<float>(r.depth);
      }
    }
  }
  return {std::move(clear), std::move(depth)};
}

PairedDataset make_toy_dataset(std::uint64_t seed, int n_images, std::int64_t size,
                               const fs::path& out_root, const HazeRanges& ranges) {
  if (n_images < 1) throw InvalidArgument("toy dataset needs at least one image");
  if (size < 16 || size % 8 != 0) {
    throw InvalidArgument("toy image size must be a multiple of 8 and at least 16");
  }
  const DatasetLayout layout;
  for (int i = 0; i < n_images; ++i) {
    auto [clear, depth] = render_toy_scene(derive_seed(seed ^ 0x70795CE9Eull, i), size);
    char name[32];
    std::snprintf(name, sizeof name, "toy_%04d.png", i);
    save_png(out_root / layout.clear_dir / name, clear);
    save_png16(out_root / layout.depth_dir / name, depth);
  }
  SynthesisOptions opts;
  opts.seed = seed;
  opts.ranges = ranges;
  return synthesize_dataset(out_root, out_root, opts);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, int epoch,
                                                    bool drop_last) {
  if (batch_size == 0) throw InvalidArgument("batch size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (drop_last && end - start < batch_size) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

PairLoader::PairLoader(const PairedDataset& dataset, bool cache) : dataset_(dataset), cache_(cache) {}

const ImagePair& PairLoader::get(std::size_t index) {
  if (cache_) {
    if (auto it = memo_.find(index); it != memo_.end()) return it->second;
  }
  const auto& entry = dataset_.pairs.at(index);
  ImagePair pair{load_rgb(entry.hazy), load_rgb(entry.clear)};
  if (pair.hazy.pixels.shape() != pair.clear.pixels.shape()) {
    throw ShapeError("pair " + entry.name + " has mismatched dimensions");
  }
  if (cache_) return memo_.emplace(index, std::move(pair)).first->second;
  scratch_ = std::move(pair);
  return scratch_;
}

ImagePair prepare_sample(const ImagePair& pair, const CropPolicy& policy, std::mt19937_64& rng) {
  const auto h = pair.hazy.height(), w = pair.hazy.width();
  std::int64_t ch, cw;
  if (policy.crop_size == 0) {
    ch = h - h % 8;
    cw = w - w % 8;
    if (ch == 0 || cw == 0) throw ShapeError("image smaller than 8 pixels cannot be trained on");
  } else {
    if (policy.crop_size % 8 != 0) throw InvalidArgument("crop size must be a multiple of 8");
    if (policy.crop_size > h || policy.crop_size > w) {
      throw InvalidArgument("crop size " + std::to_string(policy.crop_size) +
                            " exceeds image size " + std::to_string(h) + "x" + std::to_string(w));
    }
    ch = cw = policy.crop_size;
  }
  std::int64_t top = 0, left = 0;
  if (policy.random) {
    top = std::uniform_int_distribution<std::int64_t>(0, h - ch)(rng);
    left = std::uniform_int_distribution<std::int64_t>(0, w - cw)(rng);
  } else if (policy.crop_size != 0) {
    top = (h - ch) / 2;
    left = (w - cw) / 2;
  }
  ImagePair out{crop(pair.hazy, top, left, ch, cw), crop(pair.clear, top, left, ch, cw)};
  if (policy.hflip && std::bernoulli_distribution(0.5)(rng)) {
    out.hazy = flip_horizontal(out.hazy);
    out.clear = flip_horizontal(out.clear);
  }
  return out;
}

}  // namespace dehaze
