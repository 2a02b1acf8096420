#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "dehaze/haze_synth.hpp"
#include "dehaze/imaging.hpp"

namespace dehaze {

enum class Split { kTrain, kVal, kTest };

/// Training crops. crop_size = 0 keeps the whole image, trimmed at the bottom
/// and right to a multiple of 8.
struct CropPolicy {
  std::int64_t crop_size = 0;
  bool random = true;
  bool hflip = false;
};

struct PairEntry {
  std::string name;  // hazy stem
  std::filesystem::path hazy;
  std::filesystem::path clear;
};

struct PairedDataset {
  std::filesystem::path root;
  std::vector<PairEntry> pairs;
  /// Files that could not be paired, relative to root.
  std::vector<std::string> unmatched;
  Split split = Split::kTrain;
  CropPolicy policy;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

struct DatasetLayout {
  std::string hazy_dir = "hazy";
  std::string clear_dir = "clear";
  std::string depth_dir = "depth";
};

/// Pairs root/<hazy_dir> with root/<clear_dir>. A hazy stem pairs with the
/// clear image of the same stem, or else with the longest clear stem s such
/// that the hazy stem starts with "s_" (RESIDE naming, e.g. 1400_3_0.8.png →
/// 1400.png). Pairs are sorted by hazy filename.
PairedDataset load_paired_dataset(const std::filesystem::path& root, const CropPolicy& policy = {},
                                  Split split = Split::kTrain, const DatasetLayout& layout = {});

struct SynthesisOptions {
  std::uint64_t seed = 0;
  HazeRanges ranges;
  DepthScaling depth_scaling = DepthScaling::kNormalizeMax;
  std::optional<double> fixed_beta;
  std::optional<std::array<double, 3>> fixed_airlight;
  DatasetLayout layout;
};

/// Reads <in_root>/clear and <in_root>/depth (matching stems), writes
/// <out_root>/hazy, <out_root>/clear and <out_root>/manifest.json.
PairedDataset synthesize_dataset(const std::filesystem::path& in_root,
                                 const std::filesystem::path& out_root,
                                 const SynthesisOptions& options);

/// Procedural scenes of layered coloured rectangles over a gradient, each
/// layer at its own depth, hazed with synthesize_dataset. Writes clear/,
/// depth/ (16-bit), hazy/ and manifest.json under out_root.
PairedDataset make_toy_dataset(std::uint64_t seed, int n_images, std::int64_t size,
                               const std::filesystem::path& out_root,
                               const HazeRanges& ranges = {});

/// Renders one toy scene (clear RGB and depth in [0, 1]).
std::pair<Image, Image> render_toy_scene(std::uint64_t seed, std::int64_t size);

/// Per-image seed derived from the dataset seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Shuffled index batches for one epoch; deterministic in (seed, epoch).
/// Without drop_last the final batch may be short, so every index appears
/// exactly once.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, int epoch,
                                                    bool drop_last = false);

struct ImagePair {
  Image hazy;
  Image clear;
};

/// Loads pairs on demand, optionally memoizing decoded images.
class PairLoader {
 public:
  explicit PairLoader(const PairedDataset& dataset, bool cache = true);
  const ImagePair& get(std::size_t index);
  std::size_t size() const { return dataset_.size(); }
  const PairedDataset& dataset() const { return dataset_; }

 private:
  const PairedDataset& dataset_;
  bool cache_;
  std::map<std::size_t, ImagePair> memo_;
  ImagePair scratch_;
};

/// Applies the crop policy. The output size is always divisible by 8.
ImagePair prepare_sample(const ImagePair& pair, const CropPolicy& policy, std::mt19937_64& rng);

}  // namespace dehaze
