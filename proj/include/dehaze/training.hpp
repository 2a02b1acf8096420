#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dehaze/data.hpp"
#include "dehaze/network.hpp"
#include "dehaze/objectives.hpp"

namespace dehaze {

struct TrainConfig {
  int batch_size = 16;
  double lr0 = 0.1;
  int epochs = 60;
  int decay_start_epoch = 30;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  Scale scale = Scale::kFull;
  NormKind skip_norm = NormKind::kInstance;
  NormKind decoder_norm = NormKind::kInstance;
  CropPolicy crop{224, true, false};
  bool drop_last = false;
  /// Validation cadence in epochs when a validation set is supplied.
  int val_every = 1;
  /// Decoded images are kept in memory for datasets up to this many pairs.
  std::size_t cache_limit = 512;

  /// Standard defaults with the desk-scale crop (64) when scale is tiny.
  static TrainConfig defaults(Scale scale);
  void validate() const;
  nlohmann::json to_json() const;
  /// Rejects unknown keys; missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// lr0 before decay_start_epoch, then linear to zero at the end of the last
/// epoch: lr0 · (epochs − epoch) / (epochs − decay_start_epoch).
double lr_at(int epoch, const TrainConfig& cfg);

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// v ← momentum·v + (grad + weight_decay·param); param ← param − lr·v.
/// Throws NonFiniteError on NaN or infinite gradients.
template <typename T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr,
                const SgdOptions& opts);

/// Momentum buffers keyed by parameter name.
template <typename T>
struct SgdState {
  std::map<std::string, Tensor<T>> velocity;
};

/// One step over every trainable parameter of the list (frozen ones and
/// buffers are skipped).
template <typename T>
void sgd_step(std::vector<ParamRef<T>>& params, SgdState<T>& state, double lr,
              const SgdOptions& opts);

struct EpochRecord {
  int epoch = 0;
  int steps = 0;
  double mean_loss = 0.0;
  double mean_reconstruction = 0.0;
  double mean_perceptual = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
  std::optional<double> val_psnr;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  std::optional<double> best_val_psnr;

  nlohmann::json to_json() const;
};

struct TrainOutputs {
  /// Empty disables checkpoints and history files.
  std::filesystem::path out_dir;
  /// Called after each epoch; for progress reporting.
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Optimizes decoder and normalization parameters; the encoder is never
/// touched. Per epoch the batch order is reshuffled from (seed, epoch).
TrainHistory train(Model<float>& model, const PairedDataset& train_set, const TrainConfig& cfg,
                   const PairedDataset* val_set = nullptr, const TrainOutputs& outputs = {});

struct ImageMetrics {
  std::string name;
  MetricResult dehazed;
  MetricResult baseline;  // hazy input vs clear
};

struct EvalReport {
  std::vector<ImageMetrics> images;
  MetricResult mean_dehazed;
  MetricResult mean_baseline;
  nlohmann::json provenance = nlohmann::json::object();

  /// PSNR +infinity is written as the string "inf".
  nlohmann::json to_json() const;
};

EvalReport evaluate(Dehazer& dehazer, const PairedDataset& dataset);

/// Saves a model with training metadata.
void save_checkpoint(const Model<float>& model, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());
Model<float> load_checkpoint(const std::filesystem::path& path);

struct AblationCell {
  NormKind skip_norm = NormKind::kInstance;
  NormKind decoder_norm = NormKind::kInstance;
  bool perceptual = false;

  std::string label() const;
  friend bool operator==(const AblationCell&, const AblationCell&) = default;
};

/// The nine reconstruction-only cells (skip × decoder ∈ {NA, BN, IN}²) in
/// decoder-major order, then IN-IN with the perceptual term.
std::vector<AblationCell> standard_ablation_grid();
/// Parses "IN-IN-off" style labels.
AblationCell parse_ablation_cell(std::string_view label);

struct AblationEntry {
  AblationCell cell;
  MetricResult metrics;
  double final_loss = 0.0;
};

struct AblationReport {
  std::vector<AblationEntry> entries;
  MetricResult baseline;
  nlohmann::json to_json() const;
  /// Table rendered with Skip/Dec/PSNR/SSIM rows.
  std::string render_table() const;
};

struct AblationOptions {
  /// Encoder weights shared by every cell; random init from the seed otherwise.
  const TensorArchive* encoder_weights = nullptr;
  std::filesystem::path out_dir;
  std::function<void(const AblationEntry&)> on_cell;
};

/// Trains one model per cell with identical seed, data order and schedule and
/// evaluates all of them on the shared held-out set.
AblationReport run_ablation(const std::vector<AblationCell>& grid, const TrainConfig& base_cfg,
                            const PairedDataset& train_set, const PairedDataset& heldout,
                            const AblationOptions& options = {});

}  // namespace dehaze
