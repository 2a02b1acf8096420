#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dehaze/archive.hpp"
#include "dehaze/imaging.hpp"
#include "dehaze/layers.hpp"
#include "dehaze/normalization.hpp"

namespace dehaze {

enum class LayerKind { kConv, kTConv, kMaxPool, kNorm };
enum class Activation { kNone, kRelu, kTanh };
enum class Scale { kFull, kTiny };

std::string_view to_string(Scale scale);
Scale parse_scale(std::string_view text);

/// One row of an encoder or decoder layer table.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  Activation activation = Activation::kRelu;
  bool trainable = true;
  /// 1-based block index. Decoder blocks 2, 3, 4 start by concatenating the
  /// normalized skip from encoder block 3, 2, 1 respectively.
  int block = 1;

  nn::ConvGeometry geometry() const { return {kernel, stride, padding}; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Architecture description. The default tables are the VGG-16 encoder
/// (blocks 1–3 plus conv4_1) and a mirrored four-block decoder.
struct ModelConfig {
  std::vector<LayerSpec> encoder_table;
  std::vector<LayerSpec> decoder_table;
  NormKind skip_norm = NormKind::kInstance;
  NormKind decoder_norm = NormKind::kInstance;
  Scale scale = Scale::kFull;

  static ModelConfig standard(Scale scale = Scale::kFull, NormKind skip = NormKind::kInstance,
                              NormKind decoder = NormKind::kInstance);

  /// Checks the structural invariants: three stride-2 pools in the encoder,
  /// three stride-2 transposed convolutions in the decoder, consistent
  /// channel flow, and skip widths equal to the first conv of blocks 1–3.
  void validate() const;

  /// Output channels of the first conv of encoder blocks 1, 2, 3.
  std::array<std::int64_t, 3> skip_channels() const;
  const LayerSpec& encoder_layer(std::string_view name) const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Name of the perceptual feature tap: block-3 conv-1, post-ReLU.
inline constexpr std::string_view kPerceptualTap = "conv3_1";

template <typename T>
struct Layer {
  LayerSpec spec;
  Tensor<T> weight, bias;
  Tensor<T> grad_weight, grad_bias;
  NormParams<T> norm;
  RunningStats<T> stats;
  Tensor<T> grad_gamma, grad_beta;
};

/// Mutable view of one named tensor owned by a model.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;  // null for frozen parameters and buffers
  bool trainable;
  bool buffer;  // BN running statistics
};

/// Encoder intermediate state needed to backpropagate to the input.
template <typename T>
struct EncoderTrace {
  std::vector<Tensor<T>> inputs;   // per executed layer
  std::vector<Tensor<T>> outputs;  // post-activation
  std::vector<std::vector<std::uint32_t>> argmax;
};

template <typename T>
struct DecoderStep {
  bool concat_before = false;
  std::int64_t decoder_channels = 0;  // channels of the decoder part of a concat
  int skip_index = -1;
  Tensor<T> input;
  Tensor<T> output;
  NormCache<T> norm_cache;
};

/// Everything forward() records for backward().
template <typename T>
struct ForwardTrace {
  std::array<NormCache<T>, 3> skip_cache;
  std::vector<DecoderStep<T>> steps;
};

struct ForwardOptions {
  NormMode mode = NormMode::kEval;
  /// Replaces the (normalized) skip features by zeros; used for wiring checks.
  bool zero_skips = false;
};

/// The dehazing network. Encoder parameters are frozen; the optimizer only
/// sees decoder and normalization parameters.
template <typename T>
class Model {
 public:
  Model() = default;
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  /// x: N×3×H×W in ImageNet space, H and W divisible by 8. Output in [-1, 1].
  Tensor<T> forward(const Tensor<T>& x, ForwardOptions opts = {},
                    ForwardTrace<T>* trace = nullptr);
  /// Accumulates parameter gradients from d(loss)/d(output).
  void backward(ForwardTrace<T>& trace, const Tensor<T>& grad_output);
  void zero_grad();

  /// Runs the encoder up to and including `stop_after`. With a trace, the
  /// result can be differentiated w.r.t. x via encoder_backward().
  Tensor<T> encode(const Tensor<T>& x, std::string_view stop_after,
                   EncoderTrace<T>* trace = nullptr) const;
  Tensor<T> encoder_backward(const EncoderTrace<T>& trace, const Tensor<T>& grad_out) const;
  /// Full encoder output (conv4_1, post-ReLU).
  Tensor<T> bottleneck(const Tensor<T>& x) const;

  std::vector<ParamRef<T>> parameters();
  std::vector<Layer<T>>& encoder_layers() { return encoder_; }
  std::vector<Layer<T>>& decoder_layers() { return decoder_; }
  std::array<Layer<T>, 3>& skip_layers() { return skip_; }
  const std::vector<Layer<T>>& encoder_layers() const { return encoder_; }
  const std::vector<Layer<T>>& decoder_layers() const { return decoder_; }

  /// SHA-256 over encoder parameter bytes, for freezing checks.
  std::string encoder_digest() const;

  TensorArchive to_archive() const;

 private:
  ModelConfig cfg_;
  std::vector<Layer<T>> encoder_;
  std::vector<Layer<T>> decoder_;
  std::array<Layer<T>, 3> skip_;
};

/// Builds a model. Encoder weights come from `encoder_weights` when given
/// (names "encoder.<layer>.weight" / ".bias"), otherwise from the seeded random
/// initializer. Decoder convs get He-normal weights and zero biases; norm
/// layers get gamma = 1, beta_shift = 0.
template <typename T>
Model<T> build_model(const ModelConfig& cfg, const TensorArchive* encoder_weights,
                     std::uint64_t seed);

/// Restores every parameter and buffer from a checkpoint archive whose
/// metadata carries "model_config".
template <typename T>
Model<T> load_model(const TensorArchive& checkpoint);

/// Anything that maps a hazy RGB image to a dehazed one.
class Dehazer {
 public:
  virtual ~Dehazer() = default;
  virtual Image dehaze(const Image& hazy) = 0;
};

/// Returns the input unchanged; the "do-nothing" reference.
class IdentityDehazer final : public Dehazer {
 public:
  Image dehaze(const Image& hazy) override { return hazy; }
};

/// Reflect-pads to a multiple of 8, normalizes, runs the network in eval
/// mode, maps tanh output to [0, 1] and crops back.
Image dehaze_image(Model<float>& model, const Image& hazy);

class ModelDehazer final : public Dehazer {
 public:
  explicit ModelDehazer(Model<float>& model) : model_(model) {}
  Image dehaze(const Image& hazy) override { return dehaze_image(model_, hazy); }

 private:
  Model<float>& model_;
};

}  // namespace dehaze
