#include "dehaze/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dehaze {

using nlohmann::json;

std::string_view to_string(Scale scale) { return scale == Scale::kFull ? "full" : "tiny"; }

Scale parse_scale(std::string_view text) {
  if (text == "full") return Scale::kFull;
  if (text == "tiny") return Scale::kTiny;
  throw InvalidArgument("unknown scale '" + std::string(text) + "' (expected full|tiny)");
}

namespace {

std::string_view kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kTConv: return "tconv";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kNorm: return "norm";
  }
  return "?";
}

LayerKind parse_kind(std::string_view s) {
  if (s == "conv") return LayerKind::kConv;
  if (s == "tconv") return LayerKind::kTConv;
  if (s == "maxpool") return LayerKind::kMaxPool;
  if (s == "norm") return LayerKind::kNorm;
  throw InvalidArgument("unknown layer kind '" + std::string(s) + "'");
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::kNone: return "none";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
  }
  return "?";
}

Activation parse_activation(std::string_view s) {
  if (s == "none") return Activation::kNone;
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw InvalidArgument("unknown activation '" + std::string(s) + "'");
}

json layer_to_json(const LayerSpec& l) {
  return {{"name", l.name},          {"kind", kind_name(l.kind)},
          {"in_channels", l.in_channels}, {"out_channels", l.out_channels},
          {"kernel", l.kernel},      {"stride", l.stride},
          {"padding", l.padding},    {"activation", activation_name(l.activation)},
          {"trainable", l.trainable}, {"block", l.block}};
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.name = j.at("name").get<std::string>();
  l.kind = parse_kind(j.at("kind").get<std::string>());
  l.in_channels = j.at("in_channels").get<std::int64_t>();
  l.out_channels = j.at("out_channels").get<std::int64_t>();
  l.kernel = j.at("kernel").get<int>();
  l.stride = j.at("stride").get<int>();
  l.padding = j.at("padding").get<int>();
  l.activation = parse_activation(j.at("activation").get<std::string>());
  l.trainable = j.at("trainable").get<bool>();
  l.block = j.at("block").get<int>();
  return l;
}

LayerSpec conv(std::string name, int block, std::int64_t in, std::int64_t out, bool trainable,
               Activation act = Activation::kRelu) {
  return {std::move(name), LayerKind::kConv, in, out, 3, 1, 1, act, trainable, block};
}

LayerSpec pool(std::string name, int block, std::int64_t channels) {
  return {std::move(name), LayerKind::kMaxPool, channels, channels, 2, 2, 0,
          Activation::kNone, false, block};
}

LayerSpec upconv(std::string name, int block, std::int64_t in, std::int64_t out) {
  return {std::move(name), LayerKind::kTConv, in, out, 4, 2, 1, Activation::kRelu, true, block};
}

LayerSpec norm(std::string name, int block, std::int64_t channels) {
  return {std::move(name), LayerKind::kNorm, channels, channels, 0, 1, 0,
          Activation::kNone, true, block};
}

}  // namespace

ModelConfig ModelConfig::standard(Scale scale, NormKind skip, NormKind decoder) {
  const std::int64_t d = scale == Scale::kFull ? 1 : 8;
  const std::int64_t w64 = 64 / d, w128 = 128 / d, w256 = 256 / d, w512 = 512 / d;

  ModelConfig cfg;
  cfg.scale = scale;
  cfg.skip_norm = skip;
  cfg.decoder_norm = decoder;
  cfg.encoder_table = {
      conv("conv1_1", 1, 3, w64, false),      conv("conv1_2", 1, w64, w64, false),
      pool("pool1", 1, w64),                  conv("conv2_1", 2, w64, w128, false),
      conv("conv2_2", 2, w128, w128, false),  pool("pool2", 2, w128),
      conv("conv3_1", 3, w128, w256, false),  conv("conv3_2", 3, w256, w256, false),
      conv("conv3_3", 3, w256, w256, false),  pool("pool3", 3, w256),
      conv("conv4_1", 4, w256, w512, false),
  };
  cfg.decoder_table = {
      // D1 @ 1/8: no normalization before the very first decoder conv.
      conv("dec1_conv1", 1, w512, w256, true),
      norm("dec1_conv2_norm", 1, w256),
      conv("dec1_conv2", 1, w256, w256, true),
      norm("dec1_up_norm", 1, w256),
      upconv("dec1_up", 1, w256, w256),
      // D2 @ 1/4, input = [decoder, skip3]
      norm("dec2_conv1_norm", 2, 2 * w256),
      conv("dec2_conv1", 2, 2 * w256, w256, true),
      norm("dec2_conv2_norm", 2, w256),
      conv("dec2_conv2", 2, w256, w128, true),
      norm("dec2_up_norm", 2, w128),
      upconv("dec2_up", 2, w128, w128),
      // D3 @ 1/2, input = [decoder, skip2]
      norm("dec3_conv1_norm", 3, 2 * w128),
      conv("dec3_conv1", 3, 2 * w128, w128, true),
      norm("dec3_conv2_norm", 3, w128),
      conv("dec3_conv2", 3, w128, w64, true),
      norm("dec3_up_norm", 3, w64),
      upconv("dec3_up", 3, w64, w64),
      // D4 @ full resolution, input = [decoder, skip1]
      norm("dec4_conv1_norm", 4, 2 * w64),
      conv("dec4_conv1", 4, 2 * w64, w64, true),
      norm("dec4_conv2_norm", 4, w64),
      conv("dec4_conv2", 4, w64, 3, true, Activation::kTanh),
  };
  cfg.validate();
  return cfg;
}

std::array<std::int64_t, 3> ModelConfig::skip_channels() const {
  std::array<std::int64_t, 3> out{0, 0, 0};
  std::array<bool, 3> seen{false, false, false};
  for (const auto& l : encoder_table) {
    if (l.kind == LayerKind::kConv && l.block >= 1 && l.block <= 3 && !seen[l.block - 1]) {
      seen[l.block - 1] = true;
      out[l.block - 1] = l.out_channels;
    }
  }
  if (!seen[0] || !seen[1] || !seen[2]) {
    throw InvalidArgument("encoder table lacks a conv in one of blocks 1-3");
  }
  return out;
}

const LayerSpec& ModelConfig::encoder_layer(std::string_view name) const {
  for (const auto& l : encoder_table) {
    if (l.name == name) return l;
  }
  throw InvalidArgument("encoder has no layer '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (encoder_table.empty() || decoder_table.empty()) {
    throw InvalidArgument("model config needs non-empty encoder and decoder tables");
  }
  int pools = 0;
  std::int64_t channels = 3;
  for (const auto& l : encoder_table) {
    if (l.trainable) throw InvalidArgument("encoder layer '" + l.name + "' must be frozen");
    if (l.in_channels <= 0 || l.out_channels <= 0) {
      throw InvalidArgument("layer '" + l.name + "' has non-positive channels");
    }
    if (l.in_channels != channels) {
      throw InvalidArgument("encoder layer '" + l.name + "' expects " +
                            std::to_string(l.in_channels) + " channels, receives " +
                            std::to_string(channels));
    }
    switch (l.kind) {
      case LayerKind::kMaxPool:
        if (l.stride != 2 || l.kernel != 2) {
          throw InvalidArgument("encoder pools must be 2x2 with stride 2");
        }
        ++pools;
        break;
      case LayerKind::kConv:
        if (l.stride != 1 || l.kernel != 2 * l.padding + 1) {
          throw InvalidArgument("encoder conv '" + l.name + "' must preserve spatial size");
        }
        break;
      default:
        throw InvalidArgument("encoder layer '" + l.name + "' must be conv or maxpool");
    }
    channels = l.out_channels;
  }
  if (pools != 3) throw InvalidArgument("encoder must contain exactly three stride-2 maxpools");

  const auto skips = skip_channels();
  int upsamples = 0;
  int block = 1;
  channels = encoder_table.back().out_channels;
  for (std::size_t i = 0; i < decoder_table.size(); ++i) {
    const auto& l = decoder_table[i];
    if (l.in_channels <= 0 || l.out_channels <= 0) {
      throw InvalidArgument("layer '" + l.name + "' has non-positive channels");
    }
    if (l.block != block) {
      if (l.block != block + 1 || l.block > 4) {
        throw InvalidArgument("decoder blocks must run 1..4 in order");
      }
      block = l.block;
      channels += skips[static_cast<std::size_t>(4 - block)];
    }
    if (l.in_channels != channels) {
      throw InvalidArgument("decoder layer '" + l.name + "' expects " +
                            std::to_string(l.in_channels) + " channels, receives " +
                            std::to_string(channels));
    }
    if (l.kind == LayerKind::kTConv) {
      if (l.stride != 2 || l.kernel != 4 || l.padding != 1) {
        throw InvalidArgument("decoder tconv '" + l.name + "' must be k4 s2 p1");
      }
      ++upsamples;
    } else if (l.kind == LayerKind::kMaxPool) {
      throw InvalidArgument("decoder cannot contain pooling");
    } else if (l.kind == LayerKind::kNorm && i == 0) {
      throw InvalidArgument("decoder must not normalize before its first conv");
    }
    channels = l.out_channels;
  }
  if (block != 4) throw InvalidArgument("decoder must have four blocks");
  if (upsamples != 3) {
    throw InvalidArgument("decoder must contain exactly three stride-2 transposed convolutions");
  }
  if (channels != 3) throw InvalidArgument("decoder must end with 3 output channels");
  if (decoder_table.back().activation != Activation::kTanh) {
    throw InvalidArgument("decoder must end with tanh");
  }
}

json ModelConfig::to_json() const {
  json enc = json::array(), dec = json::array();
  for (const auto& l : encoder_table) enc.push_back(layer_to_json(l));
  for (const auto& l : decoder_table) dec.push_back(layer_to_json(l));
  return {{"encoder_table", enc},
          {"decoder_table", dec},
          {"skip_norm", to_string(skip_norm)},
          {"decoder_norm", to_string(decoder_norm)},
          {"scale", to_string(scale)}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig cfg;
  for (const auto& l : j.at("encoder_table")) cfg.encoder_table.push_back(layer_from_json(l));
  for (const auto& l : j.at("decoder_table")) cfg.decoder_table.push_back(layer_from_json(l));
  cfg.skip_norm = parse_norm_kind(j.at("skip_norm").get<std::string>());
  cfg.decoder_norm = parse_norm_kind(j.at("decoder_norm").get<std::string>());
  cfg.scale = parse_scale(j.at("scale").get<std::string>());
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
Layer<T> make_layer(const LayerSpec& spec, NormKind norm_kind) {
  Layer<T> l;
  l.spec = spec;
  const std::int64_t k = spec.kernel;
  switch (spec.kind) {
    case LayerKind::kConv:
      l.weight = Tensor<T>({spec.out_channels, spec.in_channels, k, k});
      l.bias = Tensor<T>({spec.out_channels});
      break;
    case LayerKind::kTConv:
      l.weight = Tensor<T>({spec.in_channels, spec.out_channels, k, k});
      l.bias = Tensor<T>({spec.out_channels});
      break;
    case LayerKind::kNorm:
      l.norm = NormParams<T>::identity_affine(norm_kind, spec.in_channels);
      if (norm_kind == NormKind::kNone) l.norm = NormParams<T>{NormKind::kNone, {}, {}, kNormEps};
      if (norm_kind == NormKind::kBatch) l.stats = RunningStats<T>::zeros(spec.in_channels);
      break;
    case LayerKind::kMaxPool:
      break;
  }
  if (spec.trainable) {
    if (!l.weight.empty()) {
      l.grad_weight = Tensor<T>(l.weight.shape());
      l.grad_bias = Tensor<T>(l.bias.shape());
    }
    if (!l.norm.gamma.empty()) {
      l.grad_gamma = Tensor<T>(l.norm.gamma.shape());
      l.grad_beta = Tensor<T>(l.norm.beta_shift.shape());
    }
  }
  return l;
}

template <typename T>
void he_init(Layer<T>& l, std::uint64_t seed, std::uint64_t index) {
  if (l.weight.empty()) return;
  const auto& s = l.spec;
  double fan_in = static_cast<double>(s.in_channels) * s.kernel * s.kernel;
  if (s.kind == LayerKind::kTConv) fan_in /= static_cast<double>(s.stride) * s.stride;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : l.weight.values()) v = static_cast<T>(dist(rng));
  l.bias.fill(T{0});
}

template <typename T>
void apply_activation(Tensor<T>& y, Activation a) {
  if (a == Activation::kRelu) nn::relu_inplace(y);
  if (a == Activation::kTanh) nn::tanh_inplace(y);
}

template <typename T>
void activation_backward(const Tensor<T>& activated, Tensor<T>& grad, Activation a) {
  if (a == Activation::kRelu) nn::relu_backward_inplace(activated, grad);
  if (a == Activation::kTanh) nn::tanh_backward_inplace(activated, grad);
}

template <typename T>
Tensor<T> run_layer(Layer<T>& l, const Tensor<T>& x, NormMode mode, NormCache<T>* cache) {
  Tensor<T> y;
  switch (l.spec.kind) {
    case LayerKind::kConv:
      y = nn::conv2d(x, l.weight, l.bias, l.spec.geometry());
      break;
    case LayerKind::kTConv:
      y = nn::conv_transpose2d(x, l.weight, l.bias, l.spec.geometry());
      break;
    case LayerKind::kNorm:
      return apply_norm(x, l.norm, mode, l.stats, cache);
    case LayerKind::kMaxPool:
      return nn::max_pool2x2(x, static_cast<std::vector<std::uint32_t>*>(nullptr));
  }
  apply_activation(y, l.spec.activation);
  return y;
}

void copy_checked(const TensorArchive& archive, const std::string& name, auto& dst) {
  const auto& src = archive.at(name);
  if (src.shape() != dst.shape()) {
    throw ShapeError("tensor '" + name + "' has shape " + shape_string(src.shape()) +
                     ", expected " + shape_string(dst.shape()));
  }
  std::copy(src.values().begin(), src.values().end(), dst.values().begin());
}

constexpr const char* kEncoderPrefix = "encoder.";
constexpr const char* kDecoderPrefix = "decoder.";
constexpr const char* kSkipPrefix = "skip.";

}  // namespace

template <typename T>
Model<T>::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (const auto& spec : cfg_.encoder_table) encoder_.push_back(make_layer<T>(spec, NormKind::kNone));
  for (const auto& spec : cfg_.decoder_table) {
    decoder_.push_back(make_layer<T>(spec, cfg_.decoder_norm));
  }
  const auto skips = cfg_.skip_channels();
  for (std::size_t i = 0; i < 3; ++i) {
    skip_[i] = make_layer<T>(norm("skip" + std::to_string(i + 1) + "_norm",
                                  static_cast<int>(i + 1), skips[i]),
                             cfg_.skip_norm);
  }
}

template <typename T>
Tensor<T> Model<T>::encode(const Tensor<T>& x, std::string_view stop_after,
                           EncoderTrace<T>* trace) const {
  Tensor<T> h = x;
  for (const auto& l : encoder_) {
    if (trace) trace->inputs.push_back(h);
    if (l.spec.kind == LayerKind::kMaxPool) {
      std::vector<std::uint32_t> argmax;
      h = nn::max_pool2x2(h, trace ? &argmax : nullptr);
      if (trace) trace->argmax.push_back(std::move(argmax));
    } else {
      h = nn::conv2d(h, l.weight, l.bias, l.spec.geometry());
      apply_activation(h, l.spec.activation);
      if (trace) trace->argmax.emplace_back();
    }
    if (trace) trace->outputs.push_back(h);
    if (l.spec.name == stop_after) return h;
  }
  if (!stop_after.empty()) {
    throw InvalidArgument("encoder has no layer '" + std::string(stop_after) + "'");
  }
  return h;
}

template <typename T>
Tensor<T> Model<T>::encoder_backward(const EncoderTrace<T>& trace, const Tensor<T>& grad_out) const {
  Tensor<T> g = grad_out;
  for (std::size_t i = trace.inputs.size(); i-- > 0;) {
    const auto& l = encoder_[i];
    if (l.spec.kind == LayerKind::kMaxPool) {
      g = nn::max_pool2x2_backward(trace.inputs[i].shape(), g, trace.argmax[i]);
    } else {
      activation_backward(trace.outputs[i], g, l.spec.activation);
      Tensor<T> gi;
      nn::conv2d_backward(trace.inputs[i], l.weight, g, l.spec.geometry(), &gi,
                          static_cast<Tensor<T>*>(nullptr), static_cast<Tensor<T>*>(nullptr));
      g = std::move(gi);
    }
  }
  return g;
}

template <typename T>
Tensor<T> Model<T>::bottleneck(const Tensor<T>& x) const {
  return encode(x, "");
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& x, ForwardOptions opts, ForwardTrace<T>* trace) {
  if (x.rank() != 4 || x.channels() != 3) {
    throw ShapeError("forward expects N×3×H×W input, got " + shape_string(x.shape()));
  }
  if (x.height() % 8 != 0 || x.width() % 8 != 0) {
    throw ShapeError("forward needs H and W divisible by 8 (pad first), got " +
                     shape_string(x.shape()));
  }
  // Encoder, collecting block 1–3 first-conv outputs as skips.
  std::array<Tensor<T>, 3> skips;
  std::array<bool, 3> taken{false, false, false};
  Tensor<T> h = x;
  for (auto& l : encoder_) {
    h = run_layer(l, h, opts.mode, static_cast<NormCache<T>*>(nullptr));
    const int b = l.spec.block;
    if (l.spec.kind == LayerKind::kConv && b <= 3 && !taken[b - 1]) {
      taken[b - 1] = true;
      skips[b - 1] = h;
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    NormCache<T>* cache = trace ? &trace->skip_cache[i] : nullptr;
    skips[i] = apply_norm(skips[i], skip_[i].norm, opts.mode, skip_[i].stats, cache);
    if (opts.zero_skips) skips[i].fill(T{0});
  }

  if (trace) trace->steps.assign(decoder_.size(), DecoderStep<T>{});
  int block = 1;
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    auto& l = decoder_[i];
    DecoderStep<T>* step = trace ? &trace->steps[i] : nullptr;
    if (l.spec.block != block) {
      block = l.spec.block;
      const int skip_index = 4 - block;  // block 2 ← skip 3, ..., block 4 ← skip 1
      if (step) {
        step->concat_before = true;
        step->decoder_channels = h.channels();
        step->skip_index = skip_index;
      }
      h = nn::concat_channels(h, skips[static_cast<std::size_t>(skip_index)]);
    }
    if (step) step->input = h;
    h = run_layer(l, h, opts.mode, step ? &step->norm_cache : nullptr);
    if (step && l.spec.kind != LayerKind::kNorm) step->output = h;
  }
  return h;
}

template <typename T>
void Model<T>::backward(ForwardTrace<T>& trace, const Tensor<T>& grad_output) {
  if (trace.steps.size() != decoder_.size()) throw InvalidArgument("backward: trace mismatch");
  Tensor<T> g = grad_output;
  for (std::size_t i = decoder_.size(); i-- > 0;) {
    auto& l = decoder_[i];
    auto& step = trace.steps[i];
    switch (l.spec.kind) {
      case LayerKind::kNorm:
        g = norm_backward(g, l.norm, step.norm_cache, l.grad_gamma.empty() ? nullptr : &l.grad_gamma,
                          l.grad_beta.empty() ? nullptr : &l.grad_beta);
        break;
      case LayerKind::kConv:
      case LayerKind::kTConv: {
        activation_backward(step.output, g, l.spec.activation);
        Tensor<T> gi;
        Tensor<T>* gi_ptr = i > 0 ? &gi : nullptr;
        if (l.spec.kind == LayerKind::kConv) {
          nn::conv2d_backward(step.input, l.weight, g, l.spec.geometry(), gi_ptr, &l.grad_weight,
                              &l.grad_bias);
        } else {
          nn::conv_transpose2d_backward(step.input, l.weight, g, l.spec.geometry(), gi_ptr,
                                        &l.grad_weight, &l.grad_bias);
        }
        g = std::move(gi);
        break;
      }
      case LayerKind::kMaxPool:
        throw InvalidArgument("decoder cannot contain pooling");
    }
    if (step.concat_before) {
      Tensor<T> g_dec, g_skip;
      nn::split_channels(g, step.decoder_channels, g_dec, g_skip);
      auto& s = skip_[static_cast<std::size_t>(step.skip_index)];
      norm_backward(g_skip, s.norm, trace.skip_cache[static_cast<std::size_t>(step.skip_index)],
                    s.grad_gamma.empty() ? nullptr : &s.grad_gamma,
                    s.grad_beta.empty() ? nullptr : &s.grad_beta);
      g = std::move(g_dec);
    }
    // Free activations as soon as they are consumed.
    step.input = Tensor<T>();
    step.output = Tensor<T>();
  }
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : parameters()) {
    if (p.grad) p.grad->fill(T{0});
  }
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::parameters() {
  std::vector<ParamRef<T>> out;
  auto add_layer = [&](Layer<T>& l, const std::string& prefix) {
    const std::string base = prefix + l.spec.name;
    const bool train = l.spec.trainable;
    if (!l.weight.empty()) {
      out.push_back({base + ".weight", &l.weight, train ? &l.grad_weight : nullptr, train, false});
      out.push_back({base + ".bias", &l.bias, train ? &l.grad_bias : nullptr, train, false});
    }
    if (l.spec.kind == LayerKind::kNorm && l.norm.kind != NormKind::kNone) {
      out.push_back({base + ".gamma", &l.norm.gamma, &l.grad_gamma, true, false});
      out.push_back({base + ".beta", &l.norm.beta_shift, &l.grad_beta, true, false});
      if (l.norm.kind == NormKind::kBatch) {
        out.push_back({base + ".running_mean", &l.stats.mean, nullptr, false, true});
        out.push_back({base + ".running_var", &l.stats.var, nullptr, false, true});
      }
    }
  };
  for (auto& l : encoder_) add_layer(l, kEncoderPrefix);
  for (auto& l : decoder_) add_layer(l, kDecoderPrefix);
  for (auto& l : skip_) add_layer(l, kSkipPrefix);
  return out;
}

template <typename T>
std::string Model<T>::encoder_digest() const {
  std::vector<unsigned char> bytes;
  for (const auto& l : encoder_) {
    for (const auto* t : {&l.weight, &l.bias}) {
      const auto* p = reinterpret_cast<const unsigned char*>(t->data());
      bytes.insert(bytes.end(), p, p + t->size() * sizeof(T));
    }
  }
  return sha256_hex(bytes);
}

template <typename T>
TensorArchive Model<T>::to_archive() const {
  TensorArchive archive;
  auto* self = const_cast<Model<T>*>(this);
  for (const auto& p : self->parameters()) archive.put_converted(p.name, *p.value);
  auto put_counts = [&](const Layer<T>& l, const char* prefix) {
    if (l.spec.kind == LayerKind::kNorm && l.norm.kind == NormKind::kBatch) {
      archive.put(std::string(prefix) + l.spec.name + ".num_batches",
                  Tensor<float>({1}, static_cast<float>(l.stats.updates)));
    }
  };
  for (const auto& l : decoder_) put_counts(l, kDecoderPrefix);
  for (const auto& l : skip_) put_counts(l, kSkipPrefix);
  archive.metadata()["model_config"] = cfg_.to_json();
  return archive;
}

template <typename T>
Model<T> build_model(const ModelConfig& cfg, const TensorArchive* encoder_weights,
                     std::uint64_t seed) {
  Model<T> model(cfg);
  std::uint64_t index = 0;
  for (auto& l : model.encoder_layers()) {
    if (l.weight.empty()) {
      ++index;
      continue;
    }
    if (encoder_weights) {
      copy_checked(*encoder_weights, kEncoderPrefix + l.spec.name + ".weight", l.weight);
      copy_checked(*encoder_weights, kEncoderPrefix + l.spec.name + ".bias", l.bias);
    } else {
      he_init(l, seed, index);
    }
    ++index;
  }
  index = 1000;
  for (auto& l : model.decoder_layers()) he_init(l, seed, index++);
  return model;
}

template <typename T>
Model<T> load_model(const TensorArchive& checkpoint) {
  if (!checkpoint.metadata().contains("model_config")) {
    throw InvalidArgument("checkpoint metadata lacks model_config");
  }
  Model<T> model(ModelConfig::from_json(checkpoint.metadata().at("model_config")));
  for (auto& p : model.parameters()) copy_checked(checkpoint, p.name, *p.value);
  auto restore_counts = [&](Layer<T>& l, const char* prefix) {
    if (l.spec.kind == LayerKind::kNorm && l.norm.kind == NormKind::kBatch) {
      const auto name = std::string(prefix) + l.spec.name + ".num_batches";
      if (checkpoint.contains(name)) {
        l.stats.updates = static_cast<std::int64_t>(checkpoint.at(name)[0]);
      }
    }
  };
  for (auto& l : model.decoder_layers()) restore_counts(l, kDecoderPrefix);
  for (auto& l : model.skip_layers()) restore_counts(l, kSkipPrefix);
  return model;
}

Image dehaze_image(Model<float>& model, const Image& hazy) {
  if (hazy.pixels.rank() != 3 || hazy.channels() != 3) {
    throw ShapeError("dehaze_image expects an RGB image");
  }
  if (hazy.height() < 16 || hazy.width() < 16) {
    throw ShapeError("dehaze_image needs H, W >= 16");
  }
  const auto pad_h = (8 - hazy.height() % 8) % 8;
  const auto pad_w = (8 - hazy.width() % 8) % 8;
  const Image padded = reflect_pad(hazy, pad_h, pad_w);
  const auto input = stack_images({Image(to_model_space(padded).values)});
  const auto output = model.forward(input, ForwardOptions{NormMode::kEval, false});
  const Image restored =
      from_model_space(ModelSpaceTensor{batch_item(output, 0).pixels, ModelSpace::kTanh});
  return crop(restored, 0, 0, hazy.height(), hazy.width());
}

template class Model<float>;
template class Model<double>;
template Model<float> build_model(const ModelConfig&, const TensorArchive*, std::uint64_t);
template Model<double> build_model(const ModelConfig&, const TensorArchive*, std::uint64_t);
template Model<float> load_model(const TensorArchive&);
template Model<double> load_model(const TensorArchive&);

}  // namespace dehaze
