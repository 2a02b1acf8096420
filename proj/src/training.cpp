#include "dehaze/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace dehaze {

namespace fs = std::filesystem;
using nlohmann::json;

TrainConfig TrainConfig::defaults(Scale scale) {
  TrainConfig cfg;
  cfg.scale = scale;
  cfg.crop.crop_size = scale == Scale::kFull ? 224 : 64;
  return cfg;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
  if (!(lr0 > 0.0)) throw InvalidArgument("lr0 must be positive");
  if (epochs < 1) throw InvalidArgument("epochs must be at least 1");
  if (decay_start_epoch <= 0 || decay_start_epoch > epochs) {
    throw InvalidArgument("decay_start_epoch must satisfy 0 < decay_start_epoch <= epochs");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be non-negative");
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be non-negative");
  if (crop.crop_size < 0 || crop.crop_size % 8 != 0) {
    throw InvalidArgument("crop_size must be a non-negative multiple of 8");
  }
  if (val_every < 1) throw InvalidArgument("val_every must be at least 1");
}

json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"lr0", lr0},
          {"epochs", epochs},
          {"decay_start_epoch", decay_start_epoch},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"lambda", lambda},
          {"seed", seed},
          {"scale", to_string(scale)},
          {"skip_norm", to_string(skip_norm)},
          {"decoder_norm", to_string(decoder_norm)},
          {"crop_size", crop.crop_size},
          {"random_crop", crop.random},
          {"hflip", crop.hflip},
          {"drop_last", drop_last},
          {"val_every", val_every},
          {"cache_limit", cache_limit}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  const Scale scale = j.contains("scale") ? parse_scale(j.at("scale").get<std::string>())
                                          : Scale::kFull;
  TrainConfig cfg = defaults(scale);
  const std::set<std::string> known = {"batch_size", "lr0", "epochs", "decay_start_epoch",
                                       "momentum", "weight_decay", "lambda", "seed", "scale",
                                       "skip_norm", "decoder_norm", "crop_size", "random_crop",
                                       "hflip", "drop_last", "val_every", "cache_limit"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw InvalidArgument("unknown training config key '" + key + "'");
  }
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
  };
  get("batch_size", cfg.batch_size);
  get("lr0", cfg.lr0);
  get("epochs", cfg.epochs);
  get("decay_start_epoch", cfg.decay_start_epoch);
  get("momentum", cfg.momentum);
  get("weight_decay", cfg.weight_decay);
  get("lambda", cfg.lambda);
  get("seed", cfg.seed);
  if (j.contains("skip_norm")) cfg.skip_norm = parse_norm_kind(j.at("skip_norm").get<std::string>());
  if (j.contains("decoder_norm")) {
    cfg.decoder_norm = parse_norm_kind(j.at("decoder_norm").get<std::string>());
  }
  get("crop_size", cfg.crop.crop_size);
  get("random_crop", cfg.crop.random);
  get("hflip", cfg.crop.hflip);
  get("drop_last", cfg.drop_last);
  get("val_every", cfg.val_every);
  get("cache_limit", cfg.cache_limit);
  cfg.validate();
  return cfg;
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw InvalidArgument("epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(cfg.epochs) + ")");
  }
  if (epoch <= cfg.decay_start_epoch) return cfg.lr0;
  return cfg.lr0 * static_cast<double>(cfg.epochs - epoch) /
         static_cast<double>(cfg.epochs - cfg.decay_start_epoch);
}

template <typename T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr,
                const SgdOptions& opts) {
  if (param.size() != grad.size() || param.size() != velocity.size()) {
    throw ShapeError("sgd_update: parameter, gradient and momentum sizes differ");
  }
  for (T g : grad) {
    if (!std::isfinite(static_cast<double>(g))) {
      throw NonFiniteError("non-finite gradient", -1, -1);
    }
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double p = param[i];
    const double v = opts.momentum * velocity[i] + (grad[i] + opts.weight_decay * p);
    velocity[i] = static_cast<T>(v);
    param[i] = static_cast<T>(p - lr * v);
  }
}

template <typename T>
void sgd_step(std::vector<ParamRef<T>>& params, SgdState<T>& state, double lr,
              const SgdOptions& opts) {
  for (auto& p : params) {
    if (!p.trainable || !p.grad) continue;
    auto [it, inserted] = state.velocity.try_emplace(p.name);
    if (inserted) it->second = Tensor<T>(p.value->shape());
    try {
      sgd_update<T>(p.value->values(), std::span<const T>(p.grad->values()), it->second.values(), lr,
                    opts);
    } catch (const NonFiniteError&) {
      throw NonFiniteError("non-finite gradient for parameter '" + p.name + "'", -1, -1);
    }
  }
}

template void sgd_update<float>(std::span<float>, std::span<const float>, std::span<float>, double,
                                const SgdOptions&);
template void sgd_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                 double, const SgdOptions&);
template void sgd_step<float>(std::vector<ParamRef<float>>&, SgdState<float>&, double,
                              const SgdOptions&);
template void sgd_step<double>(std::vector<ParamRef<double>>&, SgdState<double>&, double,
                               const SgdOptions&);

namespace {

json psnr_to_json(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

json metric_to_json(const MetricResult& m) {
  return {{"psnr", psnr_to_json(m.psnr_db)}, {"ssim", m.ssim}};
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace

json TrainHistory::to_json() const {
  json records = json::array();
  for (const auto& e : epochs) {
    json r = {{"epoch", e.epoch},
              {"steps", e.steps},
              {"mean_loss", e.mean_loss},
              {"mean_reconstruction", e.mean_reconstruction},
              {"mean_perceptual", e.mean_perceptual},
              {"lr", e.lr},
              {"wall_seconds", e.wall_seconds}};
    if (e.val_psnr) r["val_psnr"] = psnr_to_json(*e.val_psnr);
    records.push_back(std::move(r));
  }
  json j = {{"epochs", std::move(records)},
            {"last_checkpoint", last_checkpoint.string()},
            {"best_checkpoint", best_checkpoint.string()}};
  if (best_val_psnr) j["best_val_psnr"] = psnr_to_json(*best_val_psnr);
  return j;
}

void save_checkpoint(const Model<float>& model, const fs::path& path, const json& metadata) {
  TensorArchive archive = model.to_archive();
  archive.metadata()["format"] = "dehaze-checkpoint";
  archive.metadata()["training"] = metadata;
  archive.save(path);
}

Model<float> load_checkpoint(const fs::path& path) {
  return load_model<float>(TensorArchive::load(path));
}

TrainHistory train(Model<float>& model, const PairedDataset& train_set, const TrainConfig& cfg,
                   const PairedDataset* val_set, const TrainOutputs& outputs) {
  cfg.validate();
  if (train_set.empty()) throw InvalidArgument("training dataset is empty");
  using Clock = std::chrono::steady_clock;

  PairLoader loader(train_set, train_set.size() <= cfg.cache_limit);
  EncoderFeatures<float> features(model, std::string(kPerceptualTap));
  const LossConfig loss_cfg{cfg.lambda, std::string(kPerceptualTap)};
  const SgdOptions sgd{cfg.momentum, cfg.weight_decay};
  SgdState<float> state;
  auto params = model.parameters();
  TrainHistory history;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = Clock::now();
    const double lr = lr_at(epoch, cfg);
    const auto batches = epoch_batches(train_set.size(), static_cast<std::size_t>(cfg.batch_size),
                                       cfg.seed, epoch, cfg.drop_last);
    if (batches.empty()) throw InvalidArgument("drop_last leaves no complete batch");
    std::seed_seq crop_seq{static_cast<std::uint32_t>(cfg.seed),
                           static_cast<std::uint32_t>(cfg.seed >> 32),
                           static_cast<std::uint32_t>(epoch), 0xC409u};
    std::mt19937_64 crop_rng(crop_seq);

    EpochRecord record;
    record.epoch = epoch;
    record.lr = lr;
    for (std::size_t step = 0; step < batches.size(); ++step) {
      std::vector<Image> inputs, targets;
      for (std::size_t idx : batches[step]) {
        ImagePair sample = prepare_sample(loader.get(idx), cfg.crop, crop_rng);
        inputs.emplace_back(to_model_space(sample.hazy).values);
        targets.push_back(std::move(sample.clear));
      }
      const Tensor<float> x = stack_images(inputs);
      const Tensor<float> target = stack_images(targets);

      ForwardTrace<float> trace;
      Tensor<float> pred = model.forward(x, ForwardOptions{NormMode::kTrain, false}, &trace);
      for (float& v : pred.values()) v = (v + 1.0f) * 0.5f;
      auto loss = total_loss(pred, target, cfg.lambda > 0.0 ? &features : nullptr, loss_cfg);
      if (!std::isfinite(loss.total)) {
        throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step),
                             epoch, static_cast<int>(step));
      }
      for (float& g : loss.grad_pred.values()) g *= 0.5f;  // d pred / d tanh output

      model.zero_grad();
      model.backward(trace, loss.grad_pred);
      try {
        sgd_step(params, state, lr, sgd);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(step),
                             epoch, static_cast<int>(step));
      }
      record.mean_loss += loss.total;
      record.mean_reconstruction += loss.reconstruction;
      record.mean_perceptual += loss.perceptual;
      ++record.steps;
    }
    record.mean_loss /= record.steps;
    record.mean_reconstruction /= record.steps;
    record.mean_perceptual /= record.steps;

    if (val_set && (epoch + 1) % cfg.val_every == 0) {
      ModelDehazer dehazer(model);
      record.val_psnr = evaluate(dehazer, *val_set).mean_dehazed.psnr_db;
    }
    record.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();

    if (!outputs.out_dir.empty()) {
      const json meta = {{"epoch", epoch}, {"train_config", cfg.to_json()}};
      history.last_checkpoint = outputs.out_dir / "last.ckpt";
      save_checkpoint(model, history.last_checkpoint, meta);
      if (record.val_psnr && (!history.best_val_psnr || *record.val_psnr > *history.best_val_psnr)) {
        history.best_val_psnr = record.val_psnr;
        history.best_checkpoint = outputs.out_dir / "best.ckpt";
        save_checkpoint(model, history.best_checkpoint, meta);
      }
    } else if (record.val_psnr &&
               (!history.best_val_psnr || *record.val_psnr > *history.best_val_psnr)) {
      history.best_val_psnr = record.val_psnr;
    }
    history.epochs.push_back(record);
    if (!outputs.out_dir.empty()) write_json(outputs.out_dir / "history.json", history.to_json());
    if (outputs.on_epoch) outputs.on_epoch(record);
  }
  return history;
}

json EvalReport::to_json() const {
  json per_image = json::array();
  for (const auto& m : images) {
    per_image.push_back({{"name", m.name},
                         {"dehazed", metric_to_json(m.dehazed)},
                         {"baseline", metric_to_json(m.baseline)}});
  }
  return {{"images", std::move(per_image)},
          {"mean_dehazed", metric_to_json(mean_dehazed)},
          {"mean_baseline", metric_to_json(mean_baseline)},
          {"provenance", provenance}};
}

EvalReport evaluate(Dehazer& dehazer, const PairedDataset& dataset) {
  if (dataset.empty()) throw InvalidArgument("evaluation dataset is empty");
  EvalReport report;
  PairLoader loader(dataset, false);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const ImagePair& pair = loader.get(i);
    const Image out = dehazer.dehaze(pair.hazy);
    ImageMetrics m{dataset.pairs[i].name, compute_metrics(out, pair.clear),
                   compute_metrics(pair.hazy, pair.clear)};
    report.mean_dehazed.psnr_db += m.dehazed.psnr_db;
    report.mean_dehazed.ssim += m.dehazed.ssim;
    report.mean_baseline.psnr_db += m.baseline.psnr_db;
    report.mean_baseline.ssim += m.baseline.ssim;
    report.images.push_back(std::move(m));
  }
  const double n = static_cast<double>(dataset.size());
  for (auto* m : {&report.mean_dehazed, &report.mean_baseline}) {
    m->psnr_db /= n;
    m->ssim /= n;
  }
  report.provenance = {{"dataset_root", dataset.root.string()}, {"pairs", dataset.size()}};
  return report;
}

std::string AblationCell::label() const {
  return std::string(to_string(skip_norm)) + "-" + std::string(to_string(decoder_norm)) + "-" +
         (perceptual ? "on" : "off");
}

std::vector<AblationCell> standard_ablation_grid() {
  std::vector<AblationCell> grid;
  for (NormKind dec : {NormKind::kNone, NormKind::kBatch, NormKind::kInstance}) {
    for (NormKind skip : {NormKind::kNone, NormKind::kBatch, NormKind::kInstance}) {
      grid.push_back({skip, dec, false});
    }
  }
  grid.push_back({NormKind::kInstance, NormKind::kInstance, true});
  return grid;
}

AblationCell parse_ablation_cell(std::string_view label) {
  std::vector<std::string> parts;
  std::string current;
  for (char ch : label) {
    if (ch == '-' || ch == ',' || ch == ':') {
      parts.push_back(current);
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  parts.push_back(current);
  if (parts.size() < 2 || parts.size() > 3) {
    throw InvalidArgument("ablation cell '" + std::string(label) + "' should look like IN-IN-off");
  }
  AblationCell cell{parse_norm_kind(parts[0]), parse_norm_kind(parts[1]), false};
  if (parts.size() == 3) {
    const auto& p = parts[2];
    if (p == "on" || p == "percep" || p == "perceptual") {
      cell.perceptual = true;
    } else if (p != "off") {
      throw InvalidArgument("ablation perceptual flag must be on|off, got '" + p + "'");
    }
  }
  return cell;
}

json AblationReport::to_json() const {
  json cells = json::array();
  for (const auto& e : entries) {
    cells.push_back({{"label", e.cell.label()},
                     {"skip", to_string(e.cell.skip_norm)},
                     {"decoder", to_string(e.cell.decoder_norm)},
                     {"perceptual", e.cell.perceptual},
                     {"psnr", psnr_to_json(e.metrics.psnr_db)},
                     {"ssim", e.metrics.ssim},
                     {"final_loss", e.final_loss}});
  }
  return {{"cells", std::move(cells)}, {"baseline", metric_to_json(baseline)}};
}

std::string AblationReport::render_table() const {
  std::ostringstream os;
  auto row = [&](const std::string& head, auto&& cell_text) {
    os << std::left << std::setw(6) << head;
    for (const auto& e : entries) os << " | " << std::setw(7) << cell_text(e);
    os << " |\n";
  };
  row("Skip", [](const AblationEntry& e) { return std::string(to_string(e.cell.skip_norm)); });
  row("Dec", [](const AblationEntry& e) { return std::string(to_string(e.cell.decoder_norm)); });
  row("Percep", [](const AblationEntry& e) { return std::string(e.cell.perceptual ? "on" : "off"); });
  row("PSNR", [](const AblationEntry& e) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << e.metrics.psnr_db;
    return s.str();
  });
  row("SSIM", [](const AblationEntry& e) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << e.metrics.ssim;
    return s.str();
  });
  os << "hazy-input baseline: PSNR " << std::fixed << std::setprecision(2) << baseline.psnr_db
     << " dB, SSIM " << std::setprecision(4) << baseline.ssim << '\n';
  return os.str();
}

AblationReport run_ablation(const std::vector<AblationCell>& grid, const TrainConfig& base_cfg,
                            const PairedDataset& train_set, const PairedDataset& heldout,
                            const AblationOptions& options) {
  if (grid.empty()) throw InvalidArgument("ablation grid is empty");
  base_cfg.validate();
  AblationReport report;
  IdentityDehazer identity;
  report.baseline = evaluate(identity, heldout).mean_baseline;

  for (const auto& cell : grid) {
    const std::string label = cell.label();
    try {
      TrainConfig cfg = base_cfg;
      cfg.skip_norm = cell.skip_norm;
      cfg.decoder_norm = cell.decoder_norm;
      cfg.lambda = cell.perceptual ? (base_cfg.lambda > 0.0 ? base_cfg.lambda : 1.0) : 0.0;
      Model<float> model = build_model<float>(
          ModelConfig::standard(cfg.scale, cfg.skip_norm, cfg.decoder_norm),
          options.encoder_weights, cfg.seed);
      TrainOutputs outputs;
      if (!options.out_dir.empty()) outputs.out_dir = options.out_dir / label;
      const TrainHistory history = train(model, train_set, cfg, nullptr, outputs);
      ModelDehazer dehazer(model);
      AblationEntry entry{cell, evaluate(dehazer, heldout).mean_dehazed,
                          history.epochs.back().mean_loss};
      if (options.on_cell) options.on_cell(entry);
      report.entries.push_back(entry);
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("ablation cell " + label + ": " + e.what(), e.epoch(), e.step());
    } catch (const std::exception& e) {
      throw Error("ablation cell " + label + " failed: " + e.what());
    }
  }
  if (!options.out_dir.empty()) {
    write_json(options.out_dir / "ablation.json", report.to_json());
    std::ofstream(options.out_dir / "ablation.txt") << report.render_table();
  }
  return report;
}

}  // namespace dehaze
