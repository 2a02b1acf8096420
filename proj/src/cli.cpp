#include "dehaze/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>

#include "dehaze/data.hpp"
#include "dehaze/training.hpp"
#include "dehaze/weights.hpp"

namespace dehaze::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Kind { kString, kInt, kUInt, kDouble, kBool, kDoubleList, kStringList };

struct OptSpec {
  std::string key;
  Kind kind;
  json def;  // null: unset unless given
  std::string help;
  bool required = false;
};

using Runner = std::function<void(json&, std::ostream&)>;

struct CommandSpec {
  std::string name;
  std::string help;
  std::vector<OptSpec> options;
  Runner run;
};

std::string flag_name(const std::string& key) {
  std::string s = key;
  std::replace(s.begin(), s.end(), '_', '-');
  return "--" + s;
}

bool type_ok(Kind kind, const json& v) {
  switch (kind) {
    case Kind::kString:
      return v.is_string();
    case Kind::kInt:
      return v.is_number_integer();
    case Kind::kUInt:
      return v.is_number_unsigned();
    case Kind::kDouble:
      return v.is_number();
    case Kind::kBool:
      return v.is_boolean();
    case Kind::kDoubleList:
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); });
    case Kind::kStringList:
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); });
  }
  return false;
}

json parse_scalar(Kind kind, const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    switch (kind) {
      case Kind::kInt: {
        const long long v = std::stoll(text, &used);
        if (used == text.size()) return v;
        break;
      }
      case Kind::kUInt: {
        if (!text.empty() && text[0] == '-') break;
        const unsigned long long v = std::stoull(text, &used);
        if (used == text.size()) return v;
        break;
      }
      case Kind::kDouble:
      case Kind::kDoubleList: {
        const double v = std::stod(text, &used);
        if (used == text.size()) return v;
        break;
      }
      default:
        return text;
    }
  } catch (const std::logic_error&) {
  }
  throw InvalidArgument("invalid value '" + text + "' for " + flag_name(key));
}

// Storage for parsed flags; map nodes keep addresses stable for CLI11.
struct Bound {
  std::map<std::string, std::string> scalars;
  std::map<std::string, std::vector<std::string>> lists;
  std::map<std::string, bool> flags;
  std::map<std::string, CLI::Option*> options;
  std::string config_path;
  CLI::Option* config_option = nullptr;
};

void bind(CLI::App& sub, const CommandSpec& spec, Bound& bound) {
  for (const auto& opt : spec.options) {
    const std::string name = flag_name(opt.key);
    std::string help = opt.help;
    if (!opt.def.is_null()) help += " [default: " + opt.def.dump() + "]";
    if (opt.required) help += " [required]";
    CLI::Option* o = nullptr;
    switch (opt.kind) {
      case Kind::kBool:
        o = sub.add_flag(name + ",!--no-" + name.substr(2), bound.flags[opt.key], help);
        break;
      case Kind::kDoubleList:
      case Kind::kStringList:
        o = sub.add_option(name, bound.lists[opt.key], help)->delimiter(',');
        break;
      default:
        o = sub.add_option(name, bound.scalars[opt.key], help);
        break;
    }
    bound.options[opt.key] = o;
  }
  bound.config_option =
      sub.add_option("--config", bound.config_path,
                     "JSON file of option values; explicit flags take precedence")
          ->check(CLI::ExistingFile);
}

// defaults < config file < explicit flags
json resolve(const CommandSpec& spec, const Bound& bound) {
  json cfg = json::object();
  for (const auto& opt : spec.options) cfg[opt.key] = opt.def;

  if (bound.config_option->count() > 0) {
    std::ifstream in(bound.config_path);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw InvalidArgument("cannot parse " + bound.config_path + ": " + e.what());
    }
    if (!file.is_object()) throw InvalidArgument("config file must hold a JSON object");
    for (const auto& [key, value] : file.items()) {
      if (key == "command") {
        if (value != spec.name) {
          throw InvalidArgument("config is for command " + value.dump() + ", not " + spec.name);
        }
        continue;
      }
      auto it = std::find_if(spec.options.begin(), spec.options.end(),
                             [&](const OptSpec& o) { return o.key == key; });
      if (it == spec.options.end()) {
        throw InvalidArgument("unknown key '" + key + "' in config for " + spec.name);
      }
      if (!value.is_null() && !type_ok(it->kind, value)) {
        throw InvalidArgument("config key '" + key + "' has the wrong type");
      }
      cfg[key] = value;
    }
  }

  for (const auto& opt : spec.options) {
    if (bound.options.at(opt.key)->count() == 0) continue;
    switch (opt.kind) {
      case Kind::kBool:
        cfg[opt.key] = bound.flags.at(opt.key);
        break;
      case Kind::kDoubleList: {
        json arr = json::array();
        for (const auto& s : bound.lists.at(opt.key)) arr.push_back(parse_scalar(opt.kind, opt.key, s));
        cfg[opt.key] = arr;
        break;
      }
      case Kind::kStringList:
        cfg[opt.key] = bound.lists.at(opt.key);
        break;
      default:
        cfg[opt.key] = parse_scalar(opt.kind, opt.key, bound.scalars.at(opt.key));
        break;
    }
  }
  for (const auto& opt : spec.options) {
    if (opt.required && cfg[opt.key].is_null()) {
      throw InvalidArgument(spec.name + " requires " + flag_name(opt.key));
    }
  }
  return cfg;
}

void write_json_file(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}

void write_resolved(const std::string& command, const json& cfg) {
  json j = cfg;
  j["command"] = command;
  write_json_file(fs::path(cfg.at("out").get<std::string>()) / "resolved_config.json", j);
}

std::optional<std::string> opt_string(const json& cfg, const char* key) {
  if (cfg.at(key).is_null()) return std::nullopt;
  return cfg.at(key).get<std::string>();
}

std::pair<double, double> range_of(const json& cfg, const char* key) {
  const auto& v = cfg.at(key);
  if (v.size() != 2) throw InvalidArgument(flag_name(key) + " takes two values lo,hi");
  return {v[0].get<double>(), v[1].get<double>()};
}

HazeRanges ranges_from(const json& cfg) {
  HazeRanges r;
  std::tie(r.airlight_lo, r.airlight_hi) = range_of(cfg, "airlight_range");
  std::tie(r.beta_lo, r.beta_hi) = range_of(cfg, "beta_range");
  r.validate();
  return r;
}

const std::vector<std::string> kTrainKeys = {
    "batch_size",  "lr0",          "epochs",    "decay_start_epoch", "momentum", "weight_decay",
    "lambda",      "seed",         "scale",     "skip_norm",         "decoder_norm", "crop_size",
    "random_crop", "hflip",        "drop_last", "val_every",         "cache_limit"};

std::vector<OptSpec> train_options() {
  const TrainConfig d;
  return {
      {"scale", Kind::kString, "full", "model scale: full or tiny"},
      {"seed", Kind::kUInt, 0, "seed for initialization, shuffling and crops"},
      {"batch_size", Kind::kInt, d.batch_size, "minibatch size"},
      {"lr0", Kind::kDouble, d.lr0, "initial learning rate"},
      {"epochs", Kind::kInt, d.epochs, "number of epochs"},
      {"decay_start_epoch", Kind::kInt, d.decay_start_epoch, "epoch at which linear decay begins"},
      {"momentum", Kind::kDouble, d.momentum, "SGD momentum"},
      {"weight_decay", Kind::kDouble, d.weight_decay, "L2 weight decay"},
      {"lambda", Kind::kDouble, d.lambda, "perceptual loss weight"},
      {"skip_norm", Kind::kString, "IN", "skip normalization: NA, BN or IN"},
      {"decoder_norm", Kind::kString, "IN", "decoder normalization: NA, BN or IN"},
      {"crop_size", Kind::kInt, nullptr, "training crop (multiple of 8; 0 = whole image; "
                                         "default 224 full, 64 tiny)"},
      {"random_crop", Kind::kBool, d.crop.random, "random crop position"},
      {"hflip", Kind::kBool, d.crop.hflip, "random horizontal flips"},
      {"drop_last", Kind::kBool, d.drop_last, "drop the final short batch"},
      {"val_every", Kind::kInt, d.val_every, "validate every N epochs"},
      {"cache_limit", Kind::kInt, static_cast<std::int64_t>(d.cache_limit),
       "cache decoded images when the dataset has at most this many pairs"},
      {"weights", Kind::kString, nullptr, "encoder weight archive (default: random init)"},
  };
}

// Builds the training config and writes the effective crop back into cfg.
TrainConfig train_config(json& cfg) {
  json sub = json::object();
  for (const auto& key : kTrainKeys) {
    if (!cfg.at(key).is_null()) sub[key] = cfg.at(key);
  }
  TrainConfig tc = TrainConfig::from_json(sub);
  cfg["crop_size"] = tc.crop.crop_size;
  return tc;
}

std::optional<TensorArchive> load_weights(const json& cfg) {
  if (auto path = opt_string(cfg, "weights")) return TensorArchive::load(*path);
  return std::nullopt;
}

void print_line(std::ostream& out, const json& j) { out << j.dump() << std::endl; }

const CropPolicy kWholeImage{0, false, false};

void run_synthesize(json& cfg, std::ostream& out) {
  write_resolved("synthesize", cfg);
  SynthesisOptions o;
  o.seed = cfg.at("seed").get<std::uint64_t>();
  o.ranges = ranges_from(cfg);
  const std::string scaling = cfg.at("depth_scaling").get<std::string>();
  if (scaling == "normalize") {
    o.depth_scaling = DepthScaling::kNormalizeMax;
  } else if (scaling == "raw") {
    o.depth_scaling = DepthScaling::kRaw;
  } else {
    throw InvalidArgument("--depth-scaling must be normalize or raw");
  }
  if (!cfg.at("beta").is_null()) o.fixed_beta = cfg.at("beta").get<double>();
  if (!cfg.at("airlight").is_null()) {
    const auto& a = cfg.at("airlight");
    if (a.size() != 3) throw InvalidArgument("--airlight takes three values r,g,b");
    o.fixed_airlight = std::array<double, 3>{a[0].get<double>(), a[1].get<double>(),
                                             a[2].get<double>()};
  }
  const auto ds = synthesize_dataset(cfg.at("in").get<std::string>(),
                                     cfg.at("out").get<std::string>(), o);
  print_line(out, {{"pairs", ds.size()}, {"out", cfg.at("out")}});
}

void run_toydata(json& cfg, std::ostream& out) {
  write_resolved("toydata", cfg);
  const auto ds = make_toy_dataset(cfg.at("seed").get<std::uint64_t>(), cfg.at("n").get<int>(),
                                   cfg.at("size").get<std::int64_t>(),
                                   cfg.at("out").get<std::string>(), ranges_from(cfg));
  print_line(out, {{"pairs", ds.size()}, {"out", cfg.at("out")}});
}

void run_train(json& cfg, std::ostream& out) {
  const TrainConfig tc = train_config(cfg);
  write_resolved("train", cfg);
  const PairedDataset train_set = load_paired_dataset(cfg.at("data").get<std::string>(), tc.crop);
  std::optional<PairedDataset> val_set;
  if (auto val = opt_string(cfg, "val")) val_set = load_paired_dataset(*val, kWholeImage, Split::kVal);
  const auto weights = load_weights(cfg);
  Model<float> model =
      build_model<float>(ModelConfig::standard(tc.scale, tc.skip_norm, tc.decoder_norm),
                         weights ? &*weights : nullptr, tc.seed);
  TrainOutputs outputs;
  outputs.out_dir = cfg.at("out").get<std::string>();
  outputs.on_epoch = [&](const EpochRecord& r) {
    json line = {{"epoch", r.epoch}, {"loss", r.mean_loss}, {"lr", r.lr},
                 {"seconds", r.wall_seconds}};
    if (r.val_psnr) line["val_psnr"] = *r.val_psnr;
    print_line(out, line);
  };
  const TrainHistory h = train(model, train_set, tc, val_set ? &*val_set : nullptr, outputs);
  print_line(out, {{"checkpoint", h.last_checkpoint.string()},
                   {"history", (outputs.out_dir / "history.json").string()}});
}

struct DehazeJob {
  std::string name;
  fs::path hazy;
  std::optional<fs::path> gt;
};

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::optional<fs::path> find_by_stem(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".png", ".jpg", ".jpeg"}) {
    if (fs::exists(dir / (stem + ext))) return dir / (stem + ext);
  }
  return std::nullopt;
}

void run_dehaze(json& cfg, std::ostream& out) {
  write_resolved("dehaze", cfg);
  const fs::path input = cfg.at("input").get<std::string>();
  const fs::path out_dir = cfg.at("out").get<std::string>();
  const auto gt = opt_string(cfg, "gt");
  const bool montage = cfg.at("montage").get<bool>();

  std::vector<DehazeJob> jobs;
  if (fs::is_regular_file(input)) {
    jobs.push_back({input.stem().string(), input, gt ? std::optional<fs::path>(*gt) : std::nullopt});
  } else if (fs::is_directory(input / "hazy") && fs::is_directory(input / "clear")) {
    for (const auto& p : load_paired_dataset(input, kWholeImage).pairs) {
      jobs.push_back({p.name, p.hazy, p.clear});
    }
  } else if (fs::is_directory(input)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(input)) {
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::optional<fs::path> g;
      if (gt) g = find_by_stem(*gt, f.stem().string());
      jobs.push_back({f.stem().string(), f, g});
    }
  } else {
    throw IoError("input " + input.string() + " does not exist");
  }
  if (jobs.empty()) throw IoError("no images found under " + input.string());
  if (montage) {
    for (const auto& j : jobs) {
      if (!j.gt) throw InvalidArgument("--montage needs a ground-truth image for " + j.name);
    }
  }

  Model<float> model = load_checkpoint(cfg.at("checkpoint").get<std::string>());
  fs::create_directories(out_dir);
  for (const auto& job : jobs) {
    const Image hazy = load_rgb(job.hazy);
    const Image result = dehaze_image(model, hazy);
    const fs::path out_path = out_dir / (job.name + ".png");
    save_png(out_path, result);
    json line = {{"name", job.name}, {"output", out_path.string()}};
    if (job.gt) {
      const Image truth = load_rgb(*job.gt);
      if (truth.pixels.shape() != hazy.pixels.shape()) {
        throw ShapeError("ground truth for " + job.name + " differs in size from the input");
      }
      line["psnr"] = psnr(result, truth);
      line["ssim"] = ssim(result, truth);
      if (montage) {
        const fs::path grid = out_dir / (job.name + "_montage.png");
        save_png(grid, hconcat({hazy, result, truth}, 4, 1.0f));
        line["montage"] = grid.string();
      }
    }
    print_line(out, line);
  }
}

void run_eval(json& cfg, std::ostream& out) {
  const auto checkpoint = opt_string(cfg, "checkpoint");
  const bool stub = cfg.at("identity_stub").get<bool>();
  if (stub == checkpoint.has_value()) {
    throw InvalidArgument("eval needs exactly one of --checkpoint or --identity-stub");
  }
  write_resolved("eval", cfg);
  const PairedDataset ds =
      load_paired_dataset(cfg.at("data").get<std::string>(), kWholeImage, Split::kTest);
  EvalReport report;
  if (stub) {
    IdentityDehazer d;
    report = evaluate(d, ds);
    report.provenance["model"] = "identity-stub";
  } else {
    Model<float> model = load_checkpoint(*checkpoint);
    ModelDehazer d(model);
    report = evaluate(d, ds);
    report.provenance["model"] = *checkpoint;
  }
  const fs::path path = fs::path(cfg.at("out").get<std::string>()) / "eval_report.json";
  write_json_file(path, report.to_json());
  const json summary = report.to_json();
  print_line(out, {{"report", path.string()},
                   {"mean_dehazed", summary.at("mean_dehazed")},
                   {"mean_baseline", summary.at("mean_baseline")}});
}

void run_ablate(json& cfg, std::ostream& out) {
  const TrainConfig tc = train_config(cfg);
  std::vector<AblationCell> grid;
  if (!cfg.at("cells").is_null()) {
    for (const auto& label : cfg.at("cells")) grid.push_back(parse_ablation_cell(label.get<std::string>()));
  } else if (cfg.at("grid") == "standard") {
    grid = standard_ablation_grid();
  } else {
    throw InvalidArgument("--grid must be 'standard' unless --cells is given");
  }
  write_resolved("ablate", cfg);
  const PairedDataset train_set = load_paired_dataset(cfg.at("data").get<std::string>(), tc.crop);
  const PairedDataset heldout = load_paired_dataset(
      opt_string(cfg, "heldout").value_or(cfg.at("data").get<std::string>()), kWholeImage,
      Split::kTest);
  const auto weights = load_weights(cfg);
  AblationOptions options;
  options.encoder_weights = weights ? &*weights : nullptr;
  options.out_dir = cfg.at("out").get<std::string>();
  options.on_cell = [&](const AblationEntry& e) {
    print_line(out, {{"cell", e.cell.label()}, {"psnr", e.metrics.psnr_db},
                     {"ssim", e.metrics.ssim}, {"final_loss", e.final_loss}});
  };
  const AblationReport report = run_ablation(grid, tc, train_set, heldout, options);
  out << report.render_table();
}

void run_fetch_weights(json& cfg, std::ostream& out) {
  write_resolved("fetch-weights", cfg);
  FetchOptions o;
  o.url = cfg.at("url").get<std::string>();
  if (auto dir = opt_string(cfg, "cache_dir")) o.cache_dir = *dir;
  if (auto digest = opt_string(cfg, "sha256")) o.expected_sha256 = *digest;
  o.offline = cfg.at("offline").get<bool>();
  const std::string format = cfg.at("format").get<std::string>();
  if (format == "auto") {
    o.format = WeightFormat::kAuto;
  } else if (format == "archive") {
    o.format = WeightFormat::kArchive;
  } else if (format == "keras-h5") {
    o.format = WeightFormat::kKerasH5;
  } else {
    throw InvalidArgument("--format must be auto, archive or keras-h5");
  }
  const TensorArchive archive = fetch_pretrained(o);
  const VerifyReport report =
      verify_archive(archive, ModelConfig::standard(parse_scale(cfg.at("scale").get<std::string>())));
  const fs::path out_dir = cfg.at("out").get<std::string>();
  write_json_file(out_dir / "verify_report.json", report.to_json());
  if (!report.ok()) throw Error("fetched weights do not match the encoder table");
  const fs::path path = out_dir / "encoder_weights.dhz";
  archive.save(path);
  print_line(out, {{"archive", path.string()}, {"sha256", archive.metadata().at("sha256")},
                   {"matched", report.matched.size()}});
}

std::vector<CommandSpec> commands() {
  const std::vector<OptSpec> haze_ranges = {
      {"airlight_range", Kind::kDoubleList, {0.7, 1.0}, "open interval for atmospheric light"},
      {"beta_range", Kind::kDoubleList, {0.6, 1.8}, "open interval for the scattering coefficient"},
  };
  auto with = [](std::vector<OptSpec> a, const std::vector<OptSpec>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };

  std::vector<CommandSpec> cmds;
  cmds.push_back({"synthesize", "Haze clear images using depth maps (IN/clear, IN/depth)",
                  with({{"in", Kind::kString, nullptr, "input root with clear/ and depth/", true},
                        {"out", Kind::kString, nullptr, "output root", true},
                        {"seed", Kind::kUInt, 0, "dataset seed"},
                        {"depth_scaling", Kind::kString, "normalize", "normalize or raw"},
                        {"beta", Kind::kDouble, nullptr, "fixed scattering coefficient"},
                        {"airlight", Kind::kDoubleList, nullptr, "fixed atmospheric light r,g,b"}},
                       haze_ranges),
                  run_synthesize});
  cmds.push_back({"toydata", "Generate a procedural paired dataset",
                  with({{"out", Kind::kString, nullptr, "output root", true},
                        {"seed", Kind::kUInt, 0, "dataset seed"},
                        {"n", Kind::kInt, 8, "number of images"},
                        {"size", Kind::kInt, 64, "image side (multiple of 8, at least 16)"}},
                       haze_ranges),
                  run_toydata});
  cmds.push_back({"train", "Train the decoder on a paired dataset",
                  with({{"data", Kind::kString, nullptr, "training dataset root", true},
                        {"val", Kind::kString, nullptr, "validation dataset root"},
                        {"out", Kind::kString, nullptr, "output directory", true}},
                       train_options()),
                  run_train});
  cmds.push_back({"dehaze", "Dehaze images with a checkpoint",
                  {{"checkpoint", Kind::kString, nullptr, "model checkpoint", true},
                   {"input", Kind::kString, nullptr, "image, image directory or dataset root", true},
                   {"gt", Kind::kString, nullptr, "ground-truth image or directory"},
                   {"out", Kind::kString, nullptr, "output directory", true},
                   {"montage", Kind::kBool, false, "also write hazy|output|ground-truth grids"}},
                  run_dehaze});
  cmds.push_back({"eval", "Report PSNR/SSIM on a paired dataset",
                  {{"data", Kind::kString, nullptr, "dataset root", true},
                   {"checkpoint", Kind::kString, nullptr, "model checkpoint"},
                   {"identity_stub", Kind::kBool, false, "evaluate the do-nothing model"},
                   {"out", Kind::kString, nullptr, "output directory", true}},
                  run_eval});
  cmds.push_back({"ablate", "Train and evaluate a grid of normalization/loss variants",
                  with({{"data", Kind::kString, nullptr, "training dataset root", true},
                        {"heldout", Kind::kString, nullptr, "evaluation dataset (default: --data)"},
                        {"out", Kind::kString, nullptr, "output directory", true},
                        {"grid", Kind::kString, "standard", "named grid"},
                        {"cells", Kind::kStringList, nullptr, "explicit cells, e.g. IN-IN-off,NA-NA-off"}},
                       train_options()),
                  run_ablate});
  cmds.push_back({"fetch-weights", "Download, verify and convert pretrained encoder weights",
                  {{"url", Kind::kString, std::string(kVgg16KerasUrl), "weights URL"},
                   {"cache_dir", Kind::kString, nullptr, "cache directory (default: $DEHAZE_CACHE_DIR)"},
                   {"sha256", Kind::kString, nullptr, "expected SHA-256 of the download"},
                   {"offline", Kind::kBool, false, "use the cache only"},
                   {"format", Kind::kString, "auto", "auto, archive or keras-h5"},
                   {"scale", Kind::kString, "full", "encoder table to verify against"},
                   {"out", Kind::kString, nullptr, "output directory", true}},
                  run_fetch_weights});
  return cmds;
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message,
                  json extra = json::object()) {
  extra["error"] = kind;
  extra["message"] = message;
  err << extra.dump() << std::endl;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto specs = commands();
  CLI::App app{"Single-image dehazing toolkit", "dehaze"};
  app.require_subcommand(1);
  std::map<std::string, Bound> bounds;
  std::vector<std::pair<CLI::App*, const CommandSpec*>> subs;
  for (const auto& spec : specs) {
    CLI::App* sub = app.add_subcommand(spec.name, spec.help);
    bind(*sub, spec, bounds[spec.name]);
    subs.emplace_back(sub, &spec);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      std::ostringstream sink;
      app.exit(e, out, sink);
      return kOk;
    }
    report_error(err, "usage", e.what());
    return kUsage;
  }

  const CommandSpec* spec = nullptr;
  for (const auto& [sub, s] : subs) {
    if (sub->parsed()) spec = s;
  }
  json cfg;
  try {
    cfg = resolve(*spec, bounds.at(spec->name));
  } catch (const std::exception& e) {
    report_error(err, "usage", e.what());
    return kUsage;
  }

  try {
    spec->run(cfg, out);
  } catch (const NonFiniteError& e) {
    report_error(err, "non_finite", e.what(), {{"epoch", e.epoch()}, {"step", e.step()}});
    return kNonFinite;
  } catch (const DigestMismatch& e) {
    report_error(err, "digest_mismatch", e.what());
    return kDigestMismatch;
  } catch (const NetworkError& e) {
    report_error(err, "network", e.what());
    return kNetwork;
  } catch (const InvalidArgument& e) {
    report_error(err, "usage", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    report_error(err, "runtime", e.what());
    return kRuntime;
  }
  return kOk;
}

}  // namespace dehaze::cli
