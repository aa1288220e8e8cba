#include "a4net/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "a4net/ablation.hpp"
#include "a4net/errors.hpp"
#include "a4net/explain.hpp"
#include "a4net/probe.hpp"
#include "a4net/synthetic.hpp"
#include "a4net/training.hpp"

namespace a4net {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

enum Command : unsigned {
  kSynth = 1,
  kTrain = 2,
  kEval = 4,
  kProbe = 8,
  kAblate = 16,
  kExplain = 32,
  kAll = 63,
};

enum class Kind { integer, unsigned_integer, real, text };

// One flat configuration key. Flags spell it with dashes, config files and
// A4NET_* environment variables with underscores. A null default means the
// value is derived elsewhere (shown in --help as the derivation).
struct OptionSpec {
  const char* key;
  Kind kind;
  unsigned commands;
  const char* help;
  json full;
  json mini;
};

const std::vector<OptionSpec>& option_specs() {
  static const std::vector<OptionSpec> specs = [] {
    const auto ds = published_ablation_subsets();
    std::string subsets;
    for (size_t i = 0; i < ds.size(); ++i) subsets += (i ? "," : "") + ds[i].to_string();
    const TrainConfig tf = TrainConfig::full();
    const TrainConfig tm = TrainConfig::mini();
    const auto bf = BranchHeadConfig::full();
    const auto bm = BranchHeadConfig::mini();
    return std::vector<OptionSpec>{
        {"preset", Kind::text, kAll, "model scale: full or mini", "mini", "mini"},
        {"seed", Kind::unsigned_integer, kAll, "seed for data, weights, shuffling and augmentation", 0, 0},
        {"out", Kind::text, kAll, "run directory for all artifacts", "", ""},
        {"data", Kind::text, kTrain | kEval | kProbe | kAblate | kExplain, "manifest of the working dataset", "",
         ""},
        {"val_data", Kind::text, kTrain, "validation manifest; enables best-epoch selection", "", ""},
        {"test_data", Kind::text, kProbe | kAblate, "held-out manifest scored after training", "", ""},
        {"checkpoint", Kind::text, kEval | kProbe | kExplain, "checkpoint file to load", "", ""},
        {"samples", Kind::integer, kSynth | kAblate, "synthetic training samples", 2000, 2000},
        {"test_samples", Kind::integer, kSynth | kAblate, "synthetic held-out samples", 400, 400},
        {"image_size", Kind::integer, kSynth, "synthetic image side in pixels", 224, 64},
        {"emotion_classes", Kind::integer, kSynth | kTrain | kEval | kAblate, "emotion classes", tf.emotion_classes,
         tm.emotion_classes},
        {"scene_classes", Kind::integer, kSynth | kTrain | kEval | kAblate, "scene classes incl. unknown",
         bf.scene_classes, bm.scene_classes},
        {"fe_classes", Kind::integer, kSynth | kTrain | kEval | kAblate, "facial-expression classes incl. no face",
         bf.fe_classes, bm.fe_classes},
        {"embed_dim", Kind::integer, kTrain | kEval | kAblate, "branch embedding width", bf.embed_dim, bm.embed_dim},
        {"attributes", Kind::text, kTrain | kEval, "enabled branches, e.g. B+C+S+F or none", "B+C+S+F", "B+C+S+F"},
        {"objective_mode", Kind::text, kTrain | kEval | kAblate, "fixed or uncertainty loss weighting", "fixed",
         "fixed"},
        {"w_B", Kind::real, kTrain | kEval | kAblate, "brightness loss weight (fixed mode)", 1.0, 1.0},
        {"w_C", Kind::real, kTrain | kEval | kAblate, "colourfulness loss weight (fixed mode)", 1.0, 1.0},
        {"w_S", Kind::real, kTrain | kEval | kAblate, "scene loss weight (fixed mode)", 1.0, 1.0},
        {"w_FE", Kind::real, kTrain | kEval | kAblate, "facial-expression loss weight (fixed mode)", 1.0, 1.0},
        {"batch_size", Kind::integer, kTrain | kEval | kAblate, "training batch size", tf.batch_size, tm.batch_size},
        {"learning_rate", Kind::real, kTrain | kAblate, "peak AdamW learning rate", tf.learning_rate,
         tm.learning_rate},
        {"weight_decay", Kind::real, kTrain | kAblate, "decoupled weight decay", tf.weight_decay, tm.weight_decay},
        {"epochs", Kind::integer, kTrain | kAblate, "training epochs", tf.epochs, tm.epochs},
        {"warmup_epochs", Kind::integer, kTrain | kAblate, "linear learning-rate warmup epochs", tf.warmup_epochs,
         tm.warmup_epochs},
        {"lr_schedule", Kind::text, kTrain | kAblate, "constant or cosine after warmup", to_string(tf.schedule),
         to_string(tm.schedule)},
        {"flip_prob", Kind::real, kTrain | kAblate, "horizontal flip probability", tf.augment.horizontal_flip_prob,
         tm.augment.horizontal_flip_prob},
        {"resize_ratio", Kind::real, kTrain | kAblate, "shorter side is resized to crop * ratio",
         tf.augment.resize_ratio, tm.augment.resize_ratio},
        {"subsets", Kind::text, kAblate, "comma-separated attribute subsets", subsets, subsets},
        {"ablation_seeds", Kind::integer, kAblate, "repeat the ablation for seeds seed .. seed+n-1", 1, 1},
        {"protocol", Kind::text, kProbe, "probe protocol: emotic, se30k8 or unbiasemo", "se30k8", "se30k8"},
        {"probe_classes", Kind::integer, kProbe, "probe target classes", nullptr, nullptr},
        {"probe_batch_size", Kind::integer, kProbe, "probe batch size", nullptr, nullptr},
        {"probe_lr", Kind::real, kProbe, "probe learning rate", nullptr, nullptr},
        {"probe_epochs", Kind::integer, kProbe, "probe epochs", nullptr, nullptr},
        {"probe_loss", Kind::text, kProbe, "softmax_ce or binary_ce", nullptr, nullptr},
        {"image", Kind::text, kExplain, "PNG to explain (else --data and --index)", "", ""},
        {"index", Kind::integer, kExplain, "record index in --data", 0, 0},
        {"layer", Kind::text, kExplain, "layer to explain", std::string(layers::stage4), std::string(layers::stage4)},
        {"target_class", Kind::text, kExplain, "emotion class index or 'predicted'", "predicted", "predicted"},
        {"alpha", Kind::real, kExplain, "overlay opacity in [0, 1]", 0.5, 0.5},
    };
  }();
  return specs;
}

const OptionSpec* find_spec(std::string_view key) {
  for (const auto& s : option_specs()) {
    if (key == s.key) return &s;
  }
  return nullptr;
}

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

std::string env_name(const std::string& key) {
  std::string e = "A4NET_";
  for (char c : key) e += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return e;
}

std::string default_text(const json& v, const char* derived) {
  if (v.is_null()) return derived;
  if (v.is_string()) return v.get<std::string>().empty() ? "unset" : v.get<std::string>();
  return v.dump();
}

json parse_value(const OptionSpec& spec, const std::string& text, const std::string& origin) {
  auto fail = [&](const char* what) {
    return ConfigError(origin + ": '" + text + "' is not " + what + " (key " + spec.key + ")");
  };
  try {
    size_t used = 0;
    switch (spec.kind) {
      case Kind::integer: {
        const long long v = std::stoll(text, &used);
        if (used != text.size()) throw fail("an integer");
        return v;
      }
      case Kind::unsigned_integer: {
        if (!text.empty() && text[0] == '-') throw fail("a non-negative integer");
        const unsigned long long v = std::stoull(text, &used);
        if (used != text.size()) throw fail("a non-negative integer");
        return v;
      }
      case Kind::real: {
        const double v = std::stod(text, &used);
        if (used != text.size()) throw fail("a number");
        return v;
      }
      case Kind::text:
        return text;
    }
  } catch (const std::invalid_argument&) {
    throw fail(spec.kind == Kind::real ? "a number" : "an integer");
  } catch (const std::out_of_range&) {
    throw fail("in range");
  }
  return text;
}

json check_json_value(const OptionSpec& spec, const json& v, const std::string& origin) {
  const bool ok = (spec.kind == Kind::text && v.is_string()) ||
                  (spec.kind == Kind::integer && v.is_number_integer()) ||
                  (spec.kind == Kind::unsigned_integer && v.is_number_unsigned()) ||
                  (spec.kind == Kind::real && v.is_number());
  if (!ok) throw ConfigError(origin + ": key '" + spec.key + "' has the wrong type (" + v.dump() + ")");
  return spec.kind == Kind::real ? json(v.get<double>()) : v;
}

// Effective configuration: preset defaults < config file < A4NET_* < flags.
class RunConfig {
 public:
  RunConfig(unsigned command, const std::map<std::string, std::string>& flags, const std::string& config_path)
      : command_(command) {
    json file = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot open config file " + config_path);
      try {
        file = json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError("config file " + config_path + " is not valid: " + e.what());
      }
      if (!file.is_object()) throw ConfigError("config file " + config_path + " must hold one object");
      for (const auto& [key, value] : file.items()) {
        const auto* spec = find_spec(key);
        if (spec == nullptr) throw ConfigError("config file " + config_path + ": unknown key '" + key + "'");
        file[key] = check_json_value(*spec, value, "config file " + config_path);
      }
    }
    std::map<std::string, json> env;
    for (const auto& spec : option_specs()) {
      if (const char* v = std::getenv(env_name(spec.key).c_str())) {
        env[spec.key] = parse_value(spec, v, "environment " + env_name(spec.key));
      }
    }
    std::map<std::string, json> flag_values;
    for (const auto& [key, text] : flags) flag_values[key] = parse_value(*find_spec(key), text, flag_name(key));

    auto layer = [&](const std::string& key) -> std::optional<json> {
      if (auto it = flag_values.find(key); it != flag_values.end()) return it->second;
      if (auto it = env.find(key); it != env.end()) return it->second;
      if (file.contains(key)) return file.at(key);
      return std::nullopt;
    };
    const auto preset_value = layer("preset").value_or(json("mini")).get<std::string>();
    preset_ = parse_preset(preset_value);
    if (preset_ == Preset::custom) throw ConfigError("preset must be full or mini");
    for (const auto& spec : option_specs()) {
      if (auto v = layer(spec.key)) {
        values_[spec.key] = *v;
        explicit_.insert(spec.key);
      } else {
        values_[spec.key] = preset_ == Preset::full ? spec.full : spec.mini;
      }
    }
  }

  Preset preset() const { return preset_; }
  bool is_explicit(const std::string& key) const { return explicit_.count(key) > 0; }
  bool has(const std::string& key) const {
    const auto& v = values_.at(key);
    return !v.is_null() && !(v.is_string() && v.get<std::string>().empty());
  }
  int64_t integer(const std::string& key) const { return values_.at(key).get<int64_t>(); }
  uint64_t unsigned_integer(const std::string& key) const { return values_.at(key).get<uint64_t>(); }
  double real(const std::string& key) const { return values_.at(key).get<double>(); }
  std::string text(const std::string& key) const { return values_.at(key).get<std::string>(); }
  std::string required_text(const std::string& key) const {
    if (!has(key)) throw ConfigError("missing required option " + flag_name(key));
    return text(key);
  }

  json effective() const {
    json j = json::object();
    for (const auto& spec : option_specs()) {
      if (spec.commands & command_) j[spec.key] = values_.at(spec.key);
    }
    return j;
  }

 private:
  unsigned command_;
  Preset preset_ = Preset::mini;
  std::map<std::string, json> values_;
  std::set<std::string> explicit_;
};

class RunLog {
 public:
  RunLog(const fs::path& path, std::ostream& err) : err_(err) {
    if (!path.empty()) file_.open(path, std::ios::app);
  }
  void line(const std::string& message) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream stamp;
    stamp << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    if (file_) file_ << stamp.str() << ' ' << message << '\n' << std::flush;
    err_ << message << '\n';
  }

 private:
  std::ofstream file_;
  std::ostream& err_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

json published_reference_json() {
  json refs = json::array();
  for (const auto& r : published_references()) {
    refs.push_back({{"name", r.name}, {"metric", r.metric}, {"value", r.value}});
  }
  return refs;
}

json metrics_document(const MetricsReport& report) {
  json j = to_json(report);
  j["published_reference"] = published_reference_json();
  return j;
}

fs::path prepare_out(const RunConfig& cfg) {
  const fs::path out = cfg.required_text("out");
  fs::create_directories(out);
  write_text(out / "effective_config.json", to_canonical_text(cfg.effective()));
  return out;
}

ModelConfig model_config(const RunConfig& cfg, AttributeSet attributes) {
  ModelConfig mc;
  mc.backbone = cfg.preset() == Preset::full ? BackboneConfig::full() : BackboneConfig::mini();
  mc.heads = {cfg.integer("embed_dim"), cfg.integer("scene_classes"), cfg.integer("fe_classes")};
  mc.emotion_classes = cfg.integer("emotion_classes");
  mc.attributes = attributes;
  mc.objective_mode = parse_objective_mode(cfg.text("objective_mode"));
  mc.w_B = cfg.real("w_B");
  mc.w_C = cfg.real("w_C");
  mc.w_S = cfg.real("w_S");
  mc.w_FE = cfg.real("w_FE");
  mc.validate();
  return mc;
}

TrainConfig train_config(const RunConfig& cfg, const ModelConfig& mc) {
  TrainConfig tc = cfg.preset() == Preset::full ? TrainConfig::full() : TrainConfig::mini();
  tc.batch_size = cfg.integer("batch_size");
  tc.learning_rate = cfg.real("learning_rate");
  tc.weight_decay = cfg.real("weight_decay");
  tc.epochs = cfg.integer("epochs");
  tc.seed = cfg.unsigned_integer("seed");
  tc.attribute_set = mc.attributes;
  tc.objective_mode = mc.objective_mode;
  tc.emotion_classes = mc.emotion_classes;
  tc.warmup_epochs = cfg.integer("warmup_epochs");
  tc.schedule = parse_lr_schedule(cfg.text("lr_schedule"));
  tc.augment.crop_size = mc.backbone.input_size;
  tc.augment.horizontal_flip_prob = cfg.real("flip_prob");
  tc.augment.resize_ratio = cfg.real("resize_ratio");
  tc.augment.seed = tc.seed;
  tc.validate();
  return tc;
}

ClassRanges class_ranges(const ModelConfig& mc) {
  return {mc.emotion_classes, mc.heads.scene_classes, mc.heads.fe_classes};
}

Dataset load_data(const std::string& path, const ClassRanges& ranges) {
  return materialize(load_manifest(path, ranges));
}

// Augmentation settings a checkpoint was trained with.
AugmentConfig checkpoint_augment(const Checkpoint& ckpt, const ModelConfig& mc) {
  AugmentConfig a;
  a.crop_size = mc.backbone.input_size;
  if (ckpt.config.contains("train")) {
    const auto& t = ckpt.config.at("train");
    a.resize_ratio = t.value("resize_ratio", a.resize_ratio);
  }
  return a;
}

// Flags naming model fields must agree with the checkpoint they load.
void check_explicit_model_keys(const RunConfig& cfg, const Checkpoint& ckpt) {
  const auto stored = to_json(checkpoint_model_config(ckpt));
  for (const char* key : {"emotion_classes", "scene_classes", "fe_classes", "embed_dim", "attributes",
                          "objective_mode", "w_B", "w_C", "w_S", "w_FE", "preset"}) {
    if (!cfg.is_explicit(key)) continue;
    json wanted = key == std::string("attributes") ? json(AttributeSet::parse(cfg.text(key)).to_string())
                                                   : cfg.effective().value(key, json());
    if (key == std::string("preset")) wanted = cfg.text(key);
    if (wanted.is_null()) continue;
    if (stored.at(key) != wanted) {
      throw ConfigError("checkpoint was saved with " + std::string(key) + "=" + stored.at(key).dump() +
                        " but the run asks for " + wanted.dump());
    }
  }
}

int cmd_synth(const RunConfig& cfg, std::ostream& out, RunLog& log) {
  SyntheticSpec spec;
  spec.num_samples = cfg.integer("samples");
  spec.image_size = cfg.integer("image_size");
  spec.emotion_classes = cfg.integer("emotion_classes");
  spec.scene_classes = cfg.integer("scene_classes");
  spec.fe_classes = cfg.integer("fe_classes");
  spec.seed = cfg.unsigned_integer("seed");
  spec.validate();
  const auto dir = prepare_out(cfg);
  write_synthetic(generate_synthetic(spec), dir);
  log.line("synth: wrote " + std::to_string(spec.num_samples) + " samples to " + (dir / "manifest.tsv").string());
  const auto test_samples = cfg.integer("test_samples");
  if (test_samples > 0) {
    SyntheticSpec held = spec;
    held.num_samples = test_samples;
    held.seed = spec.seed ^ 0x9e3779b97f4a7c15ULL;
    write_synthetic(generate_synthetic(held), dir / "test");
    log.line("synth: wrote " + std::to_string(test_samples) + " held-out samples to " +
             (dir / "test" / "manifest.tsv").string());
  }
  out << (dir / "manifest.tsv").string() << '\n';
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out, RunLog& log) {
  const auto mc = model_config(cfg, AttributeSet::parse(cfg.text("attributes")));
  const auto tc = train_config(cfg, mc);
  const auto train_set = load_data(cfg.required_text("data"), class_ranges(mc));
  std::optional<Dataset> val;
  if (cfg.has("val_data")) val = load_data(cfg.text("val_data"), class_ranges(mc));
  const auto dir = prepare_out(cfg);

  A4Net model(mc, tc.seed);
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLosses& e) {
    std::ostringstream line;
    line << "epoch " << e.epoch << " loss " << e.total << " L_VE " << e.L_VE;
    if (e.validation_top1) line << " val_top1 " << *e.validation_top1;
    log.line(line.str());
  };
  log.line("train: " + std::to_string(train_set.size()) + " samples, preset " + to_string(mc.backbone.preset) +
           ", attributes " + mc.attributes.to_string());
  auto result = train(model, train_set, tc, val ? &*val : nullptr, hooks);
  save_checkpoint(result.checkpoint, dir / "ckpt");
  const auto text = to_canonical_text(metrics_document(result.report));
  write_text(dir / "metrics.json", text);
  log.line("train: checkpoint " + (dir / "ckpt").string() + " (epoch " + std::to_string(result.best_epoch) + ")");
  out << text;
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out, RunLog& log) {
  const auto ckpt = load_checkpoint(cfg.required_text("checkpoint"));
  check_explicit_model_keys(cfg, ckpt);
  auto model = model_from_checkpoint(ckpt);
  const auto& mc = model->config();
  const auto data = load_data(cfg.required_text("data"), class_ranges(mc));
  const auto report = evaluate(model, data, checkpoint_augment(ckpt, mc), cfg.integer("batch_size"));
  const auto text = to_canonical_text(metrics_document(report));
  if (cfg.has("out")) {
    const auto dir = prepare_out(cfg);
    write_text(dir / "metrics.json", text);
  }
  log.line("eval: " + std::to_string(data.size()) + " samples");
  out << text;
  return 0;
}

int cmd_probe(const RunConfig& cfg, std::ostream& out, RunLog& log) {
  const auto ckpt = load_checkpoint(cfg.required_text("checkpoint"));
  auto model = model_from_checkpoint(ckpt);
  ProbeConfig pc = ProbeConfig::named(cfg.text("protocol"));
  if (cfg.has("probe_classes")) pc.target_classes = cfg.integer("probe_classes");
  if (cfg.has("probe_batch_size")) pc.batch_size = cfg.integer("probe_batch_size");
  if (cfg.has("probe_lr")) pc.learning_rate = cfg.real("probe_lr");
  if (cfg.has("probe_epochs")) pc.epochs = cfg.integer("probe_epochs");
  if (cfg.has("probe_loss")) pc.loss_kind = parse_probe_loss(cfg.text("probe_loss"));
  pc.seed = cfg.unsigned_integer("seed");
  pc.validate();
  const ClassRanges ranges{0, 0, 0};
  const auto train_set = load_data(cfg.required_text("data"), ranges);
  std::optional<Dataset> test;
  if (cfg.has("test_data")) test = load_data(cfg.text("test_data"), ranges);
  const auto dir = prepare_out(cfg);

  const auto augment = checkpoint_augment(ckpt, model->config());
  auto result = linear_probe(model, train_set, test ? &*test : nullptr, pc, augment);
  Checkpoint head;
  head.config = {{"probe",
                  {{"target_classes", pc.target_classes},
                   {"batch_size", pc.batch_size},
                   {"learning_rate", pc.learning_rate},
                   {"epochs", pc.epochs},
                   {"loss_kind", to_string(pc.loss_kind)},
                   {"seed", pc.seed}}}};
  head.tensors = parameter_blocks(*result.head);
  save_checkpoint(head, dir / "probe_head.ckpt");
  json doc = {{"train", to_json(result.train_report)},
              {"test", test ? to_json(result.test_report) : json()},
              {"protocol", cfg.text("protocol")},
              {"published_reference", published_reference_json()}};
  const auto text = to_canonical_text(doc);
  write_text(dir / "metrics.json", text);
  log.line("probe: " + cfg.text("protocol") + ", " + std::to_string(train_set.size()) + " training samples");
  out << text;
  return 0;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out, RunLog& log) {
  const auto subsets = parse_attribute_sets(cfg.text("subsets"));
  const auto base_model = model_config(cfg, AttributeSet::all());
  const auto base_train = train_config(cfg, base_model);
  const auto seeds = cfg.integer("ablation_seeds");
  if (seeds < 1) throw ConfigError("ablation_seeds must be >= 1");
  const auto dir = prepare_out(cfg);

  std::optional<Dataset> fixed_train, fixed_test;
  if (cfg.has("data")) {
    fixed_train = load_data(cfg.text("data"), class_ranges(base_model));
    if (!cfg.has("test_data")) throw ConfigError("--test-data is required with --data for ablate");
    fixed_test = load_data(cfg.text("test_data"), class_ranges(base_model));
  }

  std::vector<std::vector<AblationRow>> per_seed;
  json runs = json::array();
  for (int64_t k = 0; k < seeds; ++k) {
    const uint64_t seed = cfg.unsigned_integer("seed") + static_cast<uint64_t>(k);
    Dataset train_set, test_set;
    if (fixed_train) {
      train_set = *fixed_train;
      test_set = *fixed_test;
    } else {
      SyntheticSpec spec;
      spec.image_size = base_model.backbone.input_size;
      spec.emotion_classes = base_model.emotion_classes;
      spec.scene_classes = base_model.heads.scene_classes;
      spec.fe_classes = base_model.heads.fe_classes;
      spec.num_samples = cfg.integer("samples");
      spec.seed = seed;
      train_set = to_dataset(generate_synthetic(spec));
      spec.num_samples = cfg.integer("test_samples");
      spec.seed = seed ^ 0x9e3779b97f4a7c15ULL;
      test_set = to_dataset(generate_synthetic(spec));
    }
    TrainConfig tc = base_train;
    tc.seed = seed;
    tc.augment.seed = seed;
    log.line("ablate: seed " + std::to_string(seed));
    auto rows = run_ablation(base_model, tc, subsets, train_set, test_set, seed);
    for (const auto& row : rows) {
      log.line("ablate: " + row.subset.to_string() + " emotion_top1 " + std::to_string(*row.report.emotion_top1));
    }
    json seed_doc = {{"seed", seed}, {"rows", json::array()}};
    for (const auto& row : rows) seed_doc["rows"].push_back({{"subset", row.subset.to_string()}, {"metrics", to_json(row.report)}});
    runs.push_back(seed_doc);
    if (seeds > 1) write_text(dir / ("ablation_seed" + std::to_string(seed) + ".tsv"), ablation_table(rows));
    per_seed.push_back(std::move(rows));
  }

  // Mean over seeds, cell by cell.
  std::vector<AblationRow> mean = per_seed.front();
  auto average = [&](size_t i, auto member) {
    std::optional<double> acc;
    for (const auto& rows : per_seed) {
      const auto& v = rows[i].report.*member;
      if (v) acc = acc.value_or(0.0) + *v / static_cast<double>(per_seed.size());
    }
    return acc;
  };
  for (size_t i = 0; i < mean.size(); ++i) {
    auto& r = mean[i].report;
    r.emotion_top1 = average(i, &MetricsReport::emotion_top1);
    r.brightness_mse = average(i, &MetricsReport::brightness_mse);
    r.colorfulness_mse = average(i, &MetricsReport::colorfulness_mse);
    r.scene_acc = average(i, &MetricsReport::scene_acc);
    r.fe_acc = average(i, &MetricsReport::fe_acc);
    r.loss_history.clear();
  }
  const auto table = ablation_table(mean);
  write_text(dir / "ablation.tsv", table);
  write_text(dir / "metrics.json",
             to_canonical_text({{"runs", runs}, {"published_reference", published_reference_json()}}));
  out << table;
  return 0;
}

int cmd_explain(const RunConfig& cfg, std::ostream& out, RunLog& log) {
  const auto ckpt = load_checkpoint(cfg.required_text("checkpoint"));
  auto model = model_from_checkpoint(ckpt);
  const auto& mc = model->config();
  Image source;
  if (cfg.has("image")) {
    source = read_png(cfg.text("image"));
  } else {
    const auto data = load_manifest(cfg.required_text("data"), class_ranges(mc));
    const auto index = cfg.integer("index");
    if (index < 0 || static_cast<size_t>(index) >= data.size()) {
      throw ConfigError("--index " + std::to_string(index) + " outside the " + std::to_string(data.size()) +
                        "-record manifest");
    }
    source = *load_image(data[static_cast<size_t>(index)]);
  }
  CamRequest request;
  request.layer_id = cfg.text("layer");
  const auto target = cfg.text("target_class");
  if (target != "predicted") {
    request.target_class = parse_value(OptionSpec{"target_class", Kind::integer, kExplain, "", {}, {}}, target,
                                       "--target-class")
                               .get<int64_t>();
  }
  const double alpha = cfg.real("alpha");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("--alpha must lie in [0, 1]");
  const auto dir = prepare_out(cfg);

  Rng unused(0);
  const auto view = preprocess_image(source, checkpoint_augment(ckpt, mc), false, unused);
  const auto result = grad_cam(model, to_chw_tensor(view), request);
  const auto full = upsample(result.heatmap, view.height, view.width);
  render_overlay(view, full, dir / "cam_overlay.png", alpha);
  const auto text = to_canonical_text(cam_sidecar(result));
  write_text(dir / "cam.json", text);
  log.line("explain: layer " + result.layer_id + ", class " + std::to_string(result.target_class));
  out << text;
  return 0;
}

struct Subcommand {
  const char* name;
  unsigned bit;
  const char* help;
  int (*run)(const RunConfig&, std::ostream&, RunLog&);
};

const Subcommand kSubcommands[] = {
    {"synth", kSynth, "render a synthetic verification dataset", cmd_synth},
    {"train", kTrain, "train A4Net on a manifest", cmd_train},
    {"eval", kEval, "evaluate a checkpoint on a manifest", cmd_eval},
    {"probe", kProbe, "frozen-feature linear probe from a checkpoint", cmd_probe},
    {"ablate", kAblate, "train and score each attribute subset", cmd_ablate},
    {"explain", kExplain, "Grad-CAM heatmap and overlay for one image", cmd_explain},
};

bool is_user_error(const std::exception& e) {
  return dynamic_cast<const ConfigError*>(&e) != nullptr || dynamic_cast<const ValidationError*>(&e) != nullptr ||
         dynamic_cast<const ParseError*>(&e) != nullptr;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"A4Net: attribute-aware visual emotion analysis"};
  app.name("a4net");
  app.require_subcommand(1);
  app.footer(
      "Every option can also come from --config FILE (a flat JSON object with the same keys, underscores\n"
      "for dashes) or from an A4NET_<KEY> environment variable, e.g. A4NET_OUT=runs/x.\n"
      "Precedence: preset defaults < config file < environment < flags.\n"
      "Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.");

  std::map<std::string, std::map<std::string, std::string>> flag_values;
  std::map<std::string, std::string> config_paths;
  std::map<std::string, CLI::App*> apps;
  for (const auto& sc : kSubcommands) {
    auto* sub = app.add_subcommand(sc.name, sc.help);
    apps[sc.name] = sub;
    sub->add_option("--config", config_paths[sc.name], "flat JSON config file");
    for (const auto& spec : option_specs()) {
      if (!(spec.commands & sc.bit)) continue;
      const std::string derived = std::string(spec.key).rfind("probe_", 0) == 0 ? "from --protocol" : "unset";
      // The preset picks every other default, so it has just one of its own.
      std::string help = std::string(spec.key) == "preset"
                             ? std::string(spec.help) + " [default: " + default_text(spec.mini, "") + "]"
                             : std::string(spec.help) + " [full: " + default_text(spec.full, derived.c_str()) +
                                   ", mini: " + default_text(spec.mini, derived.c_str()) + "]";
      auto* opt = sub->add_option_function<std::string>(
          flag_name(spec.key),
          [&flag_values, name = std::string(sc.name), key = std::string(spec.key)](const std::string& v) {
            flag_values[name][key] = v;
          },
          help);
      opt->type_name(spec.kind == Kind::text ? "TEXT" : (spec.kind == Kind::real ? "REAL" : "INT"));
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help("", dynamic_cast<const CLI::CallForAllHelp*>(&e) ? CLI::AppFormatMode::All
                                                                      : CLI::AppFormatMode::Normal);
      return 0;
    }
    err << "a4net: " << e.what() << "\nRun 'a4net --help' for usage.\n";
    return 1;
  }

  for (const auto& sc : kSubcommands) {
    if (!apps[sc.name]->parsed()) continue;
    try {
      RunConfig cfg(sc.bit, flag_values[sc.name], config_paths[sc.name]);
      fs::path log_path;
      if (cfg.has("out")) {
        fs::create_directories(cfg.text("out"));
        log_path = fs::path(cfg.text("out")) / "run.log";
      }
      RunLog log(log_path, err);
      return sc.run(cfg, out, log);
    } catch (const std::exception& e) {
      err << "a4net " << sc.name << ": " << e.what() << '\n';
      return is_user_error(e) ? 1 : 2;
    }
  }
  return 1;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace a4net
