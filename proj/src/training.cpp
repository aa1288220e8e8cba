#include "a4net/training.hpp"

#include <cmath>
#include <numeric>

#include "a4net/errors.hpp"
#include "a4net/rng.hpp"

namespace a4net {

namespace {

using nlohmann::json;

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("config snapshot lacks '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

void check_labels(const Dataset& dataset, const ModelConfig& mc, const char* which) {
  const ClassRanges ranges{mc.emotion_classes, mc.heads.scene_classes, mc.heads.fe_classes};
  for (size_t i = 0; i < dataset.size(); ++i) {
    try {
      validate_record(dataset[i], ranges, std::string(which) + " record " + std::to_string(i));
    } catch (const ValidationError& e) {
      throw ConfigError(std::string("class counts disagree with the model: ") + e.what());
    }
  }
}

std::optional<double> mean_of(double sum, int64_t count, bool enabled) {
  if (!enabled) return std::nullopt;
  return sum / static_cast<double>(count);
}

void set_lr(torch::optim::AdamW& opt, double lr) {
  for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
}

std::vector<std::vector<size_t>> batches_in_order(size_t n, int64_t batch_size) {
  std::vector<std::vector<size_t>> out;
  for (size_t start = 0; start < n; start += static_cast<size_t>(batch_size)) {
    std::vector<size_t> idx(std::min(n - start, static_cast<size_t>(batch_size)));
    std::iota(idx.begin(), idx.end(), start);
    out.push_back(std::move(idx));
  }
  return out;
}

}  // namespace

std::string to_string(LrSchedule schedule) { return schedule == LrSchedule::cosine ? "cosine" : "constant"; }

LrSchedule parse_lr_schedule(std::string_view text) {
  if (text == "constant") return LrSchedule::constant;
  if (text == "cosine") return LrSchedule::cosine;
  throw ConfigError("unknown lr schedule '" + std::string(text) + "' (expected constant or cosine)");
}

TrainConfig TrainConfig::full() { return TrainConfig{}; }

TrainConfig TrainConfig::mini() {
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.learning_rate = 1e-3;
  cfg.weight_decay = 1e-4;
  cfg.epochs = 11;
  cfg.emotion_classes = 4;
  cfg.warmup_epochs = 1;
  cfg.schedule = LrSchedule::cosine;
  // No pre-crop upscale at 64 px: resampling by 1.14 blurs away the
  // two-pixel textures the scene classes are made of.
  cfg.augment = AugmentConfig{64, 0.5, 0, 1.0};
  return cfg;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be >= 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (emotion_classes < 2) throw ConfigError("emotion_classes must be >= 2");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  augment.validate();
}

double scheduled_lr(const TrainConfig& cfg, int64_t step, int64_t steps_per_epoch) {
  const double base = cfg.learning_rate;
  const int64_t warmup = cfg.warmup_epochs * steps_per_epoch;
  const int64_t total = cfg.epochs * steps_per_epoch;
  if (step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (cfg.schedule == LrSchedule::constant || total <= warmup) return base;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return base * 0.5 * (1.0 + std::cos(M_PI * std::min(progress, 1.0)));
}

json to_json(const ModelConfig& cfg) {
  const auto& b = cfg.backbone;
  return {{"preset", to_string(b.preset)},
          {"stage_depths", b.stage_depths},
          {"stage_dims", b.stage_dims},
          {"input_size", b.input_size},
          {"drop_path_rate", b.drop_path_rate},
          {"embed_dim", cfg.heads.embed_dim},
          {"scene_classes", cfg.heads.scene_classes},
          {"fe_classes", cfg.heads.fe_classes},
          {"emotion_classes", cfg.emotion_classes},
          {"attributes", cfg.attributes.to_string()},
          {"objective_mode", to_string(cfg.objective_mode)},
          {"w_B", cfg.w_B},
          {"w_C", cfg.w_C},
          {"w_S", cfg.w_S},
          {"w_FE", cfg.w_FE}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.backbone.preset = parse_preset(field<std::string>(j, "preset"));
  cfg.backbone.stage_depths = field<std::array<int64_t, 4>>(j, "stage_depths");
  cfg.backbone.stage_dims = field<std::array<int64_t, 4>>(j, "stage_dims");
  cfg.backbone.input_size = field<int64_t>(j, "input_size");
  cfg.backbone.drop_path_rate = field<double>(j, "drop_path_rate");
  cfg.heads.embed_dim = field<int64_t>(j, "embed_dim");
  cfg.heads.scene_classes = field<int64_t>(j, "scene_classes");
  cfg.heads.fe_classes = field<int64_t>(j, "fe_classes");
  cfg.emotion_classes = field<int64_t>(j, "emotion_classes");
  cfg.attributes = AttributeSet::parse(field<std::string>(j, "attributes"));
  cfg.objective_mode = parse_objective_mode(field<std::string>(j, "objective_mode"));
  cfg.w_B = field<double>(j, "w_B");
  cfg.w_C = field<double>(j, "w_C");
  cfg.w_S = field<double>(j, "w_S");
  cfg.w_FE = field<double>(j, "w_FE");
  cfg.validate();
  return cfg;
}

json to_json(const TrainConfig& cfg) {
  return {{"batch_size", cfg.batch_size},
          {"learning_rate", cfg.learning_rate},
          {"weight_decay", cfg.weight_decay},
          {"epochs", cfg.epochs},
          {"seed", cfg.seed},
          {"attributes", cfg.attribute_set.to_string()},
          {"objective_mode", to_string(cfg.objective_mode)},
          {"emotion_classes", cfg.emotion_classes},
          {"warmup_epochs", cfg.warmup_epochs},
          {"lr_schedule", to_string(cfg.schedule)},
          {"crop_size", cfg.augment.crop_size},
          {"horizontal_flip_prob", cfg.augment.horizontal_flip_prob},
          {"resize_ratio", cfg.augment.resize_ratio},
          {"adam_beta1", kAdamBeta1},
          {"adam_beta2", kAdamBeta2},
          {"adam_eps", kAdamEps}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  cfg.batch_size = field<int64_t>(j, "batch_size");
  cfg.learning_rate = field<double>(j, "learning_rate");
  cfg.weight_decay = field<double>(j, "weight_decay");
  cfg.epochs = field<int64_t>(j, "epochs");
  cfg.seed = field<uint64_t>(j, "seed");
  cfg.attribute_set = AttributeSet::parse(field<std::string>(j, "attributes"));
  cfg.objective_mode = parse_objective_mode(field<std::string>(j, "objective_mode"));
  cfg.emotion_classes = field<int64_t>(j, "emotion_classes");
  cfg.warmup_epochs = field<int64_t>(j, "warmup_epochs");
  cfg.schedule = parse_lr_schedule(field<std::string>(j, "lr_schedule"));
  cfg.augment.crop_size = field<int64_t>(j, "crop_size");
  cfg.augment.horizontal_flip_prob = field<double>(j, "horizontal_flip_prob");
  cfg.augment.resize_ratio = field<double>(j, "resize_ratio");
  cfg.augment.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

Checkpoint make_checkpoint(A4Net& model, torch::optim::AdamW* optimizer, const TrainConfig& cfg, int64_t epoch,
                           const std::string& rng_state) {
  Checkpoint ckpt;
  ckpt.config = {{"model", to_json(model->config())}, {"train", to_json(cfg)}};
  ckpt.tensors = parameter_blocks(*model);
  if (optimizer != nullptr) ckpt.tensors.merge(optimizer_blocks(*model, *optimizer));
  ckpt.epoch = epoch;
  ckpt.rng_state = rng_state;
  return ckpt;
}

ModelConfig checkpoint_model_config(const Checkpoint& ckpt) {
  if (!ckpt.config.contains("model")) throw ConfigError("checkpoint has no model config snapshot");
  return model_config_from_json(ckpt.config.at("model"));
}

void check_compatible(const Checkpoint& ckpt, const ModelConfig& expected) {
  const auto stored = to_json(checkpoint_model_config(ckpt));
  const auto wanted = to_json(expected);
  for (const auto& [key, value] : wanted.items()) {
    if (stored.at(key) != value) {
      throw ConfigError("checkpoint was saved with " + key + "=" + stored.at(key).dump() + " but the config asks for " +
                        value.dump());
    }
  }
}

A4Net model_from_checkpoint(const Checkpoint& ckpt) {
  A4Net model(checkpoint_model_config(ckpt), 0);
  restore_parameters(*model, ckpt);
  return model;
}

TrainResult train(A4Net& model, const Dataset& train_set, const TrainConfig& cfg, const Dataset* validation,
                  const TrainHooks& hooks, const Checkpoint* resume) {
  cfg.validate();
  const auto& mc = model->config();
  if (cfg.emotion_classes != mc.emotion_classes) {
    throw ConfigError("train config has " + std::to_string(cfg.emotion_classes) + " emotion classes, model has " +
                      std::to_string(mc.emotion_classes));
  }
  if (cfg.attribute_set != mc.attributes) {
    throw ConfigError("train config attributes " + cfg.attribute_set.to_string() + " differ from the model's " +
                      mc.attributes.to_string());
  }
  if (cfg.objective_mode != mc.objective_mode) throw ConfigError("train config objective mode differs from the model's");
  if (cfg.augment.crop_size != mc.backbone.input_size) {
    throw ConfigError("crop_size " + std::to_string(cfg.augment.crop_size) + " differs from the model input size " +
                      std::to_string(mc.backbone.input_size));
  }
  if (train_set.empty()) throw DomainError("train: empty dataset");
  check_labels(train_set, mc, "train");
  if (validation != nullptr) check_labels(*validation, mc, "validation");

  torch::optim::AdamW optimizer(model->parameters(), torch::optim::AdamWOptions(cfg.learning_rate)
                                                         .betas({kAdamBeta1, kAdamBeta2})
                                                         .eps(kAdamEps)
                                                         .weight_decay(cfg.weight_decay));
  Rng rng(cfg.seed);
  int64_t start_epoch = 0;
  if (resume != nullptr) {
    check_compatible(*resume, mc);
    restore_parameters(*model, *resume);
    restore_optimizer(*model, optimizer, *resume);
    start_epoch = resume->epoch;
    rng.set_state(resume->rng_state);
  }

  const auto n = train_set.size();
  const auto steps_per_epoch = static_cast<int64_t>((n + static_cast<size_t>(cfg.batch_size) - 1) /
                                                    static_cast<size_t>(cfg.batch_size));
  const AttributeSet on = mc.attributes;
  TrainResult result;
  std::optional<double> best_top1;
  std::vector<size_t> order(n);

  model->train();
  for (int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<size_t>(rng.index(static_cast<int64_t>(i)))]);

    double sums[6] = {0, 0, 0, 0, 0, 0};
    for (int64_t b = 0; b < steps_per_epoch; ++b) {
      const auto begin = static_cast<size_t>(b * cfg.batch_size);
      const std::vector<size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                    order.begin() + static_cast<std::ptrdiff_t>(std::min(n, begin + cfg.batch_size)));
      const int64_t step = epoch * steps_per_epoch + b;
      set_lr(optimizer, scheduled_lr(cfg, step, steps_per_epoch));

      auto batch = collate(train_set, idx, cfg.augment, true, rng);
      auto outputs = model->forward(batch.images);
      auto losses = model->losses(outputs, batch.targets);
      const std::pair<const char*, const torch::Tensor*> terms[] = {
          {"total", &losses.total}, {"L_VE", &losses.L_VE}, {"L_B", &losses.L_B},
          {"L_C", &losses.L_C},     {"L_S", &losses.L_S},   {"L_FE", &losses.L_FE}};
      // Components before the total, so the error names the term that broke.
      for (size_t t : {1, 2, 3, 4, 5, 0}) {
        if (!terms[t].second->defined()) continue;
        const double v = terms[t].second->item<double>();
        if (!std::isfinite(v)) {
          throw TrainingError(std::string("non-finite loss term ") + terms[t].first + " at epoch " +
                              std::to_string(epoch) + ", step " + std::to_string(step));
        }
        sums[t] += v * static_cast<double>(idx.size());
      }
      optimizer.zero_grad();
      losses.total.backward();
      if (hooks.after_backward) hooks.after_backward(step, *model, losses);
      optimizer.step();
    }

    EpochLosses record;
    record.epoch = epoch;
    const auto dn = static_cast<double>(n);
    record.total = sums[0] / dn;
    record.L_VE = sums[1] / dn;
    if (on.contains(Attribute::brightness)) record.L_B = sums[2] / dn;
    if (on.contains(Attribute::colorfulness)) record.L_C = sums[3] / dn;
    if (on.contains(Attribute::scene)) record.L_S = sums[4] / dn;
    if (on.contains(Attribute::facial_expression)) record.L_FE = sums[5] / dn;

    if (validation != nullptr) {
      auto report = evaluate(model, *validation, cfg.augment, cfg.batch_size);
      record.validation_top1 = report.emotion_top1;
      const double top1 = report.emotion_top1.value_or(0.0);
      if (!best_top1 || top1 > *best_top1) {
        best_top1 = top1;
        result.best_epoch = epoch;
        result.report = report;
        result.checkpoint = make_checkpoint(model, &optimizer, cfg, epoch + 1, rng.state());
      }
      model->train();
    }
    result.report.loss_history.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record);
  }

  if (validation == nullptr || !best_top1) {
    auto history = std::move(result.report.loss_history);
    result.report = MetricsReport{};
    result.report.loss_history = std::move(history);
    result.best_epoch = std::max<int64_t>(cfg.epochs, start_epoch) - 1;
    result.checkpoint = make_checkpoint(model, &optimizer, cfg, std::max(cfg.epochs, start_epoch), rng.state());
  } else {
    restore_parameters(*model, result.checkpoint);
  }
  return result;
}

MetricsReport evaluate(A4Net& model, const Dataset& dataset, const AugmentConfig& augment, int64_t batch_size) {
  if (dataset.empty()) throw DomainError("evaluate: empty dataset");
  if (batch_size < 1) throw ConfigError("evaluate: batch_size must be >= 1");
  const bool was_training = model->is_training();
  model->eval();
  torch::NoGradGuard no_grad;
  const AttributeSet on = model->config().attributes;
  const int64_t classes = model->config().emotion_classes;

  bool multi_label = false;
  for (const auto& r : dataset) multi_label = multi_label || r.emotion_labels.size() > 1;

  int64_t correct = 0;
  double b_sum = 0, c_sum = 0;
  int64_t b_n = 0, c_n = 0, s_hit = 0, s_n = 0, f_hit = 0, f_n = 0;
  std::vector<torch::Tensor> probabilities;
  Rng unused(0);
  for (const auto& idx : batches_in_order(dataset.size(), batch_size)) {
    auto batch = collate(dataset, idx, augment, false, unused);
    auto out = model->forward(batch.images);
    const auto& t = batch.targets;
    correct += argmax_lowest(out.logits).eq(t.emotion).sum().item<int64_t>();
    if (multi_label) probabilities.push_back(out.logits.softmax(1));
    const auto& br = out.branches;
    if (on.contains(Attribute::brightness)) {
      b_sum += ((br.y_hat_b.to(torch::kFloat64) - t.brightness.to(torch::kFloat64)).square() * t.brightness_mask)
                   .sum()
                   .item<double>();
      b_n += t.brightness_mask.sum().item<int64_t>();
    }
    if (on.contains(Attribute::colorfulness)) {
      c_sum += ((br.y_hat_c.to(torch::kFloat64) - t.colorfulness.to(torch::kFloat64)).square() * t.colorfulness_mask)
                   .sum()
                   .item<double>();
      c_n += t.colorfulness_mask.sum().item<int64_t>();
    }
    if (on.contains(Attribute::scene)) {
      s_hit += (argmax_lowest(br.y_hat_s).eq(t.scene).to(torch::kFloat32) * t.scene_mask).sum().item<int64_t>();
      s_n += t.scene_mask.sum().item<int64_t>();
    }
    if (on.contains(Attribute::facial_expression)) {
      f_hit += (argmax_lowest(br.y_hat_fe).eq(t.facial_expression).to(torch::kFloat32) * t.fe_mask).sum().item<int64_t>();
      f_n += t.fe_mask.sum().item<int64_t>();
    }
  }
  if (was_training) model->train();

  MetricsReport report;
  report.samples = static_cast<int64_t>(dataset.size());
  report.emotion_top1 = static_cast<double>(correct) / static_cast<double>(dataset.size());
  report.brightness_mse = mean_of(b_sum, b_n, b_n > 0);
  report.colorfulness_mse = mean_of(c_sum, c_n, c_n > 0);
  report.scene_acc = mean_of(static_cast<double>(s_hit), s_n, s_n > 0);
  report.fe_acc = mean_of(static_cast<double>(f_hit), f_n, f_n > 0);
  if (multi_label) {
    auto labels = torch::zeros({report.samples, classes});
    for (size_t i = 0; i < dataset.size(); ++i) {
      for (int64_t l : dataset[i].emotion_labels) labels[static_cast<int64_t>(i)][l] = 1.0;
    }
    report.map_score = mean_average_precision(torch::cat(probabilities), labels);
  }
  return report;
}

torch::Tensor extract_features(A4Net& model, const Dataset& dataset, const AugmentConfig& augment,
                               int64_t batch_size) {
  if (dataset.empty()) throw DomainError("extract_features: empty dataset");
  const bool was_training = model->is_training();
  model->eval();
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  Rng unused(0);
  for (const auto& idx : batches_in_order(dataset.size(), batch_size)) {
    parts.push_back(model->forward(collate(dataset, idx, augment, false, unused).images).fused);
  }
  if (was_training) model->train();
  return torch::cat(parts);
}

}  // namespace a4net
