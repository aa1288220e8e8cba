#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <json.hpp>
#include <string>
#include <string_view>

#include "a4net/attributes.hpp"
#include "a4net/checkpoint.hpp"
#include "a4net/dataset.hpp"
#include "a4net/metrics.hpp"
#include "a4net/model.hpp"
#include "a4net/preprocess.hpp"

namespace a4net {

enum class LrSchedule { constant, cosine };
std::string to_string(LrSchedule schedule);
LrSchedule parse_lr_schedule(std::string_view text);

// AdamW moment constants; stored in every checkpoint snapshot.
inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct TrainConfig {
  int64_t batch_size = 80;
  double learning_rate = 3e-6;
  double weight_decay = 1e-4;
  int64_t epochs = 20;
  uint64_t seed = 0;
  AttributeSet attribute_set = AttributeSet::all();
  ObjectiveMode objective_mode = ObjectiveMode::fixed;
  int64_t emotion_classes = 8;
  // Linear warmup over the first warmup_epochs, then `schedule` to the end.
  int64_t warmup_epochs = 0;
  LrSchedule schedule = LrSchedule::constant;
  AugmentConfig augment{224, 0.5, 0, 1.14};

  static TrainConfig full();
  static TrainConfig mini();

  void validate() const;
};

// Learning rate at optimizer step `step` (0-based) of `total_steps`.
double scheduled_lr(const TrainConfig& cfg, int64_t step, int64_t steps_per_epoch);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainHooks {
  std::function<void(const EpochLosses&)> on_epoch;
  // After backward, before the optimizer step.
  std::function<void(int64_t step, A4NetImpl& model, const LossBundle& losses)> after_backward;
};

struct TrainResult {
  Checkpoint checkpoint;
  MetricsReport report;  // validation metrics of the kept model; loss history always
  int64_t best_epoch = 0;
};

// AdamW over seeded shuffles of `train_set`. With a validation set the
// epoch with the highest validation top-1 (earliest on ties) is kept: the
// model is left holding those weights and the checkpoint records them.
// `resume` continues from a saved epoch, optimizer state and rng state.
TrainResult train(A4Net& model, const Dataset& train_set, const TrainConfig& cfg, const Dataset* validation = nullptr,
                  const TrainHooks& hooks = {}, const Checkpoint* resume = nullptr);

// Eval-mode preprocessing, no autograd, lowest-index argmax. Branch metrics
// cover only enabled branches and samples whose label is present.
MetricsReport evaluate(A4Net& model, const Dataset& dataset, const AugmentConfig& augment, int64_t batch_size = 64);

// Fused pre-logit vectors (N x embed_dim), eval-mode preprocessing.
torch::Tensor extract_features(A4Net& model, const Dataset& dataset, const AugmentConfig& augment,
                               int64_t batch_size = 64);

Checkpoint make_checkpoint(A4Net& model, torch::optim::AdamW* optimizer, const TrainConfig& cfg, int64_t epoch,
                           const std::string& rng_state);
ModelConfig checkpoint_model_config(const Checkpoint& ckpt);
// Throws ConfigError when the snapshot disagrees with `expected`.
void check_compatible(const Checkpoint& ckpt, const ModelConfig& expected);
A4Net model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace a4net
