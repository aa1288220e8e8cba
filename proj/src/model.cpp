#include "a4net/model.hpp"

#include <algorithm>

#include "a4net/errors.hpp"

namespace a4net {

void ModelConfig::validate() const {
  backbone.validate();
  heads.validate();
  if (emotion_classes < 2) throw ConfigError("emotion_classes must be >= 2, got " + std::to_string(emotion_classes));
  ObjectiveWeights w;
  w.mode = ObjectiveMode::fixed;
  w.w_B = w_B;
  w.w_C = w_C;
  w.w_S = w_S;
  w.w_FE = w_FE;
  w.validate();
}

A4NetImpl::A4NetImpl(const ModelConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  auto gen = make_generator(seed);

  backbone = register_module("backbone", Backbone(config_.backbone));
  init_weights(*backbone, gen);

  // The stage clones copy the freshly initialised stage 4, so only the heads
  // and predictors draw new weights here.
  branches = register_module("branches", AttributeBranches(*backbone, config_.heads));
  for (torch::nn::Module* m : std::initializer_list<torch::nn::Module*>{
           branches->head_c.get(), branches->head_b.get(), branches->head_s.get(), branches->head_fe.get(),
           branches->pred_c.get(), branches->pred_b.get(), branches->pred_s.get(), branches->pred_fe.get()}) {
    init_weights(*m, gen);
  }

  fusion = register_module(
      "fusion", FusionHead(config_.backbone.stage_dims[3], config_.heads.embed_dim, config_.emotion_classes));
  init_weights(*fusion, gen);

  if (config_.objective_mode == ObjectiveMode::uncertainty) {
    s_B_ = register_parameter("log_var_B", torch::zeros({}));
    s_C_ = register_parameter("log_var_C", torch::zeros({}));
    s_S_ = register_parameter("log_var_S", torch::zeros({}));
    s_FE_ = register_parameter("log_var_FE", torch::zeros({}));
  }
}

ForwardOutputs A4NetImpl::forward(const torch::Tensor& images, const ActivationHook& hook) {
  ForwardOutputs out;
  out.taps = backbone->forward_with_taps(images, hook);
  out.branches = branches->forward(out.taps, config_.attributes, hook);
  out.fused = fusion->fuse(out.taps.v_final, out.branches);
  out.logits = fusion->classify(out.fused);
  return out;
}

ObjectiveWeights A4NetImpl::objective_weights() const {
  ObjectiveWeights w;
  w.mode = config_.objective_mode;
  w.w_B = config_.w_B;
  w.w_C = config_.w_C;
  w.w_S = config_.w_S;
  w.w_FE = config_.w_FE;
  w.s_B = s_B_;
  w.s_C = s_C_;
  w.s_S = s_S_;
  w.s_FE = s_FE_;
  return w;
}

LossBundle A4NetImpl::losses(const ForwardOutputs& outputs, const Targets& targets) const {
  return compute_losses(outputs.logits, outputs.branches, targets, config_.attributes, objective_weights());
}

std::vector<torch::Tensor> A4NetImpl::branch_parameters(Attribute attribute) const {
  std::vector<torch::Tensor> params;
  auto take = [&](const torch::nn::Module& m) {
    for (const auto& p : m.parameters()) params.push_back(p);
  };
  switch (attribute) {
    case Attribute::brightness:
      take(*branches->head_b);
      take(*branches->pred_b);
      params.push_back(fusion->w_b);
      break;
    case Attribute::colorfulness:
      take(*branches->head_c);
      take(*branches->pred_c);
      params.push_back(fusion->w_c);
      break;
    case Attribute::scene:
      take(*branches->stage_s);
      take(*branches->head_s);
      take(*branches->pred_s);
      params.push_back(fusion->w_s);
      break;
    case Attribute::facial_expression:
      take(*branches->stage_fe);
      take(*branches->head_fe);
      take(*branches->pred_fe);
      params.push_back(fusion->w_f);
      break;
  }
  return params;
}

std::vector<std::string> spatial_layers(const ModelConfig& config) {
  std::vector<std::string> names{std::string(layers::stem),   std::string(layers::v2),
                                 std::string(layers::v1_3),   std::string(layers::stage1),
                                 std::string(layers::stage2), std::string(layers::stage3),
                                 std::string(layers::stage4)};
  if (config.attributes.contains(Attribute::scene)) names.emplace_back(layers::stage_s);
  if (config.attributes.contains(Attribute::facial_expression)) names.emplace_back(layers::stage_fe);
  return names;
}

bool is_spatial_layer(const ModelConfig& config, std::string_view layer) {
  const auto names = spatial_layers(config);
  return std::find(names.begin(), names.end(), layer) != names.end();
}

}  // namespace a4net
