#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "a4net/attributes.hpp"
#include "a4net/backbone.hpp"
#include "a4net/branches.hpp"
#include "a4net/objective.hpp"

namespace a4net {

struct ModelConfig {
  BackboneConfig backbone = BackboneConfig::mini();
  BranchHeadConfig heads = BranchHeadConfig::mini();
  int64_t emotion_classes = 4;
  AttributeSet attributes = AttributeSet::all();
  ObjectiveMode objective_mode = ObjectiveMode::fixed;
  double w_B = 1.0, w_C = 1.0, w_S = 1.0, w_FE = 1.0;

  void validate() const;
};

struct ForwardOutputs {
  TapFeatures taps;
  BranchOutputs branches;
  torch::Tensor fused;   // N x embed_dim, the emotion classifier input
  torch::Tensor logits;  // N x emotion_classes
};

class A4NetImpl : public torch::nn::Module {
 public:
  A4NetImpl(const ModelConfig& config, uint64_t seed);

  ForwardOutputs forward(const torch::Tensor& images, const ActivationHook& hook = {});
  LossBundle losses(const ForwardOutputs& outputs, const Targets& targets) const;

  const ModelConfig& config() const { return config_; }
  ObjectiveWeights objective_weights() const;

  // Parameters owned exclusively by one branch. Stage S/FE are included in
  // the scene/expression sets.
  std::vector<torch::Tensor> branch_parameters(Attribute attribute) const;

  Backbone backbone{nullptr};
  AttributeBranches branches{nullptr};
  FusionHead fusion{nullptr};

 private:
  ModelConfig config_;
  torch::Tensor s_B_, s_C_, s_S_, s_FE_;
};
TORCH_MODULE(A4Net);

// A spatial layer canonical name -> true when forward() calls the hook with it
// for this model's configuration.
bool is_spatial_layer(const ModelConfig& config, std::string_view layer);
std::vector<std::string> spatial_layers(const ModelConfig& config);

}  // namespace a4net
