#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "a4net/attributes.hpp"
#include "a4net/backbone.hpp"

namespace a4net {

struct BranchHeadConfig {
  int64_t embed_dim = 128;
  int64_t scene_classes = 5;  // last index is the unknown scene
  int64_t fe_classes = 4;     // last index is "unknown expression / no face"

  static BranchHeadConfig full() { return {1024, 255, 7}; }
  static BranchHeadConfig mini() { return {128, 5, 4}; }

  void validate() const;
};

// FC(LayerNorm(GAP(x))): the composition every branch and the fused v path
// use to turn a feature map into an embedding.
class PreEstimatorHeadImpl : public torch::nn::Module {
 public:
  PreEstimatorHeadImpl(int64_t in_channels, int64_t embed_dim);
  torch::Tensor forward(const torch::Tensor& feature_map);

  int64_t in_channels() const { return in_channels_; }
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear fc{nullptr};

 private:
  int64_t in_channels_;
};
TORCH_MODULE(PreEstimatorHead);

torch::Tensor pre_estimator_head(const torch::Tensor& feature_map, PreEstimatorHead& head);

// Undefined tensors mark branches that are disabled for this model.
struct BranchOutputs {
  torch::Tensor v_c;       // N x embed_dim
  torch::Tensor v_b;
  torch::Tensor v_s;
  torch::Tensor v_f;
  torch::Tensor y_hat_c;   // N
  torch::Tensor y_hat_b;   // N
  torch::Tensor y_hat_s;   // N x scene_classes, unnormalised
  torch::Tensor y_hat_fe;  // N x fe_classes, unnormalised
  torch::Tensor stage_s;   // Stage S output map
  torch::Tensor stage_fe;  // Stage FE output map
};

class AttributeBranchesImpl : public torch::nn::Module {
 public:
  // Stage S and Stage FE start as copies of backbone stage 4.
  AttributeBranchesImpl(const BackboneImpl& backbone, const BranchHeadConfig& config);

  BranchOutputs forward(const TapFeatures& taps, AttributeSet enabled, const ActivationHook& hook = {});

  std::pair<torch::Tensor, torch::Tensor> color_branch(const TapFeatures& taps);
  std::pair<torch::Tensor, torch::Tensor> brightness_branch(const TapFeatures& taps);
  std::pair<torch::Tensor, torch::Tensor> scene_branch(const TapFeatures& taps, const ActivationHook& hook = {});
  std::pair<torch::Tensor, torch::Tensor> fe_branch(const TapFeatures& taps, const ActivationHook& hook = {});

  const BranchHeadConfig& config() const { return config_; }

  PreEstimatorHead head_c{nullptr}, head_b{nullptr}, head_s{nullptr}, head_fe{nullptr};
  torch::nn::Linear pred_c{nullptr}, pred_b{nullptr}, pred_s{nullptr}, pred_fe{nullptr};
  Stage stage_s{nullptr}, stage_fe{nullptr};

 private:
  BranchHeadConfig config_;
};
TORCH_MODULE(AttributeBranches);

torch::Tensor stage_clone_forward(const torch::Tensor& x, Stage& stage);

// Row-wise argmax; ties resolve to the lowest index.
torch::Tensor argmax_lowest(const torch::Tensor& logits);

}  // namespace a4net
