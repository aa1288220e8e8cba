#pragma once

#include <torch/torch.h>

#include <string>
#include <string_view>

#include "a4net/attributes.hpp"
#include "a4net/branches.hpp"

namespace a4net {

// Trainable scalars scaling each branch embedding in the fused sum.
struct FusionWeights {
  torch::Tensor w_c, w_b, w_s, w_f;
};

class FusionHeadImpl : public torch::nn::Module {
 public:
  FusionHeadImpl(int64_t final_channels, int64_t embed_dim, int64_t emotion_classes);

  // Weighted sum v + w_c v_c + w_b v_b + w_s v_s + w_f v_f, where v is the
  // v_final map reduced to embed_dim. Disabled branches (undefined tensors)
  // contribute nothing.
  torch::Tensor fuse(const torch::Tensor& v_final, const BranchOutputs& branches);
  torch::Tensor classify(const torch::Tensor& fused) { return classifier->forward(fused); }

  FusionWeights weights() const { return {w_c, w_b, w_s, w_f}; }

  PreEstimatorHead head_v{nullptr};
  torch::nn::Linear classifier{nullptr};
  torch::Tensor w_c, w_b, w_s, w_f;
};
TORCH_MODULE(FusionHead);

// Emotion logits from an already reduced v embedding. Throws ShapeError when
// any enabled embedding disagrees with v in length.
torch::Tensor fuse_and_classify(const torch::Tensor& v_embed, const BranchOutputs& branches,
                                const FusionWeights& weights, torch::nn::Linear& classifier);

enum class ObjectiveMode { fixed, uncertainty };

std::string to_string(ObjectiveMode mode);
ObjectiveMode parse_objective_mode(std::string_view text);

// Weights on the auxiliary terms. Fixed mode uses the constants; uncertainty
// mode derives each weight as exp(-s) from a trainable log-variance s and adds
// s to the objective.
struct ObjectiveWeights {
  ObjectiveMode mode = ObjectiveMode::fixed;
  double w_B = 1.0, w_C = 1.0, w_S = 1.0, w_FE = 1.0;
  torch::Tensor s_B, s_C, s_S, s_FE;

  void validate() const;
};

struct Targets {
  torch::Tensor emotion;            // kLong, N
  torch::Tensor brightness;         // N, zero where absent
  torch::Tensor colorfulness;       // N
  torch::Tensor scene;              // kLong, N, zero where absent
  torch::Tensor facial_expression;  // kLong, N
  torch::Tensor brightness_mask;    // N, 1 = present
  torch::Tensor colorfulness_mask;
  torch::Tensor scene_mask;
  torch::Tensor fe_mask;
};

// Components are undefined when the attribute is disabled.
struct LossBundle {
  torch::Tensor L_VE, L_B, L_C, L_S, L_FE;
  torch::Tensor total;
};

// Masked mean squared error; zero when no sample is present.
torch::Tensor regression_loss(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& mask);

// Masked mean softmax cross-entropy; zero when no sample is present. Throws
// DomainError for target indices outside [0, K).
torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& target,
                                  const torch::Tensor& mask);

// Mean sigmoid binary cross-entropy over all N x K entries.
torch::Tensor binary_cross_entropy_loss(const torch::Tensor& logits, const torch::Tensor& multi_hot);

torch::Tensor total_objective(const LossBundle& bundle, const ObjectiveWeights& weights);

LossBundle compute_losses(const torch::Tensor& emotion_logits, const BranchOutputs& branches,
                          const Targets& targets, AttributeSet enabled, const ObjectiveWeights& weights);

}  // namespace a4net
