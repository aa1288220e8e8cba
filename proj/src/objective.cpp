#include "a4net/objective.hpp"

#include "a4net/errors.hpp"

namespace a4net {

namespace {

torch::Tensor weighted_sum(const torch::Tensor& v, const BranchOutputs& branches, const FusionWeights& weights) {
  auto fused = v;
  auto add = [&](const torch::Tensor& embedding, const torch::Tensor& w, const char* name) {
    if (!embedding.defined()) return;
    if (embedding.sizes() != v.sizes()) {
      throw ShapeError(std::string("fusion: ") + name + " embedding has length " +
                       std::to_string(embedding.size(-1)) + ", v has " + std::to_string(v.size(-1)));
    }
    fused = fused + w * embedding;
  };
  add(branches.v_c, weights.w_c, "v_c");
  add(branches.v_b, weights.w_b, "v_b");
  add(branches.v_s, weights.w_s, "v_s");
  add(branches.v_f, weights.w_f, "v_f");
  return fused;
}

}  // namespace

FusionHeadImpl::FusionHeadImpl(int64_t final_channels, int64_t embed_dim, int64_t emotion_classes) {
  head_v = register_module("head_v", PreEstimatorHead(final_channels, embed_dim));
  classifier = register_module("classifier", torch::nn::Linear(embed_dim, emotion_classes));
  w_c = register_parameter("w_c", torch::ones({}));
  w_b = register_parameter("w_b", torch::ones({}));
  w_s = register_parameter("w_s", torch::ones({}));
  w_f = register_parameter("w_f", torch::ones({}));
}

torch::Tensor FusionHeadImpl::fuse(const torch::Tensor& v_final, const BranchOutputs& branches) {
  return weighted_sum(head_v->forward(v_final), branches, weights());
}

torch::Tensor fuse_and_classify(const torch::Tensor& v_embed, const BranchOutputs& branches,
                                const FusionWeights& weights, torch::nn::Linear& classifier) {
  return classifier->forward(weighted_sum(v_embed, branches, weights));
}

std::string to_string(ObjectiveMode mode) { return mode == ObjectiveMode::fixed ? "fixed" : "uncertainty"; }

ObjectiveMode parse_objective_mode(std::string_view text) {
  if (text == "fixed") return ObjectiveMode::fixed;
  if (text == "uncertainty") return ObjectiveMode::uncertainty;
  throw ConfigError("unknown objective_mode '" + std::string(text) + "' (expected fixed or uncertainty)");
}

void ObjectiveWeights::validate() const {
  if (mode == ObjectiveMode::fixed) {
    for (double w : {w_B, w_C, w_S, w_FE}) {
      if (!(w >= 0.0)) throw ConfigError("fixed objective weights must be nonnegative, got " + std::to_string(w));
    }
    return;
  }
  if (!s_B.defined() || !s_C.defined() || !s_S.defined() || !s_FE.defined()) {
    throw ConfigError("uncertainty mode needs all four log-variance tensors");
  }
}

torch::Tensor regression_loss(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& mask) {
  if (pred.sizes() != target.sizes() || pred.sizes() != mask.sizes()) {
    throw ShapeError("regression_loss: prediction, target and mask lengths differ (" +
                     std::to_string(pred.numel()) + ", " + std::to_string(target.numel()) + ", " +
                     std::to_string(mask.numel()) + ")");
  }
  auto m = mask.to(pred.dtype());
  auto count = m.sum().clamp_min(1.0);
  return ((pred - target.to(pred.dtype())).pow(2) * m).sum() / count;
}

torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& target,
                                  const torch::Tensor& mask) {
  if (logits.dim() != 2 || target.dim() != 1 || target.size(0) != logits.size(0) ||
      mask.sizes() != target.sizes()) {
    throw ShapeError("classification_loss expects N x K logits with N targets and N mask entries");
  }
  const int64_t classes = logits.size(1);
  auto live = target.masked_select(mask > 0);
  if (live.numel() > 0) {
    const int64_t lo = live.min().item<int64_t>();
    const int64_t hi = live.max().item<int64_t>();
    if (lo < 0 || hi >= classes) {
      throw DomainError("classification_loss: target index " + std::to_string(hi >= classes ? hi : lo) +
                        " outside [0, " + std::to_string(classes) + ")");
    }
  }
  auto safe_target = torch::where(mask > 0, target, torch::zeros_like(target)).unsqueeze(1);
  auto shifted = logits - std::get<0>(logits.max(1, /*keepdim=*/true)).detach();
  auto log_norm = shifted.exp().sum(1).log();
  auto nll = log_norm - shifted.gather(1, safe_target).squeeze(1);
  auto m = mask.to(logits.dtype());
  return (nll * m).sum() / m.sum().clamp_min(1.0);
}

torch::Tensor binary_cross_entropy_loss(const torch::Tensor& logits, const torch::Tensor& multi_hot) {
  if (logits.sizes() != multi_hot.sizes()) throw ShapeError("binary_cross_entropy_loss: shape mismatch");
  auto y = multi_hot.to(logits.dtype());
  auto per_entry = logits.clamp_min(0) - logits * y + torch::log1p(torch::exp(-logits.abs()));
  return per_entry.mean();
}

torch::Tensor total_objective(const LossBundle& bundle, const ObjectiveWeights& weights) {
  if (!bundle.L_VE.defined()) throw ConfigError("total_objective: the emotion loss is required");
  weights.validate();
  auto total = bundle.L_VE;
  auto add = [&](const torch::Tensor& loss, double fixed, const torch::Tensor& log_var) {
    if (!loss.defined()) return;
    if (weights.mode == ObjectiveMode::fixed) {
      total = total + fixed * loss;
    } else {
      total = total + torch::exp(-log_var) * loss + log_var;
    }
  };
  add(bundle.L_B, weights.w_B, weights.s_B);
  add(bundle.L_C, weights.w_C, weights.s_C);
  add(bundle.L_S, weights.w_S, weights.s_S);
  add(bundle.L_FE, weights.w_FE, weights.s_FE);
  return total;
}

LossBundle compute_losses(const torch::Tensor& emotion_logits, const BranchOutputs& branches,
                          const Targets& targets, AttributeSet enabled, const ObjectiveWeights& weights) {
  LossBundle bundle;
  bundle.L_VE = classification_loss(emotion_logits, targets.emotion, torch::ones_like(targets.emotion));
  if (enabled.contains(Attribute::brightness)) {
    bundle.L_B = regression_loss(branches.y_hat_b, targets.brightness, targets.brightness_mask);
  }
  if (enabled.contains(Attribute::colorfulness)) {
    bundle.L_C = regression_loss(branches.y_hat_c, targets.colorfulness, targets.colorfulness_mask);
  }
  if (enabled.contains(Attribute::scene)) {
    bundle.L_S = classification_loss(branches.y_hat_s, targets.scene, targets.scene_mask);
  }
  if (enabled.contains(Attribute::facial_expression)) {
    bundle.L_FE = classification_loss(branches.y_hat_fe, targets.facial_expression, targets.fe_mask);
  }
  bundle.total = total_objective(bundle, weights);
  return bundle;
}

}  // namespace a4net
