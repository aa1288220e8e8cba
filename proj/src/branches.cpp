#include "a4net/branches.hpp"

#include "a4net/errors.hpp"

namespace a4net {

void BranchHeadConfig::validate() const {
  if (embed_dim < 1) throw ConfigError("embed_dim must be positive, got " + std::to_string(embed_dim));
  if (scene_classes < 2) {
    throw ConfigError("scene_classes must be >= 2 (includes the unknown class), got " + std::to_string(scene_classes));
  }
  if (fe_classes < 2) {
    throw ConfigError("fe_classes must be >= 2 (includes the no-face class), got " + std::to_string(fe_classes));
  }
}

PreEstimatorHeadImpl::PreEstimatorHeadImpl(int64_t in_channels, int64_t embed_dim) : in_channels_(in_channels) {
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({in_channels}).eps(1e-6)));
  fc = register_module("fc", torch::nn::Linear(in_channels, embed_dim));
}

torch::Tensor PreEstimatorHeadImpl::forward(const torch::Tensor& feature_map) {
  if (feature_map.dim() != 4 || feature_map.size(1) != in_channels_) {
    std::string got = "(";
    for (int64_t i = 0; i < feature_map.dim(); ++i) got += (i ? " x " : "") + std::to_string(feature_map.size(i));
    throw ShapeError("pre-estimator head expects N x " + std::to_string(in_channels_) + " x H x W, got " + got + ")");
  }
  auto pooled = feature_map.mean({2, 3});
  return fc->forward(norm->forward(pooled));
}

torch::Tensor pre_estimator_head(const torch::Tensor& feature_map, PreEstimatorHead& head) {
  return head->forward(feature_map);
}

torch::Tensor stage_clone_forward(const torch::Tensor& x, Stage& stage) { return stage->forward(x); }

AttributeBranchesImpl::AttributeBranchesImpl(const BackboneImpl& backbone, const BranchHeadConfig& config)
    : config_(config) {
  config_.validate();
  const auto& dims = backbone.config().stage_dims;
  const int64_t e = config_.embed_dim;
  head_c = register_module("head_c", PreEstimatorHead(dims[0], e));
  head_b = register_module("head_b", PreEstimatorHead(dims[0], e));
  head_s = register_module("head_s", PreEstimatorHead(dims[3], e));
  head_fe = register_module("head_fe", PreEstimatorHead(dims[3], e));
  pred_c = register_module("pred_c", torch::nn::Linear(e, 1));
  pred_b = register_module("pred_b", torch::nn::Linear(e, 1));
  pred_s = register_module("pred_s", torch::nn::Linear(e, config_.scene_classes));
  pred_fe = register_module("pred_fe", torch::nn::Linear(e, config_.fe_classes));
  stage_s = register_module("stage_s", clone_stage(backbone.stage(3)));
  stage_fe = register_module("stage_fe", clone_stage(backbone.stage(3)));
}

std::pair<torch::Tensor, torch::Tensor> AttributeBranchesImpl::color_branch(const TapFeatures& taps) {
  auto v = head_c->forward(taps.v1_3);
  return {v, pred_c->forward(v).squeeze(1)};
}

std::pair<torch::Tensor, torch::Tensor> AttributeBranchesImpl::brightness_branch(const TapFeatures& taps) {
  auto v = head_b->forward(taps.v1_3);
  return {v, pred_b->forward(v).squeeze(1)};
}

std::pair<torch::Tensor, torch::Tensor> AttributeBranchesImpl::scene_branch(const TapFeatures& taps,
                                                                            const ActivationHook& hook) {
  auto map = stage_clone_forward(taps.v27, stage_s);
  if (hook) map = hook(layers::stage_s, map);
  auto v = head_s->forward(map);
  return {v, pred_s->forward(v)};
}

std::pair<torch::Tensor, torch::Tensor> AttributeBranchesImpl::fe_branch(const TapFeatures& taps,
                                                                         const ActivationHook& hook) {
  auto map = stage_clone_forward(taps.v27, stage_fe);
  if (hook) map = hook(layers::stage_fe, map);
  auto v = head_fe->forward(map);
  return {v, pred_fe->forward(v)};
}

BranchOutputs AttributeBranchesImpl::forward(const TapFeatures& taps, AttributeSet enabled,
                                             const ActivationHook& hook) {
  BranchOutputs out;
  if (enabled.contains(Attribute::colorfulness)) std::tie(out.v_c, out.y_hat_c) = color_branch(taps);
  if (enabled.contains(Attribute::brightness)) std::tie(out.v_b, out.y_hat_b) = brightness_branch(taps);
  if (enabled.contains(Attribute::scene)) {
    ActivationHook capture = [&](std::string_view name, torch::Tensor t) {
      out.stage_s = hook ? hook(name, std::move(t)) : t;
      return out.stage_s;
    };
    std::tie(out.v_s, out.y_hat_s) = scene_branch(taps, capture);
  }
  if (enabled.contains(Attribute::facial_expression)) {
    ActivationHook capture = [&](std::string_view name, torch::Tensor t) {
      out.stage_fe = hook ? hook(name, std::move(t)) : t;
      return out.stage_fe;
    };
    std::tie(out.v_f, out.y_hat_fe) = fe_branch(taps, capture);
  }
  return out;
}

torch::Tensor argmax_lowest(const torch::Tensor& logits) {
  auto max = std::get<0>(logits.max(1, /*keepdim=*/true));
  auto index = torch::arange(logits.size(1), logits.options().dtype(torch::kLong)).unsqueeze(0).expand_as(logits);
  auto candidates = torch::where(logits == max, index, torch::full_like(index, logits.size(1)));
  return std::get<0>(candidates.min(1));
}

}  // namespace a4net
