#include "a4net/backbone.hpp"

#include <cmath>

#include "a4net/errors.hpp"

namespace a4net {

namespace {

std::string join(const std::array<int64_t, 4>& values) {
  std::string out = "[";
  for (size_t i = 0; i < values.size(); ++i) {
    if (i != 0) out += ",";
    out += std::to_string(values[i]);
  }
  return out + "]";
}

std::string shape_string(const torch::Tensor& t) {
  std::string out = "(";
  for (int64_t i = 0; i < t.dim(); ++i) {
    if (i != 0) out += " x ";
    out += std::to_string(t.size(i));
  }
  return out + ")";
}

torch::Tensor drop_path(const torch::Tensor& x, double rate, bool training) {
  if (rate <= 0.0 || !training) return x;
  const double keep = 1.0 - rate;
  auto mask = torch::empty({x.size(0), 1, 1, 1}, x.options()).bernoulli_(keep);
  return x * mask / keep;
}

}  // namespace

std::string to_string(Preset preset) {
  switch (preset) {
    case Preset::full:
      return "full";
    case Preset::mini:
      return "mini";
    case Preset::custom:
      return "custom";
  }
  return "custom";
}

Preset parse_preset(std::string_view text) {
  if (text == "full") return Preset::full;
  if (text == "mini") return Preset::mini;
  if (text == "custom") return Preset::custom;
  throw ConfigError("unknown preset '" + std::string(text) + "' (expected full, mini or custom)");
}

BackboneConfig BackboneConfig::full() {
  BackboneConfig c;
  c.stage_depths = {3, 3, 27, 3};
  c.stage_dims = {128, 256, 512, 1024};
  c.input_size = 224;
  c.preset = Preset::full;
  return c;
}

BackboneConfig BackboneConfig::mini() {
  BackboneConfig c;
  c.stage_depths = {3, 3, 4, 3};
  c.stage_dims = {32, 64, 128, 256};
  c.input_size = 64;
  c.preset = Preset::mini;
  return c;
}

void BackboneConfig::validate() const {
  for (size_t i = 0; i < 4; ++i) {
    if (stage_depths[i] < 1) throw ConfigError("stage_depths must be positive, got " + join(stage_depths));
    if (stage_dims[i] < 1) throw ConfigError("stage_dims must be positive, got " + join(stage_dims));
  }
  if (stage_depths[0] < 3) {
    throw ConfigError("stage_depths[0] must be >= 3 (colour/brightness tap is stage-1 block 3), got " +
                      join(stage_depths));
  }
  for (size_t i = 1; i < 4; ++i) {
    if (stage_dims[i] <= stage_dims[i - 1]) {
      throw ConfigError("stage_dims must be strictly increasing, got " + join(stage_dims));
    }
  }
  if (input_size < 32 || input_size % 32 != 0) {
    throw ConfigError("input_size must be a positive multiple of 32, got " + std::to_string(input_size));
  }
  if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0)) {
    throw ConfigError("drop_path_rate must lie in [0, 1), got " + std::to_string(drop_path_rate));
  }
  if (preset != Preset::custom) {
    const BackboneConfig fixed = preset == Preset::full ? full() : mini();
    if (stage_depths != fixed.stage_depths || stage_dims != fixed.stage_dims || input_size != fixed.input_size) {
      throw ConfigError("preset " + to_string(preset) + " fixes stage_depths=" + join(fixed.stage_depths) +
                        ", stage_dims=" + join(fixed.stage_dims) + ", input_size=" +
                        std::to_string(fixed.input_size) + "; use preset custom for other shapes");
    }
  }
}

at::Generator make_generator(uint64_t seed) { return at::detail::createCPUGenerator(seed); }

void trunc_normal_(torch::Tensor& tensor, double std, at::Generator& gen) {
  torch::NoGradGuard no_grad;
  constexpr double bound = 2.0;
  const double lo = 0.5 * (1.0 + std::erf(-bound / std::sqrt(2.0)));
  const double hi = 0.5 * (1.0 + std::erf(bound / std::sqrt(2.0)));
  tensor.uniform_(2.0 * lo - 1.0, 2.0 * hi - 1.0, gen);
  tensor.erfinv_();
  tensor.mul_(std * std::sqrt(2.0));
  tensor.clamp_(-bound * std, bound * std);
}

void init_weights(torch::nn::Module& module, at::Generator& gen) {
  torch::NoGradGuard no_grad;
  module.apply([&](torch::nn::Module& m) {
    if (auto* conv = m.as<torch::nn::Conv2d>()) {
      trunc_normal_(conv->weight, 0.02, gen);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* linear = m.as<torch::nn::Linear>()) {
      trunc_normal_(linear->weight, 0.02, gen);
      if (linear->bias.defined()) linear->bias.zero_();
    }
  });
}

LayerNorm2dImpl::LayerNorm2dImpl(int64_t channels, double eps) : eps_(eps) {
  weight = register_parameter("weight", torch::ones({channels}));
  bias = register_parameter("bias", torch::zeros({channels}));
}

torch::Tensor LayerNorm2dImpl::forward(const torch::Tensor& x) {
  auto mean = x.mean(1, /*keepdim=*/true);
  auto centered = x - mean;
  auto var = centered.pow(2).mean(1, /*keepdim=*/true);
  auto normed = centered / torch::sqrt(var + eps_);
  return weight.view({1, -1, 1, 1}) * normed + bias.view({1, -1, 1, 1});
}

GrnImpl::GrnImpl(int64_t channels, double eps) : eps_(eps) {
  gamma = register_parameter("gamma", torch::zeros({1, 1, 1, channels}));
  beta = register_parameter("beta", torch::zeros({1, 1, 1, channels}));
}

torch::Tensor GrnImpl::forward(const torch::Tensor& x) {
  auto gx = torch::sqrt(x.pow(2).sum({1, 2}, /*keepdim=*/true));
  auto nx = gx / (gx.mean(-1, /*keepdim=*/true) + eps_);
  return gamma * (x * nx) + beta + x;
}

ConvNextBlockImpl::ConvNextBlockImpl(int64_t dim, double drop_path) : drop_path_(drop_path) {
  dwconv_ = register_module("dwconv", torch::nn::Conv2d(torch::nn::Conv2dOptions(dim, dim, 7).padding(3).groups(dim)));
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}).eps(1e-6)));
  pwconv1_ = register_module("pwconv1", torch::nn::Linear(dim, 4 * dim));
  grn_ = register_module("grn", Grn(4 * dim));
  pwconv2_ = register_module("pwconv2", torch::nn::Linear(4 * dim, dim));
}

torch::Tensor ConvNextBlockImpl::forward(const torch::Tensor& x) {
  auto y = dwconv_->forward(x).permute({0, 2, 3, 1});
  y = norm_->forward(y);
  y = pwconv1_->forward(y);
  y = torch::gelu(y);
  y = grn_->forward(y);
  y = pwconv2_->forward(y);
  y = y.permute({0, 3, 1, 2});
  return x + drop_path(y, drop_path_, is_training());
}

StageImpl::StageImpl(int64_t in_dim, int64_t dim, int64_t depth, bool downsample, double drop_path)
    : in_dim_(in_dim), dim_(dim), drop_path_(drop_path) {
  if (downsample) {
    downsample_ = register_module(
        "downsample",
        torch::nn::Sequential(LayerNorm2d(in_dim), torch::nn::Conv2d(torch::nn::Conv2dOptions(in_dim, dim, 2).stride(2))));
  }
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < depth; ++i) blocks_->push_back(ConvNextBlock(dim, drop_path));
}

torch::Tensor StageImpl::forward(const torch::Tensor& x) {
  return forward_blocks(x, [](size_t, torch::Tensor t) { return t; });
}

torch::Tensor StageImpl::forward_blocks(const torch::Tensor& x,
                                        const std::function<torch::Tensor(size_t, torch::Tensor)>& visit) {
  if (x.dim() != 4 || x.size(1) != in_dim_) {
    throw ShapeError("stage expects " + std::to_string(in_dim_) + " input channels, got " + shape_string(x));
  }
  auto y = has_downsample() ? downsample_->forward(x) : x;
  for (size_t i = 0; i < blocks_->size(); ++i) {
    y = visit(i, blocks_->at<ConvNextBlockImpl>(i).forward(y));
  }
  return y;
}

ConvNextBlock StageImpl::block(size_t index) const { return blocks_->ptr<ConvNextBlockImpl>(index); }

BackboneImpl::BackboneImpl(const BackboneConfig& config) : config_(config) {
  config_.validate();
  const auto& dims = config_.stage_dims;
  const auto& depths = config_.stage_depths;
  stem_ = register_module(
      "stem", torch::nn::Sequential(torch::nn::Conv2d(torch::nn::Conv2dOptions(3, dims[0], 4).stride(4)),
                                    LayerNorm2d(dims[0])));
  for (size_t i = 0; i < 4; ++i) {
    const int64_t in_dim = i == 0 ? dims[0] : dims[i - 1];
    stages_[i] = register_module("stage" + std::to_string(i + 1),
                                 Stage(in_dim, dims[i], depths[i], /*downsample=*/i != 0, config_.drop_path_rate));
  }
  input_mean_ = register_buffer(
      "input_mean", torch::tensor(std::vector<double>(kInputMean.begin(), kInputMean.end())).view({1, 3, 1, 1}).to(torch::kFloat32));
  input_std_ = register_buffer(
      "input_std", torch::tensor(std::vector<double>(kInputStd.begin(), kInputStd.end())).view({1, 3, 1, 1}).to(torch::kFloat32));
}

TapFeatures BackboneImpl::forward_with_taps(const torch::Tensor& images, const ActivationHook& hook) {
  const int64_t size = config_.input_size;
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != size || images.size(3) != size) {
    throw ShapeError("backbone expects (N x 3 x " + std::to_string(size) + " x " + std::to_string(size) +
                     "), got " + shape_string(images));
  }
  auto tap = [&](std::string_view name, torch::Tensor t) { return hook ? hook(name, std::move(t)) : t; };

  TapFeatures taps;
  auto x = tap(layers::stem, stem_->forward((images - input_mean_) / input_std_));
  x = stages_[0]->forward_blocks(x, [&](size_t i, torch::Tensor y) {
    if (i == 1) {
      taps.v2 = tap(layers::v2, std::move(y));
      return taps.v2;
    }
    if (i == 2) {
      taps.v1_3 = tap(layers::v1_3, std::move(y));
      return taps.v1_3;
    }
    return y;
  });
  x = tap(layers::stage1, x);
  if (config_.stage_depths[0] == 3) taps.v1_3 = x;
  x = tap(layers::stage2, stages_[1]->forward(x));
  taps.v27 = tap(layers::stage3, stages_[2]->forward(x));
  taps.v_final = tap(layers::stage4, stages_[3]->forward(taps.v27));
  return taps;
}

Backbone build_backbone(const BackboneConfig& config, uint64_t seed) {
  config.validate();
  Backbone backbone(config);
  auto gen = make_generator(seed);
  init_weights(*backbone, gen);
  return backbone;
}

Stage clone_stage(const Stage& source) {
  Stage copy(source->in_dim(), source->out_dim(), source->depth(), source->has_downsample(), source->drop_path());
  torch::NoGradGuard no_grad;
  auto src = source->named_parameters();
  auto dst = copy->named_parameters();
  for (auto& item : dst) item.value().copy_(src[item.key()]);
  return copy;
}

}  // namespace a4net
