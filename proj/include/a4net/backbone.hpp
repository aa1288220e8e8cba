#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace a4net {

enum class Preset { full, mini, custom };

std::string to_string(Preset preset);
Preset parse_preset(std::string_view text);

struct BackboneConfig {
  std::array<int64_t, 4> stage_depths{3, 3, 4, 3};
  std::array<int64_t, 4> stage_dims{32, 64, 128, 256};
  int64_t input_size = 64;
  double drop_path_rate = 0.0;
  Preset preset = Preset::mini;

  // ConvNeXt-V2-B widths; depths [3,3,27,3] give the paper-scale v27 tap.
  static BackboneConfig full();
  static BackboneConfig mini();

  // Throws ConfigError naming the violated invariant.
  void validate() const;
};

// Called for every spatial feature map the network produces, with its
// canonical layer name. The returned tensor replaces the activation for the
// rest of the forward pass, which is how Grad-CAM gets a leaf to
// differentiate against. An empty hook is a no-op.
using ActivationHook = std::function<torch::Tensor(std::string_view layer, torch::Tensor)>;

namespace layers {
inline constexpr std::string_view stem = "backbone.stem";
inline constexpr std::string_view v2 = "backbone.stage1.block2";
inline constexpr std::string_view v1_3 = "backbone.stage1.block3";
inline constexpr std::string_view stage1 = "backbone.stage1";
inline constexpr std::string_view stage2 = "backbone.stage2";
inline constexpr std::string_view stage3 = "backbone.stage3";
inline constexpr std::string_view stage4 = "backbone.stage4";
inline constexpr std::string_view stage_s = "stage_s";
inline constexpr std::string_view stage_fe = "stage_fe";
}  // namespace layers

// Tensor initialisation shared by every module in the network.
// Truncated at two standard deviations.
void trunc_normal_(torch::Tensor& tensor, double std, at::Generator& gen);
// Conv/linear weights ~ truncated normal(0.02), biases zero. Norm layers and
// GRN keep their constructor values.
void init_weights(torch::nn::Module& module, at::Generator& gen);
at::Generator make_generator(uint64_t seed);

// Layer normalisation over the channel axis of an NCHW map.
class LayerNorm2dImpl : public torch::nn::Module {
 public:
  explicit LayerNorm2dImpl(int64_t channels, double eps = 1e-6);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight;
  torch::Tensor bias;

 private:
  double eps_;
};
TORCH_MODULE(LayerNorm2d);

// Global response normalisation on an NHWC tensor.
class GrnImpl : public torch::nn::Module {
 public:
  explicit GrnImpl(int64_t channels, double eps = 1e-6);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor gamma;
  torch::Tensor beta;

 private:
  double eps_;
};
TORCH_MODULE(Grn);

// dwconv7x7 -> LN -> Linear(4C) -> GELU -> GRN -> Linear(C) -> residual add.
class ConvNextBlockImpl : public torch::nn::Module {
 public:
  ConvNextBlockImpl(int64_t dim, double drop_path);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d dwconv_{nullptr};
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear pwconv1_{nullptr};
  Grn grn_{nullptr};
  torch::nn::Linear pwconv2_{nullptr};
  double drop_path_;
};
TORCH_MODULE(ConvNextBlock);

// Optional (LN, 2x2/2 conv) downsample followed by a run of ConvNeXt blocks.
class StageImpl : public torch::nn::Module {
 public:
  StageImpl(int64_t in_dim, int64_t dim, int64_t depth, bool downsample, double drop_path);

  torch::Tensor forward(const torch::Tensor& x);
  // Runs the stage and calls visit(block_index, output) after every block.
  torch::Tensor forward_blocks(const torch::Tensor& x,
                               const std::function<torch::Tensor(size_t, torch::Tensor)>& visit);

  int64_t in_dim() const { return in_dim_; }
  int64_t out_dim() const { return dim_; }
  int64_t depth() const { return static_cast<int64_t>(blocks_->size()); }
  bool has_downsample() const { return !downsample_.is_empty(); }
  double drop_path() const { return drop_path_; }
  ConvNextBlock block(size_t index) const;

 private:
  int64_t in_dim_;
  int64_t dim_;
  double drop_path_;
  torch::nn::Sequential downsample_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
};
TORCH_MODULE(Stage);

struct TapFeatures {
  torch::Tensor v2;       // stage-1 block 2 output
  torch::Tensor v1_3;     // stage-1 block 3 output
  torch::Tensor v27;      // last stage-3 block output
  torch::Tensor v_final;  // last stage-4 block output
};

// Inputs in [0, 1] are standardised with fixed per-channel ImageNet
// statistics before the stem. The shift matters: after a bias-free stem conv,
// the per-pixel channel LayerNorm would otherwise be blind to how bright a
// patch is.
inline constexpr std::array<double, 3> kInputMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kInputStd{0.229, 0.224, 0.225};

class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(const BackboneConfig& config);

  TapFeatures forward_with_taps(const torch::Tensor& images, const ActivationHook& hook = {});

  const BackboneConfig& config() const { return config_; }
  Stage stage(size_t index) const { return stages_[index]; }

 private:
  BackboneConfig config_;
  torch::nn::Sequential stem_{nullptr};
  std::array<Stage, 4> stages_{nullptr, nullptr, nullptr, nullptr};
  torch::Tensor input_mean_, input_std_;
};
TORCH_MODULE(Backbone);

// Validates the config and initialises weights from a generator seeded with
// `seed`; the global torch generator is left alone.
Backbone build_backbone(const BackboneConfig& config, uint64_t seed);

// Makes a fresh stage with the same shape as `source` and copies its
// parameters in; the two share no storage afterwards.
Stage clone_stage(const Stage& source);

}  // namespace a4net
