#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <optional>
#include <string>

#include "a4net/backbone.hpp"
#include "a4net/image.hpp"
#include "a4net/model.hpp"

namespace a4net {

struct CamRequest {
  std::string layer_id = std::string(layers::stage4);
  std::optional<int64_t> target_class;  // empty: the predicted class
};

struct Heatmap {
  torch::Tensor values;  // H x W float64 in [0, 1]
  int64_t source_height = 0;
  int64_t source_width = 0;

  int64_t height() const { return values.size(0); }
  int64_t width() const { return values.size(1); }
};

// Core map from one sample's activation A and gradient dY/dA (both C x H x W):
// alpha_k = mean over H x W of the gradient, map = max(0, sum_k alpha_k A_k),
// divided by its maximum when that is positive, else left all zero.
Heatmap heatmap_from(const torch::Tensor& activation, const torch::Tensor& gradient);

// Differentiates score_fn(A) (a scalar) with respect to A and applies
// heatmap_from. Used by grad_cam and usable on any function of a map.
Heatmap cam_from_score(const torch::Tensor& activation, const std::function<torch::Tensor(const torch::Tensor&)>& score_fn);

// Bilinear, half-pixel aligned; keeps the source dims.
Heatmap upsample(const Heatmap& heatmap, int64_t height, int64_t width);

struct CamResult {
  Heatmap heatmap;  // at the layer's resolution
  std::string layer_id;
  int64_t target_class = 0;
  int64_t predicted_class = 0;
  double target_probability = 0.0;
  double predicted_probability = 0.0;
};

// `image` is 3 x S x S (one preprocessed sample). ConfigError for a layer
// that produces no spatial map in this model, DomainError for a class outside
// [0, emotion_classes). Parameters are never modified. Calls are serialised,
// so concurrent use is safe.
CamResult grad_cam(A4Net& model, const torch::Tensor& image, const CamRequest& request);

// (1 - alpha) * image + alpha * viridis(heatmap); heatmap dims must equal the
// image's. alpha = 0 returns the image and alpha = 1 the colour map exactly.
Image overlay_image(const Image& image, const Heatmap& heatmap, double alpha);
void render_overlay(const Image& image, const Heatmap& heatmap, const std::filesystem::path& output_path, double alpha);

nlohmann::json cam_sidecar(const CamResult& result);

// Sum of heatmap values in each quadrant (0 top-left, 1 top-right,
// 2 bottom-left, 3 bottom-right); odd sizes split the middle row/column.
std::array<double, 4> quadrant_mass(const Heatmap& heatmap);

}  // namespace a4net
