#include "a4net/explain.hpp"

#include <cmath>
#include <mutex>

#include "a4net/branches.hpp"
#include "a4net/colormap.hpp"
#include "a4net/errors.hpp"

namespace a4net {

Heatmap heatmap_from(const torch::Tensor& activation, const torch::Tensor& gradient) {
  if (activation.dim() != 3 || gradient.sizes() != activation.sizes()) {
    throw ShapeError("heatmap_from expects C x H x W activation and gradient of equal shape");
  }
  const auto a = activation.detach().to(torch::kFloat64);
  const auto g = gradient.detach().to(torch::kFloat64);
  const auto alpha = g.mean({1, 2}, /*keepdim=*/true);
  auto map = (alpha * a).sum(0).clamp_min(0.0);
  const double peak = map.max().item<double>();
  map = peak > 0.0 ? map / peak : torch::zeros_like(map);
  return {map.contiguous(), a.size(1), a.size(2)};
}

Heatmap cam_from_score(const torch::Tensor& activation,
                       const std::function<torch::Tensor(const torch::Tensor&)>& score_fn) {
  const auto leaf = activation.detach().clone().requires_grad_(true);
  const auto score = score_fn(leaf);
  if (score.numel() != 1) throw ShapeError("cam_from_score: score must be a scalar");
  auto grads = torch::autograd::grad({score.reshape({})}, {leaf}, {}, false, false, /*allow_unused=*/true);
  const auto grad = grads[0].defined() ? grads[0] : torch::zeros_like(leaf);
  return heatmap_from(leaf, grad);
}

Heatmap upsample(const Heatmap& heatmap, int64_t height, int64_t width) {
  namespace F = torch::nn::functional;
  auto up = F::interpolate(heatmap.values.unsqueeze(0).unsqueeze(0),
                           F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{height, width})
                               .mode(torch::kBilinear)
                               .align_corners(false));
  return {up.squeeze(0).squeeze(0).clamp(0.0, 1.0).contiguous(), heatmap.source_height, heatmap.source_width};
}

CamResult grad_cam(A4Net& model, const torch::Tensor& image, const CamRequest& request) {
  static std::mutex serial;
  std::lock_guard<std::mutex> lock(serial);

  const auto& mc = model->config();
  if (!is_spatial_layer(mc, request.layer_id)) {
    throw ConfigError("layer '" + request.layer_id + "' produces no spatial feature map in this model");
  }
  if (request.target_class && (*request.target_class < 0 || *request.target_class >= mc.emotion_classes)) {
    throw DomainError("target class " + std::to_string(*request.target_class) + " outside [0, " +
                      std::to_string(mc.emotion_classes) + ")");
  }
  const auto input = image.dim() == 3 ? image.unsqueeze(0) : image;
  if (input.dim() != 4 || input.size(0) != 1) throw ShapeError("grad_cam expects one 3 x S x S image");

  const bool was_training = model->is_training();
  model->eval();
  torch::Tensor leaf;
  const ActivationHook hook = [&](std::string_view layer, torch::Tensor t) {
    if (layer != request.layer_id) return t;
    leaf = t.detach().requires_grad_(true);
    return leaf;
  };
  torch::AutoGradMode grad_on(true);
  auto out = model->forward(input, hook);
  if (was_training) model->train();
  if (!leaf.defined()) throw ConfigError("layer '" + request.layer_id + "' was not reached in the forward pass");

  const auto logits = out.logits.detach();
  const auto probs = logits.softmax(1)[0];
  CamResult result;
  result.layer_id = request.layer_id;
  result.predicted_class = argmax_lowest(logits)[0].item<int64_t>();
  result.target_class = request.target_class.value_or(result.predicted_class);
  result.predicted_probability = probs[result.predicted_class].item<double>();
  result.target_probability = probs[result.target_class].item<double>();

  auto grads = torch::autograd::grad({out.logits[0][result.target_class]}, {leaf}, {}, false, false, true);
  const auto grad = grads[0].defined() ? grads[0] : torch::zeros_like(leaf);
  result.heatmap = heatmap_from(leaf[0], grad[0]);
  return result;
}

Image overlay_image(const Image& image, const Heatmap& heatmap, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("overlay alpha must lie in [0, 1]");
  if (heatmap.height() != image.height || heatmap.width() != image.width) {
    throw ShapeError("overlay: heatmap " + std::to_string(heatmap.height()) + "x" + std::to_string(heatmap.width()) +
                     " does not match image " + std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  const auto values = heatmap.values.to(torch::kFloat64).contiguous();
  auto v = values.accessor<double, 2>();
  const auto a = static_cast<float>(alpha);
  Image out(image.width, image.height);
  for (int64_t y = 0; y < image.height; ++y) {
    for (int64_t x = 0; x < image.width; ++x) {
      const auto idx = static_cast<size_t>(std::lround(std::clamp(v[y][x], 0.0, 1.0) * 255.0));
      for (int c = 0; c < 3; ++c) {
        const float colour = static_cast<float>(kViridis[idx][static_cast<size_t>(c)]) / 255.0f;
        out.at(y, x, c) = (1.0f - a) * image.at(y, x, c) + a * colour;
      }
    }
  }
  return out;
}

void render_overlay(const Image& image, const Heatmap& heatmap, const std::filesystem::path& output_path,
                    double alpha) {
  write_png(overlay_image(image, heatmap, alpha), output_path);
}

nlohmann::json cam_sidecar(const CamResult& result) {
  return {{"layer_id", result.layer_id},
          {"target_class", result.target_class},
          {"predicted_class", result.predicted_class},
          {"target_probability", result.target_probability},
          {"predicted_probability", result.predicted_probability},
          {"source_height", result.heatmap.source_height},
          {"source_width", result.heatmap.source_width}};
}

std::array<double, 4> quadrant_mass(const Heatmap& heatmap) {
  const auto v = heatmap.values.to(torch::kFloat64).contiguous();
  auto a = v.accessor<double, 2>();
  const int64_t h = heatmap.height(), w = heatmap.width();
  std::array<double, 4> mass{0, 0, 0, 0};
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      // A middle row/column of an odd-sized map counts half to each side.
      const double wy[2] = {2 * y + 1 < h ? 1.0 : (2 * y + 1 == h ? 0.5 : 0.0),
                            2 * y + 1 > h ? 1.0 : (2 * y + 1 == h ? 0.5 : 0.0)};
      const double wx[2] = {2 * x + 1 < w ? 1.0 : (2 * x + 1 == w ? 0.5 : 0.0),
                            2 * x + 1 > w ? 1.0 : (2 * x + 1 == w ? 0.5 : 0.0)};
      for (int qy = 0; qy < 2; ++qy)
        for (int qx = 0; qx < 2; ++qx) mass[static_cast<size_t>(2 * qy + qx)] += wy[qy] * wx[qx] * a[y][x];
    }
  }
  return mass;
}

}  // namespace a4net
