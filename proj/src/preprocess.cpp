#include "a4net/preprocess.hpp"

#include <cmath>

#include "a4net/errors.hpp"

namespace a4net {

void AugmentConfig::validate() const {
  if (crop_size < 1) throw ConfigError("augment: crop_size must be >= 1");
  if (!(horizontal_flip_prob >= 0.0 && horizontal_flip_prob <= 1.0)) {
    throw ConfigError("augment: horizontal_flip_prob must lie in [0, 1]");
  }
  if (!(resize_ratio >= 1.0)) throw ConfigError("augment: resize_ratio must be >= 1");
}

Image preprocess_image(const Image& image, const AugmentConfig& cfg, bool train_mode, Rng& rng) {
  cfg.validate();
  if (image.width < cfg.crop_size || image.height < cfg.crop_size) {
    throw PreprocessError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                          " is smaller than crop_size " + std::to_string(cfg.crop_size));
  }
  const auto shorter_target = static_cast<int64_t>(std::lround(static_cast<double>(cfg.crop_size) * cfg.resize_ratio));
  const int64_t shorter = std::min(image.width, image.height);
  const auto scaled = [&](int64_t side) {
    return std::max(cfg.crop_size, static_cast<int64_t>(std::lround(static_cast<double>(side) *
                                                                   static_cast<double>(shorter_target) /
                                                                   static_cast<double>(shorter))));
  };
  const Image resized = resize_bilinear(image, scaled(image.width), scaled(image.height));

  const int64_t slack_x = resized.width - cfg.crop_size;
  const int64_t slack_y = resized.height - cfg.crop_size;
  if (!train_mode) return crop(resized, slack_x / 2, slack_y / 2, cfg.crop_size, cfg.crop_size);

  const int64_t x0 = rng.index(slack_x + 1);
  const int64_t y0 = rng.index(slack_y + 1);
  Image out = crop(resized, x0, y0, cfg.crop_size, cfg.crop_size);
  if (rng.bernoulli(cfg.horizontal_flip_prob)) out = flip_horizontal(out);
  return out;
}

torch::Tensor to_chw_tensor(const Image& image) {
  auto hwc = torch::from_blob(const_cast<float*>(image.pixels.data()), {image.height, image.width, 3}, torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous();
}

torch::Tensor preprocess(const Image& image, const AugmentConfig& cfg, bool train_mode, Rng& rng) {
  return to_chw_tensor(preprocess_image(image, cfg, train_mode, rng));
}

Targets make_targets(const Dataset& dataset, const std::vector<size_t>& indices) {
  const auto n = static_cast<int64_t>(indices.size());
  Targets t;
  t.emotion = torch::empty({n}, torch::kLong);
  t.brightness = torch::zeros({n});
  t.colorfulness = torch::zeros({n});
  t.scene = torch::zeros({n}, torch::kLong);
  t.facial_expression = torch::zeros({n}, torch::kLong);
  t.brightness_mask = torch::zeros({n});
  t.colorfulness_mask = torch::zeros({n});
  t.scene_mask = torch::zeros({n});
  t.fe_mask = torch::zeros({n});
  auto emotion = t.emotion.accessor<int64_t, 1>();
  auto b = t.brightness.accessor<float, 1>();
  auto c = t.colorfulness.accessor<float, 1>();
  auto s = t.scene.accessor<int64_t, 1>();
  auto f = t.facial_expression.accessor<int64_t, 1>();
  auto bm = t.brightness_mask.accessor<float, 1>();
  auto cm = t.colorfulness_mask.accessor<float, 1>();
  auto sm = t.scene_mask.accessor<float, 1>();
  auto fm = t.fe_mask.accessor<float, 1>();
  for (int64_t i = 0; i < n; ++i) {
    const auto& r = dataset.at(indices[static_cast<size_t>(i)]);
    emotion[i] = r.emotion;
    if (r.brightness) { b[i] = static_cast<float>(*r.brightness); bm[i] = 1.0f; }
    if (r.colorfulness) { c[i] = static_cast<float>(*r.colorfulness); cm[i] = 1.0f; }
    if (r.scene) { s[i] = *r.scene; sm[i] = 1.0f; }
    if (r.facial_expression) { f[i] = *r.facial_expression; fm[i] = 1.0f; }
  }
  return t;
}

Batch collate(const Dataset& dataset, const std::vector<size_t>& indices, const AugmentConfig& cfg, bool train_mode,
              Rng& rng) {
  if (indices.empty()) throw DomainError("collate: empty batch");
  std::vector<torch::Tensor> images;
  images.reserve(indices.size());
  for (size_t i : indices) images.push_back(preprocess(*load_image(dataset.at(i)), cfg, train_mode, rng));
  return {torch::stack(images), make_targets(dataset, indices), indices};
}

}  // namespace a4net
