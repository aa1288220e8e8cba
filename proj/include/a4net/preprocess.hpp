#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "a4net/attributes.hpp"
#include "a4net/dataset.hpp"
#include "a4net/objective.hpp"
#include "a4net/rng.hpp"

namespace a4net {

struct AugmentConfig {
  int64_t crop_size = 64;
  double horizontal_flip_prob = 0.5;
  uint64_t seed = 0;
  // The shorter side is scaled to round(crop_size * resize_ratio) before
  // cropping, in both modes, so train and eval views share one scale.
  double resize_ratio = 1.14;

  void validate() const;
};

// Both modes: resize, then crop_size x crop_size. Train mode picks the crop
// offset uniformly and flips with horizontal_flip_prob, drawing from `rng`;
// eval mode centre-crops and never touches `rng`. Returns 3 x S x S float in
// [0, 1]. Throws PreprocessError when either source side is below crop_size.
torch::Tensor preprocess(const Image& image, const AugmentConfig& cfg, bool train_mode, Rng& rng);

// Image-space result of the same pipeline, for overlays.
Image preprocess_image(const Image& image, const AugmentConfig& cfg, bool train_mode, Rng& rng);

torch::Tensor to_chw_tensor(const Image& image);

struct Batch {
  torch::Tensor images;  // N x 3 x S x S
  Targets targets;
  std::vector<size_t> indices;
};

// Absent optional fields get a zero target and mask 0.
Targets make_targets(const Dataset& dataset, const std::vector<size_t>& indices);

Batch collate(const Dataset& dataset, const std::vector<size_t>& indices, const AugmentConfig& cfg, bool train_mode,
              Rng& rng);

}  // namespace a4net
