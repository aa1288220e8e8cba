#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <string_view>

#include "a4net/checkpoint.hpp"
#include "a4net/dataset.hpp"
#include "a4net/metrics.hpp"
#include "a4net/model.hpp"
#include "a4net/preprocess.hpp"

namespace a4net {

enum class ProbeLoss { softmax_ce, binary_ce };
std::string to_string(ProbeLoss loss);
ProbeLoss parse_probe_loss(std::string_view text);

struct ProbeConfig {
  int64_t target_classes = 8;
  int64_t batch_size = 80;
  double learning_rate = 0.003;
  int64_t epochs = 30;
  ProbeLoss loss_kind = ProbeLoss::softmax_ce;
  double weight_decay = 0.0;
  uint64_t seed = 0;

  // Transfer protocols: EMOTIC (26 multi-label classes), SE30K8, UnBiasEmo.
  static ProbeConfig emotic();
  static ProbeConfig se30k8();
  static ProbeConfig unbiasemo();
  static ProbeConfig named(std::string_view protocol);

  void validate() const;
};

// Trains a fresh affine head on fixed features. `labels` is N (kLong class
// indices) for softmax_ce or N x K multi-hot for binary_ce.
torch::nn::Linear train_probe_head(const torch::Tensor& features, const torch::Tensor& labels,
                                   const ProbeConfig& cfg);

// Top-1 (single-label) or top-1 of the first label plus mAP (multi-label).
MetricsReport score_probe(const torch::nn::Linear& head, const torch::Tensor& features, const Dataset& dataset,
                          const ProbeConfig& cfg);

struct ProbeResult {
  torch::nn::Linear head{nullptr};
  MetricsReport train_report;
  MetricsReport test_report;  // samples = 0 without a test set
};

// The backbone, branches and fusion weights stay frozen; features are the
// fused pre-logit vectors, computed once. ConfigError when a label falls
// outside target_classes or multi-label records meet softmax_ce.
ProbeResult linear_probe(A4Net& model, const Dataset& train_set, const Dataset* test_set, const ProbeConfig& cfg,
                         const AugmentConfig& augment);

}  // namespace a4net
