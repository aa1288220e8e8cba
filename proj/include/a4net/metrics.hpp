#pragma once

#include <torch/torch.h>

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace a4net {

// Mean training losses of one epoch. Disabled terms are absent.
struct EpochLosses {
  int64_t epoch = 0;
  double total = 0.0;
  double L_VE = 0.0;
  std::optional<double> L_B, L_C, L_S, L_FE;
  std::optional<double> validation_top1;

  bool operator==(const EpochLosses&) const = default;
};

// Absent fields mean "not measured", never zero: disabled branches, datasets
// carrying no labels for an attribute, or single-label datasets for mAP.
struct MetricsReport {
  int64_t samples = 0;
  std::optional<double> emotion_top1;
  std::optional<double> brightness_mse;
  std::optional<double> colorfulness_mse;
  std::optional<double> scene_acc;
  std::optional<double> fe_acc;
  std::optional<double> map_score;
  std::vector<EpochLosses> loss_history;

  bool operator==(const MetricsReport&) const = default;
};

// Stable key names; absent values are null.
nlohmann::json to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const nlohmann::json& j);
// Canonical text form: sorted keys, two-space indent, trailing newline.
std::string to_canonical_text(const nlohmann::json& j);

// Unweighted mean over classes with at least one positive of the average
// precision, where each class ranks samples by descending score (ties by
// ascending sample index) and averages precision at every positive rank.
// scores and labels are N x K. Throws DomainError when no class has a positive.
double mean_average_precision(const torch::Tensor& scores, const torch::Tensor& labels);

// Published reference numbers, reported alongside desk-scale results for
// context only.
struct PublishedReference {
  std::string name;
  std::string metric;
  double value;
};
const std::vector<PublishedReference>& published_references();

}  // namespace a4net
