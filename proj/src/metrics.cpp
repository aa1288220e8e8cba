#include "a4net/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "a4net/errors.hpp"

namespace a4net {

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_value(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : report.loss_history) {
    history.push_back({{"epoch", e.epoch},
                       {"total", e.total},
                       {"L_VE", e.L_VE},
                       {"L_B", optional_json(e.L_B)},
                       {"L_C", optional_json(e.L_C)},
                       {"L_S", optional_json(e.L_S)},
                       {"L_FE", optional_json(e.L_FE)},
                       {"validation_top1", optional_json(e.validation_top1)}});
  }
  return {{"samples", report.samples},
          {"emotion_top1", optional_json(report.emotion_top1)},
          {"brightness_mse", optional_json(report.brightness_mse)},
          {"colorfulness_mse", optional_json(report.colorfulness_mse)},
          {"scene_acc", optional_json(report.scene_acc)},
          {"fe_acc", optional_json(report.fe_acc)},
          {"map_score", optional_json(report.map_score)},
          {"loss_history", history}};
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.samples = j.at("samples").get<int64_t>();
    r.emotion_top1 = optional_value(j, "emotion_top1");
    r.brightness_mse = optional_value(j, "brightness_mse");
    r.colorfulness_mse = optional_value(j, "colorfulness_mse");
    r.scene_acc = optional_value(j, "scene_acc");
    r.fe_acc = optional_value(j, "fe_acc");
    r.map_score = optional_value(j, "map_score");
    for (const auto& h : j.at("loss_history")) {
      EpochLosses e;
      e.epoch = h.at("epoch").get<int64_t>();
      e.total = h.at("total").get<double>();
      e.L_VE = h.at("L_VE").get<double>();
      e.L_B = optional_value(h, "L_B");
      e.L_C = optional_value(h, "L_C");
      e.L_S = optional_value(h, "L_S");
      e.L_FE = optional_value(h, "L_FE");
      e.validation_top1 = optional_value(h, "validation_top1");
      r.loss_history.push_back(e);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics report: ") + e.what());
  }
}

std::string to_canonical_text(const nlohmann::json& j) { return j.dump(2) + "\n"; }

double mean_average_precision(const torch::Tensor& scores, const torch::Tensor& labels) {
  if (scores.dim() != 2 || labels.sizes() != scores.sizes()) {
    throw ShapeError("mean_average_precision: scores and labels must both be N x K");
  }
  const auto s = scores.to(torch::kFloat64).contiguous();
  const auto l = labels.to(torch::kFloat64).contiguous();
  const int64_t n = s.size(0);
  const int64_t k = s.size(1);
  auto sa = s.accessor<double, 2>();
  auto la = l.accessor<double, 2>();

  std::vector<int64_t> order(static_cast<size_t>(n));
  double sum_ap = 0.0;
  int64_t included = 0;
  for (int64_t c = 0; c < k; ++c) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) { return sa[a][c] > sa[b][c]; });
    int64_t hits = 0;
    double precision_sum = 0.0;
    for (int64_t rank = 0; rank < n; ++rank) {
      if (la[order[static_cast<size_t>(rank)]][c] > 0.5) {
        ++hits;
        precision_sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
      }
    }
    if (hits == 0) continue;
    sum_ap += precision_sum / static_cast<double>(hits);
    ++included;
  }
  if (included == 0) throw DomainError("mean_average_precision: no class has a positive label");
  return sum_ap / static_cast<double>(included);
}

const std::vector<PublishedReference>& published_references() {
  static const std::vector<PublishedReference> refs = {
      {"EmoSet", "top1_percent", 85.0},
      {"EMOTIC-I", "map_percent", 32.77},
      {"UnBiasEmo", "top1_percent", 82.4},
      {"SE30K8", "top1_percent", 64.69},
      {"ablation B+C+S+F", "emotion_percent", 85.05},
  };
  return refs;
}

}  // namespace a4net
