#include "a4net/probe.hpp"

#include <numeric>

#include "a4net/branches.hpp"
#include "a4net/errors.hpp"
#include "a4net/objective.hpp"
#include "a4net/rng.hpp"
#include "a4net/training.hpp"

namespace a4net {

namespace {

void check_probe_labels(const Dataset& dataset, const ProbeConfig& cfg, const char* which) {
  for (size_t i = 0; i < dataset.size(); ++i) {
    const auto& r = dataset[i];
    if (cfg.loss_kind == ProbeLoss::softmax_ce && r.emotion_labels.size() > 1) {
      throw ConfigError(std::string(which) + " record " + std::to_string(i) +
                        " is multi-label; softmax_ce needs one label per sample (use binary_ce)");
    }
    for (int64_t l : r.emotion_labels.empty() ? std::vector<int64_t>{r.emotion} : r.emotion_labels) {
      if (l < 0 || l >= cfg.target_classes) {
        throw ConfigError(std::string(which) + " record " + std::to_string(i) + " has label " + std::to_string(l) +
                          " but the probe has " + std::to_string(cfg.target_classes) + " target classes");
      }
    }
  }
}

torch::Tensor label_tensor(const Dataset& dataset, const ProbeConfig& cfg) {
  const auto n = static_cast<int64_t>(dataset.size());
  if (cfg.loss_kind == ProbeLoss::softmax_ce) {
    auto t = torch::empty({n}, torch::kLong);
    for (int64_t i = 0; i < n; ++i) t[i] = dataset[static_cast<size_t>(i)].emotion;
    return t;
  }
  auto t = torch::zeros({n, cfg.target_classes});
  auto a = t.accessor<float, 2>();
  for (int64_t i = 0; i < n; ++i) {
    const auto& r = dataset[static_cast<size_t>(i)];
    for (int64_t l : r.emotion_labels.empty() ? std::vector<int64_t>{r.emotion} : r.emotion_labels) a[i][l] = 1.0f;
  }
  return t;
}

}  // namespace

std::string to_string(ProbeLoss loss) { return loss == ProbeLoss::binary_ce ? "binary_ce" : "softmax_ce"; }

ProbeLoss parse_probe_loss(std::string_view text) {
  if (text == "softmax_ce") return ProbeLoss::softmax_ce;
  if (text == "binary_ce") return ProbeLoss::binary_ce;
  throw ConfigError("unknown probe loss '" + std::string(text) + "' (expected softmax_ce or binary_ce)");
}

ProbeConfig ProbeConfig::emotic() {
  ProbeConfig cfg;
  cfg.target_classes = 26;
  cfg.batch_size = 80;
  cfg.learning_rate = 0.002;
  cfg.epochs = 30;
  cfg.loss_kind = ProbeLoss::binary_ce;
  return cfg;
}

ProbeConfig ProbeConfig::se30k8() {
  ProbeConfig cfg;
  cfg.target_classes = 8;
  cfg.batch_size = 80;
  cfg.learning_rate = 0.003;
  cfg.epochs = 30;
  return cfg;
}

ProbeConfig ProbeConfig::unbiasemo() {
  ProbeConfig cfg;
  cfg.target_classes = 6;
  cfg.batch_size = 2;
  cfg.learning_rate = 0.00007;
  cfg.epochs = 30;
  return cfg;
}

ProbeConfig ProbeConfig::named(std::string_view protocol) {
  if (protocol == "emotic") return emotic();
  if (protocol == "se30k8") return se30k8();
  if (protocol == "unbiasemo") return unbiasemo();
  throw ConfigError("unknown probe protocol '" + std::string(protocol) + "' (expected emotic, se30k8 or unbiasemo)");
}

void ProbeConfig::validate() const {
  if (target_classes < 2) throw ConfigError("probe: target_classes must be >= 2");
  if (batch_size < 1) throw ConfigError("probe: batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("probe: learning_rate must be >= 0");
  if (epochs < 0) throw ConfigError("probe: epochs must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("probe: weight_decay must be >= 0");
}

torch::nn::Linear train_probe_head(const torch::Tensor& features, const torch::Tensor& labels,
                                   const ProbeConfig& cfg) {
  cfg.validate();
  if (features.dim() != 2) throw ShapeError("probe features must be N x D");
  const int64_t n = features.size(0);
  if (labels.size(0) != n) throw ShapeError("probe labels and features disagree in N");
  const bool multi = cfg.loss_kind == ProbeLoss::binary_ce;
  if (multi != (labels.dim() == 2)) throw ConfigError("binary_ce needs N x K multi-hot labels, softmax_ce needs N indices");
  if (multi && labels.size(1) != cfg.target_classes) throw ConfigError("probe label width differs from target_classes");

  torch::nn::Linear head(features.size(1), cfg.target_classes);
  {
    auto gen = make_generator(cfg.seed);
    init_weights(*head, gen);
  }
  head->to(features.scalar_type());
  torch::optim::AdamW optimizer(head->parameters(),
                                torch::optim::AdamWOptions(cfg.learning_rate).weight_decay(cfg.weight_decay));
  Rng rng(cfg.seed);
  std::vector<int64_t> order(static_cast<size_t>(n));
  const auto x_all = features.detach();
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<size_t>(rng.index(static_cast<int64_t>(i)))]);
    const auto perm = torch::tensor(order, torch::kLong);
    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      const auto idx = perm.slice(0, start, std::min(n, start + cfg.batch_size));
      const auto logits = head->forward(x_all.index_select(0, idx));
      const auto y = labels.index_select(0, idx);
      const auto loss = multi ? binary_cross_entropy_loss(logits, y.to(logits.scalar_type()))
                              : classification_loss(logits, y, torch::ones({idx.size(0)}, logits.options()));
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
    }
  }
  return head;
}

MetricsReport score_probe(const torch::nn::Linear& head, const torch::Tensor& features, const Dataset& dataset,
                          const ProbeConfig& cfg) {
  torch::NoGradGuard no_grad;
  const auto logits = const_cast<torch::nn::Linear&>(head)->forward(features);
  MetricsReport r;
  r.samples = features.size(0);
  auto primary = torch::empty({r.samples}, torch::kLong);
  for (int64_t i = 0; i < r.samples; ++i) primary[i] = dataset[static_cast<size_t>(i)].emotion;
  r.emotion_top1 = argmax_lowest(logits).eq(primary).sum().item<double>() / static_cast<double>(r.samples);
  if (cfg.loss_kind == ProbeLoss::binary_ce) r.map_score = mean_average_precision(logits, label_tensor(dataset, cfg));
  return r;
}

ProbeResult linear_probe(A4Net& model, const Dataset& train_set, const Dataset* test_set, const ProbeConfig& cfg,
                         const AugmentConfig& augment) {
  cfg.validate();
  if (train_set.empty()) throw DomainError("linear_probe: empty training set");
  check_probe_labels(train_set, cfg, "probe train");
  if (test_set != nullptr) check_probe_labels(*test_set, cfg, "probe test");

  const auto train_features = extract_features(model, train_set, augment);
  ProbeResult result;
  result.head = train_probe_head(train_features, label_tensor(train_set, cfg), cfg);
  result.train_report = score_probe(result.head, train_features, train_set, cfg);
  if (test_set != nullptr && !test_set->empty()) {
    result.test_report = score_probe(result.head, extract_features(model, *test_set, augment), *test_set, cfg);
  }
  return result;
}

}  // namespace a4net
