#include "a4net/ablation.hpp"

#include <cstdio>

#include "a4net/errors.hpp"

namespace a4net {

namespace {

std::string cell(bool enabled, const std::optional<double>& value, double scale, int decimals) {
  if (!enabled || !value) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, *value * scale);
  return buf;
}

}  // namespace

std::vector<AttributeSet> published_ablation_subsets() {
  return parse_attribute_sets("B,C,S,F,S+F,B+S+F,C+S+F,B+C+S+F");
}

std::vector<AblationRow> run_ablation(const ModelConfig& base_model, const TrainConfig& base_train,
                                      const std::vector<AttributeSet>& subsets, const Dataset& train_set,
                                      const Dataset& test_set, uint64_t model_seed, const TrainHooks& hooks) {
  if (subsets.empty()) throw ConfigError("run_ablation: no attribute subsets given");
  std::vector<AblationRow> rows;
  for (const auto subset : subsets) {
    ModelConfig mc = base_model;
    mc.attributes = subset;
    TrainConfig tc = base_train;
    tc.attribute_set = subset;
    A4Net model(mc, model_seed);
    train(model, train_set, tc, nullptr, hooks);
    auto report = evaluate(model, test_set, tc.augment, tc.batch_size);
    rows.push_back({subset, std::move(report)});
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out = "\tEmotion(%)\tB(MSE)\tC(MSE)\tS\tF\n";
  for (const auto& row : rows) {
    const auto& r = row.report;
    const auto s = row.subset;
    out += row.subset.to_string();
    out += "\t" + cell(true, r.emotion_top1, 100.0, 2);
    out += "\t" + cell(s.contains(Attribute::brightness), r.brightness_mse, 1.0, 3);
    out += "\t" + cell(s.contains(Attribute::colorfulness), r.colorfulness_mse, 1.0, 3);
    out += "\t" + cell(s.contains(Attribute::scene), r.scene_acc, 100.0, 2);
    out += "\t" + cell(s.contains(Attribute::facial_expression), r.fe_acc, 100.0, 2);
    out += "\n";
  }
  return out;
}

}  // namespace a4net
