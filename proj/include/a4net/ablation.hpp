#pragma once

#include <string>
#include <vector>

#include "a4net/attributes.hpp"
#include "a4net/dataset.hpp"
#include "a4net/metrics.hpp"
#include "a4net/model.hpp"
#include "a4net/training.hpp"

namespace a4net {

// The eight attribute subsets of the published ablation, in its row order.
std::vector<AttributeSet> published_ablation_subsets();

struct AblationRow {
  AttributeSet subset;
  MetricsReport report;
};

// One train + evaluate per subset. Every run starts from the same model seed,
// training seed and data order; only the attribute set changes.
std::vector<AblationRow> run_ablation(const ModelConfig& base_model, const TrainConfig& base_train,
                                      const std::vector<AttributeSet>& subsets, const Dataset& train_set,
                                      const Dataset& test_set, uint64_t model_seed,
                                      const TrainHooks& hooks = {});

// Tab-separated table with header "\tEmotion(%)\tB(MSE)\tC(MSE)\tS\tF".
// Emotion, S and F are percentages with two decimals, MSEs have three, and
// cells for disabled branches are "-".
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace a4net
