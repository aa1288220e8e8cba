#include "doctest_torch.hpp"

#include <cmath>

#include "a4net/errors.hpp"
#include "a4net/model.hpp"
#include "a4net/objective.hpp"
#include "a4net/rng.hpp"
#include "helpers.hpp"

using namespace a4net;

namespace {

FusionWeights scalar_weights(double c, double b, double s, double f) {
  return {torch::tensor(c), torch::tensor(b), torch::tensor(s), torch::tensor(f)};
}

Targets random_targets(int64_t n, const ModelConfig& cfg, uint64_t seed, torch::Dtype dtype) {
  auto gen = make_generator(seed);
  Targets t;
  t.emotion = torch::randint(cfg.emotion_classes, {n}, gen, torch::kLong);
  t.brightness = torch::rand({n}, gen, dtype);
  t.colorfulness = torch::rand({n}, gen, dtype);
  t.scene = torch::randint(cfg.heads.scene_classes, {n}, gen, torch::kLong);
  t.facial_expression = torch::randint(cfg.heads.fe_classes, {n}, gen, torch::kLong);
  for (auto* m : {&t.brightness_mask, &t.colorfulness_mask, &t.scene_mask, &t.fe_mask}) *m = torch::ones({n}, dtype);
  return t;
}

LossBundle constant_bundle(double ve, double b, double c, double s, double fe) {
  return {torch::tensor(ve), torch::tensor(b), torch::tensor(c), torch::tensor(s), torch::tensor(fe), {}};
}

}  // namespace

TEST_SUITE("objective") {

TEST_CASE("zero fusion weights classify v alone, bit for bit") {
  A4Net model(ModelConfig{}, 1);
  torch::NoGradGuard ng;
  for (auto* w : {&model->fusion->w_c, &model->fusion->w_b, &model->fusion->w_s, &model->fusion->w_f}) w->zero_();
  auto out = model->forward(torch::rand({3, 3, 64, 64}));
  auto v_only = model->fusion->classify(model->fusion->head_v->forward(out.taps.v_final));
  CHECK(test::bit_equal(out.logits, v_only));
}

TEST_CASE("zero branch embeddings classify v alone") {
  torch::nn::Linear fc(6, 4);
  auto v = torch::randn({2, 6});
  BranchOutputs branches;
  branches.v_c = branches.v_b = branches.v_s = branches.v_f = torch::zeros({2, 6});
  auto logits = fuse_and_classify(v, branches, scalar_weights(0.3, -2.0, 5.0, 1.5), fc);
  CHECK(test::bit_equal(logits, fc->forward(v)));
}

TEST_CASE("hand evaluation of the weighted sum") {
  torch::nn::Linear fc(3, 3);
  torch::NoGradGuard ng;
  fc->weight.copy_(torch::eye(3));
  fc->bias.zero_();
  BranchOutputs branches;
  branches.v_c = torch::tensor({{0.0f, 1.0f, 0.0f}});
  auto logits = fuse_and_classify(torch::tensor({{1.0f, 0.0f, 0.0f}}), branches, scalar_weights(2, 0, 0, 0), fc);
  CHECK(torch::equal(logits, torch::tensor({{1.0f, 2.0f, 0.0f}})));
}

TEST_CASE("embedding length mismatch is a shape error") {
  torch::nn::Linear fc(3, 2);
  BranchOutputs branches;
  branches.v_s = torch::zeros({1, 4});
  CHECK_THROWS_AS(fuse_and_classify(torch::zeros({1, 3}), branches, scalar_weights(1, 1, 1, 1), fc), ShapeError);
}

TEST_CASE("regression loss cases") {
  auto f = [](std::vector<double> v) { return torch::tensor(v, torch::kFloat64); };
  CHECK(regression_loss(f({0.3, 0.6}), f({0.3, 0.6}), f({1, 1})).item<double>() == 0.0);
  CHECK(regression_loss(f({0, 1}), f({1, 0}), f({1, 1})).item<double>() == 1.0);
  CHECK(regression_loss(f({0, 9}), f({1, 0}), f({1, 0})).item<double>() == 1.0);
  CHECK(regression_loss(f({0, 9}), f({1, 0}), f({0, 0})).item<double>() == 0.0);
  CHECK_THROWS_AS(regression_loss(f({0, 1}), f({1}), f({1, 1})), ShapeError);
}

TEST_CASE("cross-entropy cases") {
  for (int64_t k : {2, 7, 255}) {
    auto loss = classification_loss(torch::zeros({3, k}, torch::kFloat64), torch::zeros({3}, torch::kLong),
                                     torch::ones({3}, torch::kFloat64));
    CHECK(std::abs(loss.item<double>() - std::log(static_cast<double>(k))) <= 1e-6);
  }
  auto big = classification_loss(torch::tensor({{1000.0, 0.0}}), torch::tensor({0L}), torch::ones({1}));
  CHECK(std::isfinite(big.item<double>()));
  CHECK(big.item<double>() < 1e-6);
  auto hand = classification_loss(torch::tensor({{1.0, 2.0, 3.0}}, torch::kFloat64), torch::tensor({2L}),
                                  torch::ones({1}, torch::kFloat64));
  CHECK(std::abs(hand.item<double>() - 0.40760596444) <= 1e-5);
  CHECK_THROWS_AS(classification_loss(torch::zeros({1, 3}), torch::tensor({3L}), torch::ones({1})), DomainError);
}

TEST_CASE("total objective in both modes") {
  ObjectiveWeights fixed;
  CHECK(total_objective(constant_bundle(0, 0, 0, 0, 0), fixed).item<double>() == 0.0);
  CHECK(total_objective(constant_bundle(1, 2, 3, 4, 5), fixed).item<double>() == 15.0);

  ObjectiveWeights unc;
  unc.mode = ObjectiveMode::uncertainty;
  unc.s_B = torch::zeros({}, torch::requires_grad());
  unc.s_C = torch::zeros({}, torch::requires_grad());
  unc.s_S = torch::zeros({}, torch::requires_grad());
  unc.s_FE = torch::zeros({}, torch::requires_grad());
  auto total = total_objective(constant_bundle(1, 2, 3, 4, 5), unc);
  CHECK(total.item<double>() == 15.0);
  total.backward();
  CHECK(unc.s_B.grad().item<double>() == doctest::Approx(-2.0 + 1.0));
  CHECK(unc.s_C.grad().item<double>() == doctest::Approx(-3.0 + 1.0));
  CHECK(unc.s_S.grad().item<double>() == doctest::Approx(-4.0 + 1.0));
  CHECK(unc.s_FE.grad().item<double>() == doctest::Approx(-5.0 + 1.0));

  ObjectiveWeights negative;
  negative.w_S = -0.5;
  CHECK_THROWS_AS(total_objective(constant_bundle(1, 2, 3, 4, 5), negative), ConfigError);
}

TEST_CASE("uncertainty objective is bounded below with its minimum at s = ln L") {
  const double L = 2.5;
  auto term = [&](double s) { return std::exp(-s) * L + s; };
  const double at_root = term(std::log(L));
  for (double s = -10.0; s <= 10.0; s += 0.01) CHECK(term(s) >= at_root - 1e-12);
  auto s = torch::tensor(std::log(L), torch::dtype(torch::kFloat64).requires_grad(true));
  ObjectiveWeights unc;
  unc.mode = ObjectiveMode::uncertainty;
  unc.s_B = s;
  unc.s_C = unc.s_S = unc.s_FE = torch::zeros({}, torch::kFloat64);
  LossBundle b;
  b.L_VE = torch::tensor(0.0, torch::kFloat64);
  b.L_B = torch::tensor(L, torch::kFloat64);
  total_objective(b, unc).backward();
  CHECK(std::abs(s.grad().item<double>()) < 1e-12);
}

TEST_CASE("positive scaling of the classifier keeps every argmax") {
  A4Net model(ModelConfig{}, 2);
  torch::NoGradGuard ng;
  auto x = torch::rand({16, 3, 64, 64});
  auto before = model->forward(x).logits.argmax(1);
  model->fusion->classifier->weight.mul_(3.7);
  model->fusion->classifier->bias.mul_(3.7);
  CHECK(torch::equal(model->forward(x).logits.argmax(1), before));
}

TEST_CASE("duplicating a batch leaves every mean loss unchanged") {
  ModelConfig cfg;
  A4Net model(cfg, 3);
  model->to(torch::kFloat64);
  torch::NoGradGuard ng;
  auto x = torch::rand({3, 3, 64, 64}, torch::kFloat64);
  auto t = random_targets(3, cfg, 9, torch::kFloat64);
  t.scene_mask[1] = 0.0;
  auto once = model->losses(model->forward(x), t);
  Targets t2;
  auto dup = [](const torch::Tensor& a) { return torch::cat({a, a}); };
  t2.emotion = dup(t.emotion);
  t2.brightness = dup(t.brightness);
  t2.colorfulness = dup(t.colorfulness);
  t2.scene = dup(t.scene);
  t2.facial_expression = dup(t.facial_expression);
  t2.brightness_mask = dup(t.brightness_mask);
  t2.colorfulness_mask = dup(t.colorfulness_mask);
  t2.scene_mask = dup(t.scene_mask);
  t2.fe_mask = dup(t.fe_mask);
  auto twice = model->losses(model->forward(dup(x)), t2);
  for (auto [a, b] : {std::pair{once.L_VE, twice.L_VE}, {once.L_B, twice.L_B}, {once.L_C, twice.L_C},
                      {once.L_S, twice.L_S}, {once.L_FE, twice.L_FE}}) {
    CHECK(std::abs(a.item<double>() - b.item<double>()) <= 1e-10);
  }
}

TEST_CASE("zero mask gives zero gradient to that predictor") {
  ModelConfig cfg;
  A4Net model(cfg, 4);
  auto t = random_targets(4, cfg, 1, torch::kFloat32);
  t.fe_mask.zero_();
  t.brightness_mask.zero_();
  auto out = model->forward(torch::rand({4, 3, 64, 64}));
  model->losses(out, t).total.backward();
  for (auto* lin : {&model->branches->pred_fe, &model->branches->pred_b}) {
    for (const auto& p : (*lin)->parameters()) CHECK((!p.grad().defined() || p.grad().abs().max().item<double>() == 0.0));
  }
  CHECK(model->branches->pred_s->weight.grad().abs().max().item<double>() > 0.0);
}

TEST_CASE("fixed-mode gradient is the weighted sum of per-loss gradients") {
  ModelConfig cfg;
  cfg.w_B = 0.5;
  cfg.w_C = 2.0;
  cfg.w_S = 1.5;
  cfg.w_FE = 0.25;
  A4Net model(cfg, 5);
  model->to(torch::kFloat64);
  auto x = torch::rand({2, 3, 64, 64}, torch::kFloat64);
  auto t = random_targets(2, cfg, 3, torch::kFloat64);

  auto flat_grad = [&](auto pick) {
    model->zero_grad();
    auto bundle = model->losses(model->forward(x), t);
    pick(bundle).backward();
    std::vector<torch::Tensor> parts;
    for (const auto& p : model->parameters()) {
      parts.push_back(p.grad().defined() ? p.grad().reshape(-1).clone() : torch::zeros({p.numel()}, p.options()));
    }
    return torch::cat(parts);
  };
  auto g_total = flat_grad([](const LossBundle& b) { return b.total; });
  auto g_sum = flat_grad([](const LossBundle& b) { return b.L_VE; }) +
               0.5 * flat_grad([](const LossBundle& b) { return b.L_B; }) +
               2.0 * flat_grad([](const LossBundle& b) { return b.L_C; }) +
               1.5 * flat_grad([](const LossBundle& b) { return b.L_S; }) +
               0.25 * flat_grad([](const LossBundle& b) { return b.L_FE; });
  CHECK(torch::allclose(g_total, g_sum, 1e-9, 1e-12));

  // Central differences on branch parameters.
  std::vector<torch::Tensor> branch_params;
  for (auto a : {Attribute::brightness, Attribute::colorfulness, Attribute::scene, Attribute::facial_expression}) {
    for (auto& p : model->branch_parameters(a)) branch_params.push_back(p);
  }
  model->zero_grad();
  model->losses(model->forward(x), t).total.backward();
  Rng rng(17);
  double worst = 0.0;
  for (int k = 0; k < 8; ++k) {
    auto& p = branch_params[static_cast<size_t>(rng.index(static_cast<int64_t>(branch_params.size())))];
    const int64_t i = rng.index(p.numel());
    const double analytic = p.grad().reshape(-1)[i].item<double>();
    auto flat = p.detach().view(-1);
    const double orig = flat[i].item<double>();
    double plus, minus;
    {
      torch::NoGradGuard ng;
      flat[i] = orig + 1e-5;
      plus = model->losses(model->forward(x), t).total.item<double>();
      flat[i] = orig - 1e-5;
      minus = model->losses(model->forward(x), t).total.item<double>();
      flat[i] = orig;
    }
    const double numeric = (plus - minus) / 2e-5;
    worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
  }
  CHECK(worst <= 1e-4);
}

}  // TEST_SUITE
