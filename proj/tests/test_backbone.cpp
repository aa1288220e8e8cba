#include "doctest_torch.hpp"

#include "a4net/backbone.hpp"
#include "a4net/errors.hpp"
#include "a4net/rng.hpp"
#include "helpers.hpp"

using namespace a4net;

TEST_SUITE("backbone") {

TEST_CASE("same seed builds bit-identical parameters") {
  auto a = build_backbone(BackboneConfig::mini(), 7);
  auto b = build_backbone(BackboneConfig::mini(), 7);
  auto c = build_backbone(BackboneConfig::mini(), 8);
  CHECK(test::bit_equal(test::flat_parameters(*a), test::flat_parameters(*b)));
  CHECK_FALSE(test::bit_equal(test::flat_parameters(*a), test::flat_parameters(*c)));
}

TEST_CASE("preset widths and depths") {
  const auto full = BackboneConfig::full();
  CHECK(full.stage_dims == std::array<int64_t, 4>{128, 256, 512, 1024});
  CHECK(full.stage_depths == std::array<int64_t, 4>{3, 3, 27, 3});
  CHECK(full.drop_path_rate == 0.0);
  CHECK(BackboneConfig::mini().drop_path_rate == 0.0);
}

TEST_CASE("invalid configs name the violated invariant") {
  auto cfg = BackboneConfig::mini();
  cfg.preset = Preset::custom;
  cfg.stage_depths = {2, 3, 4, 3};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("stage_depths[0] must be >= 3"), ConfigError);
  cfg.stage_depths = {3, 3, 4, 3};
  cfg.stage_dims = {32, 64, 64, 256};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("strictly increasing"), ConfigError);
  cfg.stage_dims = {32, 64, 128, 256};
  cfg.input_size = 60;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  auto mini = BackboneConfig::mini();
  mini.stage_depths = {2, 3, 4, 3};
  CHECK_THROWS_AS(build_backbone(mini, 0), ConfigError);
}

TEST_CASE("mini tap shapes") {
  auto net = build_backbone(BackboneConfig::mini(), 1);
  torch::NoGradGuard ng;
  auto taps = net->forward_with_taps(torch::rand({1, 3, 64, 64}));
  CHECK(taps.v2.sizes() == torch::IntArrayRef({1, 32, 16, 16}));
  CHECK(taps.v1_3.sizes() == torch::IntArrayRef({1, 32, 16, 16}));
  CHECK(taps.v27.sizes() == torch::IntArrayRef({1, 128, 4, 4}));
  CHECK(taps.v_final.sizes() == torch::IntArrayRef({1, 256, 2, 2}));
}

TEST_CASE("full tap shapes") {
  auto net = build_backbone(BackboneConfig::full(), 1);
  torch::NoGradGuard ng;
  auto taps = net->forward_with_taps(torch::rand({2, 3, 224, 224}));
  CHECK(taps.v2.sizes() == torch::IntArrayRef({2, 128, 56, 56}));
  CHECK(taps.v27.sizes() == torch::IntArrayRef({2, 512, 14, 14}));
  CHECK(taps.v_final.sizes() == torch::IntArrayRef({2, 1024, 7, 7}));
}

TEST_CASE("wrong input shape reports expected and actual") {
  auto net = build_backbone(BackboneConfig::mini(), 1);
  torch::NoGradGuard ng;
  CHECK_THROWS_WITH_AS(net->forward_with_taps(torch::rand({1, 3, 32, 32})), doctest::Contains("64"), ShapeError);
  CHECK_THROWS_AS(net->forward_with_taps(torch::rand({1, 1, 64, 64})), ShapeError);
  auto stage = net->stage(3);
  CHECK_THROWS_AS(stage->forward(torch::rand({1, 64, 4, 4})), ShapeError);
}

TEST_CASE("forward is a pure function of parameters and input") {
  auto net = build_backbone(BackboneConfig::mini(), 3);
  torch::NoGradGuard ng;
  auto x = torch::rand({2, 3, 64, 64});
  auto a = net->forward_with_taps(x);
  auto b = net->forward_with_taps(x);
  CHECK(test::bit_equal(a.v_final, b.v_final));
  CHECK(test::bit_equal(a.v27, b.v27));
}

TEST_CASE("v1_3 is stage-1 block 3 applied to v2") {
  auto net = build_backbone(BackboneConfig::mini(), 4);
  torch::NoGradGuard ng;
  auto taps = net->forward_with_taps(torch::rand({2, 3, 64, 64}));
  auto again = net->stage(0)->block(2)->forward(taps.v2);
  CHECK(test::bit_equal(again, taps.v1_3));
}

TEST_CASE("permuting the batch permutes every tap") {
  auto net = build_backbone(BackboneConfig::mini(), 5);
  net->to(torch::kFloat64);
  torch::NoGradGuard ng;
  auto x = torch::rand({4, 3, 64, 64}, torch::kFloat64);
  auto perm = torch::tensor({2, 0, 3, 1});
  auto a = net->forward_with_taps(x);
  auto b = net->forward_with_taps(x.index_select(0, perm));
  for (auto [pa, pb] : {std::pair{a.v2, b.v2}, {a.v1_3, b.v1_3}, {a.v27, b.v27}, {a.v_final, b.v_final}}) {
    CHECK(torch::allclose(pa.index_select(0, perm), pb, 0.0, 1e-12));
  }
}

TEST_CASE("analytic gradient of sum(v_final) matches central differences") {
  auto net = build_backbone(BackboneConfig::mini(), 11);
  net->to(torch::kFloat64);
  // Non-zero GRN parameters exercise the response-normalisation path.
  {
    torch::NoGradGuard ng;
    for (auto& item : net->named_parameters()) {
      if (item.key().find("grn") != std::string::npos) item.value().uniform_(-0.5, 0.5);
    }
  }
  auto x = torch::rand({1, 3, 64, 64}, torch::kFloat64);
  auto objective = [&] { return net->forward_with_taps(x).v_final.sum(); };
  net->zero_grad();
  objective().backward();

  auto params = net->parameters();
  Rng rng(2024);
  double worst = 0.0;
  for (int k = 0; k < 10; ++k) {
    auto& p = params[static_cast<size_t>(rng.index(static_cast<int64_t>(params.size())))];
    const int64_t i = rng.index(p.numel());
    const double analytic = p.grad().reshape(-1)[i].item<double>();
    auto flat = p.detach().view(-1);
    const double orig = flat[i].item<double>();
    const double h = 1e-5;
    double plus = 0.0, minus = 0.0;
    {
      torch::NoGradGuard ng;
      flat[i] = orig + h;
      plus = objective().item<double>();
      flat[i] = orig - h;
      minus = objective().item<double>();
      flat[i] = orig;
    }
    const double numeric = (plus - minus) / (2 * h);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    worst = std::max(worst, rel);
  }
  CHECK(worst <= 1e-4);
}

}  // TEST_SUITE
