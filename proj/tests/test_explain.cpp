#include "doctest_torch.hpp"

#include <thread>

#include "a4net/colormap.hpp"
#include "a4net/errors.hpp"
#include "a4net/explain.hpp"
#include "a4net/rng.hpp"
#include "helpers.hpp"

using namespace a4net;

namespace {

Image random_image(uint64_t seed, int64_t size) {
  Rng rng(seed);
  Image img(size, size);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

Heatmap ramp(int64_t h, int64_t w) {
  auto values = torch::arange(h * w, torch::kFloat64).reshape({h, w}) / static_cast<double>(h * w - 1);
  return {values, h, w};
}

}  // namespace

TEST_SUITE("explain") {

TEST_CASE("score equal to the mean of channel 0 weights only that channel") {
  auto a = torch::randn({3, 4, 5}, torch::kFloat64);
  auto hm = cam_from_score(a, [](const torch::Tensor& t) { return t[0].mean(); });
  auto expected = a[0].clamp_min(0.0);
  expected = expected / expected.max();
  CHECK(torch::allclose(hm.values, expected, 0.0, 1e-12));
  CHECK(hm.height() == 4);
  CHECK(hm.width() == 5);
}

TEST_CASE("negative gradients on nonnegative activations give an all-zero map") {
  auto a = torch::rand({4, 3, 3}, torch::kFloat64);
  auto g = -torch::rand({4, 3, 3}, torch::kFloat64) - 0.1;
  auto hm = heatmap_from(a, g);
  CHECK(torch::equal(hm.values, torch::zeros({3, 3}, torch::kFloat64)));
  CHECK_THROWS_AS(heatmap_from(a, torch::zeros({4, 3, 2})), ShapeError);
}

TEST_CASE("disjoint evidence regions give different maps per class") {
  auto a = torch::rand({2, 4, 4}, torch::kFloat64) + 0.1;
  auto left = cam_from_score(a, [](const torch::Tensor& t) { return t[0].narrow(1, 0, 2).mean(); });
  auto right = cam_from_score(a, [](const torch::Tensor& t) { return t[1].narrow(1, 2, 2).mean(); });
  CHECK((left.values - right.values).abs().sum().item<double>() > 0.0);
}

TEST_CASE("grad-cam on the full model") {
  ModelConfig mc;
  mc.emotion_classes = 2;
  A4Net model(mc, 3);
  auto before = test::flat_parameters(*model).clone();
  auto image = torch::rand({3, 64, 64});

  auto res = grad_cam(model, image, {});
  CHECK(res.layer_id == layers::stage4);
  CHECK(res.heatmap.height() == 2);
  CHECK(res.heatmap.width() == 2);
  CHECK(res.heatmap.values.min().item<double>() >= 0.0);
  CHECK(res.heatmap.values.max().item<double>() <= 1.0);
  CHECK(res.target_class == res.predicted_class);
  CHECK(torch::equal(test::flat_parameters(*model), before));

  for (auto layer : {layers::stage3, layers::v2, layers::stage_s, layers::stage_fe}) {
    auto r = grad_cam(model, image, {std::string(layer), 1});
    CHECK(r.target_class == 1);
    CHECK(r.heatmap.values.max().item<double>() <= 1.0);
  }
  CHECK(grad_cam(model, image, {std::string(layers::v2), 0}).heatmap.height() == 16);

  auto c0 = grad_cam(model, image, {std::string(layers::stage2), 0});
  auto c1 = grad_cam(model, image, {std::string(layers::stage2), 1});
  CHECK((c0.heatmap.values - c1.heatmap.values).abs().sum().item<double>() > 0.0);

  CHECK_THROWS_AS(grad_cam(model, image, {"fusion.head_v", {}}), ConfigError);
  CHECK_THROWS_AS(grad_cam(model, image, {std::string(layers::stage4), 2}), DomainError);

  ModelConfig no_scene;
  no_scene.attributes = AttributeSet::parse("B+C+F");
  A4Net partial(no_scene, 1);
  CHECK_THROWS_AS(grad_cam(partial, image, {std::string(layers::stage_s), {}}), ConfigError);
}

TEST_CASE("concurrent grad-cam calls agree") {
  A4Net model(ModelConfig{}, 4);
  auto image = torch::rand({3, 64, 64});
  auto reference = grad_cam(model, image, {}).heatmap.values;
  std::vector<torch::Tensor> results(4);
  std::vector<std::thread> threads;
  for (size_t i = 0; i < results.size(); ++i) {
    threads.emplace_back([&, i] { results[i] = grad_cam(model, image, {}).heatmap.values; });
  }
  for (auto& t : threads) t.join();
  for (const auto& r : results) CHECK(torch::equal(r, reference));
}

TEST_CASE("upsampling keeps the value range and source dims") {
  auto up = upsample(ramp(2, 3), 64, 64);
  CHECK(up.height() == 64);
  CHECK(up.source_height == 2);
  CHECK(up.source_width == 3);
  CHECK(up.values.min().item<double>() >= 0.0);
  CHECK(up.values.max().item<double>() <= 1.0);
}

TEST_CASE("overlay blending endpoints") {
  auto img = random_image(1, 8);
  auto hm = upsample(ramp(2, 2), 8, 8);
  CHECK((overlay_image(img, hm, 0.0) == img));
  auto full = overlay_image(img, hm, 1.0);
  auto v = hm.values.accessor<double, 2>();
  for (int64_t y = 0; y < 8; ++y) {
    for (int64_t x = 0; x < 8; ++x) {
      const auto& rgb = kViridis[static_cast<size_t>(std::lround(v[y][x] * 255.0))];
      for (int c = 0; c < 3; ++c) CHECK(full.at(y, x, c) == static_cast<float>(rgb[static_cast<size_t>(c)]) / 255.0f);
    }
  }
  CHECK_THROWS_AS(overlay_image(img, ramp(2, 2), 0.5), ShapeError);
  CHECK_THROWS_AS(overlay_image(img, hm, 1.5), DomainError);
}

TEST_CASE("rendered overlays are byte-identical") {
  auto dir = test::scratch_dir("overlay");
  auto img = random_image(2, 16);
  auto hm = upsample(ramp(4, 4), 16, 16);
  render_overlay(img, hm, dir / "a.png", 0.4);
  render_overlay(img, hm, dir / "b.png", 0.4);
  CHECK(test::read_bytes(dir / "a.png") == test::read_bytes(dir / "b.png"));
  CHECK_THROWS_AS(render_overlay(img, hm, dir / "missing" / "c.png", 0.4), IoError);
}

TEST_CASE("quadrant mass") {
  auto m = quadrant_mass({torch::tensor({{1.0, 2.0}, {3.0, 4.0}}, torch::kFloat64), 2, 2});
  CHECK((m == std::array<double, 4>{1, 2, 3, 4}));
  auto odd = quadrant_mass({torch::ones({3, 3}, torch::kFloat64), 3, 3});
  CHECK((odd == std::array<double, 4>{2.25, 2.25, 2.25, 2.25}));
}

}  // TEST_SUITE
