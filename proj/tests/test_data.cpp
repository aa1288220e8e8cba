#include "doctest_torch.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "a4net/dataset.hpp"
#include "a4net/errors.hpp"
#include "a4net/image.hpp"
#include "a4net/preprocess.hpp"
#include "a4net/rng.hpp"
#include "a4net/synthetic.hpp"
#include "helpers.hpp"

using namespace a4net;

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

Image random_image(Rng& rng, int64_t w, int64_t h) {
  Image img(w, h);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

double brightness_oracle(const Image& img) {
  double sum = 0.0;
  for (int64_t y = 0; y < img.height; ++y) {
    for (int64_t x = 0; x < img.width; ++x) {
      sum += std::max({img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)});
    }
  }
  return sum / static_cast<double>(img.width * img.height);
}

double colorfulness_oracle(const Image& img) {
  std::vector<double> rg, yb;
  for (int64_t y = 0; y < img.height; ++y) {
    for (int64_t x = 0; x < img.width; ++x) {
      const double r = 255.0 * img.at(y, x, 0), g = 255.0 * img.at(y, x, 1), b = 255.0 * img.at(y, x, 2);
      rg.push_back(r - g);
      yb.push_back(0.5 * (r + g) - b);
    }
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  auto var = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double e : v) s += (e - m) * (e - m);
    return s / v.size();
  };
  const double m = std::sqrt(var(rg) + var(yb)) + 0.3 * std::sqrt(mean(rg) * mean(rg) + mean(yb) * mean(yb));
  return std::min(m / 150.0, 1.0);
}

// The labelling rule restated from its documentation.
int64_t emotion_rule(const SyntheticSample& s, int64_t classes) {
  static const int kValence[] = {1, 0, 1, 0, 1, 0};  // smile frown surprise angry laugh fear
  static const int kArousal[] = {0, 0, 1, 1, 1, 1};
  int valence = s.brightness_bin;
  int arousal = s.colorfulness_bin;
  if (s.scene_glyph && *s.scene_glyph % 3 == 0) arousal = 0;
  if (s.scene_glyph && *s.scene_glyph % 3 == 1) arousal = 1;
  if (s.face_glyph) {
    valence = kValence[*s.face_glyph];
    arousal = kArousal[*s.face_glyph];
  }
  const int quadrant = 2 * valence + arousal;
  if (classes == 2) return valence;
  if (classes == 4) return quadrant;
  return quadrant + (s.face_glyph ? 4 : 0);
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("manifest with every field") {
  auto dir = test::scratch_dir("manifest_full");
  write_text(dir / "m.tsv", "a.png\t1\t0.5\t0.25\t3\t2\nb.png\t0\t0.1\t0.9\t0\t6\n");
  auto ds = load_manifest(dir / "m.tsv", {8, 255, 7});
  REQUIRE(ds.size() == 2);
  CHECK(std::get<std::filesystem::path>(ds[0].image_ref) == (dir / "a.png").lexically_normal());
  CHECK(ds[1].emotion == 0);
  auto t = make_targets(ds, {0, 1});
  for (const auto& m : {t.brightness_mask, t.colorfulness_mask, t.scene_mask, t.fe_mask}) {
    CHECK(torch::equal(m, torch::ones({2})));
  }
  CHECK(t.scene[0].item<int64_t>() == 3);
  CHECK(t.facial_expression[1].item<int64_t>() == 6);
}

TEST_CASE("empty and omitted fields are absent") {
  auto dir = test::scratch_dir("manifest_empty");
  write_text(dir / "m.tsv",
             "# comment\nimage_path\temotion\tbrightness\tcolorfulness\tscene\tfacial_expression\n"
             "a.png\t2\t0.4\t\t\t\nb.png\t1\n");
  auto ds = load_manifest(dir / "m.tsv");
  REQUIRE(ds.size() == 2);
  CHECK(ds[0].brightness == 0.4);
  CHECK_FALSE(ds[0].colorfulness.has_value());
  CHECK_FALSE(ds[0].scene.has_value());
  CHECK_FALSE(ds[1].brightness.has_value());
  auto t = make_targets(ds, {0, 1});
  CHECK(torch::equal(t.brightness_mask, torch::tensor({1.0f, 0.0f})));
  CHECK(torch::equal(t.scene_mask, torch::zeros({2})));
  CHECK(torch::equal(t.fe_mask, torch::zeros({2})));
}

TEST_CASE("manifest errors") {
  auto dir = test::scratch_dir("manifest_errors");
  write_text(dir / "range.tsv", "a.png\t1\t0.5\t0.5\t3\t2\nb.png\t1\t0.5\t0.5\t300\t2\n");
  CHECK_THROWS_WITH_AS(load_manifest(dir / "range.tsv", {8, 255, 7}), doctest::Contains("range.tsv:2: field 'scene'"),
                       ValidationError);
  write_text(dir / "bad.tsv", "a.png\t1\t0.5\nb.png\t1\tbright\n");
  CHECK_THROWS_WITH_AS(load_manifest(dir / "bad.tsv"), doctest::Contains("bad.tsv:2"), ParseError);
  write_text(dir / "cols.tsv", "a.png\t1\t0.5\t0.5\t1\t1\t9\n");
  CHECK_THROWS_AS(load_manifest(dir / "cols.tsv"), ParseError);
  CHECK_THROWS_AS(load_manifest(dir / "missing.tsv"), IoError);
}

TEST_CASE("manifest round trip") {
  auto dir = test::scratch_dir("manifest_roundtrip");
  Dataset ds;
  for (int i = 0; i < 5; ++i) {
    SampleRecord r;
    r.image_ref = (dir / ("img" + std::to_string(i) + ".png")).lexically_normal();
    r.emotion = i % 3;
    r.emotion_labels = {r.emotion};
    if (i != 1) r.brightness = 0.1 * i + 0.0123456789;
    if (i != 2) r.colorfulness = 1.0 / (i + 3);
    if (i % 2 == 0) r.scene = i;
    if (i != 4) r.facial_expression = 6 - i;
    ds.push_back(r);
  }
  ds[3].emotion_labels = {0, 2, 5};
  ds[3].emotion = 0;
  write_manifest(ds, dir / "m.tsv");
  CHECK((load_manifest(dir / "m.tsv") == ds));
}

TEST_CASE("brightness extremes and oracle") {
  CHECK(compute_brightness(Image(4, 3, 0.0f)) == 0.0);
  CHECK(compute_brightness(Image(4, 3, 1.0f)) == 1.0);
  CHECK_THROWS_AS(compute_brightness(Image()), DomainError);
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    auto img = random_image(rng, 8, 8);
    CHECK(std::abs(compute_brightness(img) - brightness_oracle(img)) <= 1e-6);
  }
}

TEST_CASE("colourfulness extremes and oracle") {
  CHECK(compute_colorfulness(Image(5, 5, 0.5f)) == 0.0);
  Image red(3, 3);
  for (int64_t y = 0; y < 3; ++y)
    for (int64_t x = 0; x < 3; ++x) red.at(y, x, 0) = 1.0f;
  CHECK(compute_colorfulness(red) == doctest::Approx(0.3 * std::sqrt(255.0 * 255.0 + 127.5 * 127.5) / 150.0));
  CHECK(compute_colorfulness(red) == doctest::Approx(0.5702).epsilon(1e-4));
  CHECK_THROWS_AS(compute_colorfulness(Image()), DomainError);
  Rng rng(2);
  for (int k = 0; k < 100; ++k) {
    auto img = random_image(rng, 8 + k % 5, 8);
    CHECK(std::abs(compute_colorfulness(img) - colorfulness_oracle(img)) <= 1e-4);
  }
}

TEST_CASE("attribute statistics ignore pixel order") {
  Rng rng(3);
  auto img = random_image(rng, 16, 8);
  auto flipped = flip_horizontal(img);
  CHECK(compute_brightness(flipped) == compute_brightness(img));
  CHECK(compute_colorfulness(flipped) == compute_colorfulness(img));

  std::vector<size_t> order(static_cast<size_t>(img.width * img.height));
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  for (size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[static_cast<size_t>(rng.index(i + 1))]);
  Image shuffled(img.width, img.height);
  for (size_t i = 0; i < order.size(); ++i) {
    for (size_t c = 0; c < 3; ++c) shuffled.pixels[i * 3 + c] = img.pixels[order[i] * 3 + c];
  }
  CHECK(compute_brightness(shuffled) == compute_brightness(img));
  CHECK(compute_colorfulness(shuffled) == compute_colorfulness(img));
}

TEST_CASE("synthetic generation is deterministic and self-consistent") {
  SyntheticSpec spec;
  spec.num_samples = 200;
  spec.seed = 42;
  auto a = generate_synthetic(spec);
  auto b = generate_synthetic(spec);
  REQUIRE(a.size() == 200);
  for (size_t i = 0; i < a.size(); ++i) {
    const auto& ia = *std::get<std::shared_ptr<const Image>>(a[i].record.image_ref);
    const auto& ib = *std::get<std::shared_ptr<const Image>>(b[i].record.image_ref);
    CHECK(ia == ib);
    CHECK(a[i].record.emotion == b[i].record.emotion);
    CHECK(ia.width == 64);
    CHECK(*a[i].record.brightness == compute_brightness(ia));
    CHECK(*a[i].record.colorfulness == compute_colorfulness(ia));
    CHECK(a[i].brightness_bin == (*a[i].record.brightness >= kBrightnessThreshold ? 1 : 0));
    CHECK(a[i].colorfulness_bin == (*a[i].record.colorfulness >= kColorfulnessThreshold ? 1 : 0));
    CHECK(a[i].face_quadrant.has_value() == a[i].face_glyph.has_value());
  }
  spec.seed = 43;
  auto c = generate_synthetic(spec);
  CHECK_FALSE(*std::get<std::shared_ptr<const Image>>(c[0].record.image_ref) ==
              *std::get<std::shared_ptr<const Image>>(a[0].record.image_ref));
}

TEST_CASE("synthetic labels follow the documented rule") {
  for (int64_t classes : {2, 4, 8}) {
    SyntheticSpec spec;
    spec.num_samples = 300;
    spec.emotion_classes = classes;
    spec.scene_classes = 13;
    spec.fe_classes = 7;
    spec.image_size = 32;
    spec.seed = 7;
    size_t agree = 0;
    auto samples = generate_synthetic(spec);
    for (const auto& s : samples) agree += emotion_rule(s, classes) == s.record.emotion ? 1 : 0;
    CHECK(agree == samples.size());
  }
}

TEST_CASE("synthetic classes are balanced") {
  SyntheticSpec spec;
  spec.num_samples = 1000;
  spec.image_size = 32;
  spec.seed = 8;
  std::map<int64_t, int> counts;
  for (const auto& s : generate_synthetic(spec)) ++counts[s.record.emotion];
  REQUIRE(counts.size() == 4);
  for (auto [cls, n] : counts) CHECK(std::abs(n - 250) <= 25);
}

TEST_CASE("synthetic config errors") {
  SyntheticSpec spec;
  spec.scene_classes = kSceneGlyphCount + 2;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
  spec = {};
  spec.fe_classes = kFaceGlyphCount + 2;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
  spec = {};
  spec.emotion_classes = 3;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
  spec = {};
  spec.image_size = 16;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
}

TEST_CASE("written synthetic sets reload identically") {
  auto dir = test::scratch_dir("synthetic_write");
  SyntheticSpec spec;
  spec.num_samples = 12;
  spec.seed = 9;
  auto samples = generate_synthetic(spec);
  auto ds = write_synthetic(samples, dir);
  auto reloaded = load_manifest(dir / "manifest.tsv");
  CHECK((reloaded == ds));
  for (size_t i = 0; i < ds.size(); ++i) {
    auto img = read_png(std::get<std::filesystem::path>(ds[i].image_ref));
    CHECK(img == *std::get<std::shared_ptr<const Image>>(samples[i].record.image_ref));
    CHECK(ds[i].brightness == samples[i].record.brightness);
  }
  CHECK(std::filesystem::exists(dir / "attributes.tsv"));
}

TEST_CASE("preprocessing contracts") {
  Rng source(10);
  auto img = random_image(source, 80, 70);
  AugmentConfig cfg;
  Rng unused(0);
  auto e1 = preprocess(img, cfg, false, unused);
  auto e2 = preprocess(img, cfg, false, unused);
  CHECK(torch::equal(e1, e2));
  CHECK(unused == Rng(0));
  CHECK(e1.sizes() == torch::IntArrayRef({3, 64, 64}));
  CHECK(e1.min().item<float>() >= 0.0f);
  CHECK(e1.max().item<float>() <= 1.0f);

  auto crop_view = preprocess_image(img, cfg, false, unused);
  CHECK(flip_horizontal(flip_horizontal(crop_view)) == crop_view);

  Rng r1(5), r2(5);
  for (int k = 0; k < 5; ++k) CHECK(torch::equal(preprocess(img, cfg, true, r1), preprocess(img, cfg, true, r2)));
  Rng r3(6);
  bool any_diff = false;
  for (int k = 0; k < 5; ++k) any_diff = any_diff || !torch::equal(preprocess(img, cfg, true, r3), e1);
  CHECK(any_diff);

  AugmentConfig always = cfg;
  always.horizontal_flip_prob = 1.0;
  AugmentConfig never = cfg;
  never.horizontal_flip_prob = 0.0;
  Rng f1(11), f2(11);
  CHECK(preprocess_image(img, always, true, f1) == flip_horizontal(preprocess_image(img, never, true, f2)));

  CHECK_THROWS_AS(preprocess(random_image(source, 63, 80), cfg, false, unused), PreprocessError);
}

}  // TEST_SUITE
