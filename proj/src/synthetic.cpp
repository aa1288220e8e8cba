#include "a4net/synthetic.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "a4net/errors.hpp"
#include "a4net/rng.hpp"

namespace a4net {

namespace {

enum class FaceKind { smile, frown, surprise, angry, laugh, fear };

struct FaceGlyph {
  std::string_view name;
  FaceKind kind;
  int valence;
  int arousal;
};

constexpr std::array<FaceGlyph, kFaceGlyphCount> kFaces = {{
    {"smile", FaceKind::smile, 1, 0},
    {"frown", FaceKind::frown, 0, 0},
    {"surprise", FaceKind::surprise, 1, 1},
    {"angry", FaceKind::angry, 0, 1},
    {"laugh", FaceKind::laugh, 1, 1},
    {"fear", FaceKind::fear, 0, 1},
}};

constexpr int kMaxRenderAttempts = 200;

// +1 / -1 texture, mirror-symmetric about the vertical centre line so that a
// horizontal flip leaves it pixel-identical; a phase that flipped with the
// augmentation would hand the network two polarities of one train glyph and
// only one at test time. Period 4 or 8 at 64 px, scaled; fine periods put the
// texture inside single stem patches.
double scene_pattern(int glyph, int64_t size, int64_t y, int64_t x) {
  const int64_t period = ((glyph / 6) % 2 == 0 ? 4 : 8) * size / 64;
  const int64_t half = std::max<int64_t>(period / 2, 1);
  const double centre = static_cast<double>(size - 1) / 2.0;
  const double dx = static_cast<double>(x) - centre;
  const double dy = static_cast<double>(y) - centre;
  const auto h = static_cast<double>(half);
  int64_t p = 0;
  switch (glyph % 6) {
    case 0: p = y / half; break;                      // horizontal stripes
    case 1: p = static_cast<int64_t>(std::floor(std::abs(dx) / h)); break;           // vertical stripes
    case 2: p = static_cast<int64_t>(std::floor(std::abs(dx) / h)) + y / half; break;  // checker
    case 3: p = static_cast<int64_t>(std::floor(std::hypot(dx, dy) / h)); break;  // rings
    case 4: p = static_cast<int64_t>(std::floor((std::abs(dx) + std::abs(dy)) / h)); break;  // diamonds
    default: p = static_cast<int64_t>(std::floor(std::max(std::abs(dx), std::abs(dy)) / h));  // squares
  }
  return (p % 2) == 1 ? 1.0 : -1.0;
}

// Face-relative coordinates (dx, dy) with the disc at radius 1.
bool face_feature(FaceKind kind, double dx, double dy) {
  auto sq = [](double v) { return v * v; };
  const double eye_r2 = kind == FaceKind::fear ? 0.06 : 0.04;
  bool eyes = sq(dx - 0.38) + sq(dy + 0.3) < eye_r2 || sq(dx + 0.38) + sq(dy + 0.3) < eye_r2;
  bool mouth = false;
  switch (kind) {
    case FaceKind::smile:
      mouth = std::abs(std::sqrt(sq(dx) + sq(dy - 0.05)) - 0.5) < 0.13 && dy > 0.2;
      break;
    case FaceKind::frown:
    case FaceKind::fear:
      mouth = std::abs(std::sqrt(sq(dx) + sq(dy - 0.85)) - 0.5) < 0.13 && dy < 0.65 && dy > 0.25;
      break;
    case FaceKind::surprise:
      mouth = std::abs(std::sqrt(sq(dx) + sq(dy - 0.45)) - 0.2) < 0.11;
      break;
    case FaceKind::angry:
      mouth = std::abs(dy - 0.5) < 0.11 && std::abs(dx) < 0.45;
      eyes = eyes || (std::abs(dy + 0.55 - (std::abs(dx) - 0.38) * 0.5) < 0.07 && std::abs(dx) < 0.65 &&
                      std::abs(dx) > 0.15);
      break;
    case FaceKind::laugh:
      mouth = sq(dx) + sq(dy - 0.35) < 0.16 && dy > 0.35;
      break;
  }
  return eyes || mouth;
}

void hsv_to_rgb(double h, double s, double v, float* rgb) {
  const double h6 = h * 6.0;
  const auto sector = static_cast<int>(std::floor(h6)) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  double r = v, g = t, b = p;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  rgb[0] = static_cast<float>(r);
  rgb[1] = static_cast<float>(g);
  rgb[2] = static_cast<float>(b);
}

struct Tuple {
  int brightness_bin;
  int colorfulness_bin;
  std::optional<int> scene;
  std::optional<int> face;
};

struct Rendered {
  Image image;
  double brightness;
  double colorfulness;
  std::optional<int> quadrant;
};

bool clear_of_thresholds(const Tuple& t, double b, double c) {
  return (b >= kBrightnessThreshold) == (t.brightness_bin == 1) && std::abs(b - kBrightnessThreshold) > 0.05 &&
         (c >= kColorfulnessThreshold) == (t.colorfulness_bin == 1) && (c < 0.035 || c > 0.07);
}

Rendered render(const Tuple& t, int64_t size, Rng& draw) {
  const double s64 = static_cast<double>(size) / 64.0;
  for (int attempt = 0; attempt < kMaxRenderAttempts; ++attempt) {
    const double base = t.brightness_bin == 0 ? draw.uniform(0.2, 0.4) : draw.uniform(0.6, 0.85);
    const double sat = t.colorfulness_bin == 0 ? draw.uniform(0.0, 0.05) : draw.uniform(0.7, 1.0);
    const double hue = draw.uniform();

    std::optional<int> quadrant;
    double cx = 0.0, cy = 0.0;
    if (t.face) {
      quadrant = static_cast<int>(draw.index(4));
      const double half = static_cast<double>(size) / 2.0;
      cx = (*quadrant % 2 + 0.5) * half + draw.uniform(-2.0, 2.0) * s64;
      cy = (*quadrant / 2 + 0.5) * half + draw.uniform(-2.0, 2.0) * s64;
    }
    const double radius = 0.46 * static_cast<double>(size) / 2.0;
    const double face_value = t.brightness_bin == 0 ? std::min(base + 0.3, 1.0) : base - 0.3;

    Image image(size, size);
    for (int64_t y = 0; y < size; ++y) {
      for (int64_t x = 0; x < size; ++x) {
        double v = base;
        if (t.scene) v *= 1.0 + 0.2 * scene_pattern(*t.scene, size, y, x);
        if (t.face) {
          const double dx = (static_cast<double>(x) - cx) / radius;
          const double dy = (static_cast<double>(y) - cy) / radius;
          if (dx * dx + dy * dy < 1.0) {
            v = face_feature(kFaces[static_cast<size_t>(*t.face)].kind, dx, dy) ? 0.25 * face_value : face_value;
          }
        }
        hsv_to_rgb(hue, sat, std::clamp(v, 0.0, 1.0), &image.at(y, x, 0));
      }
    }
    image = quantize8(image);
    const double b = compute_brightness(image);
    const double c = compute_colorfulness(image);
    if (clear_of_thresholds(t, b, c)) return {std::move(image), b, c, quadrant};
  }
  throw DomainError("synthetic renderer could not place a sample clear of the attribute thresholds");
}

std::string optional_text(const std::optional<int>& v) { return v ? std::to_string(*v) : "-"; }

}  // namespace

void SyntheticSpec::validate() const {
  if (num_samples < 0) throw ConfigError("synthetic: num_samples must be >= 0");
  if (image_size < 32) throw ConfigError("synthetic: image_size must be >= 32");
  if (emotion_classes != 2 && emotion_classes != 4 && emotion_classes != 8) {
    throw ConfigError("synthetic: emotion_classes must be 2, 4 or 8, got " + std::to_string(emotion_classes));
  }
  if (scene_classes < 2 || scene_classes > kSceneGlyphCount + 1) {
    throw ConfigError("synthetic: scene_classes " + std::to_string(scene_classes) + " needs " +
                      std::to_string(scene_classes - 1) + " scene glyphs but only " +
                      std::to_string(kSceneGlyphCount) + " exist (valid range 2.." +
                      std::to_string(kSceneGlyphCount + 1) + ")");
  }
  if (fe_classes < 2 || fe_classes > kFaceGlyphCount + 1) {
    throw ConfigError("synthetic: fe_classes " + std::to_string(fe_classes) + " needs " +
                      std::to_string(fe_classes - 1) + " face glyphs but only " + std::to_string(kFaceGlyphCount) +
                      " exist (valid range 2.." + std::to_string(kFaceGlyphCount + 1) + ")");
  }
}

std::string_view face_glyph_name(int glyph) {
  if (glyph < 0 || glyph >= kFaceGlyphCount) throw DomainError("face glyph out of range");
  return kFaces[static_cast<size_t>(glyph)].name;
}

int face_glyph_valence(int glyph) {
  if (glyph < 0 || glyph >= kFaceGlyphCount) throw DomainError("face glyph out of range");
  return kFaces[static_cast<size_t>(glyph)].valence;
}

int face_glyph_arousal(int glyph) {
  if (glyph < 0 || glyph >= kFaceGlyphCount) throw DomainError("face glyph out of range");
  return kFaces[static_cast<size_t>(glyph)].arousal;
}

SceneArousal scene_glyph_arousal(int glyph) {
  if (glyph < 0 || glyph >= kSceneGlyphCount) throw DomainError("scene glyph out of range");
  static constexpr SceneArousal kCycle[] = {SceneArousal::low, SceneArousal::high, SceneArousal::neutral};
  return kCycle[glyph % 3];
}

int64_t synthetic_emotion(int brightness_bin, int colorfulness_bin, std::optional<int> scene_glyph,
                          std::optional<int> face_glyph, int64_t emotion_classes) {
  // A drawn face is the whole cue, so its evidence sits in one quadrant.
  int valence = brightness_bin;
  int arousal = colorfulness_bin;
  if (face_glyph) {
    valence = face_glyph_valence(*face_glyph);
    arousal = face_glyph_arousal(*face_glyph);
  } else if (scene_glyph) {
    const auto a = scene_glyph_arousal(*scene_glyph);
    if (a != SceneArousal::neutral) arousal = a == SceneArousal::high ? 1 : 0;
  }
  const int quadrant = 2 * valence + arousal;
  switch (emotion_classes) {
    case 2: return valence;
    case 4: return quadrant;
    case 8: return quadrant + (face_glyph ? 4 : 0);
    default: throw ConfigError("synthetic: emotion_classes must be 2, 4 or 8");
  }
}

std::vector<SyntheticSample> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto scene_glyphs = static_cast<int>(spec.scene_classes - 1);
  const auto face_glyphs = static_cast<int>(spec.fe_classes - 1);

  std::vector<std::vector<Tuple>> groups(static_cast<size_t>(spec.emotion_classes));
  for (int b = 0; b < 2; ++b) {
    for (int c = 0; c < 2; ++c) {
      for (int s = 0; s <= scene_glyphs; ++s) {
        for (int f = 0; f <= face_glyphs; ++f) {
          Tuple t{b, c, s < scene_glyphs ? std::optional<int>(s) : std::nullopt,
                  f < face_glyphs ? std::optional<int>(f) : std::nullopt};
          const auto e = synthetic_emotion(b, c, t.scene, t.face, spec.emotion_classes);
          groups[static_cast<size_t>(e)].push_back(t);
        }
      }
    }
  }
  for (size_t e = 0; e < groups.size(); ++e) {
    if (groups[e].empty()) {
      throw ConfigError("synthetic: emotion class " + std::to_string(e) + " is unreachable with " +
                        std::to_string(face_glyphs) + " face glyphs");
    }
  }

  Rng draw(spec.seed);
  std::vector<SyntheticSample> samples;
  samples.reserve(static_cast<size_t>(spec.num_samples));
  for (int64_t i = 0; i < spec.num_samples; ++i) {
    const auto emotion = i % spec.emotion_classes;
    const auto& group = groups[static_cast<size_t>(emotion)];
    const Tuple t = group[static_cast<size_t>(draw.index(static_cast<int64_t>(group.size())))];
    auto rendered = render(t, spec.image_size, draw);

    SyntheticSample sample;
    sample.brightness_bin = t.brightness_bin;
    sample.colorfulness_bin = t.colorfulness_bin;
    sample.scene_glyph = t.scene;
    sample.face_glyph = t.face;
    sample.face_quadrant = rendered.quadrant;
    auto& r = sample.record;
    r.image_ref = std::make_shared<const Image>(std::move(rendered.image));
    r.emotion = emotion;
    r.emotion_labels = {emotion};
    r.brightness = rendered.brightness;
    r.colorfulness = rendered.colorfulness;
    r.scene = t.scene ? *t.scene : scene_glyphs;
    r.facial_expression = t.face ? *t.face : face_glyphs;
    samples.push_back(std::move(sample));
  }
  return samples;
}

Dataset to_dataset(const std::vector<SyntheticSample>& samples) {
  Dataset out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.record);
  return out;
}

Dataset write_synthetic(const std::vector<SyntheticSample>& samples, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  Dataset dataset;
  dataset.reserve(samples.size());
  std::ostringstream attributes;
  attributes << "image_path\tbrightness_bin\tcolorfulness_bin\tscene_glyph\tface_glyph\tface_quadrant\n";
  for (size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06zu.png", i);
    const auto path = (dir / name).lexically_normal();
    write_png(*load_image(samples[i].record), path);
    SampleRecord record = samples[i].record;
    record.image_ref = path;
    dataset.push_back(std::move(record));
    const auto& s = samples[i];
    attributes << name << '\t' << s.brightness_bin << '\t' << s.colorfulness_bin << '\t'
               << optional_text(s.scene_glyph) << '\t' << optional_text(s.face_glyph) << '\t'
               << optional_text(s.face_quadrant) << '\n';
  }
  write_manifest(dataset, dir / "manifest.tsv");
  std::ofstream file(dir / "attributes.tsv", std::ios::binary);
  if (!file) throw IoError("cannot write " + (dir / "attributes.tsv").string());
  file << attributes.str();
  return dataset;
}

}  // namespace a4net
