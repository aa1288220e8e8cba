#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "a4net/dataset.hpp"

namespace a4net {

// Procedural verification data. Each image is a flat hue/saturation field
// whose value channel carries the brightness bin, modulated by an optional
// background glyph (the scene) and an optional face glyph in one quadrant.
//
// Emotion is a fixed function of the attribute tuple:
//   with a face: valence and arousal are the face glyph's own
//   without:     valence = brightness bin, arousal = scene arousal for
//                calm/busy glyphs, else colourfulness bin
//   quadrant = 2 * valence + arousal
// and emotion = valence (2 classes), quadrant (4 classes) or
// quadrant + 4 * face_present (8 classes).
inline constexpr int kSceneGlyphCount = 12;
inline constexpr int kFaceGlyphCount = 6;

// Brightness bin boundary and colourfulness bin boundary on the computed
// attribute values; rendered samples keep clear of both.
inline constexpr double kBrightnessThreshold = 0.5;
inline constexpr double kColorfulnessThreshold = 0.05;

struct SyntheticSpec {
  int64_t num_samples = 2000;
  int64_t image_size = 64;
  int64_t emotion_classes = 4;
  int64_t scene_classes = 5;  // scene glyphs + unknown
  int64_t fe_classes = 4;     // face glyphs + no face
  uint64_t seed = 0;

  void validate() const;
};

enum class SceneArousal { low, high, neutral };

std::string_view face_glyph_name(int glyph);
int face_glyph_valence(int glyph);
int face_glyph_arousal(int glyph);
SceneArousal scene_glyph_arousal(int glyph);

int64_t synthetic_emotion(int brightness_bin, int colorfulness_bin, std::optional<int> scene_glyph,
                          std::optional<int> face_glyph, int64_t emotion_classes);

struct SyntheticSample {
  SampleRecord record;
  int brightness_bin = 0;
  int colorfulness_bin = 0;
  std::optional<int> scene_glyph;
  std::optional<int> face_glyph;
  std::optional<int> face_quadrant;  // 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right
};

// Deterministic in spec (including seed). Classes are exactly balanced:
// sample i carries emotion i mod emotion_classes.
std::vector<SyntheticSample> generate_synthetic(const SyntheticSpec& spec);

Dataset to_dataset(const std::vector<SyntheticSample>& samples);

// Writes images/NNNNNN.png, manifest.tsv and attributes.tsv (bins, glyphs and
// face quadrant per sample) under `dir`. Returns the manifest-backed dataset.
Dataset write_synthetic(const std::vector<SyntheticSample>& samples, const std::filesystem::path& dir);

}  // namespace a4net
