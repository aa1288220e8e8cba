#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "a4net/image.hpp"

namespace a4net {

using ImageRef = std::variant<std::filesystem::path, std::shared_ptr<const Image>>;

struct SampleRecord {
  ImageRef image_ref;
  int64_t emotion = 0;
  // Every positive emotion label; holds just `emotion` for single-label data.
  std::vector<int64_t> emotion_labels;
  std::optional<double> brightness;
  std::optional<double> colorfulness;
  std::optional<int64_t> scene;
  std::optional<int64_t> facial_expression;

  bool operator==(const SampleRecord& other) const;
};

using Dataset = std::vector<SampleRecord>;

struct ClassRanges {
  int64_t emotion_classes = 0;  // 0 disables the range check for that field
  int64_t scene_classes = 0;
  int64_t fe_classes = 0;
};

// Tab-separated text, one sample per line:
//   image_path  emotion  brightness  colorfulness  scene  facial_expression
// Empty fields are absent, '#' lines are comments, and a first line whose
// emotion field is not numeric is a header. The emotion field may list several
// labels separated by ',' for multi-label data; the first is the primary one.
// Relative image paths resolve against the manifest's directory.
Dataset load_manifest(const std::filesystem::path& path, const ClassRanges& ranges = {});

// Writes records whose images are paths; in-memory images are rejected.
// Paths under the manifest's directory are written relative to it.
void write_manifest(const Dataset& dataset, const std::filesystem::path& path);

void validate_record(const SampleRecord& record, const ClassRanges& ranges, const std::string& where);

// Loads every path-backed image so later passes never touch the disk.
Dataset materialize(const Dataset& dataset);
std::shared_ptr<const Image> load_image(const SampleRecord& record);

}  // namespace a4net
