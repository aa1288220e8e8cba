#include "a4net/dataset.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "a4net/errors.hpp"

namespace a4net {

namespace {

constexpr const char* kFieldNames[] = {"image_path", "emotion", "brightness", "colorfulness", "scene",
                                       "facial_expression"};

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  size_t pos = 0;
  while (true) {
    const size_t next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
}

template <typename T>
bool parse_number(std::string_view text, T& value) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  return ec == std::errc() && ptr == end;
}

std::string where_at(const std::filesystem::path& path, size_t line) {
  return path.string() + ":" + std::to_string(line);
}

template <typename T>
std::optional<T> optional_field(std::string_view text, const std::string& where, const char* field) {
  if (text.empty()) return std::nullopt;
  T value{};
  if (!parse_number(text, value)) {
    throw ParseError(where + ": field '" + field + "': cannot parse '" + std::string(text) + "'");
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void check_class(int64_t value, int64_t classes, const std::string& where, const char* field) {
  if (value < 0 || (classes > 0 && value >= classes)) {
    throw ValidationError(where + ": field '" + field + "': " + std::to_string(value) + " outside [0, " +
                          (classes > 0 ? std::to_string(classes) : std::string("inf")) + ")");
  }
}

}  // namespace

bool SampleRecord::operator==(const SampleRecord& other) const {
  const bool same_image = std::visit(
      [&](const auto& mine) {
        using T = std::decay_t<decltype(mine)>;
        const T* theirs = std::get_if<T>(&other.image_ref);
        if (theirs == nullptr) return false;
        if constexpr (std::is_same_v<T, std::filesystem::path>) {
          return mine == *theirs;
        } else {
          return mine == *theirs || (mine && *theirs && *mine == **theirs);
        }
      },
      image_ref);
  return same_image && emotion == other.emotion && emotion_labels == other.emotion_labels &&
         brightness == other.brightness && colorfulness == other.colorfulness && scene == other.scene &&
         facial_expression == other.facial_expression;
}

void validate_record(const SampleRecord& record, const ClassRanges& ranges, const std::string& where) {
  check_class(record.emotion, ranges.emotion_classes, where, "emotion");
  for (int64_t label : record.emotion_labels) check_class(label, ranges.emotion_classes, where, "emotion");
  if (record.scene) check_class(*record.scene, ranges.scene_classes, where, "scene");
  if (record.facial_expression) check_class(*record.facial_expression, ranges.fe_classes, where, "facial_expression");
  for (auto [value, field] : {std::pair{record.brightness, "brightness"}, std::pair{record.colorfulness, "colorfulness"}}) {
    if (value && !(*value >= 0.0 && *value <= 1.0)) {
      throw ValidationError(where + ": field '" + field + "': " + format_double(*value) + " outside [0, 1]");
    }
  }
}

Dataset load_manifest(const std::filesystem::path& path, const ClassRanges& ranges) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const auto base = path.parent_path();

  Dataset dataset;
  std::string line;
  size_t line_no = 0;
  bool first_data_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto where = where_at(path, line_no);
    const auto fields = split(line, '\t');
    if (fields.size() < 2 || fields.size() > 6) {
      throw ParseError(where + ": expected 2 to 6 tab-separated fields, got " + std::to_string(fields.size()));
    }
    auto field = [&](size_t i) { return i < fields.size() ? fields[i] : std::string_view{}; };

    const auto labels_text = split(field(1), ',');
    int64_t probe = 0;
    if (first_data_line && !parse_number(labels_text.front(), probe)) {
      first_data_line = false;
      continue;  // header
    }
    first_data_line = false;

    SampleRecord record;
    if (field(0).empty()) throw ParseError(where + ": field 'image_path' is empty");
    const std::filesystem::path image_path(std::string(field(0)));
    record.image_ref = (image_path.is_absolute() ? image_path : base / image_path).lexically_normal();
    for (auto label : labels_text) {
      int64_t value = 0;
      if (!parse_number(label, value)) {
        throw ParseError(where + ": field 'emotion': cannot parse '" + std::string(field(1)) + "'");
      }
      record.emotion_labels.push_back(value);
    }
    record.emotion = record.emotion_labels.front();
    record.brightness = optional_field<double>(field(2), where, kFieldNames[2]);
    record.colorfulness = optional_field<double>(field(3), where, kFieldNames[3]);
    record.scene = optional_field<int64_t>(field(4), where, kFieldNames[4]);
    record.facial_expression = optional_field<int64_t>(field(5), where, kFieldNames[5]);
    validate_record(record, ranges, where);
    dataset.push_back(std::move(record));
  }
  return dataset;
}

void write_manifest(const Dataset& dataset, const std::filesystem::path& path) {
  const auto base = path.parent_path().lexically_normal();
  std::ostringstream out;
  out << "image_path\temotion\tbrightness\tcolorfulness\tscene\tfacial_expression\n";
  for (size_t i = 0; i < dataset.size(); ++i) {
    const auto& r = dataset[i];
    const auto* image_path = std::get_if<std::filesystem::path>(&r.image_ref);
    if (image_path == nullptr) {
      throw IoError("write_manifest: record " + std::to_string(i) + " holds an in-memory image, not a path");
    }
    auto rel = image_path->lexically_normal().lexically_relative(base);
    const bool inside = !rel.empty() && *rel.begin() != "..";
    out << (inside ? rel : *image_path).string() << '\t';
    if (r.emotion_labels.empty()) {
      out << r.emotion;
    } else {
      for (size_t k = 0; k < r.emotion_labels.size(); ++k) out << (k ? "," : "") << r.emotion_labels[k];
    }
    out << '\t' << (r.brightness ? format_double(*r.brightness) : "") << '\t'
        << (r.colorfulness ? format_double(*r.colorfulness) : "") << '\t'
        << (r.scene ? std::to_string(*r.scene) : "") << '\t'
        << (r.facial_expression ? std::to_string(*r.facial_expression) : "") << '\n';
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write manifest " + path.string());
  file << out.str();
  if (!file) throw IoError("failed writing manifest " + path.string());
}

std::shared_ptr<const Image> load_image(const SampleRecord& record) {
  if (const auto* image = std::get_if<std::shared_ptr<const Image>>(&record.image_ref)) {
    if (!*image) throw IoError("record holds a null image");
    return *image;
  }
  return std::make_shared<const Image>(read_png(std::get<std::filesystem::path>(record.image_ref)));
}

Dataset materialize(const Dataset& dataset) {
  Dataset out = dataset;
  for (auto& record : out) record.image_ref = load_image(record);
  return out;
}

}  // namespace a4net
