#include "a4net/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "a4net/errors.hpp"

namespace a4net {

namespace {

uint8_t to_byte(float v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

void require_pixels(const Image& image, const char* what) {
  if (image.empty()) throw DomainError(std::string(what) + ": empty image");
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw IoError("cannot read image " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> bytes(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
    std::string message = png.message;
    png_image_free(&png);
    throw IoError("cannot decode image " + path.string() + ": " + message);
  }
  Image image(png.width, png.height);
  for (size_t i = 0; i < bytes.size(); ++i) image.pixels[i] = static_cast<float>(bytes[i]) / 255.0f;
  return image;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  require_pixels(image, "write_png");
  std::vector<uint8_t> bytes(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), bytes.begin(), to_byte);
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw IoError("cannot write image " + path.string() + ": " + png.message);
  }
}

Image quantize8(const Image& image) {
  Image out = image;
  for (auto& v : out.pixels) v = static_cast<float>(to_byte(v)) / 255.0f;
  return out;
}

Image flip_horizontal(const Image& image) {
  Image out(image.width, image.height);
  for (int64_t y = 0; y < image.height; ++y) {
    for (int64_t x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, image.width - 1 - x, c);
    }
  }
  return out;
}

Image crop(const Image& image, int64_t x0, int64_t y0, int64_t width, int64_t height) {
  if (x0 < 0 || y0 < 0 || x0 + width > image.width || y0 + height > image.height) {
    throw PreprocessError("crop window exceeds image bounds");
  }
  Image out(width, height);
  for (int64_t y = 0; y < height; ++y) {
    const float* src = &image.pixels[static_cast<size_t>(((y0 + y) * image.width + x0) * 3)];
    std::copy(src, src + width * 3, &out.pixels[static_cast<size_t>(y * width * 3)]);
  }
  return out;
}

Image resize_bilinear(const Image& image, int64_t width, int64_t height) {
  require_pixels(image, "resize_bilinear");
  if (width == image.width && height == image.height) return image;
  Image out(width, height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  for (int64_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const auto y0 = static_cast<int64_t>(fy);
    const int64_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (int64_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const auto x0 = static_cast<int64_t>(fx);
      const int64_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c);
        const double bottom = (1.0 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c);
        out.at(y, x, c) = static_cast<float>((1.0 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

double compute_brightness(const Image& image) {
  require_pixels(image, "compute_brightness");
  // Summing in sorted order makes the result independent of pixel order.
  std::vector<float> values;
  values.reserve(image.pixels.size() / 3);
  for (size_t i = 0; i < image.pixels.size(); i += 3) {
    values.push_back(std::max({image.pixels[i], image.pixels[i + 1], image.pixels[i + 2]}));
  }
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (float v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double compute_colorfulness(const Image& image) {
  require_pixels(image, "compute_colorfulness");
  std::vector<std::pair<double, double>> opponent;
  opponent.reserve(image.pixels.size() / 3);
  for (size_t i = 0; i < image.pixels.size(); i += 3) {
    const double r = 255.0 * image.pixels[i];
    const double g = 255.0 * image.pixels[i + 1];
    const double b = 255.0 * image.pixels[i + 2];
    opponent.emplace_back(r - g, 0.5 * (r + g) - b);
  }
  // Sorted accumulation, as in compute_brightness; Welford running moments.
  std::sort(opponent.begin(), opponent.end());
  double mean_rg = 0.0, mean_yb = 0.0, m2_rg = 0.0, m2_yb = 0.0;
  double n = 0.0;
  for (const auto& [rg, yb] : opponent) {
    n += 1.0;
    const double d_rg = rg - mean_rg;
    mean_rg += d_rg / n;
    m2_rg += d_rg * (rg - mean_rg);
    const double d_yb = yb - mean_yb;
    mean_yb += d_yb / n;
    m2_yb += d_yb * (yb - mean_yb);
  }
  const double var_rg = m2_rg / n;
  const double var_yb = m2_yb / n;
  const double m = std::sqrt(var_rg + var_yb) + 0.3 * std::sqrt(mean_rg * mean_rg + mean_yb * mean_yb);
  return std::min(m / 150.0, 1.0);
}

}  // namespace a4net
