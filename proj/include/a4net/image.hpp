#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace a4net {

// Interleaved RGB, row-major, channel values in [0, 1].
struct Image {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int64_t w, int64_t h, float fill = 0.0f) : width(w), height(h), pixels(static_cast<size_t>(w * h * 3), fill) {}

  bool empty() const { return width == 0 || height == 0; }
  float& at(int64_t y, int64_t x, int c) { return pixels[static_cast<size_t>((y * width + x) * 3 + c)]; }
  float at(int64_t y, int64_t x, int c) const { return pixels[static_cast<size_t>((y * width + x) * 3 + c)]; }

  friend bool operator==(const Image&, const Image&) = default;
};

// 8-bit RGB PNG. Alpha and 16-bit inputs are converted; grayscale is expanded.
Image read_png(const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path);

// Snaps every channel to the nearest k/255, the values a PNG round trip keeps.
Image quantize8(const Image& image);

Image flip_horizontal(const Image& image);
Image crop(const Image& image, int64_t x0, int64_t y0, int64_t width, int64_t height);
// Bilinear, pixel centres aligned (half-pixel convention).
Image resize_bilinear(const Image& image, int64_t width, int64_t height);

// Mean over pixels of max(R, G, B), the HSV value channel.
double compute_brightness(const Image& image);

// Hasler-Suesstrunk colourfulness on 0-255 channels,
//   M = sqrt(var_rg + var_yb) + 0.3 sqrt(mean_rg^2 + mean_yb^2),
// with rg = R - G, yb = (R + G)/2 - B, reported as min(M / 150, 1).
double compute_colorfulness(const Image& image);

}  // namespace a4net
