#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace viewsketch {

// Single-channel float image, row-major, row 0 at the top.
class Image {
 public:
  Image() = default;
  Image(int height, int width, float fill = 0.0f);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  float& operator()(int row, int col) { return pixels_[static_cast<std::size_t>(row) * width_ + col]; }
  float operator()(int row, int col) const { return pixels_[static_cast<std::size_t>(row) * width_ + col]; }

  std::span<float> pixels() { return pixels_; }
  std::span<const float> pixels() const { return pixels_; }

  bool same_shape(const Image& other) const { return height_ == other.height_ && width_ == other.width_; }

  double sum() const;
  float max_value() const;
  float min_value() const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

// 8-bit RGBA image as produced by a renderer.
struct RgbaImage {
  int height = 0;
  int width = 0;
  bool has_alpha = true;
  std::vector<std::uint8_t> data;  // height * width * 4

  RgbaImage() = default;
  RgbaImage(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 4, 0) {}

  std::uint8_t* pixel(int row, int col) { return &data[(static_cast<std::size_t>(row) * width + col) * 4]; }
  const std::uint8_t* pixel(int row, int col) const { return &data[(static_cast<std::size_t>(row) * width + col) * 4]; }
};

// Luma in [0,1].
Image to_grayscale(const RgbaImage& rgba);

// PNG I/O. Grayscale images are written as 8-bit with values clamped to [0,1].
void write_png(const Image& image, const std::filesystem::path& path);
void write_png(const RgbaImage& image, const std::filesystem::path& path);
RgbaImage read_png_rgba(const std::filesystem::path& path);
Image read_png_gray(const std::filesystem::path& path);

// In-memory PNG codec (used by the HTTP API).
std::vector<std::uint8_t> encode_png(const Image& image);
RgbaImage decode_png(std::span<const std::uint8_t> bytes);

// 2x2 (or factor x factor) average pooling. Dimensions must be divisible.
Image average_pool(const Image& image, int factor);

// Area-weighted resampling to an arbitrary size.
Image resample_area(const Image& image, int height, int width);

// Fit inside size x size preserving aspect ratio, centered, background fill.
Image resize_pad_square(const Image& image, int size, float background);

// Binarize: value >= threshold -> 1, else 0.
Image binarize(const Image& image, float threshold = 0.5f);

}  // namespace viewsketch
