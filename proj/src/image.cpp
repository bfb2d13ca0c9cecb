#include "viewsketch/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace viewsketch {

Image::Image(int height, int width, float fill)
    : height_(height), width_(width), pixels_(static_cast<std::size_t>(height) * width, fill) {
  if (height < 0 || width < 0) throw std::invalid_argument("Image: negative dimensions");
}

double Image::sum() const {
  double s = 0.0;
  for (float v : pixels_) s += v;
  return s;
}

float Image::max_value() const {
  return pixels_.empty() ? 0.0f : *std::max_element(pixels_.begin(), pixels_.end());
}

float Image::min_value() const {
  return pixels_.empty() ? 0.0f : *std::min_element(pixels_.begin(), pixels_.end());
}

Image to_grayscale(const RgbaImage& rgba) {
  Image out(rgba.height, rgba.width);
  for (int r = 0; r < rgba.height; ++r) {
    for (int c = 0; c < rgba.width; ++c) {
      const auto* p = rgba.pixel(r, c);
      out(r, c) = static_cast<float>((0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0);
    }
  }
  return out;
}

namespace {

std::vector<std::uint8_t> gray_bytes(const Image& image) {
  std::vector<std::uint8_t> bytes(image.size());
  auto px = image.pixels();
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const float v = std::clamp(px[i], 0.0f, 1.0f);
    bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return bytes;
}

void write_with_png_image(png_image& img, const void* buffer, const std::filesystem::path& path) {
  if (!png_image_write_to_file(&img, path.c_str(), 0, buffer, 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw std::runtime_error("write_png: " + path.string() + ": " + msg);
  }
}

RgbaImage finish_read(png_image& img) {
  img.format = PNG_FORMAT_RGBA;
  RgbaImage out(static_cast<int>(img.height), static_cast<int>(img.width));
  out.has_alpha = (img.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  if (!png_image_finish_read(&img, nullptr, out.data.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw std::runtime_error("png decode failed: " + msg);
  }
  return out;
}

}  // namespace

void write_png(const Image& image, const std::filesystem::path& path) {
  if (image.empty()) throw std::invalid_argument("write_png: empty image");
  auto bytes = gray_bytes(image);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = PNG_FORMAT_GRAY;
  write_with_png_image(img, bytes.data(), path);
}

void write_png(const RgbaImage& image, const std::filesystem::path& path) {
  if (image.data.empty()) throw std::invalid_argument("write_png: empty image");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGBA;
  write_with_png_image(img, image.data.data(), path);
}

RgbaImage read_png_rgba(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    std::string msg = img.message;
    png_image_free(&img);
    throw std::runtime_error("read_png: " + path.string() + ": " + msg);
  }
  const bool alpha = (img.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  RgbaImage out = finish_read(img);
  out.has_alpha = alpha;
  return out;
}

Image read_png_gray(const std::filesystem::path& path) { return to_grayscale(read_png_rgba(path)); }

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.empty()) throw std::invalid_argument("encode_png: empty image");
  auto bytes = gray_bytes(image);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, bytes.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("encode_png: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, bytes.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("encode_png: ") + img.message);
  }
  out.resize(size);
  return out;
}

RgbaImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (bytes.empty() || !png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    std::string msg = bytes.empty() ? "empty buffer" : img.message;
    png_image_free(&img);
    throw std::invalid_argument("decode_png: " + msg);
  }
  const bool alpha = (img.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  RgbaImage out = finish_read(img);
  out.has_alpha = alpha;
  return out;
}

Image average_pool(const Image& image, int factor) {
  if (factor < 1 || image.height() % factor != 0 || image.width() % factor != 0) {
    throw std::invalid_argument("average_pool: dimensions not divisible by factor");
  }
  const int h = image.height() / factor;
  const int w = image.width() / factor;
  Image out(h, w);
  const float inv = 1.0f / static_cast<float>(factor * factor);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      float s = 0.0f;
      for (int dr = 0; dr < factor; ++dr)
        for (int dc = 0; dc < factor; ++dc) s += image(r * factor + dr, c * factor + dc);
      out(r, c) = s * inv;
    }
  }
  return out;
}

Image resample_area(const Image& image, int height, int width) {
  if (image.empty() || height <= 0 || width <= 0) throw std::invalid_argument("resample_area: bad size");
  Image out(height, width);
  const double sy = static_cast<double>(image.height()) / height;
  const double sx = static_cast<double>(image.width()) / width;
  for (int r = 0; r < height; ++r) {
    const double y0 = r * sy, y1 = (r + 1) * sy;
    for (int c = 0; c < width; ++c) {
      const double x0 = c * sx, x1 = (c + 1) * sx;
      double acc = 0.0, area = 0.0;
      for (int yi = static_cast<int>(y0); yi < std::min(image.height(), static_cast<int>(std::ceil(y1))); ++yi) {
        const double wy = std::min<double>(yi + 1, y1) - std::max<double>(yi, y0);
        if (wy <= 0) continue;
        for (int xi = static_cast<int>(x0); xi < std::min(image.width(), static_cast<int>(std::ceil(x1))); ++xi) {
          const double wx = std::min<double>(xi + 1, x1) - std::max<double>(xi, x0);
          if (wx <= 0) continue;
          acc += wy * wx * image(yi, xi);
          area += wy * wx;
        }
      }
      out(r, c) = static_cast<float>(area > 0 ? acc / area : 0.0);
    }
  }
  return out;
}

Image resize_pad_square(const Image& image, int size, float background) {
  if (image.empty() || size <= 0) throw std::invalid_argument("resize_pad_square: bad input");
  const double scale = static_cast<double>(size) / std::max(image.height(), image.width());
  const int h = std::max(1, static_cast<int>(std::lround(image.height() * scale)));
  const int w = std::max(1, static_cast<int>(std::lround(image.width() * scale)));
  Image scaled = (h == image.height() && w == image.width()) ? image : resample_area(image, h, w);
  Image out(size, size, background);
  const int r0 = (size - h) / 2, c0 = (size - w) / 2;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out(r0 + r, c0 + c) = scaled(r, c);
  return out;
}

Image binarize(const Image& image, float threshold) {
  Image out(image.height(), image.width());
  auto src = image.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] >= threshold ? 1.0f : 0.0f;
  return out;
}

}  // namespace viewsketch
