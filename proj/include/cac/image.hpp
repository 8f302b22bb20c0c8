#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cac {

/// Interleaved 8-bit image as decoded from disk (RGB order, HWC).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image8&) const = default;
};

/// Real-valued HWC image: the network input after normalization, or any
/// intermediate (tiles, mosaics) produced on the way there.
struct ImageTensor {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> pixels;

  ImageTensor() = default;
  ImageTensor(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  double& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const ImageTensor&) const = default;
  bool all_finite() const;
};

/// Per-channel normalization applied after scaling bytes to [0, 1].
struct Normalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};
};

/// Decodes any format OpenCV understands into 3-channel RGB.
Image8 read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

/// Bilinear resampling with antialiasing: the triangle kernel is widened by
/// the downscale factor so every source pixel contributes. Shared by
/// preprocessing and duplicate detection so both see identical bytes.
Image8 resize_bilinear_aa(const Image8& src, int width, int height);
ImageTensor resize_bilinear_aa(const ImageTensor& src, int width, int height);

/// ITU-R 601 luma, rounded to the nearest byte.
Image8 to_grayscale(const Image8& rgb);

ImageTensor normalize(const Image8& rgb, const Normalization& norm);
/// Inverse of normalize, clamped and rounded to bytes (for figures).
Image8 denormalize(const ImageTensor& tensor, const Normalization& norm);

Image8 crop(const Image8& src, int x0, int y0, int width, int height);

}  // namespace cac
