#include "cac/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cac/errors.hpp"

namespace cac {
namespace {

// Contributions of source pixels to one output pixel along one axis.
struct AxisTap {
  int first = 0;
  std::vector<double> weights;
};

std::vector<AxisTap> make_taps(int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  const double filter_scale = std::max(scale, 1.0);
  const double support = filter_scale;  // triangle kernel has radius 1
  std::vector<AxisTap> taps(static_cast<std::size_t>(out_size));
  for (int i = 0; i < out_size; ++i) {
    const double center = (i + 0.5) * scale;
    int lo = static_cast<int>(std::floor(center - support));
    int hi = static_cast<int>(std::ceil(center + support));
    lo = std::max(lo, 0);
    hi = std::min(hi, in_size);
    AxisTap& tap = taps[static_cast<std::size_t>(i)];
    tap.first = lo;
    double total = 0.0;
    for (int j = lo; j < hi; ++j) {
      const double t = std::abs((j + 0.5 - center) / filter_scale);
      const double w = t < 1.0 ? 1.0 - t : 0.0;
      tap.weights.push_back(w);
      total += w;
    }
    if (total <= 0.0) {
      // Degenerate only when the kernel misses every sample; fall back to nearest.
      const int nearest = std::clamp(static_cast<int>(center), 0, in_size - 1);
      tap.first = nearest;
      tap.weights.assign(1, 1.0);
      total = 1.0;
    }
    for (double& w : tap.weights) w /= total;
  }
  return taps;
}

// Separable resample of an HWC double buffer.
std::vector<double> resample(const std::vector<double>& src, int w, int h, int c, int out_w,
                             int out_h) {
  const auto xtaps = make_taps(w, out_w);
  const auto ytaps = make_taps(h, out_h);
  std::vector<double> horiz(static_cast<std::size_t>(out_w) * h * c, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const AxisTap& tap = xtaps[static_cast<std::size_t>(x)];
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t k = 0; k < tap.weights.size(); ++k) {
          acc += tap.weights[k] *
                 src[(static_cast<std::size_t>(y) * w + tap.first + static_cast<int>(k)) * c + ch];
        }
        horiz[(static_cast<std::size_t>(y) * out_w + x) * c + ch] = acc;
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(out_w) * out_h * c, 0.0);
  for (int y = 0; y < out_h; ++y) {
    const AxisTap& tap = ytaps[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t k = 0; k < tap.weights.size(); ++k) {
          acc += tap.weights[k] *
                 horiz[((static_cast<std::size_t>(tap.first) + k) * out_w + x) * c + ch];
        }
        out[(static_cast<std::size_t>(y) * out_w + x) * c + ch] = acc;
      }
    }
  }
  return out;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

bool ImageTensor::all_finite() const {
  return std::all_of(pixels.begin(), pixels.end(), [](double v) { return std::isfinite(v); });
}

Image8 read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IngestionError("cannot decode image: " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Image8 out(rgb.cols, rgb.rows, 3);
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<std::uint8_t>(y);
    std::copy(row, row + static_cast<std::ptrdiff_t>(rgb.cols) * 3,
              out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * rgb.cols * 3);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  const int type = image.channels == 1 ? CV_8UC1 : CV_8UC3;
  cv::Mat mat(image.height, image.width, type,
              const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat to_write;
  if (image.channels == 3) {
    cv::cvtColor(mat, to_write, cv::COLOR_RGB2BGR);
  } else {
    to_write = mat;
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), to_write);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw IoError("cannot write image: " + path.string());
}

Image8 resize_bilinear_aa(const Image8& src, int width, int height) {
  if (width <= 0 || height <= 0) throw ShapeError("resize target must be positive");
  if (src.width == width && src.height == height) return src;
  std::vector<double> in(src.pixels.begin(), src.pixels.end());
  const auto out = resample(in, src.width, src.height, src.channels, width, height);
  Image8 result(width, height, src.channels);
  std::transform(out.begin(), out.end(), result.pixels.begin(), to_byte);
  return result;
}

ImageTensor resize_bilinear_aa(const ImageTensor& src, int width, int height) {
  if (width <= 0 || height <= 0) throw ShapeError("resize target must be positive");
  if (src.width == width && src.height == height) return src;
  ImageTensor result(width, height, src.channels);
  result.pixels = resample(src.pixels, src.width, src.height, src.channels, width, height);
  return result;
}

Image8 to_grayscale(const Image8& rgb) {
  if (rgb.channels == 1) return rgb;
  Image8 gray(rgb.width, rgb.height, 1);
  for (std::size_t i = 0, n = gray.pixels.size(); i < n; ++i) {
    const double y = 0.299 * rgb.pixels[3 * i] + 0.587 * rgb.pixels[3 * i + 1] +
                     0.114 * rgb.pixels[3 * i + 2];
    gray.pixels[i] = to_byte(y);
  }
  return gray;
}

ImageTensor normalize(const Image8& rgb, const Normalization& norm) {
  if (rgb.channels != 3) throw ShapeError("normalize expects a 3-channel image");
  ImageTensor out(rgb.width, rgb.height, 3);
  for (std::size_t i = 0, n = out.pixels.size(); i < n; ++i) {
    const std::size_t c = i % 3;
    out.pixels[i] = (rgb.pixels[i] / 255.0 - norm.mean[c]) / norm.stddev[c];
  }
  return out;
}

Image8 denormalize(const ImageTensor& tensor, const Normalization& norm) {
  Image8 out(tensor.width, tensor.height, tensor.channels);
  for (std::size_t i = 0, n = out.pixels.size(); i < n; ++i) {
    const std::size_t c = i % static_cast<std::size_t>(tensor.channels);
    const double v = tensor.channels == 3 ? tensor.pixels[i] * norm.stddev[c] + norm.mean[c]
                                          : tensor.pixels[i];
    out.pixels[i] = to_byte(v * 255.0);
  }
  return out;
}

Image8 crop(const Image8& src, int x0, int y0, int width, int height) {
  if (x0 < 0 || y0 < 0 || width <= 0 || height <= 0 || x0 + width > src.width ||
      y0 + height > src.height) {
    throw ShapeError("crop window outside image");
  }
  Image8 out(width, height, src.channels);
  for (int y = 0; y < height; ++y) {
    const auto begin = src.pixels.begin() +
                       (static_cast<std::ptrdiff_t>(y0 + y) * src.width + x0) * src.channels;
    std::copy(begin, begin + static_cast<std::ptrdiff_t>(width) * src.channels,
              out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * width * src.channels);
  }
  return out;
}

}  // namespace cac
