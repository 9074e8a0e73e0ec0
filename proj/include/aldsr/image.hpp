#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "aldsr/tensor.hpp"

namespace aldsr {

// Planar channel-major float image, values nominally in [0,1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<double> data;  // [channels][height][width]

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c = 3, double fill = 0.0)
      : width(w), height(h), channels(c), data(w * h * c, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * height + y) * width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }
  bool empty() const { return data.empty(); }
  bool operator==(const Image&) const = default;
};

// 8-bit grayscale or RGB PNG (palette/16-bit/alpha are converted). Grayscale
// is replicated to three channels unless keep_gray is set.
Image load_png(const std::filesystem::path& path, bool keep_gray = false);

// Clamps to [0,1] and rounds v*255 half away from zero.
void save_png(const std::filesystem::path& path, const Image& image);

// The 8-bit code save_png writes for a float sample.
unsigned char quantize_u8(double v);

// Snaps every sample onto the 8-bit grid, as a save/load round trip would.
Image quantize(const Image& image);

Image crop(const Image& image, std::size_t x, std::size_t y, std::size_t w, std::size_t h);

// Drops the bottom/right rows so both sides are multiples of `multiple`.
Image crop_to_multiple(const Image& image, std::size_t multiple);

// Cubic convolution kernel with a = -0.5.
double cubic_kernel(double t);

// Separable cubic resampling: horizontal then vertical pass in double. When a
// side shrinks by f > 1 the kernel is stretched to u(t/f)/f over 4f taps.
// Tap weights are normalized per output pixel; out-of-range taps are clamped
// to the border. Output pixel i samples input coordinate (i + 0.5) * f - 0.5.
Image bicubic_resize(const Image& image, std::size_t out_w, std::size_t out_h);

// Studio-swing luma on [0,1]: (16 + 65.481 R + 128.553 G + 24.966 B) / 255.
Image rgb_to_y(const Image& image);
double luma(double r, double g, double b);

template <typename T>
Tensor<T> to_tensor(const Image& image);  // [C,H,W]

template <typename T>
Image from_tensor(const Tensor<T>& tensor);  // [C,H,W] or [1,C,H,W]

}  // namespace aldsr
