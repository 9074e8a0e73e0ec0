#include "aldsr/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "aldsr/errors.hpp"

namespace aldsr {

Image load_png(const std::filesystem::path& path, bool keep_gray) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + png.message);
  }
  const bool gray = keep_gray && (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const std::size_t channels = gray ? 1 : 3;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    throw DataError("corrupt PNG " + path.string() + ": " + message);
  }
  Image image(png.width, png.height, channels);
  const std::size_t plane = image.width * image.height;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      image.data[c * plane + i] = buffer[i * channels + c] / 255.0;
    }
  }
  return image;
}

unsigned char quantize_u8(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::round(clamped * 255.0));
}

void save_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw DimensionError("save_png: expected 1 or 3 channels, got " +
                         std::to_string(image.channels));
  }
  if (image.empty()) throw DimensionError("save_png: empty image");
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const std::size_t plane = image.width * image.height;
  std::vector<unsigned char> buffer(plane * image.channels);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < image.channels; ++c) {
      buffer[i * image.channels + c] = quantize_u8(image.data[c * plane + i]);
    }
  }
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

Image quantize(const Image& image) {
  Image out = image;
  for (double& v : out.data) v = quantize_u8(v) / 255.0;
  return out;
}

Image crop(const Image& image, std::size_t x, std::size_t y, std::size_t w, std::size_t h) {
  if (x + w > image.width || y + h > image.height) {
    throw RangeError("crop " + std::to_string(w) + "x" + std::to_string(h) + " at (" +
                     std::to_string(x) + "," + std::to_string(y) + ") exceeds " +
                     std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  Image out(w, h, image.channels);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t r = 0; r < h; ++r) {
      const double* src = &image.data[(c * image.height + y + r) * image.width + x];
      std::copy(src, src + w, &out.data[(c * h + r) * w]);
    }
  }
  return out;
}

Image crop_to_multiple(const Image& image, std::size_t multiple) {
  if (multiple == 0) throw ConfigError("crop_to_multiple: multiple must be positive");
  const std::size_t w = image.width / multiple * multiple;
  const std::size_t h = image.height / multiple * multiple;
  if (w == 0 || h == 0) {
    throw RangeError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                     " is smaller than the scale " + std::to_string(multiple));
  }
  return crop(image, 0, 0, w, h);
}

double cubic_kernel(double t) {
  constexpr double a = -0.5;
  const double x = std::abs(t);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace {

struct Taps {
  std::vector<std::size_t> start;  // per output: first tap offset into index/weight
  std::vector<std::size_t> index;
  std::vector<double> weight;
};

Taps make_taps(std::size_t in, std::size_t out) {
  const double f = static_cast<double>(in) / static_cast<double>(out);
  const double stretch = std::max(f, 1.0);
  const double support = 2.0 * stretch;
  const auto count = static_cast<std::ptrdiff_t>(std::ceil(2.0 * support)) + 2;
  Taps taps;
  taps.start.reserve(out + 1);
  for (std::size_t i = 0; i < out; ++i) {
    taps.start.push_back(taps.index.size());
    const double center = (static_cast<double>(i) + 0.5) * f - 0.5;
    const auto left = static_cast<std::ptrdiff_t>(std::floor(center - support));
    double total = 0.0;
    const std::size_t first = taps.weight.size();
    for (std::ptrdiff_t j = left; j < left + count; ++j) {
      const double w = cubic_kernel((center - static_cast<double>(j)) / stretch) / stretch;
      if (w == 0.0) continue;
      const auto clamped = std::clamp<std::ptrdiff_t>(j, 0, static_cast<std::ptrdiff_t>(in) - 1);
      taps.index.push_back(static_cast<std::size_t>(clamped));
      taps.weight.push_back(w);
      total += w;
    }
    for (std::size_t k = first; k < taps.weight.size(); ++k) taps.weight[k] /= total;
  }
  taps.start.push_back(taps.index.size());
  return taps;
}

}  // namespace

Image bicubic_resize(const Image& image, std::size_t out_w, std::size_t out_h) {
  if (out_w == 0 || out_h == 0) {
    throw DimensionError("bicubic_resize: output size must be positive, got " +
                         std::to_string(out_w) + "x" + std::to_string(out_h));
  }
  if (image.empty()) throw DimensionError("bicubic_resize: empty input");
  const Taps horizontal = make_taps(image.width, out_w);
  const Taps vertical = make_taps(image.height, out_h);

  Image wide(out_w, image.height, image.channels);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < image.height; ++y) {
      const double* row = &image.data[(c * image.height + y) * image.width];
      double* dst = &wide.data[(c * image.height + y) * out_w];
      for (std::size_t x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (std::size_t k = horizontal.start[x]; k < horizontal.start[x + 1]; ++k) {
          acc += horizontal.weight[k] * row[horizontal.index[k]];
        }
        dst[x] = acc;
      }
    }
  }

  Image out(out_w, out_h, image.channels);
  for (std::size_t c = 0; c < image.channels; ++c) {
    const double* plane = &wide.data[c * image.height * out_w];
    for (std::size_t y = 0; y < out_h; ++y) {
      double* dst = &out.data[(c * out_h + y) * out_w];
      for (std::size_t k = vertical.start[y]; k < vertical.start[y + 1]; ++k) {
        const double w = vertical.weight[k];
        const double* src = plane + vertical.index[k] * out_w;
        for (std::size_t x = 0; x < out_w; ++x) dst[x] += w * src[x];
      }
    }
  }
  return out;
}

double luma(double r, double g, double b) {
  return (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0;
}

Image rgb_to_y(const Image& image) {
  if (image.channels != 3) {
    throw DimensionError("rgb_to_y: expected 3 channels, got " + std::to_string(image.channels));
  }
  Image y(image.width, image.height, 1);
  const std::size_t plane = image.width * image.height;
  for (std::size_t i = 0; i < plane; ++i) {
    y.data[i] = luma(image.data[i], image.data[plane + i], image.data[2 * plane + i]);
  }
  return y;
}

template <typename T>
Tensor<T> to_tensor(const Image& image) {
  std::vector<T> values(image.data.begin(), image.data.end());
  return Tensor<T>(Shape{image.channels, image.height, image.width}, std::move(values));
}

template <typename T>
Image from_tensor(const Tensor<T>& tensor) {
  Shape shape = tensor.shape();
  if (shape.size() == 4 && shape[0] == 1) shape.erase(shape.begin());
  if (shape.size() != 3) {
    throw DimensionError("from_tensor: expected [C,H,W] or [1,C,H,W], got " +
                         shape_str(tensor.shape()));
  }
  Image image(shape[2], shape[1], shape[0]);
  const auto values = tensor.values();
  std::copy(values.begin(), values.end(), image.data.begin());
  return image;
}

template Tensor<float> to_tensor(const Image&);
template Tensor<double> to_tensor(const Image&);
template Image from_tensor(const Tensor<float>&);
template Image from_tensor(const Tensor<double>&);

}  // namespace aldsr
