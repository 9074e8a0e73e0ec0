#include "aldsr/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "aldsr/errors.hpp"

namespace aldsr {
namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

Image shaved_luma(const Image& image, std::size_t shave) {
  const Image y = image.channels == 1 ? image : rgb_to_y(image);
  if (2 * shave >= y.width || 2 * shave >= y.height) {
    throw DimensionError("shave " + std::to_string(shave) + " leaves nothing of a " +
                         std::to_string(y.width) + "x" + std::to_string(y.height) + " image");
  }
  return crop(y, shave, shave, y.width - 2 * shave, y.height - 2 * shave);
}

void check_same(const Image& a, const Image& b, const char* what) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw DimensionError(std::string(what) + ": image sizes differ (" + std::to_string(a.width) +
                         "x" + std::to_string(a.height) + "x" + std::to_string(a.channels) +
                         " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) + "x" +
                         std::to_string(b.channels) + ")");
  }
}

// Valid-region separable filtering of a single plane.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t w, std::size_t h,
                                 const std::vector<double>& taps) {
  const std::size_t ow = w - kWindow + 1;
  const std::size_t oh = h - kWindow + 1;
  std::vector<double> rows(ow * h, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) acc += taps[k] * plane[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(ow * oh, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t k = 0; k < kWindow; ++k) {
      const double t = taps[k];
      for (std::size_t x = 0; x < ow; ++x) out[y * ow + x] += t * rows[(y + k) * ow + x];
    }
  }
  return out;
}

}  // namespace

std::vector<double> ssim_window_1d() {
  std::vector<double> taps(kWindow);
  double total = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(kWindow / 2);
    taps[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

double psnr_plane(const Image& a, const Image& b) {
  check_same(a, b, "psnr");
  double sse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sse += d * d;
  }
  if (sse == 0.0) return kPsnrInfinite;
  const double mse = sse / static_cast<double>(a.data.size());
  return 10.0 * std::log10(1.0 / mse);
}

double ssim_plane(const Image& a, const Image& b) {
  check_same(a, b, "ssim");
  if (a.channels != 1) throw DimensionError("ssim: expected a single-channel plane");
  if (a.width < kWindow || a.height < kWindow) {
    throw DimensionError("ssim: image " + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " is smaller than the 11x11 window");
  }
  const std::size_t n = a.data.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a.data[i] * a.data[i];
    bb[i] = b.data[i] * b.data[i];
    ab[i] = a.data[i] * b.data[i];
  }
  const auto taps = ssim_window_1d();
  const auto mu_a = filter_valid(a.data, a.width, a.height, taps);
  const auto mu_b = filter_valid(b.data, a.width, a.height, taps);
  const auto e_aa = filter_valid(aa, a.width, a.height, taps);
  const auto e_bb = filter_valid(bb, a.width, a.height, taps);
  const auto e_ab = filter_valid(ab, a.width, a.height, taps);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i];
    const double mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
             ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
  }
  return total / static_cast<double>(mu_a.size());
}

double psnr_y(const Image& sr, const Image& hr, std::size_t shave) {
  check_same(sr, hr, "psnr_y");
  return psnr_plane(shaved_luma(sr, shave), shaved_luma(hr, shave));
}

double ssim_y(const Image& sr, const Image& hr, std::size_t shave) {
  check_same(sr, hr, "ssim_y");
  return ssim_plane(shaved_luma(sr, shave), shaved_luma(hr, shave));
}

double MetricReport::mean_psnr() const {
  if (rows.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : rows) total += r.psnr_db;
  return total / static_cast<double>(rows.size());
}

double MetricReport::mean_ssim() const {
  if (rows.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : rows) total += r.ssim;
  return total / static_cast<double>(rows.size());
}

namespace {

std::string format_row(const char* fmt, const std::string& name, double psnr, double ssim) {
  char psnr_text[32];
  if (std::isinf(psnr)) {
    std::snprintf(psnr_text, sizeof(psnr_text), "inf");
  } else {
    std::snprintf(psnr_text, sizeof(psnr_text), "%.4f", psnr);
  }
  char line[256];
  std::snprintf(line, sizeof(line), fmt, name.c_str(), psnr_text, ssim);
  return line;
}

}  // namespace

std::string MetricReport::to_csv() const {
  std::string out = "name,psnr_db,ssim\n";
  for (const auto& r : rows) out += format_row("%s,%s,%.6f\n", r.name, r.psnr_db, r.ssim);
  out += format_row("%s,%s,%.6f\n", "mean", mean_psnr(), mean_ssim());
  return out;
}

std::string MetricReport::summary_table() const {
  std::string out = "image                     PSNR (dB)     SSIM\n";
  for (const auto& r : rows) out += format_row("%-24s %10s   %.4f\n", r.name, r.psnr_db, r.ssim);
  out += format_row("%-24s %10s   %.4f\n", "mean", mean_psnr(), mean_ssim());
  return out;
}

}  // namespace aldsr
