#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "aldsr/image.hpp"

namespace aldsr {

// Returned by psnr_y for identical inputs.
inline constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();

// PSNR of the studio-swing luma after removing `shave` pixels from every border.
double psnr_y(const Image& sr, const Image& hr, std::size_t shave);

// Mean SSIM over all valid 11x11 windows (Gaussian, sigma 1.5) of the shaved luma.
double ssim_y(const Image& sr, const Image& hr, std::size_t shave);

// Same metrics on images that are already single-channel luma.
double psnr_plane(const Image& a, const Image& b);
double ssim_plane(const Image& a, const Image& b);

// Normalized 11-tap Gaussian with sigma 1.5.
std::vector<double> ssim_window_1d();

struct MetricRow {
  std::string name;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  void add(std::string name, double psnr_db, double ssim) {
    rows.push_back({std::move(name), psnr_db, ssim});
  }
  // Per-image means; an infinite PSNR row makes the mean infinite.
  double mean_psnr() const;
  double mean_ssim() const;

  // `name,psnr_db,ssim` header, one row per image, then a `mean` row.
  std::string to_csv() const;
  std::string summary_table() const;
};

}  // namespace aldsr
