#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "aldsr/image.hpp"

namespace aldsr {

// Augmentation bits, applied in this order: hflip, vflip, rot90 (counter-clockwise).
enum AugBits : unsigned { kHFlip = 1u, kVFlip = 2u, kRot90 = 4u };

struct PatchMeta {
  std::size_t image_id = 0;
  std::size_t lr_x = 0;  // crop offset in LR pixels
  std::size_t lr_y = 0;
  unsigned aug = 0;
  bool operator==(const PatchMeta&) const = default;
};

struct PatchPair {
  Image lr;  // 3 x p x p
  Image hr;  // 3 x sp x sp
  PatchMeta meta;
};

Image hflip(const Image& image);
Image vflip(const Image& image);
Image rot90(const Image& image);

// Applies the same transform to both members and records it in meta.aug.
PatchPair augment(const PatchPair& pair, unsigned code);
Image augment_image(const Image& image, unsigned code);

// Aligned crop: LR at (lr_x, lr_y) size p, HR at (s*lr_x, s*lr_y) size s*p.
PatchPair crop_patch_pair(const Image& hr, const Image& lr, std::size_t lr_x, std::size_t lr_y,
                          std::size_t p, std::size_t s);

// Uniformly placed aligned crop. Throws RangeError when the LR image is smaller
// than p or the HR image is not exactly s times the LR image.
PatchPair extract_patch_pair(const Image& hr, const Image& lr, std::size_t p, std::size_t s,
                             std::mt19937_64& rng);

// Degrades the whole image the way the materialized LR set is produced:
// bicubic downscale by s then 8-bit quantization. `hr` must be a multiple of s.
Image degrade(const Image& hr, std::size_t s);

// The LR patch at (lr_x, lr_y) of degrade(hr, s), computed from a small HR
// window around the patch only. Bit-identical to cropping degrade(hr, s).
Image degrade_patch(const Image& hr, std::size_t lr_x, std::size_t lr_y, std::size_t p,
                    std::size_t s);

struct DatasetEntry {
  std::filesystem::path hr;
  // Empty means the LR side is degraded on the fly.
  std::filesystem::path lr;
};

struct DatasetIndex {
  std::vector<DatasetEntry> entries;
  std::string split = "train";
};

// One `<hr_path>\t<lr_path>` line per pair (or a lone HR path for on-the-fly
// pairs), plus a leading `# split: <tag>` line. Relative paths are resolved
// against the index file's directory.
void write_index(const std::filesystem::path& path, const DatasetIndex& index);
DatasetIndex read_index(const std::filesystem::path& path);

// Sorted *.png files directly inside `dir`.
std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir);

struct PrepareReport {
  DatasetIndex index;
  std::vector<std::pair<std::filesystem::path, std::string>> failures;
};

// Writes <out>/hr/<name>.png (cropped to a multiple of s), <out>/lr_x<s>/<name>.png
// and <out>/index.txt. Unreadable inputs are listed in `failures`; the rest
// are still processed.
PrepareReport prepare_degraded_set(const std::filesystem::path& hr_dir,
                                   const std::filesystem::path& out_dir, std::size_t s);

// In-memory training pairs. HR images are cropped to a multiple of the scale.
class PairSet {
 public:
  struct Pair {
    std::string name;
    Image hr;
    Image lr;  // empty in on-the-fly mode
  };

  PairSet(std::size_t scale, bool on_the_fly) : scale_(scale), on_the_fly_(on_the_fly) {}

  static PairSet from_index(const std::filesystem::path& index_path, std::size_t scale);
  // Every PNG under hr_dir, LR degraded on the fly.
  static PairSet from_hr_dir(const std::filesystem::path& hr_dir, std::size_t scale);

  // LR may be empty when on_the_fly is set.
  void add(std::string name, Image hr, Image lr = {});

  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  std::size_t scale() const { return scale_; }
  bool on_the_fly() const { return on_the_fly_; }
  const Pair& operator[](std::size_t i) const { return pairs_.at(i); }

  // Crops (and degrades, on the fly) the patch described by meta, then augments.
  PatchPair patch(const PatchMeta& meta, std::size_t p) const;

 private:
  std::size_t scale_;
  bool on_the_fly_;
  std::vector<Pair> pairs_;
};

// Reproducible stream of patch placements over a PairSet.
class PatchSampler {
 public:
  explicit PatchSampler(std::uint64_t seed, bool augment = true)
      : rng_(seed), augment_(augment) {}

  PatchMeta next_meta(const PairSet& set, std::size_t p);
  PatchPair next(const PairSet& set, std::size_t p) { return set.patch(next_meta(set, p), p); }

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 rng_;
  bool augment_;
};

// Uniform integer in [0, n) from the top 53 bits of one draw.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);

}  // namespace aldsr
