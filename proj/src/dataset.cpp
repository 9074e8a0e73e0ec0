#include "aldsr/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "aldsr/errors.hpp"

namespace aldsr {

Image hflip(const Image& image) {
  Image out(image.width, image.height, image.channels);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) {
        out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
      }
    }
  }
  return out;
}

Image vflip(const Image& image) {
  Image out(image.width, image.height, image.channels);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) {
        out.at(c, y, x) = image.at(c, image.height - 1 - y, x);
      }
    }
  }
  return out;
}

Image rot90(const Image& image) {
  Image out(image.height, image.width, image.channels);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) {
        out.at(c, y, x) = image.at(c, x, image.width - 1 - y);
      }
    }
  }
  return out;
}

Image augment_image(const Image& image, unsigned code) {
  if (code > 7) throw ConfigError("augmentation code must be in [0,7], got " + std::to_string(code));
  Image out = image;
  if (code & kHFlip) out = hflip(out);
  if (code & kVFlip) out = vflip(out);
  if (code & kRot90) out = rot90(out);
  return out;
}

PatchPair augment(const PatchPair& pair, unsigned code) {
  PatchPair out{augment_image(pair.lr, code), augment_image(pair.hr, code), pair.meta};
  out.meta.aug = code;
  return out;
}

namespace {

void check_pair_dims(const Image& hr, const Image& lr, std::size_t s) {
  if (hr.width != s * lr.width || hr.height != s * lr.height) {
    throw RangeError("HR " + std::to_string(hr.width) + "x" + std::to_string(hr.height) +
                     " is not " + std::to_string(s) + "x the LR " + std::to_string(lr.width) +
                     "x" + std::to_string(lr.height));
  }
}

void check_fits(std::size_t lr_w, std::size_t lr_h, std::size_t p) {
  if (p == 0 || lr_w < p || lr_h < p) {
    throw RangeError("LR image " + std::to_string(lr_w) + "x" + std::to_string(lr_h) +
                     " is smaller than patch size " + std::to_string(p));
  }
}

}  // namespace

PatchPair crop_patch_pair(const Image& hr, const Image& lr, std::size_t lr_x, std::size_t lr_y,
                          std::size_t p, std::size_t s) {
  check_pair_dims(hr, lr, s);
  PatchPair pair;
  pair.lr = crop(lr, lr_x, lr_y, p, p);
  pair.hr = crop(hr, s * lr_x, s * lr_y, s * p, s * p);
  pair.meta.lr_x = lr_x;
  pair.meta.lr_y = lr_y;
  return pair;
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  if (n == 0) throw ContractError("uniform_index: empty range");
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::min(static_cast<std::size_t>(u * static_cast<double>(n)), n - 1);
}

PatchPair extract_patch_pair(const Image& hr, const Image& lr, std::size_t p, std::size_t s,
                             std::mt19937_64& rng) {
  check_pair_dims(hr, lr, s);
  check_fits(lr.width, lr.height, p);
  const std::size_t x = uniform_index(rng, lr.width - p + 1);
  const std::size_t y = uniform_index(rng, lr.height - p + 1);
  return crop_patch_pair(hr, lr, x, y, p, s);
}

Image degrade(const Image& hr, std::size_t s) {
  if (s == 0 || hr.width % s != 0 || hr.height % s != 0) {
    throw RangeError("degrade: HR " + std::to_string(hr.width) + "x" + std::to_string(hr.height) +
                     " is not a multiple of " + std::to_string(s));
  }
  return quantize(bicubic_resize(hr, hr.width / s, hr.height / s));
}

Image degrade_patch(const Image& hr, std::size_t lr_x, std::size_t lr_y, std::size_t p,
                    std::size_t s) {
  if (s == 0 || hr.width % s != 0 || hr.height % s != 0) {
    throw RangeError("degrade_patch: HR is not a multiple of the scale");
  }
  const std::size_t lr_w = hr.width / s;
  const std::size_t lr_h = hr.height / s;
  if (lr_x + p > lr_w || lr_y + p > lr_h) {
    throw RangeError("degrade_patch: patch exceeds the LR extent");
  }
  // The stretched kernel reaches 2s HR pixels from each sample centre, which
  // three LR pixels of margin always cover.
  constexpr std::size_t margin = 3;
  const std::size_t x0 = lr_x > margin ? lr_x - margin : 0;
  const std::size_t y0 = lr_y > margin ? lr_y - margin : 0;
  const std::size_t x1 = std::min(lr_w, lr_x + p + margin);
  const std::size_t y1 = std::min(lr_h, lr_y + p + margin);
  const Image window = crop(hr, s * x0, s * y0, s * (x1 - x0), s * (y1 - y0));
  const Image small = quantize(bicubic_resize(window, x1 - x0, y1 - y0));
  return crop(small, lr_x - x0, lr_y - y0, p, p);
}

void write_index(const std::filesystem::path& path, const DatasetIndex& index) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write index " + path.string());
  out << "# split: " << index.split << "\n";
  const auto base = path.parent_path();
  const auto rel = [&](const std::filesystem::path& p) {
    return p.is_relative() ? p.generic_string() : p.lexically_relative(base).generic_string();
  };
  for (const auto& e : index.entries) {
    out << rel(e.hr);
    if (!e.lr.empty()) out << "\t" << rel(e.lr);
    out << "\n";
  }
}

DatasetIndex read_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read index " + path.string());
  DatasetIndex index;
  const auto base = path.parent_path();
  const auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# split:", 0) == 0) {
      const auto tag = line.substr(8);
      index.split = tag.substr(std::min(tag.find_first_not_of(' '), tag.size()));
      continue;
    }
    if (line[0] == '#') continue;
    const auto tab = line.find('\t');
    DatasetEntry entry;
    entry.hr = resolve(line.substr(0, tab));
    if (tab != std::string::npos) entry.lr = resolve(line.substr(tab + 1));
    index.entries.push_back(std::move(entry));
  }
  return index;
}

std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw DataError("not a readable directory: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

PrepareReport prepare_degraded_set(const std::filesystem::path& hr_dir,
                                   const std::filesystem::path& out_dir, std::size_t s) {
  if (s == 0) throw ConfigError("scale must be positive");
  const auto files = list_pngs(hr_dir);
  const auto hr_out = out_dir / "hr";
  const auto lr_out = out_dir / ("lr_x" + std::to_string(s));
  std::filesystem::create_directories(hr_out);
  std::filesystem::create_directories(lr_out);

  PrepareReport report;
  for (const auto& file : files) {
    try {
      const Image hr = crop_to_multiple(load_png(file), s);
      const Image lr = degrade(hr, s);
      const auto name = file.stem().string() + ".png";
      save_png(hr_out / name, hr);
      save_png(lr_out / name, lr);
      report.index.entries.push_back({hr_out / name, lr_out / name});
    } catch (const DataError& e) {
      report.failures.emplace_back(file, e.what());
    } catch (const RangeError& e) {
      report.failures.emplace_back(file, e.what());
    }
  }
  write_index(out_dir / "index.txt", report.index);
  return report;
}

PairSet PairSet::from_index(const std::filesystem::path& index_path, std::size_t scale) {
  const DatasetIndex index = read_index(index_path);
  const bool on_the_fly =
      std::any_of(index.entries.begin(), index.entries.end(), [](const auto& e) { return e.lr.empty(); });
  PairSet set(scale, on_the_fly);
  for (const auto& e : index.entries) {
    Image hr = crop_to_multiple(load_png(e.hr), scale);
    if (on_the_fly) {
      set.add(e.hr.stem().string(), std::move(hr));
      continue;
    }
    Image lr = load_png(e.lr);
    if (hr.width != scale * lr.width || hr.height != scale * lr.height) {
      throw DataError("pair " + e.hr.string() + " / " + e.lr.string() + " is not at scale " +
                      std::to_string(scale));
    }
    set.add(e.hr.stem().string(), std::move(hr), std::move(lr));
  }
  return set;
}

PairSet PairSet::from_hr_dir(const std::filesystem::path& hr_dir, std::size_t scale) {
  PairSet set(scale, true);
  for (const auto& file : list_pngs(hr_dir)) {
    set.add(file.stem().string(), crop_to_multiple(load_png(file), scale));
  }
  return set;
}

void PairSet::add(std::string name, Image hr, Image lr) {
  if (hr.width % scale_ != 0 || hr.height % scale_ != 0) {
    throw RangeError("pair '" + name + "': HR is not a multiple of the scale");
  }
  if (!on_the_fly_) check_pair_dims(hr, lr, scale_);
  pairs_.push_back({std::move(name), std::move(hr), std::move(lr)});
}

PatchPair PairSet::patch(const PatchMeta& meta, std::size_t p) const {
  const Pair& pair = pairs_.at(meta.image_id);
  PatchPair out;
  if (on_the_fly_) {
    out.lr = degrade_patch(pair.hr, meta.lr_x, meta.lr_y, p, scale_);
    out.hr = crop(pair.hr, scale_ * meta.lr_x, scale_ * meta.lr_y, scale_ * p, scale_ * p);
  } else {
    out = crop_patch_pair(pair.hr, pair.lr, meta.lr_x, meta.lr_y, p, scale_);
  }
  out.meta = meta;
  return meta.aug == 0 ? out : augment(out, meta.aug);
}

PatchMeta PatchSampler::next_meta(const PairSet& set, std::size_t p) {
  if (set.empty()) throw DataError("patch sampler: empty training set");
  PatchMeta meta;
  meta.image_id = uniform_index(rng_, set.size());
  const Image& hr = set[meta.image_id].hr;
  const std::size_t lr_w = hr.width / set.scale();
  const std::size_t lr_h = hr.height / set.scale();
  check_fits(lr_w, lr_h, p);
  meta.lr_x = uniform_index(rng_, lr_w - p + 1);
  meta.lr_y = uniform_index(rng_, lr_h - p + 1);
  meta.aug = augment_ ? static_cast<unsigned>(uniform_index(rng_, 8)) : 0u;
  return meta;
}

std::string PatchSampler::state() const {
  std::ostringstream out;
  out << rng_;
  return out.str();
}

void PatchSampler::restore(const std::string& state) {
  std::istringstream in(state);
  std::mt19937_64 rng;
  in >> rng;
  if (!in) throw FormatError("patch sampler: malformed RNG state");
  rng_ = rng;
}

}  // namespace aldsr
