#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "aldsr/dataset.hpp"
#include "support.hpp"

namespace aldsr {
namespace {

using test::TempDir;

// Non-symmetric content so every transform is distinguishable.
Image asymmetric(std::size_t w, std::size_t h) { return test::random_image(w, h, 100 + w * 31 + h); }

TEST(Augment, GroupLaws) {
  const auto img = asymmetric(6, 6);
  EXPECT_EQ(hflip(hflip(img)), img);
  EXPECT_EQ(vflip(vflip(img)), img);
  EXPECT_EQ(rot90(rot90(rot90(rot90(img)))), img);
  EXPECT_EQ(hflip(vflip(img)), rot90(rot90(img)));
  EXPECT_NE(rot90(img), img);
  const auto rect = asymmetric(5, 3);
  EXPECT_EQ(rot90(rect).width, 3u);
  EXPECT_EQ(rot90(rot90(rot90(rot90(rect)))), rect);
}

TEST(Augment, Rot90IsCounterClockwise) {
  Image img(2, 2, 1);
  img.data = {1, 2, 3, 4};  // [[1,2],[3,4]]
  EXPECT_EQ(rot90(img).data, (std::vector<double>{2, 4, 1, 3}));
}

TEST(Augment, SameTransformOnBothMembers) {
  const auto hr = asymmetric(16, 16);
  const auto lr = asymmetric(8, 8);
  for (unsigned code = 0; code < 8; ++code) {
    const auto pair = augment(PatchPair{lr, hr, {}}, code);
    EXPECT_EQ(pair.lr, augment_image(lr, code));
    EXPECT_EQ(pair.hr, augment_image(hr, code));
    EXPECT_EQ(pair.meta.aug, code);
  }
}

TEST(Patches, AlignedCropAndRangeErrors) {
  const auto hr = asymmetric(40, 32);
  const auto lr = degrade(hr, 4);
  const auto pair = crop_patch_pair(hr, lr, 2, 3, 4, 4);
  EXPECT_EQ(pair.lr, crop(lr, 2, 3, 4, 4));
  EXPECT_EQ(pair.hr, crop(hr, 8, 12, 16, 16));
  std::mt19937_64 rng(1);
  EXPECT_THROW(extract_patch_pair(hr, lr, 9, 4, rng), RangeError);
  EXPECT_THROW(extract_patch_pair(crop(hr, 0, 0, 36, 32), lr, 4, 4, rng), RangeError);
  const auto sampled = extract_patch_pair(hr, lr, 5, 4, rng);
  EXPECT_EQ(sampled.hr, crop(hr, 4 * sampled.meta.lr_x, 4 * sampled.meta.lr_y, 20, 20));
}

TEST(Degrade, PatchMatchesWholeImageBitExactly) {
  const auto hr = asymmetric(64, 48);
  for (std::size_t s : {2, 3, 4}) {
    const auto cropped = crop_to_multiple(hr, s);
    const auto full = degrade(cropped, s);
    const std::size_t lw = full.width, lh = full.height;
    for (std::size_t p : {3, 6}) {
      for (std::size_t y : {std::size_t{0}, std::size_t{1}, lh / 2, lh - p})
        for (std::size_t x : {std::size_t{0}, lw / 3, lw - p}) {
          ASSERT_EQ(degrade_patch(cropped, x, y, p, s), crop(full, x, y, p, p)) << s << " " << x << "," << y;
        }
    }
  }
}

TEST(Degrade, OutputIsQuantized) {
  const auto lr = degrade(asymmetric(16, 16), 4);
  EXPECT_EQ(lr, quantize(lr));
  EXPECT_EQ(lr.width, 4u);
}

TEST(Sampler, ReproducibleAndRestorable) {
  PairSet set(2, true);
  set.add("a", asymmetric(40, 40));
  set.add("b", asymmetric(30, 50));
  PatchSampler a(7), b(7);
  for (int i = 0; i < 50; ++i) ASSERT_EQ(a.next_meta(set, 8), b.next_meta(set, 8));
  const auto saved = a.state();
  std::vector<PatchMeta> expected;
  for (int i = 0; i < 20; ++i) expected.push_back(a.next_meta(set, 8));
  PatchSampler c(999);
  c.restore(saved);
  for (int i = 0; i < 20; ++i) ASSERT_EQ(c.next_meta(set, 8), expected[i]);

  PatchSampler plain(7, false);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(plain.next_meta(set, 8).aug, 0u);
}

TEST(Sampler, UniformIndexInRange) {
  std::mt19937_64 rng(3);
  std::vector<int> hits(5, 0);
  for (int i = 0; i < 5000; ++i) ++hits[uniform_index(rng, 5)];
  for (int h : hits) EXPECT_GT(h, 800);
}

class PreparedSet : public ::testing::Test {
 protected:
  void SetUp() override {
    std::filesystem::create_directories(dir / "hr");
    save_png(dir / "hr" / "a.png", asymmetric(101, 103));
    save_png(dir / "hr" / "b.png", asymmetric(64, 72));
  }
  TempDir dir;
};

TEST_F(PreparedSet, CropsAndWritesIndex) {
  const auto report = prepare_degraded_set(dir / "hr", dir / "out", 4);
  EXPECT_TRUE(report.failures.empty());
  ASSERT_EQ(report.index.entries.size(), 2u);
  const auto hr = load_png(dir / "out" / "hr" / "a.png");
  EXPECT_EQ(hr.width, 100u);
  EXPECT_EQ(hr.height, 100u);
  const auto lr = load_png(dir / "out" / "lr_x4" / "a.png");
  EXPECT_EQ(lr.width, 25u);
  EXPECT_EQ(lr.height, 25u);
  const auto index = read_index(dir / "out" / "index.txt");
  ASSERT_EQ(index.entries.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(index.entries[1].lr));
}

TEST_F(PreparedSet, RerunIsByteIdentical) {
  prepare_degraded_set(dir / "hr", dir / "one", 4);
  prepare_degraded_set(dir / "hr", dir / "two", 4);
  for (const char* name : {"a.png", "b.png"}) {
    const auto a = test::read_bytes(dir / "one" / "lr_x4" / name);
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, test::read_bytes(dir / "two" / "lr_x4" / name));
  }
}

TEST_F(PreparedSet, BadFileIsReportedAndOthersContinue) {
  std::ofstream(dir / "hr" / "0bad.png") << "not a png";
  const auto report = prepare_degraded_set(dir / "hr", dir / "out", 4);
  ASSERT_EQ(report.failures.size(), 1u);
  EXPECT_EQ(report.failures[0].first.filename(), "0bad.png");
  EXPECT_EQ(report.index.entries.size(), 2u);
}

TEST_F(PreparedSet, OnTheFlyPatchesEqualMaterialized) {
  prepare_degraded_set(dir / "hr", dir / "out", 4);
  const auto stored = PairSet::from_index(dir / "out" / "index.txt", 4);
  const auto fly = PairSet::from_hr_dir(dir / "hr", 4);
  EXPECT_FALSE(stored.on_the_fly());
  EXPECT_TRUE(fly.on_the_fly());
  PatchSampler sampler(5);
  for (int i = 0; i < 40; ++i) {
    const auto meta = sampler.next_meta(fly, 12);
    const auto a = stored.patch(meta, 12);
    const auto b = fly.patch(meta, 12);
    ASSERT_EQ(a.lr, b.lr);
    ASSERT_EQ(a.hr, b.hr);
  }
}

TEST(Index, RoundTripWithRelativePaths) {
  TempDir dir;
  DatasetIndex index;
  index.split = "val";
  index.entries = {{dir / "x" / "a.png", dir / "y" / "a.png"}, {dir / "x" / "b.png", {}}};
  write_index(dir / "index.txt", index);
  const auto back = read_index(dir / "index.txt");
  EXPECT_EQ(back.split, "val");
  ASSERT_EQ(back.entries.size(), 2u);
  EXPECT_EQ(back.entries[0].lr, index.entries[0].lr);
  EXPECT_TRUE(back.entries[1].lr.empty());

  std::ofstream(dir / "rel.txt") << "# split: test\nsub/a.png\tsub/b.png\n";
  const auto rel = read_index(dir / "rel.txt");
  EXPECT_EQ(rel.entries[0].hr, dir / "sub" / "a.png");
}

}  // namespace
}  // namespace aldsr
