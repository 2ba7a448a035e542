#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "stgan/data.hpp"
#include "stgan/errors.hpp"
#include "test_util.hpp"

namespace stgan {
namespace {

namespace fs = std::filesystem;
using test::values;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("stgan_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

PhantomConfig flat_config() {
  PhantomConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.min_offset = cfg.max_offset = 0.4;
  cfg.min_base = cfg.max_base = 0.3;
  return cfg;
}

TEST(Phantom, TwoValuedWithoutNoiseOrBlur) {
  PhantomConfig cfg = flat_config();
  cfg.blur_width = 1;
  Rng rng(1);
  const Sample s = generate_phantom(rng, cfg);
  ASSERT_EQ(s.image.shape(), (Shape{1, 64, 64}));
  for (std::size_t i = 0; i < s.image.data().size(); ++i) {
    const double expect = s.mask.data()[i] == 1.0 ? 0.7 : 0.3;
    EXPECT_NEAR(s.image.data()[i], expect, 1e-15);
  }
}

TEST(Phantom, BlurIsLocalMeanAwayFromBorder) {
  PhantomConfig cfg = flat_config();
  cfg.blur_width = 3;
  Rng rng(2);
  const Sample s = generate_phantom(rng, cfg);
  const auto img = s.image.data();
  const auto m = s.mask.data();
  for (int i = 1; i < 63; ++i)
    for (int j = 1; j < 63; ++j) {
      double acc = 0.0;
      for (int u = -1; u <= 1; ++u)
        for (int v = -1; v <= 1; ++v) acc += 0.3 + 0.4 * m[(i + u) * 64 + j + v];
      EXPECT_NEAR(img[i * 64 + j], acc / 9, 1e-12);
    }
}

TEST(Phantom, SameSeedSameSample) {
  Rng a(3), b(3);
  const Sample x = generate_phantom(a, {});
  const Sample y = generate_phantom(b, {});
  EXPECT_EQ(values(x.image), values(y.image));
  EXPECT_EQ(values(x.mask), values(y.mask));
  const auto set1 = generate_phantoms(3, 4, {});
  const auto set2 = generate_phantoms(3, 4, {});
  for (int i = 0; i < 3; ++i) EXPECT_EQ(values(set1[i].image), values(set2[i].image));
  EXPECT_EQ(set1[2].id, "phantom_0002");
}

TEST(Phantom, ForegroundFractionSweep) {
  PhantomConfig cfg;
  const auto samples = generate_phantoms(1000, 5, cfg);
  for (const Sample& s : samples) {
    double fg = 0.0;
    for (double v : s.mask.data()) {
      ASSERT_TRUE(v == 0.0 || v == 1.0);
      fg += v;
    }
    const double fraction = fg / static_cast<double>(s.mask.numel());
    EXPECT_GE(fraction, 0.02) << s.id;
    EXPECT_LE(fraction, 0.6) << s.id;
    for (double v : s.image.data()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(Phantom, ImpossibleBoundsRaiseGenerationError) {
  PhantomConfig cfg;
  cfg.min_axis_fraction = cfg.max_axis_fraction = 0.01;
  cfg.min_foreground = 0.5;
  Rng rng(6);
  EXPECT_THROW((void)generate_phantom(rng, cfg), GenerationError);
  cfg = {};
  cfg.size = 30;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Pgm, DefinitionExample) {
  const std::string bytes = std::string("P5 2 2 255\n") + std::string("\x00\xff\x00\xff", 4);
  const PgmImage img = parse_pgm(bytes);
  EXPECT_EQ(img.height, 2);
  EXPECT_EQ(img.width, 2);
  EXPECT_EQ(values(pgm_to_tensor(img)), (std::vector<double>{0, 1, 0, 1}));
}

TEST(Pgm, CommentsTolerated) {
  const std::string bytes =
      std::string("P5\n# made by hand\n2 1\n# depth\n255\n") + std::string("\x10\x20", 2);
  const PgmImage img = parse_pgm(bytes);
  EXPECT_EQ(img.pixels, (std::vector<std::uint16_t>{16, 32}));
  EXPECT_EQ(encode_pgm(img).find('#'), std::string::npos);
}

TEST(Pgm, SixteenBitIsBigEndian) {
  const std::string bytes = std::string("P5 2 1 65535\n") + std::string("\x01\x02\xff\xfe", 4);
  EXPECT_EQ(parse_pgm(bytes).pixels, (std::vector<std::uint16_t>{0x0102, 0xfffe}));
}

TEST(Pgm, RoundTripBothDepths) {
  Rng rng(7);
  for (int maxval : {255, 65535}) {
    PgmImage img{5, 7, maxval, {}};
    for (int i = 0; i < 35; ++i) img.pixels.push_back(static_cast<std::uint16_t>(rng.uniform_int(0, maxval)));
    const std::string bytes = encode_pgm(img);
    const PgmImage back = parse_pgm(bytes);
    EXPECT_EQ(back.pixels, img.pixels);
    EXPECT_EQ(encode_pgm(back), bytes);
  }
}

TEST(Pgm, FileRoundTrip) {
  const fs::path dir = scratch_dir("pgm");
  Rng rng(8);
  PgmImage img{4, 4, 255, {}};
  for (int i = 0; i < 16; ++i) img.pixels.push_back(static_cast<std::uint16_t>(rng.uniform_int(0, 255)));
  write_pgm(dir / "a.pgm", img);
  EXPECT_EQ(read_pgm(dir / "a.pgm").pixels, img.pixels);

  const Tensor image = test::random_tensor({1, 8, 8}, rng, 0, 1);
  save_image_pgm(dir / "img.pgm", image);
  const Tensor back = load_image_pgm(dir / "img.pgm");
  EXPECT_LE(test::max_abs_diff(back.data(), image.data()), 0.5 / 65535 + 1e-15);
  save_image_pgm(dir / "img2.pgm", back);
  EXPECT_EQ(values(load_image_pgm(dir / "img2.pgm")), values(back));
}

TEST(Pgm, DistinctErrors) {
  EXPECT_THROW((void)parse_pgm("P2 2 2 255\n0 0 0 0"), BadMagicError);
  EXPECT_THROW((void)parse_pgm(std::string("P5 2 2 255\n") + std::string("\x00\x01", 2)),
               TruncatedError);
  EXPECT_THROW((void)parse_pgm(std::string("P5 1 1 1023\n") + std::string("\x00\x01", 2)),
               BadMaxvalError);
  const PgmImage seven = parse_pgm(std::string("P5 2 1 255\n") + std::string("\x00\x07", 2));
  EXPECT_THROW((void)mask_from_pgm(seven), NonBinaryMaskError);
  EXPECT_THROW((void)read_pgm("/nonexistent/x.pgm"), IoError);
}

TEST(Pgm, MaskFileRejectsNonBinary) {
  const fs::path dir = scratch_dir("mask");
  write_pgm(dir / "m.pgm", PgmImage{1, 3, 255, {0, 7, 255}});
  EXPECT_THROW((void)load_mask_pgm(dir / "m.pgm"), NonBinaryMaskError);
  write_pgm(dir / "ok.pgm", PgmImage{1, 3, 255, {0, 255, 255}});
  EXPECT_EQ(values(load_mask_pgm(dir / "ok.pgm")), (std::vector<double>{0, 1, 1}));
}

std::vector<std::string> make_ids(int n) {
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back(phantom_id(i));
  return ids;
}

TEST(Split, PaperSizedDataset) {
  const auto ids = make_ids(131);
  const DatasetSplit s = split_dataset(ids, kDefaultTrainFraction, 9);
  EXPECT_EQ(s.train.size(), 95u);
  EXPECT_EQ(s.test.size(), 36u);
  std::set<std::string> all(s.train.begin(), s.train.end());
  for (const auto& id : s.test) EXPECT_TRUE(all.insert(id).second) << id;
  EXPECT_EQ(all, std::set<std::string>(ids.begin(), ids.end()));
}

TEST(Split, DeterministicUnderSeed) {
  const auto ids = make_ids(50);
  EXPECT_EQ(split_dataset(ids, 0.7, 1).train, split_dataset(ids, 0.7, 1).train);
  EXPECT_NE(split_dataset(ids, 0.7, 1).train, split_dataset(ids, 0.7, 2).train);
}

TEST(Split, Boundaries) {
  const DatasetSplit s = split_dataset(make_ids(2), 0.5, 3);
  EXPECT_EQ(s.train.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
  EXPECT_EQ(split_dataset(make_ids(3), 0.99, 3).test.size(), 1u);
  EXPECT_THROW((void)split_dataset(make_ids(1), 0.5, 3), std::invalid_argument);
  EXPECT_THROW((void)split_dataset(make_ids(5), 1.0, 3), std::invalid_argument);
}

TEST(Split, ManifestRoundTrip) {
  const DatasetSplit s = split_dataset(make_ids(10), 0.6, 4);
  const DatasetSplit back = parse_split_manifest(format_split_manifest(s));
  EXPECT_EQ(back.train, s.train);
  EXPECT_EQ(back.test, s.test);
}

TEST(Dataset, WriteAndLoad) {
  const fs::path dir = scratch_dir("dataset");
  const auto samples = generate_phantoms(4, 10, {});
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  const DatasetSplit split = split_dataset(ids, 0.5, 11);
  write_dataset(dir, samples, split);
  EXPECT_TRUE(fs::exists(dir / "images" / (ids[0] + ".pgm")));
  EXPECT_TRUE(fs::exists(dir / "masks" / (ids[0] + ".pgm")));
  EXPECT_EQ(read_split(dir).train, split.train);
  const auto loaded = load_samples(dir, ids);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(values(loaded[i].mask), values(samples[i].mask));
    EXPECT_LE(test::max_abs_diff(loaded[i].image.data(), samples[i].image.data()),
              0.5 / 65535 + 1e-15);
  }
}

TEST(Batching, FiveSamplesBatchTwo) {
  const auto samples = generate_phantoms(5, 12, {});
  Rng rng(13);
  const auto batches = make_batches(samples, 2, rng);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].images.dim(0), 2);
  EXPECT_EQ(batches[1].images.dim(0), 2);
  EXPECT_EQ(batches[2].images.dim(0), 1);
  std::set<std::string> seen;
  for (const auto& b : batches)
    for (const auto& id : b.ids) seen.insert(id);
  EXPECT_EQ(seen.size(), 5u);
}

TEST(Batching, UnbatchIsExactInverse) {
  const auto samples = generate_phantoms(3, 14, {});
  const Batch b = stack_samples(samples, {2, 0, 1});
  EXPECT_EQ(b.images.shape(), (Shape{3, 1, 64, 64}));
  const auto back = unbatch(b);
  const std::size_t order[] = {2, 0, 1};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].id, samples[order[i]].id);
    EXPECT_EQ(values(back[i].image), values(samples[order[i]].image));
    EXPECT_EQ(values(back[i].mask), values(samples[order[i]].mask));
  }
}

TEST(Batching, EpochOrdersDifferAcrossDerivedSeeds) {
  Rng e0 = Rng::derive(5, 1000), e1 = Rng::derive(5, 1001);
  EXPECT_NE(epoch_order(20, 4, e0), epoch_order(20, 4, e1));
}

TEST(Batching, HeterogeneousSizesRejected) {
  Rng rng(15);
  std::vector<Sample> mixed = {
      {"a", Tensor::zeros({1, 8, 8}), Tensor::zeros({1, 8, 8})},
      {"b", Tensor::zeros({1, 12, 12}), Tensor::zeros({1, 12, 12})}};
  EXPECT_THROW((void)stack_samples(mixed, {0, 1}), ShapeError);
  EXPECT_THROW((void)make_batches(mixed, 0, rng), std::invalid_argument);
}

}  // namespace
}  // namespace stgan
