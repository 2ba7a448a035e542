#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "stgan/errors.hpp"
#include "stgan/eval.hpp"
#include "test_util.hpp"

namespace stgan {
namespace {

namespace fs = std::filesystem;

BinaryMask from_rows(const std::vector<std::string>& rows) {
  BinaryMask m(static_cast<std::int64_t>(rows.size()), static_cast<std::int64_t>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m.at(i, j) = rows[i][j] == '#';
  return m;
}

BinaryMask random_mask(std::int64_t h, std::int64_t w, Rng& rng, double p = 0.5) {
  BinaryMask m(h, w);
  for (auto& v : m.pixels) v = rng.uniform() < p;
  return m;
}

TEST(Threshold, BoundaryAndEmpty) {
  const BinaryMask m = threshold(Tensor::from({1, 1, 3}, {0.5, 0.4999, 0.9}));
  EXPECT_EQ(m.pixels, (std::vector<std::uint8_t>{1, 0, 1}));
  EXPECT_EQ(threshold(Tensor::full({1, 4, 4}, 0.4)).count(), 0);
}

TEST(Threshold, IdempotentOnBinary) {
  Rng rng(1);
  const BinaryMask m = random_mask(6, 5, rng);
  EXPECT_EQ(threshold(to_tensor(m)), m);
  EXPECT_EQ(to_mask(to_tensor(m)), m);
  EXPECT_THROW((void)to_mask(Tensor::from({1, 1, 2}, {0.0, 0.5})), NonBinaryError);
}

TEST(Metrics, Identity) {
  const BinaryMask m = from_rows({"##.", ".#."});
  const Metrics r = metrics(m, m);
  EXPECT_EQ(r.dice, 1.0);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
}

TEST(Metrics, OneOfEach) {
  const Metrics r = metrics_from_counts({1, 1, 1, 0});
  EXPECT_EQ(r.dice, 0.5);
  EXPECT_EQ(r.precision, 0.5);
  EXPECT_EQ(r.recall, 0.5);
}

TEST(Metrics, EmptyConventions) {
  const BinaryMask empty(3, 3);
  const BinaryMask some = from_rows({"#..", "...", "..."});
  const Metrics both = metrics(empty, empty);
  EXPECT_EQ(both.dice, 1.0);
  EXPECT_EQ(both.precision, 1.0);
  EXPECT_EQ(both.recall, 1.0);
  const Metrics no_pred = metrics(empty, some);
  EXPECT_EQ(no_pred.dice, 0.0);
  EXPECT_EQ(no_pred.precision, 0.0);
  EXPECT_EQ(no_pred.recall, 0.0);
  const Metrics no_gt = metrics(some, empty);
  EXPECT_EQ(no_gt.recall, 0.0);
  EXPECT_EQ(no_gt.precision, 0.0);
}

TEST(Metrics, MatchesPixelCountingOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const BinaryMask pred = random_mask(16, 16, rng, rng.uniform(0.05, 0.95));
    const BinaryMask gt = random_mask(16, 16, rng, rng.uniform(0.05, 0.95));
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < 256; ++i) {
      if (pred.pixels[i] && gt.pixels[i]) ++tp;
      else if (pred.pixels[i]) ++fp;
      else if (gt.pixels[i]) ++fn;
      else ++tn;
    }
    const Metrics r = metrics(pred, gt);
    EXPECT_EQ(r.counts, (ConfusionCounts{tp, fp, fn, tn}));
    EXPECT_EQ(r.dice, 2.0 * tp / (2.0 * tp + fp + fn));
    EXPECT_EQ(r.precision, static_cast<double>(tp) / (tp + fp));
    EXPECT_EQ(r.recall, static_cast<double>(tp) / (tp + fn));
    if (tp > 0) EXPECT_NEAR(r.dice, 2 * r.precision * r.recall / (r.precision + r.recall), 1e-12);
  }
}

TEST(Metrics, ShapeMismatch) {
  EXPECT_THROW((void)metrics(BinaryMask(2, 2), BinaryMask(2, 3)), ShapeError);
}

TEST(LargestComponent, KeepsBiggerBlob) {
  const BinaryMask m = from_rows({
      "##....",
      "###...",
      "....##",
      ".....#",
  });
  EXPECT_EQ(largest_component(m), from_rows({
                                      "##....",
                                      "###...",
                                      "......",
                                      "......",
                                  }));
}

TEST(LargestComponent, SingleBlobAndEmptyUnchanged) {
  const BinaryMask blob = from_rows({".##.", "####", ".#.."});
  EXPECT_EQ(largest_component(blob), blob);
  EXPECT_EQ(largest_component(BinaryMask(4, 4)), BinaryMask(4, 4));
}

TEST(LargestComponent, DiagonalsDependOnConnectivity) {
  const BinaryMask m = from_rows({"#..", ".#.", "..#"});
  EXPECT_EQ(largest_component(m, 8), m);
  EXPECT_EQ(largest_component(m, 4).count(), 1);
  // Tie: the first component in raster order wins.
  EXPECT_EQ(largest_component(m, 4), from_rows({"#..", "...", "..."}));
}

// Union-find labelling, independent of the library's flood fill.
std::int64_t largest_size_oracle(const BinaryMask& m) {
  const std::int64_t n = m.height * m.width;
  std::vector<std::int64_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::int64_t(std::int64_t)> find = [&](std::int64_t x) {
    return parent[x] == x ? x : parent[x] = find(parent[x]);
  };
  for (std::int64_t i = 0; i < m.height; ++i)
    for (std::int64_t j = 0; j < m.width; ++j) {
      if (!m.at(i, j)) continue;
      if (i > 0 && m.at(i - 1, j)) parent[find(i * m.width + j)] = find((i - 1) * m.width + j);
      if (j > 0 && m.at(i, j - 1)) parent[find(i * m.width + j)] = find(i * m.width + j - 1);
    }
  std::vector<std::int64_t> size(n, 0);
  std::int64_t best = 0;
  for (std::int64_t p = 0; p < n; ++p)
    if (m.pixels[p]) best = std::max(best, ++size[find(p)]);
  return best;
}

TEST(LargestComponent, SizeMatchesUnionFindAndIsIdempotent) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const BinaryMask m = random_mask(12, 12, rng, 0.45);
    const BinaryMask once = largest_component(m);
    EXPECT_EQ(once.count(), largest_size_oracle(m));
    EXPECT_EQ(largest_component(once), once);
    for (std::size_t p = 0; p < m.pixels.size(); ++p) EXPECT_LE(once.pixels[p], m.pixels[p]);
  }
}

TEST(FillHoles, DonutHoleFilled) {
  const BinaryMask donut = from_rows({
      ".....",
      ".###.",
      ".#.#.",
      ".###.",
      ".....",
  });
  const BinaryMask filled = fill_holes(donut);
  EXPECT_EQ(filled, from_rows({".....", ".###.", ".###.", ".###.", "....."}));
  PostprocessOptions off;
  off.fill_holes = false;
  EXPECT_EQ(postprocess(donut, off), donut);
  EXPECT_EQ(postprocess(donut, {}), filled);
}

TEST(FillHoles, BorderTouchingBackgroundStays) {
  const BinaryMask cup = from_rows({"#.#", "#.#", "###"});
  EXPECT_EQ(fill_holes(cup), cup);
}

TEST(Postprocess, NeverAddsFalsePositivesInsideSingleGtBlob) {
  const BinaryMask gt = from_rows({"######", "######", "######", "......"});
  const BinaryMask pred = from_rows({"###...", "#.#..#", "###...", "....#."});
  const auto before = metrics(pred, gt).counts;
  const auto after = metrics(postprocess(pred, {}), gt).counts;
  EXPECT_LE(after.fp, before.fp);
  EXPECT_EQ(after.fp, 0);
}

TEST(Overlay, ChannelCountsEqualConfusion) {
  Rng rng(4);
  const Tensor image = test::random_tensor({1, 10, 10}, rng, 0, 1);
  const BinaryMask pred = random_mask(10, 10, rng);
  const BinaryMask gt = random_mask(10, 10, rng);
  const RgbImage o = overlay(image, pred, gt);
  std::int64_t green = 0, red = 0, blue = 0;
  for (std::size_t p = 0; p < 100; ++p) {
    const auto* px = &o.rgb[p * 3];
    if (px[0] == 0 && px[1] == 255 && px[2] == 0) ++green;
    else if (px[0] == 255 && px[1] == 0 && px[2] == 0) ++red;
    else if (px[0] == 0 && px[1] == 0 && px[2] == 255) ++blue;
    else {
      EXPECT_EQ(px[0], px[1]);
      EXPECT_EQ(px[1], px[2]);
      EXPECT_EQ(px[0], std::lround(image.data()[p] * 255));
    }
  }
  const ConfusionCounts c = confusion(pred, gt);
  EXPECT_EQ(green, c.tp);
  EXPECT_EQ(red, c.fp);
  EXPECT_EQ(blue, c.fn);
}

TEST(Overlay, EmptyPredictionShowsGtInBlue) {
  const BinaryMask gt = from_rows({".#", "##"});
  const RgbImage o = overlay(Tensor::full({1, 2, 2}, 0.5), BinaryMask(2, 2), gt);
  for (std::size_t p = 0; p < 4; ++p) {
    if (gt.pixels[p]) {
      EXPECT_EQ(o.rgb[p * 3 + 2], 255);
      EXPECT_EQ(o.rgb[p * 3], 0);
    }
  }
  const std::string ppm = encode_ppm(o);
  EXPECT_EQ(ppm.substr(0, 3), "P6\n");
  EXPECT_EQ(ppm.size(), ppm.find("255\n") + 4 + 12);
  EXPECT_THROW((void)overlay(Tensor::zeros({1, 3, 3}), BinaryMask(2, 2), gt), ShapeError);
}

TEST(Report, FourDecimalsAndMeanRow) {
  MetricsReport r;
  Metrics m;
  m.dice = 0.94334;
  m.precision = 0.5;
  m.recall = 1.0;
  m.counts = {3, 1, 0, 12};
  r.rows.push_back({"only", m});
  const std::string text = format_report(r);
  EXPECT_EQ(text,
            "id,dice,precision,recall,tp,fp,fn,tn\n"
            "only,0.9433,0.5000,1.0000,3,1,0,12\n"
            "MEAN,0.9433,0.5000,1.0000,3.00,1.00,0.00,12.00\n");
}

TEST(Report, MeanMatchesRecomputation) {
  Rng rng(5);
  MetricsReport r;
  std::vector<double> dice;
  for (int i = 0; i < 7; ++i) {
    const Metrics m = metrics(random_mask(8, 8, rng), random_mask(8, 8, rng));
    r.rows.push_back({"s" + std::to_string(i), m});
    dice.push_back(m.dice);
  }
  double expect = 0.0;
  for (double d : dice) expect += d;
  EXPECT_NEAR(r.mean().dice, expect / 7, 1e-12);
}

TEST(Report, WritesFileAndRejectsEmpty) {
  const fs::path dir = fs::temp_directory_path() / "stgan_eval_report";
  fs::remove_all(dir);
  MetricsReport r;
  EXPECT_THROW(write_report(r, dir / "x.csv"), std::invalid_argument);
  r.rows.push_back({"b", metrics_from_counts({1, 0, 0, 3})});
  r.rows.push_back({"a", metrics_from_counts({0, 1, 1, 2})});
  write_report(r, dir / "sub" / "m.csv");
  std::ifstream in(dir / "sub" / "m.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(first.substr(0, 2), "a,");
}

}  // namespace
}  // namespace stgan
