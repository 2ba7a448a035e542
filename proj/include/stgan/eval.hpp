#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stgan/tensor.hpp"

namespace stgan {

// Row-major 0/1 raster.
struct BinaryMask {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> pixels;

  BinaryMask() = default;
  BinaryMask(std::int64_t h, std::int64_t w) : height(h), width(w), pixels(h * w, 0) {}

  std::uint8_t at(std::int64_t i, std::int64_t j) const { return pixels[i * width + j]; }
  std::uint8_t& at(std::int64_t i, std::int64_t j) { return pixels[i * width + j]; }
  std::int64_t count() const;
  bool operator==(const BinaryMask&) const = default;
};

// pixel >= t -> 1. Accepts any tensor holding a single H x W plane.
BinaryMask threshold(const Tensor& probs, double t = 0.5);
// Exact 0/1 tensor -> mask; anything else raises NonBinaryError.
BinaryMask to_mask(const Tensor& binary);
// [1, H, W] tensor of 0/1 values.
Tensor to_tensor(const BinaryMask& mask);

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct Metrics {
  double dice = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  ConfusionCounts counts;
};

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);
// If pred and gt are both empty every metric is 1; otherwise a metric with a
// zero denominator is 0.
Metrics metrics_from_counts(const ConfusionCounts& c);
Metrics metrics(const BinaryMask& pred, const BinaryMask& gt);

// Keeps the largest foreground component (connectivity 4 or 8). Ties go to
// the component whose first pixel comes first in raster order.
BinaryMask largest_component(const BinaryMask& mask, int connectivity = 4);
// Flips background regions that cannot reach the border to foreground.
// Background is traversed with the complementary connectivity.
BinaryMask fill_holes(const BinaryMask& mask, int foreground_connectivity = 4);

struct PostprocessOptions {
  bool largest_component = true;
  bool fill_holes = true;
  int connectivity = 4;
};

BinaryMask postprocess(const BinaryMask& mask, const PostprocessOptions& opts);

// 8-bit RGB raster written as binary PPM ("P6").
struct RgbImage {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> rgb;  // 3 bytes per pixel
};

// Grayscale image with TP green, FP red and FN blue.
RgbImage overlay(const Tensor& image, const BinaryMask& pred, const BinaryMask& gt);
std::string encode_ppm(const RgbImage& image);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

struct ReportRow {
  std::string id;
  Metrics metrics;
};

struct MetricsReport {
  std::vector<ReportRow> rows;

  // Unweighted mean over rows; counts are averaged too.
  struct Mean {
    double dice = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double tp = 0.0;
    double fp = 0.0;
    double fn = 0.0;
    double tn = 0.0;
  };
  Mean mean() const;
};

// `id,dice,precision,recall,tp,fp,fn,tn` rows sorted by id, then MEAN.
std::string format_report(const MetricsReport& report);
void write_report(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace stgan
