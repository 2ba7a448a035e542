#include "stgan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "stgan/errors.hpp"

namespace stgan {

namespace {

// Creates missing parent directories.
void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw IoError("write failed: " + path.string());
}

void plane_extent(const Tensor& t, const char* what, std::int64_t& h, std::int64_t& w) {
  if (t.rank() < 2) {
    throw ShapeError(std::string(what) + ": need at least 2 dims, got " + shape_str(t.shape()));
  }
  h = t.dim(t.rank() - 2);
  w = t.dim(t.rank() - 1);
  if (h * w != t.numel()) {
    throw ShapeError(std::string(what) + ": expected a single plane, got " + shape_str(t.shape()));
  }
}

void check_binary(const BinaryMask& m, const char* what) {
  if (m.pixels.size() != static_cast<std::size_t>(m.height * m.width)) {
    throw ShapeError(std::string(what) + ": pixel count does not match extent");
  }
  for (std::uint8_t v : m.pixels) {
    if (v > 1) throw NonBinaryError(std::string(what) + ": mask value " + std::to_string(v));
  }
}

void check_same_extent(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": extent " + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width));
  }
}

// Labels components of pixels equal to `value`. Returns per-pixel labels
// (-1 elsewhere) in raster order of first appearance, and their sizes.
std::vector<std::int64_t> label(const BinaryMask& m, std::uint8_t value, int connectivity,
                                std::vector<std::int64_t>& sizes) {
  const std::int64_t h = m.height;
  const std::int64_t w = m.width;
  std::vector<std::int64_t> labels(m.pixels.size(), -1);
  std::vector<std::int64_t> stack;
  sizes.clear();
  for (std::int64_t start = 0; start < h * w; ++start) {
    if (m.pixels[start] != value || labels[start] >= 0) continue;
    const auto id = static_cast<std::int64_t>(sizes.size());
    std::int64_t size = 0;
    labels[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::int64_t p = stack.back();
      stack.pop_back();
      ++size;
      const std::int64_t i = p / w;
      const std::int64_t j = p % w;
      for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          if (di == 0 && dj == 0) continue;
          if (connectivity == 4 && di != 0 && dj != 0) continue;
          const std::int64_t ni = i + di;
          const std::int64_t nj = j + dj;
          if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
          const std::int64_t q = ni * w + nj;
          if (m.pixels[q] != value || labels[q] >= 0) continue;
          labels[q] = id;
          stack.push_back(q);
        }
      }
    }
    sizes.push_back(size);
  }
  return labels;
}

void check_connectivity(int connectivity) {
  if (connectivity != 4 && connectivity != 8) {
    throw ConfigError("connectivity must be 4 or 8, got " + std::to_string(connectivity));
  }
}

}  // namespace

std::int64_t BinaryMask::count() const {
  return std::count(pixels.begin(), pixels.end(), std::uint8_t{1});
}

BinaryMask threshold(const Tensor& probs, double t) {
  if (!(t > 0 && t < 1)) throw ConfigError("threshold must lie in (0, 1)");
  BinaryMask m;
  plane_extent(probs, "threshold", m.height, m.width);
  const auto v = probs.data();
  m.pixels.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) m.pixels[i] = v[i] >= t ? 1 : 0;
  return m;
}

BinaryMask to_mask(const Tensor& binary) {
  BinaryMask m;
  plane_extent(binary, "to_mask", m.height, m.width);
  const auto v = binary.data();
  m.pixels.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0 && v[i] != 1.0) {
      throw NonBinaryError("to_mask: value " + std::to_string(v[i]) + " is not 0 or 1");
    }
    m.pixels[i] = v[i] == 1.0 ? 1 : 0;
  }
  return m;
}

Tensor to_tensor(const BinaryMask& mask) {
  std::vector<double> v(mask.pixels.begin(), mask.pixels.end());
  return Tensor::from({1, mask.height, mask.width}, std::move(v));
}

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  check_same_extent(pred, gt, "metrics");
  check_binary(pred, "metrics");
  check_binary(gt, "metrics");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    const bool p = pred.pixels[i];
    const bool g = gt.pixels[i];
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

Metrics metrics_from_counts(const ConfusionCounts& c) {
  Metrics m;
  m.counts = c;
  if (c.tp + c.fp == 0 && c.tp + c.fn == 0) {
    m.dice = m.precision = m.recall = 1.0;
    return m;
  }
  const auto ratio = [](std::int64_t num, std::int64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  m.dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  return m;
}

Metrics metrics(const BinaryMask& pred, const BinaryMask& gt) {
  return metrics_from_counts(confusion(pred, gt));
}

BinaryMask largest_component(const BinaryMask& mask, int connectivity) {
  check_connectivity(connectivity);
  check_binary(mask, "largest_component");
  std::vector<std::int64_t> sizes;
  const auto labels = label(mask, 1, connectivity, sizes);
  BinaryMask out(mask.height, mask.width);
  if (sizes.empty()) return out;
  // max_element returns the first maximum, i.e. the earliest label.
  const auto keep = std::max_element(sizes.begin(), sizes.end()) - sizes.begin();
  for (std::size_t i = 0; i < labels.size(); ++i) out.pixels[i] = labels[i] == keep ? 1 : 0;
  return out;
}

BinaryMask fill_holes(const BinaryMask& mask, int foreground_connectivity) {
  check_connectivity(foreground_connectivity);
  check_binary(mask, "fill_holes");
  std::vector<std::int64_t> sizes;
  const int bg_conn = foreground_connectivity == 4 ? 8 : 4;
  const auto labels = label(mask, 0, bg_conn, sizes);
  std::vector<bool> touches_border(sizes.size(), false);
  for (std::int64_t i = 0; i < mask.height; ++i) {
    for (std::int64_t j = 0; j < mask.width; ++j) {
      if (i != 0 && j != 0 && i != mask.height - 1 && j != mask.width - 1) continue;
      const std::int64_t l = labels[i * mask.width + j];
      if (l >= 0) touches_border[l] = true;
    }
  }
  BinaryMask out = mask;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] >= 0 && !touches_border[labels[p]]) out.pixels[p] = 1;
  }
  return out;
}

BinaryMask postprocess(const BinaryMask& mask, const PostprocessOptions& opts) {
  BinaryMask out = mask;
  if (opts.largest_component) out = largest_component(out, opts.connectivity);
  if (opts.fill_holes) out = fill_holes(out, opts.connectivity);
  return out;
}

RgbImage overlay(const Tensor& image, const BinaryMask& pred, const BinaryMask& gt) {
  RgbImage out;
  plane_extent(image, "overlay", out.height, out.width);
  if (pred.height != out.height || pred.width != out.width) {
    throw ShapeError("overlay: image " + shape_str(image.shape()) + " vs prediction " +
                     std::to_string(pred.height) + "x" + std::to_string(pred.width));
  }
  check_same_extent(pred, gt, "overlay");
  check_binary(pred, "overlay");
  check_binary(gt, "overlay");
  const auto v = image.data();
  out.rgb.resize(v.size() * 3);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint8_t r, g, b;
    const bool p = pred.pixels[i];
    const bool t = gt.pixels[i];
    if (p && t) {
      r = 0, g = 255, b = 0;
    } else if (p) {
      r = 255, g = 0, b = 0;
    } else if (t) {
      r = 0, g = 0, b = 255;
    } else {
      const auto gray = static_cast<std::uint8_t>(std::lround(std::clamp(v[i], 0.0, 1.0) * 255.0));
      r = g = b = gray;
    }
    out.rgb[3 * i] = r;
    out.rgb[3 * i + 1] = g;
    out.rgb[3 * i + 2] = b;
  }
  return out;
}

std::string encode_ppm(const RgbImage& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                    "\n255\n";
  out.append(image.rgb.begin(), image.rgb.end());
  return out;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  write_bytes(path, encode_ppm(image));
}

MetricsReport::Mean MetricsReport::mean() const {
  Mean m;
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.dice += r.metrics.dice;
    m.precision += r.metrics.precision;
    m.recall += r.metrics.recall;
    m.tp += static_cast<double>(r.metrics.counts.tp);
    m.fp += static_cast<double>(r.metrics.counts.fp);
    m.fn += static_cast<double>(r.metrics.counts.fn);
    m.tn += static_cast<double>(r.metrics.counts.tn);
  }
  const auto n = static_cast<double>(rows.size());
  m.dice /= n;
  m.precision /= n;
  m.recall /= n;
  m.tp /= n;
  m.fp /= n;
  m.fn /= n;
  m.tn /= n;
  return m;
}

std::string format_report(const MetricsReport& report) {
  if (report.rows.empty()) throw std::invalid_argument("write_report: no rows");
  std::vector<const ReportRow*> rows;
  for (const auto& r : report.rows) rows.push_back(&r);
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ReportRow* a, const ReportRow* b) { return a->id < b->id; });
  std::string out = "id,dice,precision,recall,tp,fp,fn,tn\n";
  char buf[256];
  for (const ReportRow* r : rows) {
    const Metrics& m = r->metrics;
    std::snprintf(buf, sizeof buf, ",%.4f,%.4f,%.4f,%lld,%lld,%lld,%lld\n", m.dice, m.precision,
                  m.recall, static_cast<long long>(m.counts.tp),
                  static_cast<long long>(m.counts.fp), static_cast<long long>(m.counts.fn),
                  static_cast<long long>(m.counts.tn));
    out += r->id + buf;
  }
  const auto mean = report.mean();
  std::snprintf(buf, sizeof buf, "MEAN,%.4f,%.4f,%.4f,%.2f,%.2f,%.2f,%.2f\n", mean.dice,
                mean.precision, mean.recall, mean.tp, mean.fp, mean.fn, mean.tn);
  out += buf;
  return out;
}

void write_report(const MetricsReport& report, const std::filesystem::path& path) {
  write_bytes(path, format_report(report));
}

}  // namespace stgan
