#include "stgan/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "stgan/errors.hpp"

namespace stgan {

namespace fs = std::filesystem;

void PhantomConfig::validate() const {
  if (size < 4 || size % 4 != 0) throw ConfigError("phantom: size must be a positive multiple of 4");
  if (!(min_axis_fraction > 0 && min_axis_fraction <= max_axis_fraction)) {
    throw ConfigError("phantom: semi-axis fractions must satisfy 0 < min <= max");
  }
  if (!(center_jitter >= 0 && center_jitter < 0.5)) throw ConfigError("phantom: center_jitter must lie in [0, 0.5)");
  if (!(max_rotation >= 0)) throw ConfigError("phantom: max_rotation must be >= 0");
  if (min_lobes < 1 || min_lobes > max_lobes) throw ConfigError("phantom: lobe range must satisfy 1 <= min <= max");
  if (!(min_offset <= max_offset) || !(min_base <= max_base)) {
    throw ConfigError("phantom: intensity ranges must be ordered");
  }
  if (!(noise_sigma >= 0)) throw ConfigError("phantom: noise_sigma must be >= 0");
  if (blur_width < 1 || blur_width % 2 == 0) throw ConfigError("phantom: blur_width must be odd and >= 1");
  if (!(min_foreground >= 0 && min_foreground < max_foreground && max_foreground <= 1)) {
    throw ConfigError("phantom: foreground bounds must satisfy 0 <= min < max <= 1");
  }
  if (max_attempts < 1) throw ConfigError("phantom: max_attempts must be >= 1");
}

namespace {

struct Ellipse {
  double cy, cx, a, b, theta;

  bool contains(double y, double x) const {
    const double dy = y - cy;
    const double dx = x - cx;
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
  }
};

std::vector<double> box_blur(const std::vector<double>& src, std::int64_t n, int width) {
  if (width == 1) return src;
  const int r = width / 2;
  auto pass = [&](const std::vector<double>& in, bool rows) {
    std::vector<double> out(in.size());
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        int count = 0;
        for (int t = -r; t <= r; ++t) {
          const std::int64_t ii = rows ? i : i + t;
          const std::int64_t jj = rows ? j + t : j;
          if (ii < 0 || ii >= n || jj < 0 || jj >= n) continue;
          acc += in[ii * n + jj];
          ++count;
        }
        out[i * n + j] = acc / count;
      }
    }
    return out;
  };
  return pass(pass(src, true), false);
}

}  // namespace

Sample generate_phantom(Rng& rng, const PhantomConfig& cfg, std::string id) {
  cfg.validate();
  const std::int64_t n = cfg.size;
  const double size = static_cast<double>(n);
  const double axis_lo = size * cfg.min_axis_fraction;
  const double axis_hi = size * cfg.max_axis_fraction;
  std::vector<double> mask(static_cast<std::size_t>(n * n));
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    std::vector<Ellipse> lobes;
    const auto count = rng.uniform_int(cfg.min_lobes, cfg.max_lobes);
    Ellipse first{size / 2 + rng.uniform(-cfg.center_jitter, cfg.center_jitter) * size,
                  size / 2 + rng.uniform(-cfg.center_jitter, cfg.center_jitter) * size,
                  rng.uniform(axis_lo, axis_hi), rng.uniform(axis_lo, axis_hi),
                  rng.uniform(0.0, cfg.max_rotation)};
    lobes.push_back(first);
    for (std::int64_t l = 1; l < count; ++l) {
      // Later lobes are centred inside the first so the union stays connected.
      const double angle = rng.uniform(0.0, 2 * 3.14159265358979323846);
      const double dist = rng.uniform(0.3, 0.9) * std::min(first.a, first.b);
      lobes.push_back({first.cy + dist * std::sin(angle), first.cx + dist * std::cos(angle),
                       rng.uniform(axis_lo, axis_hi) * 0.75,
                       rng.uniform(axis_lo, axis_hi) * 0.75, rng.uniform(0.0, cfg.max_rotation)});
    }
    std::int64_t fg = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        const double y = static_cast<double>(i) + 0.5;
        const double x = static_cast<double>(j) + 0.5;
        const bool inside =
            std::any_of(lobes.begin(), lobes.end(), [&](const Ellipse& e) { return e.contains(y, x); });
        mask[i * n + j] = inside ? 1.0 : 0.0;
        fg += inside;
      }
    }
    const double fraction = static_cast<double>(fg) / static_cast<double>(n * n);
    if (fraction < cfg.min_foreground || fraction > cfg.max_foreground) continue;

    const double base = rng.uniform(cfg.min_base, cfg.max_base);
    const double offset = rng.uniform(cfg.min_offset, cfg.max_offset);
    std::vector<double> image(mask.size());
    for (std::size_t p = 0; p < mask.size(); ++p) image[p] = base + mask[p] * offset;
    image = box_blur(image, n, cfg.blur_width);
    for (double& v : image) {
      if (cfg.noise_sigma > 0) {
        const double noise = std::clamp(rng.normal(), -3.0, 3.0) * cfg.noise_sigma;
        v += noise;
      }
      v = std::clamp(v, 0.0, 1.0);
    }
    return {std::move(id), Tensor::from({1, n, n}, std::move(image)),
            Tensor::from({1, n, n}, std::move(mask))};
  }
  throw GenerationError("phantom: no mask within foreground bounds after " +
                        std::to_string(cfg.max_attempts) + " attempts");
}

std::string phantom_id(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "phantom_%04lld", static_cast<long long>(index));
  return buf;
}

std::vector<Sample> generate_phantoms(std::int64_t count, std::uint64_t seed,
                                      const PhantomConfig& cfg) {
  if (count < 1) throw ConfigError("phantom: count must be >= 1");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(i));
    out.push_back(generate_phantom(rng, cfg, phantom_id(i)));
  }
  return out;
}

// PGM ---------------------------------------------------------------------

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::int64_t number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size()) throw TruncatedError(std::string("pgm: header ends before ") + what);
    if (!std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      throw FormatError(std::string("pgm: expected a number for ") + what);
    }
    std::int64_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > (std::int64_t{1} << 31)) throw FormatError(std::string("pgm: ") + what + " too large");
      ++pos_;
    }
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return data;
}

void write_file(const fs::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.close();
  if (!out) throw IoError("write failed: " + path.string());
}

void spatial_extent(const Tensor& t, const char* what, std::int64_t& h, std::int64_t& w) {
  if (t.rank() < 2) throw ShapeError(std::string(what) + ": need at least 2 dims, got " + shape_str(t.shape()));
  h = t.dim(t.rank() - 2);
  w = t.dim(t.rank() - 1);
  if (h * w != t.numel()) {
    throw ShapeError(std::string(what) + ": expected a single plane, got " + shape_str(t.shape()));
  }
}

}  // namespace

PgmImage parse_pgm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    throw BadMagicError("pgm: missing P5 magic");
  }
  HeaderReader reader(bytes);
  reader.advance(2);
  PgmImage img;
  img.width = reader.number("width");
  img.height = reader.number("height");
  const std::int64_t maxval = reader.number("maxval");
  if (maxval != 255 && maxval != 65535) {
    throw BadMaxvalError("pgm: maxval " + std::to_string(maxval) + " not in {255, 65535}");
  }
  img.maxval = static_cast<int>(maxval);
  if (img.width < 1 || img.height < 1) throw FormatError("pgm: empty raster");
  if (reader.pos() >= bytes.size() ||
      !std::isspace(static_cast<unsigned char>(bytes[reader.pos()]))) {
    throw TruncatedError("pgm: header not terminated");
  }
  reader.advance(1);
  const std::size_t count = static_cast<std::size_t>(img.width * img.height);
  const std::size_t bpp = img.maxval == 255 ? 1 : 2;
  const std::size_t start = reader.pos();
  if (bytes.size() - start < count * bpp) {
    throw TruncatedError("pgm: payload has " + std::to_string(bytes.size() - start) +
                         " bytes, expected " + std::to_string(count * bpp));
  }
  img.pixels.resize(count);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + start);
  for (std::size_t i = 0; i < count; ++i) {
    img.pixels[i] = bpp == 1 ? p[i] : static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1]);
    if (img.pixels[i] > img.maxval) throw FormatError("pgm: pixel exceeds maxval");
  }
  return img;
}

std::string encode_pgm(const PgmImage& image) {
  if (image.maxval != 255 && image.maxval != 65535) {
    throw BadMaxvalError("pgm: maxval " + std::to_string(image.maxval) + " not in {255, 65535}");
  }
  if (image.pixels.size() != static_cast<std::size_t>(image.width * image.height)) {
    throw ShapeError("pgm: pixel count does not match extent");
  }
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                    "\n" + std::to_string(image.maxval) + "\n";
  for (std::uint16_t v : image.pixels) {
    if (v > image.maxval) throw FormatError("pgm: pixel exceeds maxval");
    if (image.maxval == 255) {
      out.push_back(static_cast<char>(v));
    } else {
      out.push_back(static_cast<char>(v >> 8));
      out.push_back(static_cast<char>(v & 0xff));
    }
  }
  return out;
}

PgmImage read_pgm(const fs::path& path) {
  try {
    return parse_pgm(read_file(path));
  } catch (const FormatError& e) {
    // Re-throw the same kind with the file name attached.
    const std::string msg = path.string() + ": " + e.what();
    if (dynamic_cast<const BadMagicError*>(&e)) throw BadMagicError(msg);
    if (dynamic_cast<const TruncatedError*>(&e)) throw TruncatedError(msg);
    if (dynamic_cast<const BadMaxvalError*>(&e)) throw BadMaxvalError(msg);
    throw FormatError(msg);
  }
}

void write_pgm(const fs::path& path, const PgmImage& image) {
  write_file(path, encode_pgm(image));
}

Tensor pgm_to_tensor(const PgmImage& image) {
  std::vector<double> values(image.pixels.size());
  const double scale = static_cast<double>(image.maxval);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = image.pixels[i] / scale;
  return Tensor::from({1, image.height, image.width}, std::move(values));
}

PgmImage tensor_to_pgm(const Tensor& image, int maxval) {
  PgmImage out;
  spatial_extent(image, "tensor_to_pgm", out.height, out.width);
  out.maxval = maxval;
  if (maxval != 255 && maxval != 65535) {
    throw BadMaxvalError("pgm: maxval " + std::to_string(maxval) + " not in {255, 65535}");
  }
  const auto v = image.data();
  out.pixels.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] >= 0.0 && v[i] <= 1.0)) throw ShapeError("tensor_to_pgm: value outside [0, 1]");
    out.pixels[i] = static_cast<std::uint16_t>(std::lround(v[i] * maxval));
  }
  return out;
}

Tensor mask_from_pgm(const PgmImage& image) {
  for (std::uint16_t v : image.pixels) {
    if (v != 0 && v != image.maxval) {
      throw NonBinaryMaskError("mask contains value " + std::to_string(v) + " (allowed: 0, " +
                               std::to_string(image.maxval) + ")");
    }
  }
  return pgm_to_tensor(image);
}

Tensor load_image_pgm(const fs::path& path) { return pgm_to_tensor(read_pgm(path)); }

Tensor load_mask_pgm(const fs::path& path) {
  const PgmImage img = read_pgm(path);
  try {
    return mask_from_pgm(img);
  } catch (const NonBinaryMaskError& e) {
    throw NonBinaryMaskError(path.string() + ": " + e.what());
  }
}

void save_image_pgm(const fs::path& path, const Tensor& image) {
  write_pgm(path, tensor_to_pgm(image, 65535));
}

void save_mask_pgm(const fs::path& path, const Tensor& mask) {
  for (double v : mask.data()) {
    if (v != 0.0 && v != 1.0) throw NonBinaryMaskError("save_mask_pgm: mask is not binary");
  }
  write_pgm(path, tensor_to_pgm(mask, 255));
}

// Split and dataset layout ---------------------------------------------------

DatasetSplit split_dataset(const std::vector<std::string>& ids, double train_fraction,
                           std::uint64_t seed) {
  if (ids.size() < 2) throw ConfigError("split: need at least 2 ids, got " + std::to_string(ids.size()));
  if (!(train_fraction > 0 && train_fraction < 1)) {
    throw ConfigError("split: train_fraction must lie in (0, 1)");
  }
  std::vector<std::string> order = ids;
  Rng rng(seed);
  rng.shuffle(order);
  const auto n = static_cast<double>(ids.size());
  // The small slack keeps fractions like 95/131 from rounding up to 96.
  auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * n - 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);
  DatasetSplit split;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return split;
}

std::string format_split_manifest(const DatasetSplit& split) {
  std::string out = "[train]\n";
  for (const auto& id : split.train) out += id + "\n";
  out += "[test]\n";
  for (const auto& id : split.test) out += id + "\n";
  return out;
}

DatasetSplit parse_split_manifest(std::string_view text) {
  DatasetSplit split;
  std::vector<std::string>* section = nullptr;
  bool seen_train = false;
  bool seen_test = false;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    if (line.empty()) continue;
    if (line == "[train]" && !seen_train) {
      section = &split.train;
      seen_train = true;
    } else if (line == "[test]" && !seen_test) {
      section = &split.test;
      seen_test = true;
    } else if (line.front() == '[' || !section) {
      throw FormatError("split manifest: unexpected line '" + line + "'");
    } else {
      section->push_back(line);
    }
  }
  if (!seen_train || !seen_test) throw FormatError("split manifest: missing [train] or [test] section");
  return split;
}

void write_dataset(const fs::path& root, const std::vector<Sample>& samples,
                   const DatasetSplit& split) {
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  fs::create_directories(root / "masks", ec);
  if (ec) throw IoError("cannot create dataset directories under " + root.string());
  for (const auto& s : samples) {
    save_image_pgm(root / "images" / (s.id + ".pgm"), s.image);
    save_mask_pgm(root / "masks" / (s.id + ".pgm"), s.mask);
  }
  write_file(root / kSplitManifestName, format_split_manifest(split));
}

DatasetSplit read_split(const fs::path& root) {
  const fs::path path = root / kSplitManifestName;
  try {
    return parse_split_manifest(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<Sample> load_samples(const fs::path& root, const std::vector<std::string>& ids) {
  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    Sample s{id, load_image_pgm(root / "images" / (id + ".pgm")),
             load_mask_pgm(root / "masks" / (id + ".pgm"))};
    if (s.image.shape() != s.mask.shape()) {
      throw ShapeError("sample " + id + ": image " + shape_str(s.image.shape()) + " vs mask " +
                       shape_str(s.mask.shape()));
    }
    out.push_back(std::move(s));
  }
  return out;
}

// Batching -----------------------------------------------------------------

Batch stack_samples(const std::vector<Sample>& samples, const std::vector<std::size_t>& order) {
  if (order.empty()) throw ShapeError("stack_samples: empty batch");
  const Sample& first = samples.at(order.front());
  const Shape& shape = first.image.shape();
  if (shape.size() != 3) throw ShapeError("stack_samples: samples must be [C,H,W], got " + shape_str(shape));
  const auto plane = static_cast<std::size_t>(first.image.numel());
  std::vector<double> images;
  std::vector<double> masks;
  images.reserve(plane * order.size());
  masks.reserve(plane * order.size());
  Batch batch;
  for (std::size_t idx : order) {
    const Sample& s = samples.at(idx);
    if (s.image.shape() != shape || s.mask.shape() != shape) {
      throw ShapeError("stack_samples: sample " + s.id + " has shape " +
                       shape_str(s.image.shape()) + ", batch expects " + shape_str(shape));
    }
    images.insert(images.end(), s.image.data().begin(), s.image.data().end());
    masks.insert(masks.end(), s.mask.data().begin(), s.mask.data().end());
    batch.ids.push_back(s.id);
  }
  const Shape batched{static_cast<std::int64_t>(order.size()), shape[0], shape[1], shape[2]};
  batch.images = Tensor::from(batched, std::move(images));
  batch.masks = Tensor::from(batched, std::move(masks));
  return batch;
}

std::vector<Sample> unbatch(const Batch& batch) {
  const Shape& s = batch.images.shape();
  const Shape per{s[1], s[2], s[3]};
  const auto plane = static_cast<std::size_t>(shape_numel(per));
  std::vector<Sample> out;
  for (std::size_t b = 0; b < batch.ids.size(); ++b) {
    const auto img = batch.images.data().subspan(b * plane, plane);
    const auto msk = batch.masks.data().subspan(b * plane, plane);
    out.push_back({batch.ids[b], Tensor::from(per, {img.begin(), img.end()}),
                   Tensor::from(per, {msk.begin(), msk.end()})});
  }
  return out;
}

std::vector<std::vector<std::size_t>> epoch_order(std::size_t count, std::int64_t batch_size,
                                                  Rng& rng) {
  if (batch_size < 1) throw ConfigError("batches: batch_size must be >= 1");
  std::vector<std::size_t> perm(count);
  for (std::size_t i = 0; i < count; ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<std::vector<std::size_t>> out;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < count; start += bs) {
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                     perm.begin() + static_cast<std::ptrdiff_t>(std::min(count, start + bs)));
  }
  return out;
}

std::vector<Batch> make_batches(const std::vector<Sample>& samples, std::int64_t batch_size,
                                Rng& rng) {
  std::vector<Batch> out;
  for (const auto& idx : epoch_order(samples.size(), batch_size, rng)) {
    out.push_back(stack_samples(samples, idx));
  }
  return out;
}

}  // namespace stgan
