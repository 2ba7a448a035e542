#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "stgan/rng.hpp"
#include "stgan/tensor.hpp"

namespace stgan {

// One paired example. image and mask are [1, H, W]; mask values are 0 or 1.
struct Sample {
  std::string id;
  Tensor image;
  Tensor mask;
};

// Synthetic organ-like phantom: a union of 1-2 rotated ellipses on a noisy,
// slightly blurred background. Lengths are in pixels unless noted.
struct PhantomConfig {
  std::int64_t size = 64;
  // Semi-axes are drawn from [size * min_axis_fraction, size * max_axis_fraction].
  double min_axis_fraction = 1.0 / 8.0;
  double max_axis_fraction = 1.0 / 3.0;
  // The first lobe's center is size/2 plus a uniform offset in +-jitter*size.
  double center_jitter = 0.12;
  double max_rotation = 3.14159265358979323846;
  int min_lobes = 1;
  int max_lobes = 2;
  double min_offset = 0.25;
  double max_offset = 0.45;
  double min_base = 0.2;
  double max_base = 0.4;
  double noise_sigma = 0.05;
  // Box blur width (odd, 1 disables).
  int blur_width = 3;
  double min_foreground = 0.02;
  double max_foreground = 0.6;
  int max_attempts = 20;

  void validate() const;
};

Sample generate_phantom(Rng& rng, const PhantomConfig& cfg, std::string id = "phantom");

// Sample i is drawn from Rng::derive(seed, i) and named phantom_NNNN.
std::vector<Sample> generate_phantoms(std::int64_t count, std::uint64_t seed,
                                      const PhantomConfig& cfg);

std::string phantom_id(std::int64_t index);

// Raw binary PGM ("P5") raster.
struct PgmImage {
  std::int64_t height = 0;
  std::int64_t width = 0;
  int maxval = 255;
  std::vector<std::uint16_t> pixels;  // row-major
};

PgmImage parse_pgm(std::string_view bytes);
std::string encode_pgm(const PgmImage& image);
PgmImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const PgmImage& image);

// Grayscale values p / maxval as a [1, H, W] tensor.
Tensor pgm_to_tensor(const PgmImage& image);
// Quantizes [0, 1] values (any tensor whose last two dims are H, W and whose
// leading dims are 1) to round(v * maxval).
PgmImage tensor_to_pgm(const Tensor& image, int maxval);

Tensor load_image_pgm(const std::filesystem::path& path);
// Rejects any value other than 0 and maxval with NonBinaryMaskError.
Tensor load_mask_pgm(const std::filesystem::path& path);
Tensor mask_from_pgm(const PgmImage& image);

// 16-bit for images, 8-bit for masks.
void save_image_pgm(const std::filesystem::path& path, const Tensor& image);
void save_mask_pgm(const std::filesystem::path& path, const Tensor& mask);

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

inline constexpr double kDefaultTrainFraction = 95.0 / 131.0;

// Seeded shuffle, then the first ceil(fraction * n) ids train. Both parts
// stay non-empty.
DatasetSplit split_dataset(const std::vector<std::string>& ids, double train_fraction,
                           std::uint64_t seed);

// Two sections, "[train]" and "[test]", one id per line.
std::string format_split_manifest(const DatasetSplit& split);
DatasetSplit parse_split_manifest(std::string_view text);

// <root>/images/<id>.pgm, <root>/masks/<id>.pgm and <root>/split.txt.
inline constexpr const char* kSplitManifestName = "split.txt";
void write_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples,
                   const DatasetSplit& split);
DatasetSplit read_split(const std::filesystem::path& root);
std::vector<Sample> load_samples(const std::filesystem::path& root,
                                 const std::vector<std::string>& ids);

struct Batch {
  std::vector<std::string> ids;
  Tensor images;  // [B, 1, H, W]
  Tensor masks;   // [B, 1, H, W]
};

Batch stack_samples(const std::vector<Sample>& samples, const std::vector<std::size_t>& order);
std::vector<Sample> unbatch(const Batch& batch);

// One epoch: a permutation drawn from rng, cut into batch_size chunks with a
// trailing partial batch.
std::vector<std::vector<std::size_t>> epoch_order(std::size_t count, std::int64_t batch_size,
                                                  Rng& rng);
std::vector<Batch> make_batches(const std::vector<Sample>& samples, std::int64_t batch_size,
                                Rng& rng);

}  // namespace stgan
