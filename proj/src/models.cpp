#include "stgan/models.hpp"

#include <algorithm>
#include <cstdlib>

#include "stgan/errors.hpp"
#include "stgan/ops.hpp"

namespace stgan {
namespace {

// Convolutions feeding an instance norm carry no bias: the norm subtracts
// any per-channel constant, so its gradient would be identically zero.
void add_conv(ParamSet& params, const std::string& prefix, std::int64_t c_out,
              std::int64_t c_in, std::int64_t k, bool with_bias) {
  params.add(prefix + ".weight", {c_out, c_in, k, k}, ParamRole::kWeight);
  if (with_bias) params.add(prefix + ".bias", {c_out}, ParamRole::kBias);
}

Tensor optional_bias(const ParamSet& params, const std::string& prefix) {
  const std::string name = prefix + ".bias";
  return params.contains(name) ? params.at(name) : Tensor{};
}

Tensor conv(const Tensor& x, const ParamSet& params, const std::string& prefix,
            int stride, int pad) {
  return conv2d(x, params.at(prefix + ".weight"), optional_bias(params, prefix),
                {stride, pad, 0});
}

Tensor checked(Tensor t, const std::string& layer) {
  check_finite(t, "generator layer " + layer);
  return t;
}

std::string enc_name(int i) { return "enc" + std::to_string(i) + ".conv"; }
std::string dec_name(int i) { return "dec" + std::to_string(i) + ".convt"; }
std::string block_name(int i) { return "core.block" + std::to_string(i); }

}  // namespace

void GeneratorConfig::validate() const {
  if (in_channels < 1 || out_channels < 1 || base_channels < 1 || downsample_stages < 0 ||
      transformer_blocks < 0 || n_heads < 1) {
    throw ConfigError("generator: all counts must be positive");
  }
  if (downsample_stages > 6) throw ConfigError("generator: at most 6 downsample stages");
  attention().validate();
  if (d_model() % 4 != 0) {
    throw ConfigError("generator: token width " + std::to_string(d_model()) +
                      " must be a multiple of 4 for the positional encoding");
  }
}

ParamSet make_generator_params(const GeneratorConfig& cfg) {
  cfg.validate();
  ParamSet params;
  const std::int64_t base = cfg.base_channels;
  add_conv(params, enc_name(0), base, cfg.in_channels, 7, false);
  for (int s = 0; s < cfg.downsample_stages; ++s)
    add_conv(params, enc_name(s + 1), base << (s + 1), base << s, 3, false);
  for (int b = 0; b < cfg.transformer_blocks; ++b)
    add_transformer_block(params, block_name(b), cfg.attention());
  for (int s = 0; s < cfg.downsample_stages; ++s) {
    const int level = cfg.downsample_stages - s;
    params.add(dec_name(s) + ".weight", {base << level, base << (level - 1), 3, 3},
               ParamRole::kWeight);
  }
  add_conv(params, "head.conv", cfg.out_channels, base, 7, true);
  return params;
}

Tensor generator_forward(const Tensor& image, const ParamSet& params,
                         const GeneratorConfig& cfg) {
  cfg.validate();
  if (image.rank() != 4 || image.dim(1) != cfg.in_channels) {
    throw ShapeError("generator: expected [B," + std::to_string(cfg.in_channels) +
                     ",H,W], got " + shape_str(image.shape()));
  }
  const std::int64_t div = cfg.spatial_divisor();
  if (image.dim(2) % div != 0 || image.dim(3) % div != 0) {
    throw ConfigError("generator: spatial size " + std::to_string(image.dim(2)) + "x" +
                      std::to_string(image.dim(3)) + " not divisible by " +
                      std::to_string(div));
  }
  check_finite(image, "generator input");

  Tensor h = checked(relu(instance_norm(conv(image, params, enc_name(0), 1, 3))), enc_name(0));
  for (int s = 0; s < cfg.downsample_stages; ++s) {
    h = checked(relu(instance_norm(conv(h, params, enc_name(s + 1), 2, 1))),
                enc_name(s + 1));
  }

  if (cfg.transformer_blocks > 0) {
    const std::int64_t batch = h.dim(0);
    const std::int64_t channels = h.dim(1);
    const std::int64_t fh = h.dim(2);
    const std::int64_t fw = h.dim(3);
    const Tensor pos = positional_encoding_2d(fh, fw, channels);
    const AttentionConfig attn = cfg.attention();
    std::vector<Tensor> samples;
    samples.reserve(static_cast<std::size_t>(batch));
    for (std::int64_t b = 0; b < batch; ++b) {
      Tensor tokens = transpose(reshape(slice(h, 0, b, 1), {channels, fh * fw})) + pos;
      for (int k = 0; k < cfg.transformer_blocks; ++k)
        tokens = transformer_block(tokens, params, block_name(k), attn);
      samples.push_back(reshape(transpose(tokens), {1, channels, fh, fw}));
    }
    h = checked(batch == 1 ? samples[0] : concat(samples, 0), "core");
  }

  for (int s = 0; s < cfg.downsample_stages; ++s) {
    const std::string name = dec_name(s);
    h = conv2d_transpose(h, params.at(name + ".weight"), Tensor{}, {2, 1, 1});
    h = checked(relu(instance_norm(h)), name);
  }
  return checked(sigmoid(conv(h, params, "head.conv", 1, 3)), "head.conv");
}

Generator::Generator(GeneratorConfig cfg)
    : config(cfg), params(make_generator_params(cfg)) {}

Tensor Generator::operator()(const Tensor& image) const {
  return generator_forward(image, params, config);
}

// ---------------------------------------------------------------------------

int DiscriminatorKind::patch_depth() const {
  if (variant == DiscriminatorVariant::kPixel) return 0;
  int best = 1;
  for (int k = 1; k <= 6; ++k) {
    const int rf = (2 << k) - 1;
    const int best_rf = (2 << best) - 1;
    if (std::abs(rf - patch_size) < std::abs(best_rf - patch_size)) best = k;
  }
  return best;
}

void DiscriminatorKind::validate() const {
  if (candidate_channels < 1 || (conditional && condition_channels < 1)) {
    throw ConfigError("discriminator: channel counts must be positive");
  }
  if (variant != DiscriminatorVariant::kPixel) {
    constexpr int kAllowed[] = {8, 16, 32, 70};
    if (std::find(std::begin(kAllowed), std::end(kAllowed), patch_size) ==
        std::end(kAllowed)) {
      throw ConfigError("discriminator: patch size " + std::to_string(patch_size) +
                        " not in {8, 16, 32, 70}");
    }
  }
}

std::string to_string(DiscriminatorVariant variant) {
  switch (variant) {
    case DiscriminatorVariant::kWholeImage: return "whole";
    case DiscriminatorVariant::kPatch: return "patch";
    case DiscriminatorVariant::kPixel: return "pixel";
  }
  return "pixel";
}

DiscriminatorVariant parse_discriminator_variant(const std::string& name) {
  if (name == "whole") return DiscriminatorVariant::kWholeImage;
  if (name == "patch") return DiscriminatorVariant::kPatch;
  if (name == "pixel") return DiscriminatorVariant::kPixel;
  throw ConfigError("unknown discriminator variant '" + name +
                    "' (expected whole, patch or pixel)");
}

namespace {

std::int64_t stack_channels(int layer) { return std::min<std::int64_t>(32 << layer, 256); }

}  // namespace

ParamSet make_discriminator_params(const DiscriminatorKind& kind) {
  kind.validate();
  ParamSet params;
  std::int64_t c = kind.input_channels();
  if (kind.variant == DiscriminatorVariant::kPixel) {
    add_conv(params, "layer0.conv", 32, c, 1, true);
    add_conv(params, "layer1.conv", 64, 32, 1, true);
    add_conv(params, "out.conv", 1, 64, 1, true);
    return params;
  }
  for (int l = 0; l < kind.patch_depth(); ++l) {
    add_conv(params, "layer" + std::to_string(l) + ".conv", stack_channels(l), c, 3, true);
    c = stack_channels(l);
  }
  add_conv(params, "out.conv", 1, c, 1, true);
  return params;
}

Tensor discriminator_forward(const Tensor& condition, const Tensor& candidate,
                             const ParamSet& params, const DiscriminatorKind& kind) {
  kind.validate();
  if (candidate.rank() != 4 || candidate.dim(1) != kind.candidate_channels) {
    throw ShapeError("discriminator: candidate must be [B," +
                     std::to_string(kind.candidate_channels) + ",H,W], got " +
                     shape_str(candidate.shape()));
  }
  Tensor x = candidate;
  if (kind.conditional) {
    if (condition.rank() != 4 || condition.dim(0) != candidate.dim(0) ||
        condition.dim(2) != candidate.dim(2) || condition.dim(3) != candidate.dim(3) ||
        condition.dim(1) != kind.condition_channels) {
      throw ShapeError("discriminator: condition " + shape_str(condition.shape()) +
                       " does not match candidate " + shape_str(candidate.shape()));
    }
    x = concat({condition, candidate}, 1);
  }
  if (kind.variant == DiscriminatorVariant::kPixel) {
    x = leaky_relu(conv(x, params, "layer0.conv", 1, 0), 0.2);
    x = leaky_relu(conv(x, params, "layer1.conv", 1, 0), 0.2);
    return conv(x, params, "out.conv", 1, 0);
  }
  const int depth = kind.patch_depth();
  const std::int64_t div = std::int64_t{1} << depth;
  if (x.dim(2) % div != 0 || x.dim(3) % div != 0) {
    throw ShapeError("discriminator: spatial size " + shape_str(x.shape()) +
                     " not divisible by " + std::to_string(div));
  }
  for (int l = 0; l < depth; ++l)
    x = leaky_relu(conv(x, params, "layer" + std::to_string(l) + ".conv", 2, 1), 0.2);
  x = conv(x, params, "out.conv", 1, 0);
  if (kind.variant == DiscriminatorVariant::kWholeImage) {
    const std::int64_t batch = x.dim(0);
    const std::int64_t cells = x.dim(2) * x.dim(3);
    x = reshape(mean(reshape(x, {batch, cells}), 1), {batch, 1, 1, 1});
  }
  return x;
}

Discriminator::Discriminator(DiscriminatorKind k)
    : kind(k), params(make_discriminator_params(k)) {}

Tensor Discriminator::operator()(const Tensor& condition, const Tensor& candidate) const {
  return discriminator_forward(condition, candidate, params, kind);
}

}  // namespace stgan
