#pragma once

#include <cstdint>
#include <string>

#include "stgan/layers.hpp"
#include "stgan/tensor.hpp"

namespace stgan {

// Convolutional transformer generator: strided conv encoder, transformer
// core over the downsampled feature tokens, transposed-conv decoder and a
// sigmoid head.
struct GeneratorConfig {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t base_channels = 16;
  int downsample_stages = 2;
  int transformer_blocks = 2;
  std::int64_t n_heads = 4;

  // Token width of the transformer core, base_channels * 2^downsample_stages.
  std::int64_t d_model() const { return base_channels << downsample_stages; }
  AttentionConfig attention() const { return {d_model(), n_heads}; }
  std::int64_t spatial_divisor() const { return std::int64_t{1} << downsample_stages; }
  void validate() const;
};

struct Generator {
  GeneratorConfig config;
  ParamSet params;

  explicit Generator(GeneratorConfig cfg = {});
  // image [B, in_channels, H, W] -> probabilities [B, out_channels, H, W].
  Tensor operator()(const Tensor& image) const;
};

ParamSet make_generator_params(const GeneratorConfig& cfg);
Tensor generator_forward(const Tensor& image, const ParamSet& params,
                         const GeneratorConfig& cfg);

enum class DiscriminatorVariant { kWholeImage, kPatch, kPixel };

struct DiscriminatorKind {
  DiscriminatorVariant variant = DiscriminatorVariant::kPixel;
  // Target receptive field for kPatch (and the stack used by kWholeImage).
  int patch_size = 16;
  // Conditional discriminators score (condition ⊕ candidate); otherwise the
  // candidate alone.
  bool conditional = true;
  std::int64_t candidate_channels = 1;
  std::int64_t condition_channels = 1;

  std::int64_t input_channels() const {
    return candidate_channels + (conditional ? condition_channels : 0);
  }
  // Number of stride-2 3x3 layers; their receptive field is 2^(k+1) - 1.
  int patch_depth() const;
  void validate() const;
};

std::string to_string(DiscriminatorVariant variant);
DiscriminatorVariant parse_discriminator_variant(const std::string& name);

struct Discriminator {
  DiscriminatorKind kind;
  ParamSet params;

  explicit Discriminator(DiscriminatorKind k = {});
  Tensor operator()(const Tensor& condition, const Tensor& candidate) const;
};

ParamSet make_discriminator_params(const DiscriminatorKind& kind);

// Raw logits. condition/candidate [B, *, H, W]. Pixel -> [B,1,H,W];
// Patch -> [B,1,H/2^k,W/2^k]; WholeImage -> [B,1,1,1].
Tensor discriminator_forward(const Tensor& condition, const Tensor& candidate,
                             const ParamSet& params, const DiscriminatorKind& kind);

}  // namespace stgan
