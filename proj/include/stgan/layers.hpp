#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "stgan/rng.hpp"
#include "stgan/tensor.hpp"

namespace stgan {

enum class ParamRole { kWeight, kGain, kBias };

// Named trainable tensors keyed by hierarchical path ("encoder.conv1.weight").
// Iteration is lexicographic by name.
class ParamSet {
 public:
  struct Entry {
    Tensor tensor;
    ParamRole role;
  };

  Tensor add(const std::string& name, Shape shape, ParamRole role);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::vector<std::string> names() const;
  std::vector<Tensor> tensors() const;
  void zero_grad();

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::map<std::string, Entry, std::less<>> entries_;
};

// Sum of element counts.
std::int64_t param_count(const ParamSet& params);

// Weights ~ Normal(0, 0.02), gains 1, biases 0.
void init_params(ParamSet& params, Rng& rng);

inline constexpr double kInstanceNormEps = 1e-5;
inline constexpr double kLayerNormEps = 1e-8;

// x [T, d_in] * W [d_in, d_out] + b [d_out]; an undefined bias is skipped.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
void add_linear(ParamSet& params, const std::string& prefix, std::int64_t d_in,
                std::int64_t d_out, bool with_bias = true);
Tensor linear(const Tensor& x, const ParamSet& params, const std::string& prefix);

// Per (sample, channel) standardization over H x W, no affine.
Tensor instance_norm(const Tensor& x, double eps = kInstanceNormEps);

// Per-row standardization of x [T, d] followed by gain/bias [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);
void add_layer_norm(ParamSet& params, const std::string& prefix, std::int64_t d);
Tensor layer_norm(const Tensor& x, const ParamSet& params, const std::string& prefix);

struct AttentionConfig {
  std::int64_t d_model = 64;
  std::int64_t n_heads = 4;

  std::int64_t d_head() const { return d_model / n_heads; }
  void validate() const;
};

void add_mhsa(ParamSet& params, const std::string& prefix, const AttentionConfig& cfg);

// Bidirectional multi-head self-attention over x [T, d_model].
// Token-axis reductions run over a canonical (lexicographically sorted)
// token order, which makes the op exactly permutation-equivariant in
// floating point. When `attention` is non-null it receives one detached
// [T, T] weight matrix per head, in the caller's token order.
Tensor mhsa(const Tensor& x, const ParamSet& params, const std::string& prefix,
            const AttentionConfig& cfg, std::vector<Tensor>* attention = nullptr);

void add_transformer_block(ParamSet& params, const std::string& prefix,
                           const AttentionConfig& cfg);

// Pre-norm residual block: x + mhsa(ln1(x)), then + mlp(ln2(x)),
// mlp = linear(d -> 2d), relu, linear(2d -> d).
Tensor transformer_block(const Tensor& x, const ParamSet& params,
                         const std::string& prefix, const AttentionConfig& cfg);

// Fixed sinusoidal encoding [h*w, d_model], row-major over positions. The
// first d_model/2 channels encode the row index, the rest the column index;
// within each half channel 2i is sin(p / 10000^(2i/half)) and 2i+1 its cos.
Tensor positional_encoding_2d(std::int64_t h, std::int64_t w, std::int64_t d_model);

}  // namespace stgan
