#include "stgan/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stgan/errors.hpp"
#include "stgan/ops.hpp"

namespace stgan {

using detail::grad_buffer;
using detail::TensorImpl;

Tensor ParamSet::add(const std::string& name, Shape shape, ParamRole role) {
  if (entries_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Tensor t = Tensor::zeros(std::move(shape), true);
  entries_.emplace(name, Entry{t, role});
  return t;
}

const Tensor& ParamSet::at(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw NameMismatchError("unknown parameter: " + std::string(name));
  }
  return it->second.tensor;
}

bool ParamSet::contains(std::string_view name) const {
  return entries_.find(name) != entries_.end();
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, entry] : entries_) out.push_back(name);
  return out;
}

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [name, entry] : entries_) out.push_back(entry.tensor);
  return out;
}

void ParamSet::zero_grad() {
  for (auto& [name, entry] : entries_) {
    Tensor t = entry.tensor;
    t.zero_grad();
  }
}

std::int64_t param_count(const ParamSet& params) {
  std::int64_t n = 0;
  for (const auto& [name, entry] : params) n += entry.tensor.numel();
  return n;
}

void init_params(ParamSet& params, Rng& rng) {
  for (const auto& [name, entry] : params) {
    Tensor t = entry.tensor;
    auto values = t.mutable_data();
    switch (entry.role) {
      case ParamRole::kWeight:
        for (auto& v : values) v = rng.normal(0.0, 0.02);
        break;
      case ParamRole::kGain:
        std::fill(values.begin(), values.end(), 1.0);
        break;
      case ParamRole::kBias:
        std::fill(values.begin(), values.end(), 0.0);
        break;
    }
  }
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  const Tensor product = matmul(x, weight);
  return bias.defined() ? bias_add(product, bias) : product;
}

void add_linear(ParamSet& params, const std::string& prefix, std::int64_t d_in,
                std::int64_t d_out, bool with_bias) {
  params.add(prefix + ".weight", {d_in, d_out}, ParamRole::kWeight);
  if (with_bias) params.add(prefix + ".bias", {d_out}, ParamRole::kBias);
}

Tensor linear(const Tensor& x, const ParamSet& params, const std::string& prefix) {
  const std::string bias = prefix + ".bias";
  return linear(x, params.at(prefix + ".weight"),
                params.contains(bias) ? params.at(bias) : Tensor{});
}

namespace {

// Standardizes `count` contiguous groups of length `len`. Returns xhat and
// the per-group inverse standard deviation.
void standardize(const double* in, std::int64_t count, std::int64_t len, double eps,
                 double* xhat, std::vector<double>& inv_std) {
  inv_std.resize(static_cast<std::size_t>(count));
  for (std::int64_t g = 0; g < count; ++g) {
    const double* src = in + g * len;
    double total = 0.0;
    double lo = src[0];
    double hi = src[0];
    for (std::int64_t i = 0; i < len; ++i) {
      total += src[i];
      lo = std::min(lo, src[i]);
      hi = std::max(hi, src[i]);
    }
    // A constant group has exactly zero spread; avoid a rounded mean.
    const double mu = lo == hi ? lo : total / static_cast<double>(len);
    double var = 0.0;
    for (std::int64_t i = 0; i < len; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(len);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(g)] = inv;
    double* dst = xhat + g * len;
    for (std::int64_t i = 0; i < len; ++i) dst[i] = (src[i] - mu) * inv;
  }
}

// dx = inv/N * (N*dxhat - sum(dxhat) - xhat * sum(dxhat * xhat)), accumulated.
void standardize_backward(const double* dxhat, const double* xhat, std::int64_t count,
                          std::int64_t len, const std::vector<double>& inv_std,
                          double* dx) {
  const double n = static_cast<double>(len);
  for (std::int64_t g = 0; g < count; ++g) {
    const double* dy = dxhat + g * len;
    const double* xh = xhat + g * len;
    double s1 = 0.0;
    double s2 = 0.0;
    for (std::int64_t i = 0; i < len; ++i) {
      s1 += dy[i];
      s2 += dy[i] * xh[i];
    }
    const double scale = inv_std[static_cast<std::size_t>(g)] / n;
    double* out = dx + g * len;
    for (std::int64_t i = 0; i < len; ++i) out[i] += scale * (n * dy[i] - s1 - xh[i] * s2);
  }
}

}  // namespace

Tensor instance_norm(const Tensor& x, double eps) {
  if (x.rank() != 4) {
    throw ShapeError("instance_norm: expected [B,C,H,W], got " + shape_str(x.shape()));
  }
  const std::int64_t groups = x.dim(0) * x.dim(1);
  const std::int64_t len = x.dim(2) * x.dim(3);
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  std::vector<double> inv_std;
  standardize(x.data().data(), groups, len, eps, out.data(), inv_std);
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [groups, len, inv_std = std::move(inv_std)](TensorImpl& self) {
        standardize_backward(self.grad.data(), self.value.data(), groups, len, inv_std,
                             grad_buffer(*self.inputs[0]).data());
      },
      "instance_norm");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() != 2 || gain.rank() != 1 || bias.rank() != 1 ||
      gain.dim(0) != x.dim(1) || bias.dim(0) != x.dim(1)) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()) + ", gain " +
                     shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
  }
  const std::int64_t rows = x.dim(0);
  const std::int64_t d = x.dim(1);
  std::vector<double> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<double> inv_std;
  standardize(x.data().data(), rows, d, eps, xhat.data(), inv_std);
  std::vector<double> out(xhat.size());
  const auto g = gain.data();
  const auto b = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto c = i % static_cast<std::size_t>(d);
    out[i] = xhat[i] * g[c] + b[c];
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& self) {
        TensorImpl& ix = *self.inputs[0];
        TensorImpl& ig = *self.inputs[1];
        TensorImpl& ib = *self.inputs[2];
        const auto ud = static_cast<std::size_t>(d);
        if (ig.requires_grad) {
          auto& gg = grad_buffer(ig);
          for (std::size_t i = 0; i < xhat.size(); ++i) gg[i % ud] += self.grad[i] * xhat[i];
        }
        if (ib.requires_grad) {
          auto& gb = grad_buffer(ib);
          for (std::size_t i = 0; i < xhat.size(); ++i) gb[i % ud] += self.grad[i];
        }
        if (ix.requires_grad) {
          std::vector<double> dxhat(xhat.size());
          for (std::size_t i = 0; i < xhat.size(); ++i)
            dxhat[i] = self.grad[i] * ig.value[i % ud];
          standardize_backward(dxhat.data(), xhat.data(), rows, d, inv_std,
                               grad_buffer(ix).data());
        }
      },
      "layer_norm");
}

void add_layer_norm(ParamSet& params, const std::string& prefix, std::int64_t d) {
  params.add(prefix + ".gain", {d}, ParamRole::kGain);
  params.add(prefix + ".bias", {d}, ParamRole::kBias);
}

Tensor layer_norm(const Tensor& x, const ParamSet& params, const std::string& prefix) {
  return layer_norm(x, params.at(prefix + ".gain"), params.at(prefix + ".bias"));
}

void AttentionConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0) {
    throw ConfigError("attention: d_model and n_heads must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("attention: n_heads " + std::to_string(n_heads) +
                      " does not divide d_model " + std::to_string(d_model));
  }
}

void add_mhsa(ParamSet& params, const std::string& prefix, const AttentionConfig& cfg) {
  cfg.validate();
  // A key bias shifts every logit of a query row equally, which softmax
  // cancels, so the key projection has none.
  for (const char* proj : {"q", "k", "v", "o"})
    add_linear(params, prefix + "." + proj, cfg.d_model, cfg.d_model, proj[0] != 'k');
}

namespace {

// Stable lexicographic order of the rows of x [T, d].
std::vector<std::int64_t> canonical_row_order(const Tensor& x) {
  const std::int64_t t = x.dim(0);
  const std::int64_t d = x.dim(1);
  const double* v = x.data().data();
  std::vector<std::int64_t> order(static_cast<std::size_t>(t));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [v, d](std::int64_t a, std::int64_t b) {
    return std::lexicographical_compare(v + a * d, v + (a + 1) * d, v + b * d,
                                        v + (b + 1) * d);
  });
  return order;
}

}  // namespace

Tensor mhsa(const Tensor& x, const ParamSet& params, const std::string& prefix,
            const AttentionConfig& cfg, std::vector<Tensor>* attention) {
  cfg.validate();
  if (x.rank() != 2 || x.dim(1) != cfg.d_model) {
    throw ShapeError("mhsa: expected [T, " + std::to_string(cfg.d_model) + "], got " +
                     shape_str(x.shape()));
  }
  const std::int64_t tokens = x.dim(0);
  const std::vector<std::int64_t> order = canonical_row_order(x);
  std::vector<std::int64_t> inverse(order.size());
  bool identity = true;
  for (std::size_t i = 0; i < order.size(); ++i) {
    inverse[static_cast<std::size_t>(order[i])] = static_cast<std::int64_t>(i);
    identity = identity && order[i] == static_cast<std::int64_t>(i);
  }
  const Tensor xc = identity ? x : take_rows(x, order);

  const Tensor q = linear(xc, params, prefix + ".q");
  const Tensor k = linear(xc, params, prefix + ".k");
  const Tensor v = linear(xc, params, prefix + ".v");
  const std::int64_t dk = cfg.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(cfg.n_heads));
  if (attention) attention->clear();
  for (std::int64_t h = 0; h < cfg.n_heads; ++h) {
    const Tensor qh = slice(q, 1, h * dk, dk);
    const Tensor kh = slice(k, 1, h * dk, dk);
    const Tensor vh = slice(v, 1, h * dk, dk);
    const Tensor weights = softmax(matmul(qh, transpose(kh)) * scale, 1);
    heads.push_back(matmul(weights, vh));
    if (attention) {
      const auto w = weights.data();
      std::vector<double> original(w.size());
      for (std::int64_t i = 0; i < tokens; ++i)
        for (std::int64_t j = 0; j < tokens; ++j)
          original[static_cast<std::size_t>(i * tokens + j)] =
              w[static_cast<std::size_t>(inverse[static_cast<std::size_t>(i)] * tokens +
                                         inverse[static_cast<std::size_t>(j)])];
      attention->push_back(Tensor::from({tokens, tokens}, std::move(original)));
    }
  }
  const Tensor merged = heads.size() == 1 ? heads[0] : concat(heads, 1);
  const Tensor out = linear(merged, params, prefix + ".o");
  return identity ? out : take_rows(out, inverse);
}

void add_transformer_block(ParamSet& params, const std::string& prefix,
                           const AttentionConfig& cfg) {
  add_layer_norm(params, prefix + ".ln1", cfg.d_model);
  add_mhsa(params, prefix + ".attn", cfg);
  add_layer_norm(params, prefix + ".ln2", cfg.d_model);
  add_linear(params, prefix + ".mlp.fc1", cfg.d_model, 2 * cfg.d_model);
  add_linear(params, prefix + ".mlp.fc2", 2 * cfg.d_model, cfg.d_model);
}

Tensor transformer_block(const Tensor& x, const ParamSet& params,
                         const std::string& prefix, const AttentionConfig& cfg) {
  const Tensor attended =
      x + mhsa(layer_norm(x, params, prefix + ".ln1"), params, prefix + ".attn", cfg);
  const Tensor hidden =
      relu(linear(layer_norm(attended, params, prefix + ".ln2"), params, prefix + ".mlp.fc1"));
  return attended + linear(hidden, params, prefix + ".mlp.fc2");
}

Tensor positional_encoding_2d(std::int64_t h, std::int64_t w, std::int64_t d_model) {
  if (h < 1 || w < 1) throw ShapeError("positional_encoding_2d: empty grid");
  if (d_model <= 0 || d_model % 4 != 0) {
    throw ConfigError("positional_encoding_2d: d_model " + std::to_string(d_model) +
                      " must be a positive multiple of 4");
  }
  const std::int64_t half = d_model / 2;
  std::vector<double> freq(static_cast<std::size_t>(half / 2));
  for (std::int64_t i = 0; i < half / 2; ++i) {
    freq[static_cast<std::size_t>(i)] =
        1.0 / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(half));
  }
  std::vector<double> out(static_cast<std::size_t>(h * w * d_model));
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) {
      double* row = out.data() + (r * w + c) * d_model;
      for (std::int64_t i = 0; i < half / 2; ++i) {
        const double f = freq[static_cast<std::size_t>(i)];
        row[2 * i] = std::sin(static_cast<double>(r) * f);
        row[2 * i + 1] = std::cos(static_cast<double>(r) * f);
        row[half + 2 * i] = std::sin(static_cast<double>(c) * f);
        row[half + 2 * i + 1] = std::cos(static_cast<double>(c) * f);
      }
    }
  }
  return Tensor::from({h * w, d_model}, std::move(out));
}

}  // namespace stgan
