#include "stgan/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>

#include "stgan/losses.hpp"
#include "stgan/models.hpp"
#include "stgan/ops.hpp"

namespace stgan {

using detail::grad_buffer;
using detail::TensorImpl;

void randomize_for_gradcheck(ParamSet& params, Rng& rng) {
  for (const auto& [name, entry] : params) {
    Tensor t = entry.tensor;
    const Shape& s = t.shape();
    const double fan_in =
        s.size() >= 2 ? static_cast<double>(t.numel() / s[0]) : static_cast<double>(s[0]);
    for (double& v : t.mutable_data()) {
      switch (entry.role) {
        case ParamRole::kWeight: v = rng.normal(0.0, 1.0 / std::sqrt(fan_in)); break;
        case ParamRole::kGain: v = 1.0 + rng.normal(0.0, 0.1); break;
        case ParamRole::kBias: v = rng.normal(0.0, 0.1); break;
      }
    }
  }
}

Tensor random_projection(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> r(static_cast<std::size_t>(t.numel()));
  for (double& v : r) v = rng.normal();
  return mean(t * Tensor::from(t.shape(), std::move(r)));
}

namespace {

constexpr double kPrimitiveTol = 1e-5;
constexpr double kExactTol = 1e-6;
constexpr double kCompositeTol = 1e-4;

Tensor random_leaf(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor random_mask(Shape shape, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform() < 0.4 ? 1.0 : 0.0;
  return Tensor::from(std::move(shape), std::move(v));
}

std::vector<Tensor> concat_params(std::initializer_list<const ParamSet*> sets,
                                  std::vector<std::string>& names, const char* const* tags) {
  std::vector<Tensor> out;
  std::size_t i = 0;
  for (const ParamSet* set : sets) {
    for (const auto& [name, entry] : *set) {
      out.push_back(entry.tensor);
      names.push_back(std::string(tags[i]) + "/" + name);
    }
    ++i;
  }
  return out;
}

// Single- or multi-input check with a random projection of the op output.
template <class F>
GradCheckCase op_case(std::string name, std::string group, double tol, std::uint64_t seed,
                      F make) {
  return {name, std::move(group), tol, [make, seed, name] {
            Rng rng(seed);
            auto [inputs, f] = make(rng);
            return finite_diff_check([&] { return random_projection(f(), seed + 1); }, inputs,
                                     {}, {});
          }};
}

using Inputs = std::vector<Tensor>;
using Fn = std::function<Tensor()>;

// x*x with a backward rule off by 1%: the suite's negative control.
Tensor faulty_square(const Tensor& x) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * in[i];
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [](TensorImpl& self) {
        TensorImpl& src = *self.inputs[0];
        auto& g = grad_buffer(src);
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += self.grad[i] * 2.02 * src.value[i];
      },
      "faulty_square");
}

void add_primitives(std::vector<GradCheckCase>& cases) {
  auto unary = [&](const char* name, double tol, auto op, double lo = -1.0, double hi = 1.0) {
    cases.push_back(op_case(name, "primitive", tol, 11, [op, lo, hi](Rng& rng) {
      Tensor x = random_leaf({3, 4}, rng, lo, hi);
      return std::pair<Inputs, Fn>{{x}, [x, op] { return op(x); }};
    }));
  };
  auto binary = [&](const char* name, auto op, double blo = -1.0, double bhi = 1.0) {
    cases.push_back(op_case(name, "primitive", kPrimitiveTol, 12, [op, blo, bhi](Rng& rng) {
      Tensor a = random_leaf({3, 4}, rng);
      Tensor b = random_leaf({3, 4}, rng, blo, bhi);
      return std::pair<Inputs, Fn>{{a, b}, [a, b, op] { return op(a, b); }};
    }));
  };
  binary("add", [](const Tensor& a, const Tensor& b) { return a + b; });
  binary("sub", [](const Tensor& a, const Tensor& b) { return a - b; });
  binary("mul", [](const Tensor& a, const Tensor& b) { return a * b; });
  binary("div", [](const Tensor& a, const Tensor& b) { return a / b; }, 0.5, 2.0);
  cases.push_back(op_case("scalar_broadcast", "primitive", kPrimitiveTol, 13, [](Rng& rng) {
    Tensor a = random_leaf({3, 4}, rng);
    Tensor s = random_leaf({}, rng, 0.5, 1.5);
    return std::pair<Inputs, Fn>{{a, s}, [a, s] { return a * s + s - a / s; }};
  }));
  unary("add_scalar", kPrimitiveTol, [](const Tensor& x) { return x + 0.7; });
  unary("mul_scalar", kPrimitiveTol, [](const Tensor& x) { return x * -1.3; });
  unary("rsub_scalar", kPrimitiveTol, [](const Tensor& x) { return 2.0 - x; });
  unary("neg", kPrimitiveTol, [](const Tensor& x) { return -x; });
  unary("square", kExactTol, [](const Tensor& x) { return x * x; });
  unary("exp", kPrimitiveTol, [](const Tensor& x) { return exp(x); });
  unary("log", kPrimitiveTol, [](const Tensor& x) { return log(x); }, 0.2, 2.0);
  unary("sigmoid", kPrimitiveTol, [](const Tensor& x) { return sigmoid(x); }, -4.0, 4.0);
  unary("relu", kPrimitiveTol, [](const Tensor& x) { return relu(x); });
  unary("leaky_relu", kPrimitiveTol, [](const Tensor& x) { return leaky_relu(x, 0.2); });
  unary("abs", kPrimitiveTol, [](const Tensor& x) { return abs(x); });
  unary("power", kPrimitiveTol, [](const Tensor& x) { return power(x, 2.5); }, 0.2, 2.0);
  unary("softmax_axis0", kPrimitiveTol, [](const Tensor& x) { return softmax(x, 0); }, -3, 3);
  unary("softmax_axis1", kPrimitiveTol, [](const Tensor& x) { return softmax(x, 1); }, -3, 3);
  unary("sum", kPrimitiveTol, [](const Tensor& x) { return sum(x) * x; });
  unary("sum_axis", kPrimitiveTol, [](const Tensor& x) { return sum(x * x, 1, true); });
  unary("mean", kPrimitiveTol, [](const Tensor& x) { return mean(x) * x; });
  unary("mean_axis", kPrimitiveTol, [](const Tensor& x) { return mean(x * x, 0); });
  unary("reshape", kPrimitiveTol, [](const Tensor& x) { return reshape(x * x, {2, 6}); });
  unary("transpose", kPrimitiveTol, [](const Tensor& x) { return transpose(x * x); });
  unary("slice", kPrimitiveTol, [](const Tensor& x) { return slice(x * x, 1, 1, 2); });
  unary("take_rows", kPrimitiveTol, [](const Tensor& x) {
    const std::int64_t rows[] = {2, 0, 2, 1};
    return take_rows(x * x, rows);
  });
  cases.push_back(op_case("concat", "primitive", kPrimitiveTol, 14, [](Rng& rng) {
    Tensor a = random_leaf({2, 1, 3, 3}, rng);
    Tensor b = random_leaf({2, 2, 3, 3}, rng);
    return std::pair<Inputs, Fn>{{a, b}, [a, b] { return concat({a * a, b}, 1); }};
  }));
  cases.push_back(op_case("bias_add", "primitive", kPrimitiveTol, 15, [](Rng& rng) {
    Tensor x = random_leaf({4, 5}, rng);
    Tensor b = random_leaf({5}, rng);
    return std::pair<Inputs, Fn>{{x, b}, [x, b] { return bias_add(x, b); }};
  }));
  cases.push_back(op_case("matmul", "primitive", kExactTol, 16, [](Rng& rng) {
    Tensor a = random_leaf({3, 5}, rng);
    Tensor b = random_leaf({5, 4}, rng);
    return std::pair<Inputs, Fn>{{a, b}, [a, b] { return matmul(a, b); }};
  }));
  struct ConvSetup {
    const char* name;
    Shape x, w;
    Conv2dOptions opt;
    bool transpose;
  };
  for (const ConvSetup& c : {ConvSetup{"conv2d", {1, 1, 6, 6}, {2, 1, 3, 3}, {1, 0, 0}, false},
                             ConvSetup{"conv2d_stride2_pad1", {2, 3, 6, 6}, {4, 3, 3, 3}, {2, 1, 0}, false},
                             ConvSetup{"conv2d_7x7", {1, 2, 8, 8}, {1, 2, 7, 7}, {1, 3, 0}, false},
                             ConvSetup{"conv2d_1x1", {2, 3, 4, 4}, {5, 3, 1, 1}, {1, 0, 0}, false},
                             ConvSetup{"conv2d_transpose", {2, 3, 4, 4}, {3, 2, 3, 3}, {2, 1, 1}, true}}) {
    cases.push_back(op_case(c.name, "primitive", kPrimitiveTol, 17, [c](Rng& rng) {
      Tensor x = random_leaf(c.x, rng);
      Tensor w = random_leaf(c.w, rng);
      Tensor b = random_leaf({c.transpose ? c.w[1] : c.w[0]}, rng);
      return std::pair<Inputs, Fn>{{x, w, b}, [x, w, b, c] {
        return c.transpose ? conv2d_transpose(x, w, b, c.opt) : conv2d(x, w, b, c.opt);
      }};
    }));
  }
}

void add_layers(std::vector<GradCheckCase>& cases) {
  cases.push_back(op_case("linear", "layer", kExactTol, 21, [](Rng& rng) {
    Tensor x = random_leaf({4, 6}, rng);
    Tensor w = random_leaf({6, 3}, rng);
    Tensor b = random_leaf({3}, rng);
    return std::pair<Inputs, Fn>{{x, w, b}, [x, w, b] { return linear(x, w, b); }};
  }));
  cases.push_back(op_case("instance_norm", "layer", kPrimitiveTol, 22, [](Rng& rng) {
    Tensor x = random_leaf({2, 3, 4, 4}, rng);
    return std::pair<Inputs, Fn>{{x}, [x] { return instance_norm(x); }};
  }));
  cases.push_back(op_case("layer_norm", "layer", kPrimitiveTol, 23, [](Rng& rng) {
    Tensor x = random_leaf({5, 8}, rng);
    Tensor g = random_leaf({8}, rng, 0.5, 1.5);
    Tensor b = random_leaf({8}, rng);
    return std::pair<Inputs, Fn>{{x, g, b}, [x, g, b] { return layer_norm(x, g, b); }};
  }));
  auto block_case = [&](const char* name, bool full_block) {
    cases.push_back(op_case(name, "layer", kCompositeTol, 24, [full_block](Rng& rng) {
      const AttentionConfig cfg{16, 4};
      auto params = std::make_shared<ParamSet>();
      if (full_block) {
        add_transformer_block(*params, "blk", cfg);
      } else {
        add_mhsa(*params, "attn", cfg);
      }
      randomize_for_gradcheck(*params, rng);
      Tensor x = random_leaf({6, 16}, rng);
      Inputs inputs = params->tensors();
      inputs.push_back(x);
      return std::pair<Inputs, Fn>{inputs, [params, x, cfg, full_block] {
        return full_block ? transformer_block(x, *params, "blk", cfg)
                          : mhsa(x, *params, "attn", cfg);
      }};
    }));
  };
  block_case("mhsa", false);
  block_case("transformer_block", true);
  cases.push_back(op_case("positional_encoding_add", "layer", kPrimitiveTol, 25, [](Rng& rng) {
    Tensor x = random_leaf({6, 8}, rng);
    const Tensor pe = positional_encoding_2d(2, 3, 8);
    return std::pair<Inputs, Fn>{{x}, [x, pe] { return (x + pe) * x; }};
  }));
}

void add_models(std::vector<GradCheckCase>& cases) {
  cases.push_back(op_case("generator", "model", kCompositeTol, 31, [](Rng& rng) {
    auto g = std::make_shared<Generator>();
    randomize_for_gradcheck(g->params, rng);
    Tensor x = random_leaf({1, 1, 8, 8}, rng, 0.0, 1.0);
    return std::pair<Inputs, Fn>{g->params.tensors(), [g, x] { return (*g)(x); }};
  }));
  struct DiscSetup {
    const char* name;
    DiscriminatorVariant variant;
  };
  for (const DiscSetup& d : {DiscSetup{"discriminator_pixel", DiscriminatorVariant::kPixel},
                             DiscSetup{"discriminator_patch", DiscriminatorVariant::kPatch},
                             DiscSetup{"discriminator_whole", DiscriminatorVariant::kWholeImage}}) {
    cases.push_back(op_case(d.name, "model", kCompositeTol, 32, [d](Rng& rng) {
      DiscriminatorKind kind;
      kind.variant = d.variant;
      kind.patch_size = 8;
      auto disc = std::make_shared<Discriminator>(kind);
      randomize_for_gradcheck(disc->params, rng);
      Tensor image = random_leaf({2, 1, 8, 8}, rng, 0.0, 1.0);
      Tensor mask = random_leaf({2, 1, 8, 8}, rng, 0.0, 1.0);
      Inputs inputs = disc->params.tensors();
      inputs.push_back(image);
      inputs.push_back(mask);
      return std::pair<Inputs, Fn>{inputs, [disc, image, mask] { return (*disc)(image, mask); }};
    }));
  }
}

// A narrow generator keeps the loss-bundle checks, which cover two or four
// networks at once, within the suite's time budget.
GeneratorConfig bundle_generator() {
  GeneratorConfig cfg;
  cfg.base_channels = 4;
  cfg.n_heads = 2;
  return cfg;
}

GradCheckCase loss_case(std::string name, double tol, std::uint64_t seed,
                        std::function<std::pair<Inputs, Fn>(Rng&)> make) {
  return {name, "loss", tol, [make, seed] {
            Rng rng(seed);
            auto [inputs, f] = make(rng);
            return finite_diff_check(f, inputs);
          }};
}

void add_losses(std::vector<GradCheckCase>& cases) {
  cases.push_back(loss_case("bce_with_logits", kPrimitiveTol, 41, [](Rng& rng) {
    Tensor z = random_leaf({2, 1, 3, 3}, rng, -4.0, 4.0);
    Tensor y = random_leaf({2, 1, 3, 3}, rng, 0.0, 1.0);
    return std::pair<Inputs, Fn>{{z, y}, [z, y] { return bce_with_logits(z, y); }};
  }));
  cases.push_back(loss_case("bce_probs", kPrimitiveTol, 42, [](Rng& rng) {
    Tensor p = random_leaf({2, 1, 3, 3}, rng, 0.05, 0.95);
    Tensor y = random_leaf({2, 1, 3, 3}, rng, 0.0, 1.0);
    return std::pair<Inputs, Fn>{{p, y}, [p, y] { return bce_probs(p, y); }};
  }));
  cases.push_back(loss_case("dice_loss", kExactTol, 43, [](Rng& rng) {
    Tensor p = random_leaf({1, 1, 4, 4}, rng, 0.05, 0.95);
    Tensor y = random_mask({1, 1, 4, 4}, rng);
    return std::pair<Inputs, Fn>{{p}, [p, y] { return dice_loss(p, y); }};
  }));
  cases.push_back(loss_case("supervised_loss", kPrimitiveTol, 44, [](Rng& rng) {
    Tensor p = random_leaf({2, 1, 4, 4}, rng, 0.05, 0.95);
    Tensor y = random_mask({2, 1, 4, 4}, rng);
    return std::pair<Inputs, Fn>{{p}, [p, y] { return supervised_loss(p, y); }};
  }));
  cases.push_back(loss_case("l1_loss", kPrimitiveTol, 45, [](Rng& rng) {
    Tensor a = random_leaf({2, 1, 4, 4}, rng);
    Tensor b = random_leaf({2, 1, 4, 4}, rng);
    return std::pair<Inputs, Fn>{{a, b}, [a, b] { return l1_loss(a, b); }};
  }));

  struct GanNets {
    Generator g{bundle_generator()};
    Discriminator d;
    Tensor image, mask;
  };
  auto make_gan = [](Rng& rng) {
    auto n = std::make_shared<GanNets>();
    randomize_for_gradcheck(n->g.params, rng);
    randomize_for_gradcheck(n->d.params, rng);
    n->image = random_leaf({2, 1, 8, 8}, rng, 0.0, 1.0);
    n->mask = random_mask({2, 1, 8, 8}, rng);
    return n;
  };
  // loss_D sees a detached prediction, so it is checked against D alone;
  // loss_G reaches both networks.
  cases.push_back(loss_case("gan_bundle.loss_D", kCompositeTol, 46, [make_gan](Rng& rng) {
    auto n = make_gan(rng);
    return std::pair<Inputs, Fn>{n->d.params.tensors(), [n] {
      return gan_losses(n->g, n->d, n->image, n->mask, 100.0).loss_d;
    }};
  }));
  cases.push_back(loss_case("gan_bundle.loss_G", kCompositeTol, 46, [make_gan](Rng& rng) {
    auto n = make_gan(rng);
    std::vector<std::string> names;
    const char* tags[] = {"g", "d"};
    return std::pair<Inputs, Fn>{concat_params({&n->g.params, &n->d.params}, names, tags), [n] {
      return gan_losses(n->g, n->d, n->image, n->mask, 100.0).loss_g;
    }};
  }));

  struct CycleNets {
    Generator g1{bundle_generator()};
    Generator g2{bundle_generator()};
    Discriminator d1;
    Discriminator d2;
    Tensor image, mask;
  };
  auto make_cycle = [](Rng& rng) {
    auto n = std::make_shared<CycleNets>();
    randomize_for_gradcheck(n->g1.params, rng);
    randomize_for_gradcheck(n->g2.params, rng);
    randomize_for_gradcheck(n->d1.params, rng);
    randomize_for_gradcheck(n->d2.params, rng);
    n->image = random_leaf({1, 1, 8, 8}, rng, 0.0, 1.0);
    n->mask = random_mask({1, 1, 8, 8}, rng);
    return n;
  };
  auto bundle = [](const CycleNets& n) {
    return cyclegan_losses(n.g1, n.g2, n.d1, n.d2, n.image, n.mask, 100.0, 10.0);
  };
  cases.push_back(loss_case("cyclegan_bundle.loss_D", kCompositeTol, 47,
                            [make_cycle, bundle](Rng& rng) {
    auto n = make_cycle(rng);
    std::vector<std::string> names;
    const char* tags[] = {"d1", "d2"};
    return std::pair<Inputs, Fn>{concat_params({&n->d1.params, &n->d2.params}, names, tags),
                                 [n, bundle] {
                                   const auto l = bundle(*n);
                                   return l.loss_d1 + l.loss_d2;
                                 }};
  }));
  cases.push_back(loss_case("cyclegan_bundle.loss_G", kCompositeTol, 47,
                            [make_cycle, bundle](Rng& rng) {
    auto n = make_cycle(rng);
    std::vector<std::string> names;
    const char* tags[] = {"g1", "g2", "d1", "d2"};
    return std::pair<Inputs, Fn>{
        concat_params({&n->g1.params, &n->g2.params, &n->d1.params, &n->d2.params}, names, tags),
        [n, bundle] { return bundle(*n).generator_total; }};
  }));
}

}  // namespace

std::vector<GradCheckCase> gradcheck_registry(bool include_fault_fixture) {
  std::vector<GradCheckCase> cases;
  add_primitives(cases);
  add_layers(cases);
  add_models(cases);
  add_losses(cases);
  if (include_fault_fixture) {
    cases.push_back(op_case("fault_fixture", "primitive", kPrimitiveTol, 99, [](Rng& rng) {
      Tensor x = random_leaf({3, 4}, rng);
      return std::pair<Inputs, Fn>{{x}, [x] { return faulty_square(x); }};
    }));
  }
  return cases;
}

std::vector<GradCheckResult> run_gradcheck(
    const std::vector<GradCheckCase>& cases,
    const std::function<void(const GradCheckResult&)>& on_result) {
  std::vector<GradCheckResult> results;
  for (const auto& c : cases) {
    const auto start = std::chrono::steady_clock::now();
    GradCheckResult r{c.name, c.group, c.tolerance, c.run(), 0.0};
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_result) on_result(r);
    results.push_back(std::move(r));
  }
  return results;
}

std::string format_gradcheck_table(const std::vector<GradCheckResult>& results) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-26s %-9s %12s %9s %9s %8s %8s  %s\n", "op", "group",
                "max_rel_err", "tol", "checked", "excluded", "seconds", "status");
  out += buf;
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%-26s %-9s %12.3e %9.0e %9zu %8zu %8.2f  %s\n",
                  r.name.c_str(), r.group.c_str(), r.report.max_rel_error, r.tolerance,
                  r.report.checked, r.report.excluded, r.seconds, r.passed() ? "PASS" : "FAIL");
    out += buf;
  }
  return out;
}

}  // namespace stgan
