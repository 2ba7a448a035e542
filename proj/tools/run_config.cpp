#include "run_config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <type_traits>

#include "stgan/errors.hpp"

namespace stgan::cli {

using nlohmann::json;

namespace {

// Reads the keys of one JSON object, remembering which were consumed so the
// rest can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + ": expected an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    const json& v = *it;
    const std::string where = path_.empty() ? key : path_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw ConfigError(where + ": expected a non-negative integer");
      }
      out = v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
      const auto wide = v.get<std::int64_t>();
      if (wide < std::numeric_limits<T>::min() || wide > std::numeric_limits<T>::max()) {
        throw ConfigError(where + ": out of range");
      }
      out = static_cast<T>(wide);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
      out = v.get<double>();
    } else if constexpr (std::is_same_v<T, std::filesystem::path> ||
                         std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
      out = v.get<std::string>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    const auto it = j_.find(key);
    return Section(it == j_.end() ? empty : *it, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) {
        throw ConfigError("unknown config key '" + (path_.empty() ? key : path_ + "." + key) +
                          "'");
      }
    }
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_phantom(Section s, PhantomConfig& p) {
  s.get("size", p.size);
  s.get("min_axis_fraction", p.min_axis_fraction);
  s.get("max_axis_fraction", p.max_axis_fraction);
  s.get("center_jitter", p.center_jitter);
  s.get("max_rotation", p.max_rotation);
  s.get("min_lobes", p.min_lobes);
  s.get("max_lobes", p.max_lobes);
  s.get("min_offset", p.min_offset);
  s.get("max_offset", p.max_offset);
  s.get("min_base", p.min_base);
  s.get("max_base", p.max_base);
  s.get("noise_sigma", p.noise_sigma);
  s.get("blur_width", p.blur_width);
  s.get("min_foreground", p.min_foreground);
  s.get("max_foreground", p.max_foreground);
  s.get("max_attempts", p.max_attempts);
  s.finish();
}

json phantom_json(const PhantomConfig& p) {
  return {{"size", p.size},
          {"min_axis_fraction", p.min_axis_fraction},
          {"max_axis_fraction", p.max_axis_fraction},
          {"center_jitter", p.center_jitter},
          {"max_rotation", p.max_rotation},
          {"min_lobes", p.min_lobes},
          {"max_lobes", p.max_lobes},
          {"min_offset", p.min_offset},
          {"max_offset", p.max_offset},
          {"min_base", p.min_base},
          {"max_base", p.max_base},
          {"noise_sigma", p.noise_sigma},
          {"blur_width", p.blur_width},
          {"min_foreground", p.min_foreground},
          {"max_foreground", p.max_foreground},
          {"max_attempts", p.max_attempts}};
}

template <class F>
auto parse_named(const std::string& where, const std::string& value, F parse) {
  try {
    return parse(value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  if (data.count < 2) throw ConfigError("data.count must be at least 2");
  if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) {
    throw ConfigError("data.train_fraction must lie in (0, 1)");
  }
  data.phantom.validate();
  model.generator.validate();
  model.discriminator.validate();
  train.validate();
  if (!(eval.threshold > 0.0 && eval.threshold < 1.0)) {
    throw ConfigError("eval.threshold must lie in (0, 1)");
  }
  if (eval.postprocess.connectivity != 4 && eval.postprocess.connectivity != 8) {
    throw ConfigError("eval.connectivity must be 4 or 8");
  }
  if (data.phantom.size % model.generator.spatial_divisor() != 0) {
    throw ConfigError("data.phantom.size must be divisible by " +
                      std::to_string(model.generator.spatial_divisor()));
  }
}

RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  Section root(j, "");

  Section data = root.child("data");
  data.get("root", cfg.data.root);
  data.get("count", cfg.data.count);
  data.get("train_fraction", cfg.data.train_fraction);
  data.get("seed", cfg.data.seed);
  read_phantom(data.child("phantom"), cfg.data.phantom);
  data.finish();

  Section model = root.child("model");
  Section gen = model.child("generator");
  gen.get("base_channels", cfg.model.generator.base_channels);
  gen.get("downsample_stages", cfg.model.generator.downsample_stages);
  gen.get("transformer_blocks", cfg.model.generator.transformer_blocks);
  gen.get("n_heads", cfg.model.generator.n_heads);
  gen.finish();
  Section disc = model.child("discriminator");
  std::string variant = to_string(cfg.model.discriminator.variant);
  disc.get("variant", variant);
  cfg.model.discriminator.variant =
      parse_named("model.discriminator.variant", variant, parse_discriminator_variant);
  disc.get("patch_size", cfg.model.discriminator.patch_size);
  disc.get("conditional", cfg.model.discriminator.conditional);
  disc.finish();
  model.finish();

  Section train = root.child("train");
  std::string loop = to_string(cfg.train.loop);
  train.get("loop", loop);
  cfg.train.loop = parse_named("train.loop", loop, parse_loop_kind);
  train.get("learning_rate", cfg.train.learning_rate);
  train.get("beta1", cfg.train.beta1);
  train.get("beta2", cfg.train.beta2);
  train.get("eps", cfg.train.eps);
  train.get("epochs", cfg.train.epochs);
  train.get("max_iterations", cfg.train.max_iterations);
  train.get("batch_size", cfg.train.batch_size);
  train.get("lambda_seg", cfg.train.lambda_seg);
  train.get("lambda_cyc", cfg.train.lambda_cyc);
  train.get("seed", cfg.train.seed);
  train.get("deterministic", cfg.train.deterministic);
  train.get("checkpoint_dir", cfg.train.checkpoint_dir);
  train.get("checkpoint_interval", cfg.train.checkpoint_interval);
  train.finish();

  Section eval = root.child("eval");
  eval.get("threshold", cfg.eval.threshold);
  eval.get("largest_component", cfg.eval.postprocess.largest_component);
  eval.get("fill_holes", cfg.eval.postprocess.fill_holes);
  eval.get("connectivity", cfg.eval.postprocess.connectivity);
  eval.get("output_dir", cfg.eval.output_dir);
  eval.get("overlays", cfg.eval.overlays);
  eval.finish();

  root.finish();
  return cfg;
}

RunConfig parse_run_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_run_config(j);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config_text(text.str());
}

json to_json(const RunConfig& cfg) {
  const auto& g = cfg.model.generator;
  const auto& d = cfg.model.discriminator;
  const auto& t = cfg.train;
  const auto& e = cfg.eval;
  return {
      {"data",
       {{"root", cfg.data.root.string()},
        {"count", cfg.data.count},
        {"train_fraction", cfg.data.train_fraction},
        {"seed", cfg.data.seed},
        {"phantom", phantom_json(cfg.data.phantom)}}},
      {"model",
       {{"generator",
         {{"base_channels", g.base_channels},
          {"downsample_stages", g.downsample_stages},
          {"transformer_blocks", g.transformer_blocks},
          {"n_heads", g.n_heads}}},
        {"discriminator",
         {{"variant", to_string(d.variant)},
          {"patch_size", d.patch_size},
          {"conditional", d.conditional}}}}},
      {"train",
       {{"loop", to_string(t.loop)},
        {"learning_rate", t.learning_rate},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"eps", t.eps},
        {"epochs", t.epochs},
        {"max_iterations", t.max_iterations},
        {"batch_size", t.batch_size},
        {"lambda_seg", t.lambda_seg},
        {"lambda_cyc", t.lambda_cyc},
        {"seed", t.seed},
        {"deterministic", t.deterministic},
        {"checkpoint_dir", t.checkpoint_dir.string()},
        {"checkpoint_interval", t.checkpoint_interval}}},
      {"eval",
       {{"threshold", e.threshold},
        {"largest_component", e.postprocess.largest_component},
        {"fill_holes", e.postprocess.fill_holes},
        {"connectivity", e.postprocess.connectivity},
        {"output_dir", e.output_dir.string()},
        {"overlays", e.overlays}}}};
}

}  // namespace stgan::cli
