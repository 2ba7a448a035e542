#include "stgan/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <type_traits>

#include "stgan/errors.hpp"
#include "stgan/losses.hpp"
#include "stgan/ops.hpp"

namespace stgan {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(LoopKind kind) {
  switch (kind) {
    case LoopKind::kNone: return "none";
    case LoopKind::kGan: return "gan";
    case LoopKind::kCycleGan: return "cyclegan";
  }
  return "?";
}

LoopKind parse_loop_kind(const std::string& name) {
  if (name == "none") return LoopKind::kNone;
  if (name == "gan") return LoopKind::kGan;
  if (name == "cyclegan") return LoopKind::kCycleGan;
  throw ConfigError("unknown loop kind '" + name + "' (expected none, gan or cyclegan)");
}

void TrainConfig::validate() const {
  adam().validate();
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (max_iterations < 0) throw ConfigError("train: max_iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(lambda_seg >= 0) || !(lambda_cyc >= 0)) throw ConfigError("train: lambdas must be >= 0");
  if (checkpoint_interval < 0) throw ConfigError("train: checkpoint_interval must be >= 0");
}

// TrainLog -----------------------------------------------------------------

void TrainLog::append(const TrainRecord& record) {
  if (!records_.empty() && record.iteration <= records_.back().iteration) {
    throw std::invalid_argument("TrainLog: iteration " + std::to_string(record.iteration) +
                                " does not follow " + std::to_string(records_.back().iteration));
  }
  records_.push_back(record);
}

std::string TrainLog::csv_header(LoopKind loop) {
  return loop == LoopKind::kCycleGan
             ? "iteration,loss_G,loss_D,loss_cycle,loss_G2,loss_D2,seconds\n"
             : "iteration,loss_G,loss_D,seconds\n";
}

std::string TrainLog::to_csv(LoopKind loop) const {
  std::string out = csv_header(loop);
  char buf[256];
  for (const auto& r : records_) {
    // %.17g round-trips doubles exactly.
    if (loop == LoopKind::kCycleGan) {
      std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n",
                    static_cast<long long>(r.iteration), r.loss_g, r.loss_d, r.loss_cycle,
                    r.loss_g2, r.loss_d2, r.seconds);
    } else {
      std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.3f\n",
                    static_cast<long long>(r.iteration), r.loss_g, r.loss_d, r.seconds);
    }
    out += buf;
  }
  return out;
}

void TrainLog::write_csv(const fs::path& path, LoopKind loop) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << to_csv(loop);
  out.close();
  if (!out) throw IoError("write failed: " + path.string());
}

// State --------------------------------------------------------------------

GeneratorConfig inverse_generator_config(const GeneratorConfig& gcfg) {
  GeneratorConfig inv = gcfg;
  std::swap(inv.in_channels, inv.out_channels);
  return inv;
}

DiscriminatorKind inverse_discriminator_kind(const DiscriminatorKind& dkind) {
  DiscriminatorKind inv = dkind;
  std::swap(inv.candidate_channels, inv.condition_channels);
  return inv;
}

TrainingState make_training_state(LoopKind loop, const GeneratorConfig& gcfg,
                                  const DiscriminatorKind& dkind, std::uint64_t seed) {
  TrainingState s{loop,
                  Generator(gcfg),
                  Discriminator(dkind),
                  Generator(inverse_generator_config(gcfg)),
                  Discriminator(inverse_discriminator_kind(dkind)),
                  {}, {}, {}, {}, 0};
  Rng rg = Rng::derive(seed, 1);
  init_params(s.g.params, rg);
  s.opt_g = make_adam_state(s.g.params);
  if (s.has_discriminator()) {
    Rng rd = Rng::derive(seed, 2);
    init_params(s.d.params, rd);
    s.opt_d = make_adam_state(s.d.params);
  } else {
    s.d.params = ParamSet{};
  }
  if (s.has_cycle()) {
    Rng rg2 = Rng::derive(seed, 3);
    Rng rd2 = Rng::derive(seed, 4);
    init_params(s.g2.params, rg2);
    init_params(s.d2.params, rd2);
    s.opt_g2 = make_adam_state(s.g2.params);
    s.opt_d2 = make_adam_state(s.d2.params);
  } else {
    s.g2.params = ParamSet{};
    s.d2.params = ParamSet{};
  }
  return s;
}

// Training -----------------------------------------------------------------

namespace {

double checked(const Tensor& loss, const char* term, std::int64_t iteration) {
  const double v = loss.item();
  if (!std::isfinite(v)) {
    throw NonFiniteError("iteration " + std::to_string(iteration) + ": " + term +
                         " is not finite (" + std::to_string(v) + ")");
  }
  return v;
}

void descend(const Tensor& loss, ParamSet& params, AdamState& opt, const AdamConfig& adam) {
  params.zero_grad();
  loss.backward();
  adam_step(params, opt, adam);
}

}  // namespace

TrainRecord train_step(TrainingState& s, const Batch& batch, const TrainConfig& cfg) {
  const std::int64_t it = s.iteration + 1;
  const AdamConfig adam = cfg.adam();
  const Tensor& x = batch.images;
  const Tensor& y = batch.masks;
  TrainRecord rec;
  rec.iteration = it;
  try {
    if (s.loop == LoopKind::kNone) {
      const Tensor pred = s.g(x);
      const Tensor loss_g = supervised_loss(pred, y) * cfg.lambda_seg;
      rec.loss_g = checked(loss_g, "loss_G", it);
      descend(loss_g, s.g.params, s.opt_g, adam);
    } else if (s.loop == LoopKind::kGan) {
      const Tensor pred = s.g(x);
      const Tensor loss_d = discriminator_loss(s.d, x, y, pred.detach());
      rec.loss_d = checked(loss_d, "loss_D", it);
      descend(loss_d, s.d.params, s.opt_d, adam);

      const Tensor loss_g =
          adversarial_loss(s.d, x, pred) + supervised_loss(pred, y) * cfg.lambda_seg;
      rec.loss_g = checked(loss_g, "loss_G", it);
      s.d.params.zero_grad();
      descend(loss_g, s.g.params, s.opt_g, adam);
    } else {
      const Tensor fake_mask = s.g(x);
      const Tensor fake_image = s.g2(y);
      const Tensor loss_d1 = discriminator_loss(s.d, x, y, fake_mask.detach());
      const Tensor loss_d2 = discriminator_loss(s.d2, y, x, fake_image.detach());
      rec.loss_d = checked(loss_d1, "loss_D", it);
      rec.loss_d2 = checked(loss_d2, "loss_D2", it);
      descend(loss_d1, s.d.params, s.opt_d, adam);
      descend(loss_d2, s.d2.params, s.opt_d2, adam);

      const Tensor adv1 = adversarial_loss(s.d, x, fake_mask);
      const Tensor adv2 = adversarial_loss(s.d2, y, fake_image);
      const Tensor cycle =
          (l1_loss(s.g2(fake_mask), x) + l1_loss(s.g(fake_image), y)) * cfg.lambda_cyc;
      const Tensor sup = supervised_loss(fake_mask, y) * cfg.lambda_seg;
      const Tensor loss_g1 = adv1 + cycle + sup;
      const Tensor loss_g2 = adv2 + cycle;
      rec.loss_cycle = checked(cycle, "loss_cycle", it);
      rec.loss_g = checked(loss_g1, "loss_G", it);
      rec.loss_g2 = checked(loss_g2, "loss_G2", it);
      // Both generators descend on the joint objective; the shared cycle term
      // is counted once.
      const Tensor total = adv1 + adv2 + cycle + sup;
      s.g.params.zero_grad();
      s.g2.params.zero_grad();
      total.backward();
      adam_step(s.g.params, s.opt_g, adam);
      adam_step(s.g2.params, s.opt_g2, adam);
      s.d.params.zero_grad();
      s.d2.params.zero_grad();
    }
  } catch (const NonFiniteError& e) {
    const std::string what = e.what();
    if (what.rfind("iteration ", 0) == 0) throw;
    throw NonFiniteError("iteration " + std::to_string(it) + ": " + what);
  }
  s.iteration = it;
  return rec;
}

std::int64_t iterations_per_epoch(std::size_t samples, std::int64_t batch_size) {
  const auto n = static_cast<std::int64_t>(samples);
  return (n + batch_size - 1) / batch_size;
}

TrainLog train(TrainingState& state, const std::vector<Sample>& train_set,
               const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("train: dataset is empty");
  if (state.loop != cfg.loop) {
    throw ConfigError("train: state built for loop " + to_string(state.loop) +
                      ", config requests " + to_string(cfg.loop));
  }
  const std::int64_t per_epoch = iterations_per_epoch(train_set.size(), cfg.batch_size);
  std::int64_t target = cfg.epochs * per_epoch;
  if (cfg.max_iterations > 0) target = std::min(target, cfg.max_iterations);

  TrainLog log;
  const auto start = std::chrono::steady_clock::now();
  while (state.iteration < target) {
    const std::int64_t epoch = state.iteration / per_epoch;
    Rng order_rng = Rng::derive(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch));
    const auto order = epoch_order(train_set.size(), cfg.batch_size, order_rng);
    for (auto b = static_cast<std::size_t>(state.iteration % per_epoch);
         b < order.size() && state.iteration < target; ++b) {
      const Batch batch = stack_samples(train_set, order[b]);
      TrainRecord rec = train_step(state, batch, cfg);
      if (!cfg.deterministic) {
        rec.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      }
      log.append(rec);
      if (hooks.on_record) hooks.on_record(rec);
      if (cfg.checkpoint_interval > 0 && state.iteration % cfg.checkpoint_interval == 0 &&
          hooks.on_checkpoint) {
        hooks.on_checkpoint(state);
      }
    }
  }
  return log;
}

// Checkpoints ----------------------------------------------------------------

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  put_u64(out, bits);
}

double get_f64(const unsigned char* p) {
  const std::uint64_t bits = get_u64(p);
  double d;
  std::memcpy(&d, &bits, sizeof d);
  return d;
}

constexpr std::size_t kMagicLen = 6;

template <class P, class O>
struct NetRef {
  const char* name;
  P* params;
  O* opt;
};

// The networks a state actually carries, in checkpoint order.
template <class State>
auto nets(State& s) {
  using P = std::remove_reference_t<decltype((s.g.params))>;
  using O = std::remove_reference_t<decltype((s.opt_g))>;
  std::vector<NetRef<P, O>> out{{"g", &s.g.params, &s.opt_g}};
  if (s.has_discriminator()) out.push_back({"d", &s.d.params, &s.opt_d});
  if (s.has_cycle()) {
    out.push_back({"g2", &s.g2.params, &s.opt_g2});
    out.push_back({"d2", &s.d2.params, &s.opt_d2});
  }
  return out;
}

}  // namespace

std::string encode_checkpoint(const CheckpointData& data) {
  json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["iteration"] = data.iteration;
  manifest["config"] = data.config;
  manifest["optimizer_steps"] = data.optimizer_steps;
  json entries = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : data.tensors) {
    if (static_cast<std::int64_t>(t.values.size()) != shape_numel(t.shape)) {
      throw ShapeError("checkpoint: tensor " + t.name + " has " + std::to_string(t.values.size()) +
                       " values for shape " + shape_str(t.shape));
    }
    entries.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.values.size() * sizeof(double);
  }
  manifest["tensors"] = entries;
  const std::string header = manifest.dump();
  std::string out(kCheckpointMagic);
  put_u64(out, header.size());
  out += header;
  out.reserve(out.size() + offset);
  for (const auto& t : data.tensors)
    for (double v : t.values) put_f64(out, v);
  return out;
}

CheckpointData decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagicLen || bytes.substr(0, 5) != "STGAN") {
    throw BadMagicError("checkpoint: missing STGAN magic");
  }
  if (bytes.substr(0, kMagicLen) != kCheckpointMagic) {
    if (std::isdigit(static_cast<unsigned char>(bytes[5]))) {
      throw VersionMismatchError("checkpoint: format version " + std::string(1, bytes[5]) +
                                 " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
    }
    throw BadMagicError("checkpoint: missing STGAN magic");
  }
  if (bytes.size() < kMagicLen + 8) throw TruncatedError("checkpoint: header length missing");
  const auto* base = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t header_len = get_u64(base + kMagicLen);
  const std::size_t header_start = kMagicLen + 8;
  if (bytes.size() - header_start < header_len) throw TruncatedError("checkpoint: header truncated");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(header_start, header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: unreadable manifest: ") + e.what());
  }
  CheckpointData data;
  try {
    if (manifest.at("format_version").get<int>() != kCheckpointVersion) {
      throw VersionMismatchError("checkpoint: manifest format version " +
                                 manifest.at("format_version").dump() + " is not supported");
    }
    data.iteration = manifest.at("iteration").get<std::int64_t>();
    data.config = manifest.at("config");
    data.optimizer_steps = manifest.at("optimizer_steps").get<std::map<std::string, std::int64_t>>();
    const std::size_t payload = header_start + header_len;
    for (const auto& e : manifest.at("tensors")) {
      NamedTensor t;
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      const std::int64_t numel = shape_numel(t.shape);
      if (numel < 0) throw FormatError("checkpoint: bad shape for " + t.name);
      const std::uint64_t nbytes = static_cast<std::uint64_t>(numel) * sizeof(double);
      if (offset > bytes.size() - payload || nbytes > bytes.size() - payload - offset) {
        throw TruncatedError("checkpoint: payload for " + t.name + " is truncated");
      }
      t.values.resize(static_cast<std::size_t>(numel));
      for (std::size_t i = 0; i < t.values.size(); ++i)
        t.values[i] = get_f64(base + payload + offset + i * sizeof(double));
      data.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  return data;
}

void write_checkpoint(const fs::path& path, const CheckpointData& data) {
  const std::string bytes = encode_checkpoint(data);
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw IoError("write failed: " + path.string());
}

CheckpointData read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

CheckpointData snapshot(const TrainingState& state, const json& config) {
  CheckpointData data;
  data.iteration = state.iteration;
  data.config = config;
  for (const auto& net : nets(state)) {
    const std::string n = net.name;
    data.optimizer_steps[n] = net.opt->step;
    for (const auto& [pname, entry] : *net.params) {
      const auto v = entry.tensor.data();
      data.tensors.push_back({n + "/" + pname, entry.tensor.shape(), {v.begin(), v.end()}});
    }
    for (const auto& [pname, mom] : net.opt->moments) {
      data.tensors.push_back({n + ".adam_m/" + pname, mom.shape, mom.m});
      data.tensors.push_back({n + ".adam_v/" + pname, mom.shape, mom.v});
    }
  }
  return data;
}

void restore(TrainingState& state, const CheckpointData& data) {
  // Expected layout, built from the state itself.
  const CheckpointData expected = snapshot(state, json::object());
  std::map<std::string, const NamedTensor*> found;
  for (const auto& t : data.tensors) {
    if (!found.emplace(t.name, &t).second) {
      throw NameMismatchError("checkpoint: duplicate tensor " + t.name);
    }
  }
  std::set<std::string> wanted;
  for (const auto& t : expected.tensors) {
    wanted.insert(t.name);
    auto it = found.find(t.name);
    if (it == found.end()) throw NameMismatchError("checkpoint: missing tensor " + t.name);
    if (it->second->shape != t.shape) {
      throw NameMismatchError("checkpoint: tensor " + t.name + " has shape " +
                              shape_str(it->second->shape) + ", model expects " +
                              shape_str(t.shape));
    }
  }
  for (const auto& [name, t] : found) {
    if (!wanted.count(name)) throw NameMismatchError("checkpoint: unexpected tensor " + name);
  }
  for (const auto& [net, step] : expected.optimizer_steps) {
    if (!data.optimizer_steps.count(net)) {
      throw NameMismatchError("checkpoint: no optimizer step for network " + net);
    }
  }
  if (data.optimizer_steps.size() != expected.optimizer_steps.size()) {
    throw NameMismatchError("checkpoint: optimizer networks do not match the model");
  }

  // Everything validated; copy.
  for (const auto& net : nets(state)) {
    const std::string n = net.name;
    net.opt->step = data.optimizer_steps.at(n);
    for (const auto& [pname, entry] : *net.params) {
      const auto& src = found.at(n + "/" + pname)->values;
      Tensor param = entry.tensor;
      auto dst = param.mutable_data();
      std::copy(src.begin(), src.end(), dst.begin());
    }
    for (auto& [pname, mom] : net.opt->moments) {
      mom.m = found.at(n + ".adam_m/" + pname)->values;
      mom.v = found.at(n + ".adam_v/" + pname)->values;
    }
  }
  state.iteration = data.iteration;
}

void save_checkpoint(const fs::path& path, const TrainingState& state, const json& config) {
  write_checkpoint(path, snapshot(state, config));
}

void load_checkpoint(const fs::path& path, TrainingState& state) {
  restore(state, read_checkpoint(path));
}

}  // namespace stgan
