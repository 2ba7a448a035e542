#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stgan/data.hpp"
#include "stgan/models.hpp"
#include "stgan/optim.hpp"

namespace stgan {

// none: generator alone on the supervised loss. gan: one G, one D.
// cyclegan: G1 image->mask, G2 mask->image, D1 on masks, D2 on images.
enum class LoopKind { kNone, kGan, kCycleGan };

std::string to_string(LoopKind kind);
LoopKind parse_loop_kind(const std::string& name);

struct TrainConfig {
  LoopKind loop = LoopKind::kGan;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t epochs = 10;
  // Stops early once this many iterations have run in total (0 = no cap).
  std::int64_t max_iterations = 0;
  std::int64_t batch_size = 8;
  double lambda_seg = 100.0;
  double lambda_cyc = 10.0;
  std::uint64_t seed = 0;
  // Wall-clock columns are written as 0 so logs are byte-reproducible.
  bool deterministic = true;
  std::filesystem::path checkpoint_dir;
  std::int64_t checkpoint_interval = 0;  // iterations; 0 disables

  AdamConfig adam() const { return {learning_rate, beta1, beta2, eps}; }
  void validate() const;
};

struct TrainRecord {
  std::int64_t iteration = 0;
  double loss_g = 0.0;
  double loss_d = 0.0;
  // CycleGAN only.
  double loss_cycle = 0.0;
  double loss_g2 = 0.0;
  double loss_d2 = 0.0;
  double seconds = 0.0;
};

class TrainLog {
 public:
  // Throws std::invalid_argument unless iterations strictly increase.
  void append(const TrainRecord& record);
  const std::vector<TrainRecord>& records() const { return records_; }
  bool empty() const { return records_.empty(); }

  static std::string csv_header(LoopKind loop);
  std::string to_csv(LoopKind loop) const;
  void write_csv(const std::filesystem::path& path, LoopKind loop) const;

 private:
  std::vector<TrainRecord> records_;
};

// Networks and optimizer state for one run. g2/d2 are only populated for
// cyclegan, d only for gan and cyclegan.
struct TrainingState {
  LoopKind loop = LoopKind::kGan;
  Generator g;
  Discriminator d;
  Generator g2;
  Discriminator d2;
  AdamState opt_g;
  AdamState opt_d;
  AdamState opt_g2;
  AdamState opt_d2;
  std::int64_t iteration = 0;

  bool has_discriminator() const { return loop != LoopKind::kNone; }
  bool has_cycle() const { return loop == LoopKind::kCycleGan; }
};

// Fresh networks initialized from seed-derived streams.
TrainingState make_training_state(LoopKind loop, const GeneratorConfig& gcfg,
                                  const DiscriminatorKind& dkind, std::uint64_t seed);

// Reverse the mask-domain roles for G2 / D2.
GeneratorConfig inverse_generator_config(const GeneratorConfig& gcfg);
DiscriminatorKind inverse_discriminator_kind(const DiscriminatorKind& dkind);

// One D step then one G step on a batch; returns the logged losses.
TrainRecord train_step(TrainingState& state, const Batch& batch, const TrainConfig& cfg);

struct TrainHooks {
  // Called with each record after it is logged.
  std::function<void(const TrainRecord&)> on_record;
  // Called at checkpoint_interval boundaries; the default writes nothing.
  std::function<void(const TrainingState&)> on_checkpoint;
};

// Continues from state.iteration until cfg.epochs full epochs (or
// cfg.max_iterations) have run. Epoch e uses the batch order drawn from
// Rng::derive(cfg.seed, 1000 + e), so a resumed run replays the same batches as an
// uninterrupted one.
TrainLog train(TrainingState& state, const std::vector<Sample>& train_set,
               const TrainConfig& cfg, const TrainHooks& hooks = {});

std::int64_t iterations_per_epoch(std::size_t samples, std::int64_t batch_size);

// Checkpoints ----------------------------------------------------------------

inline constexpr const char* kCheckpointMagic = "STGAN1";
inline constexpr int kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

// Decoded checkpoint contents: "STGAN1", a little-endian uint64 header
// length, a JSON manifest, then raw little-endian doubles.
struct CheckpointData {
  std::int64_t iteration = 0;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::int64_t> optimizer_steps;
  std::vector<NamedTensor> tensors;
};

std::string encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(std::string_view bytes);
void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

// Parameters are named "<net>/<param>", Adam moments "<net>.adam_m/<param>"
// and "<net>.adam_v/<param>", with nets g, d, g2, d2.
CheckpointData snapshot(const TrainingState& state, const nlohmann::json& config);
// Copies every tensor into an already-built state. The name set and shapes
// must match exactly; otherwise NameMismatchError and nothing is modified.
void restore(TrainingState& state, const CheckpointData& data);

void save_checkpoint(const std::filesystem::path& path, const TrainingState& state,
                     const nlohmann::json& config);
void load_checkpoint(const std::filesystem::path& path, TrainingState& state);

}  // namespace stgan
