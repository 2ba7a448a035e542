#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "commands.hpp"
#include "run_config.hpp"
#include "stgan/data.hpp"
#include "stgan/errors.hpp"
#include "stgan/training.hpp"

namespace stgan::cli {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("stgan_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

// Small, fast run rooted in `dir`: 16x16 phantoms, narrow generator.
RunConfig tiny_config(const fs::path& dir) {
  RunConfig cfg;
  cfg.data.root = dir / "data";
  cfg.data.count = 6;
  cfg.data.phantom.size = 16;
  cfg.model.generator.base_channels = 4;
  cfg.model.generator.n_heads = 2;
  cfg.model.discriminator.patch_size = 8;
  cfg.train.batch_size = 2;
  cfg.train.epochs = 1;
  cfg.train.checkpoint_dir = dir / "run";
  cfg.eval.output_dir = dir / "eval";
  return cfg;
}

fs::path write_config(const fs::path& dir, const RunConfig& cfg) {
  const fs::path path = dir / "config.json";
  write_text(path, to_json(cfg).dump(2));
  return path;
}

TEST(RunConfigJson, DefaultsAreValidAndRoundTrip) {
  const RunConfig defaults;
  EXPECT_NO_THROW(defaults.validate());
  const auto j = to_json(defaults);
  EXPECT_EQ(to_json(parse_run_config(j)), j);
  EXPECT_EQ(to_json(parse_run_config_text("{}")), j);
}

TEST(RunConfigJson, EditedConfigIsFixedPoint) {
  RunConfig cfg = tiny_config("/tmp/x");
  cfg.train.loop = LoopKind::kCycleGan;
  cfg.train.lambda_cyc = 3.5;
  cfg.model.discriminator.variant = DiscriminatorVariant::kWholeImage;
  cfg.eval.postprocess.connectivity = 8;
  const auto once = to_json(parse_run_config(to_json(cfg)));
  EXPECT_EQ(to_json(parse_run_config(once)), once);
  EXPECT_EQ(once, to_json(cfg));
}

TEST(RunConfigJson, StrictKeysAndTypes) {
  EXPECT_THROW((void)parse_run_config_text(R"({"train": {"learnig_rate": 1e-3}})"), ConfigError);
  EXPECT_THROW((void)parse_run_config_text(R"({"extra": 1})"), ConfigError);
  EXPECT_THROW((void)parse_run_config_text(R"({"train": {"epochs": "ten"}})"), ConfigError);
  EXPECT_THROW((void)parse_run_config_text(R"({"train": {"loop": "wgan"}})"), ConfigError);
  EXPECT_THROW(parse_run_config_text(R"({"train": {"learning_rate": -1}})").validate(), ConfigError);
  try {
    (void)parse_run_config_text(R"({"model": {"generator": {"depth": 3}}})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.generator.depth"), std::string::npos);
  }
}

TEST(CliExitCodes, ConfigAndIoFailures) {
  const fs::path dir = scratch_dir("codes");
  write_text(dir / "bad.json", R"({"train": {"unknown_knob": 1}})");
  EXPECT_EQ(cli({"--config", (dir / "bad.json").string(), "config"}).code, kExitConfig);
  write_text(dir / "broken.json", "{not json");
  EXPECT_EQ(cli({"--config", (dir / "broken.json").string(), "config"}).code, kExitConfig);
  EXPECT_EQ(cli({"--config", (dir / "missing.json").string(), "config"}).code, kExitIo);
  EXPECT_EQ(cli({"no-such-verb"}).code, kExitConfig);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
  const auto shown = cli({"config"});
  EXPECT_EQ(shown.code, kExitOk);
  EXPECT_EQ(to_json(parse_run_config_text(shown.out)), to_json(RunConfig{}));
}

TEST(CliGenerate, WritesSplitAndIsReproducible) {
  const fs::path dir = scratch_dir("generate");
  const RunConfig cfg = tiny_config(dir);
  const std::string config = write_config(dir, cfg).string();
  ASSERT_EQ(cli({"--config", config, "generate-data", "--count", "2", "--out",
                 (dir / "a").string()}).code,
            kExitOk);
  const DatasetSplit two = read_split(dir / "a");
  EXPECT_EQ(two.train.size(), 1u);
  EXPECT_EQ(two.test.size(), 1u);

  ASSERT_EQ(cli({"--config", config, "generate-data", "--count", "131", "--out",
                 (dir / "b").string()}).code,
            kExitOk);
  ASSERT_EQ(cli({"--config", config, "generate-data", "--count", "131", "--out",
                 (dir / "c").string()}).code,
            kExitOk);
  const DatasetSplit full = read_split(dir / "b");
  EXPECT_EQ(full.train.size(), 95u);
  EXPECT_EQ(full.test.size(), 36u);
  EXPECT_EQ(file_bytes(dir / "b" / kSplitManifestName), file_bytes(dir / "c" / kSplitManifestName));
  for (const char* id : {"phantom_0000", "phantom_0130"}) {
    EXPECT_TRUE(file_bytes(dir / "b" / "images" / (std::string(id) + ".pgm")) ==
                file_bytes(dir / "c" / "images" / (std::string(id) + ".pgm")));
    EXPECT_TRUE(file_bytes(dir / "b" / "masks" / (std::string(id) + ".pgm")) ==
                file_bytes(dir / "c" / "masks" / (std::string(id) + ".pgm")));
  }
  EXPECT_EQ(cli({"--config", config, "generate-data", "--count", "1"}).code, kExitConfig);
}

class CliRun : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    cfg_ = tiny_config(dir_);
  }
  std::string config() { return write_config(dir_, cfg_).string(); }
  Outcome run(std::vector<std::string> args) {
    args.insert(args.begin(), {"--config", config()});
    return cli(args);
  }

  fs::path dir_;
  RunConfig cfg_;
};

TEST_F(CliRun, DeterministicTrainingIsByteIdentical) {
  ASSERT_EQ(run({"generate-data"}).code, kExitOk);
  cfg_.train.checkpoint_interval = 2;
  std::string logs[2], ckpts[2], interval[2];
  // Same run directory both times: the checkpoint embeds the config, paths included.
  for (int rep = 0; rep < 2; ++rep) {
    fs::remove_all(cfg_.train.checkpoint_dir);
    const auto r = run({"train", "--loop", "gan", "--max-iterations", "3"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    logs[rep] = file_bytes(train_log_path(cfg_.train.checkpoint_dir));
    ckpts[rep] = file_bytes(final_checkpoint_path(cfg_.train.checkpoint_dir));
    interval[rep] = file_bytes(interval_checkpoint_path(cfg_.train.checkpoint_dir, 2));
  }
  EXPECT_FALSE(logs[0].empty());
  EXPECT_TRUE(logs[0] == logs[1]);
  EXPECT_TRUE(ckpts[0] == ckpts[1]);
  EXPECT_TRUE(interval[0] == interval[1]);
}

TEST_F(CliRun, LoopTopologies) {
  ASSERT_EQ(run({"generate-data"}).code, kExitOk);
  const std::pair<const char*, std::set<std::string>> expect[] = {
      {"none", {"g"}}, {"gan", {"g", "d"}}, {"cyclegan", {"g", "d", "g2", "d2"}}};
  for (const auto& [loop, nets] : expect) {
    cfg_.train.checkpoint_dir = dir_ / loop;
    ASSERT_EQ(run({"train", "--loop", loop, "--max-iterations", "1"}).code, kExitOk) << loop;
    const CheckpointData data = read_checkpoint(final_checkpoint_path(cfg_.train.checkpoint_dir));
    std::set<std::string> seen;
    for (const auto& t : data.tensors) {
      const std::string net = t.name.substr(0, t.name.find('/'));
      if (net.find(".adam") == std::string::npos) seen.insert(net);
    }
    EXPECT_EQ(seen, nets) << loop;
  }
}

TEST_F(CliRun, ResumeContinuesLog) {
  ASSERT_EQ(run({"generate-data"}).code, kExitOk);
  cfg_.train.epochs = 2;
  cfg_.train.checkpoint_interval = 2;
  cfg_.train.checkpoint_dir = dir_ / "full";
  ASSERT_EQ(run({"train"}).code, kExitOk);
  const std::string full_log = file_bytes(train_log_path(dir_ / "full"));

  cfg_.train.checkpoint_dir = dir_ / "resumed";
  ASSERT_EQ(run({"train", "--max-iterations", "2"}).code, kExitOk);
  const auto r = run({"train", "--resume", interval_checkpoint_path(dir_ / "resumed", 2).string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(file_bytes(train_log_path(dir_ / "resumed")), full_log);
  const CheckpointData a = read_checkpoint(final_checkpoint_path(dir_ / "resumed"));
  const CheckpointData b = read_checkpoint(final_checkpoint_path(dir_ / "full"));
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    EXPECT_TRUE(a.tensors[i].values == b.tensors[i].values) << a.tensors[i].name;
}

TEST_F(CliRun, EvalAndPredict) {
  ASSERT_EQ(run({"generate-data"}).code, kExitOk);
  ASSERT_EQ(run({"train", "--loop", "none", "--max-iterations", "2"}).code, kExitOk);

  const auto e = run({"eval", "--split", "test"});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  EXPECT_EQ(std::count(e.out.begin(), e.out.end(), ','), 2);
  EXPECT_NE(e.err.find("without post-processing"), std::string::npos);
  EXPECT_TRUE(fs::exists(cfg_.eval.output_dir / kRawReportName));
  EXPECT_TRUE(fs::exists(cfg_.eval.output_dir / kPostprocessedReportName));
  EXPECT_EQ(run({"eval", "--split", "validation"}).code, kExitConfig);
  EXPECT_EQ(run({"eval", "--checkpoint", (dir_ / "nope.ckpt").string()}).code, kExitIo);

  const std::string ckpt = final_checkpoint_path(cfg_.train.checkpoint_dir).string();
  const std::string image = (cfg_.data.root / "images" / "phantom_0000.pgm").string();
  const std::string gt = (cfg_.data.root / "masks" / "phantom_0000.pgm").string();
  const fs::path m1 = dir_ / "m1.pgm", m2 = dir_ / "m2.pgm";
  const auto p = run({"predict", "--checkpoint", ckpt, "--image", image, "--out-mask",
                      m1.string(), "--gt", gt, "--overlay", (dir_ / "o.ppm").string()});
  ASSERT_EQ(p.code, kExitOk) << p.err;
  ASSERT_EQ(run({"predict", "--checkpoint", ckpt, "--image", image, "--out-mask", m2.string()}).code,
            kExitOk);
  EXPECT_TRUE(file_bytes(m1) == file_bytes(m2));
  EXPECT_NO_THROW((void)load_mask_pgm(m1));
  EXPECT_EQ(file_bytes(dir_ / "o.ppm").substr(0, 2), "P6");

  write_pgm(dir_ / "odd.pgm", PgmImage{10, 16, 255, std::vector<std::uint16_t>(160, 3)});
  EXPECT_EQ(run({"predict", "--checkpoint", ckpt, "--image", (dir_ / "odd.pgm").string(),
                 "--out-mask", (dir_ / "m3.pgm").string()})
                .code,
            kExitConfig);
}

TEST_F(CliRun, NonFiniteLossExitsThree) {
  ASSERT_EQ(run({"generate-data"}).code, kExitOk);
  cfg_.train.learning_rate = 1e300;
  cfg_.train.epochs = 5;
  const auto r = run({"train", "--loop", "gan"});
  EXPECT_EQ(r.code, kExitNumeric) << r.err;
  EXPECT_NE(r.err.find("iteration"), std::string::npos) << r.err;
}

// A width-4, no-downsample, no-attention generator whose only live path is
// image -> channel 0 -> instance norm -> relu -> head. On binary images it
// reproduces the input mask exactly; with a negative head bias and zero
// head weights it predicts nothing.
fs::path handmade_checkpoint(const fs::path& dir, RunConfig cfg, bool perfect) {
  cfg.model.generator.base_channels = 4;
  cfg.model.generator.downsample_stages = 0;
  cfg.model.generator.transformer_blocks = 0;
  cfg.model.generator.n_heads = 1;
  cfg.train.loop = LoopKind::kNone;
  TrainingState s = make_training_state(LoopKind::kNone, cfg.model.generator,
                                        cfg.model.discriminator, 0);
  for (const auto& [name, entry] : s.g.params) {
    Tensor t = entry.tensor;
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  }
  Tensor enc = s.g.params.at("enc0.conv.weight");  // [4, 1, 7, 7]
  Tensor head = s.g.params.at("head.conv.weight");  // [1, 4, 7, 7]
  Tensor bias = s.g.params.at("head.conv.bias");
  enc.mutable_data()[3 * 7 + 3] = 1.0;
  if (perfect) head.mutable_data()[3 * 7 + 3] = 1000.0;
  bias.mutable_data()[0] = -1.0;
  const fs::path path = dir / (perfect ? "perfect.ckpt" : "empty.ckpt");
  save_checkpoint(path, s, to_json(cfg));
  return path;
}

TEST_F(CliRun, PerfectAndEmptyPredictorConventions) {
  // Images equal their masks, so the handmade network can be exact.
  std::vector<Sample> samples;
  Rng rng(4);
  for (int i = 0; i < 4; ++i) {
    Sample s = generate_phantom(rng, cfg_.data.phantom, phantom_id(i));
    s.image = s.mask;
    samples.push_back(s);
  }
  write_dataset(cfg_.data.root, samples, {{"phantom_0000", "phantom_0001"},
                                          {"phantom_0002", "phantom_0003"}});
  const auto good = run({"eval", "--checkpoint", handmade_checkpoint(dir_, cfg_, true).string()});
  ASSERT_EQ(good.code, kExitOk) << good.err;
  EXPECT_EQ(good.out, "1.0000,1.0000,1.0000\n");
  const auto none = run({"eval", "--checkpoint", handmade_checkpoint(dir_, cfg_, false).string()});
  ASSERT_EQ(none.code, kExitOk) << none.err;
  EXPECT_EQ(none.out, "0.0000,0.0000,0.0000\n");
}

TEST(CliGradcheck, ExitCodes) {
  const auto ok = cli({"gradcheck", "--filter", "conv2d_1x1"});
  EXPECT_EQ(ok.code, kExitOk) << ok.out;
  EXPECT_NE(ok.out.find("conv2d_1x1"), std::string::npos);
  const auto bad = cli({"gradcheck", "--fault-fixture", "--filter", "fault"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}

TEST(CliExperiment, TableFormat) {
  ExperimentRow a;
  a.method = method_name(LoopKind::kGan);
  a.loop = LoopKind::kGan;
  a.postprocessed.dice = 0.94334;
  a.postprocessed.precision = 0.9376;
  a.postprocessed.recall = 0.95149;
  const std::string table = format_experiment_table({a});
  EXPECT_NE(table.find("Transformer-GAN"), std::string::npos);
  EXPECT_NE(table.find("0.9433"), std::string::npos);
  EXPECT_NE(table.find("0.9376"), std::string::npos);
  EXPECT_NE(table.find("0.9515"), std::string::npos);
  EXPECT_EQ(method_name(LoopKind::kNone), "Transformer");
  EXPECT_EQ(method_name(LoopKind::kCycleGan), "Transformer-CycleGAN");
}

}  // namespace
}  // namespace stgan::cli
