#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "stgan/errors.hpp"
#include "stgan/verify.hpp"

namespace stgan::cli {

namespace fs = std::filesystem;

fs::path train_log_path(const fs::path& run_dir) { return run_dir / "train_log.csv"; }

fs::path final_checkpoint_path(const fs::path& run_dir) { return run_dir / "final.ckpt"; }

fs::path interval_checkpoint_path(const fs::path& run_dir, std::int64_t iteration) {
  char name[64];
  std::snprintf(name, sizeof name, "checkpoint_%06lld.ckpt", static_cast<long long>(iteration));
  return run_dir / name;
}

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

// Header plus the rows of an earlier log up to and including `iteration`.
std::string log_prefix(const fs::path& path, std::int64_t iteration, LoopKind loop) {
  std::string prefix = TrainLog::csv_header(loop);
  if (!fs::exists(path)) return prefix;
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  if (line + "\n" != prefix) {
    throw FormatError(path.string() + ": log header does not match loop " + to_string(loop));
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) > iteration) break;
    prefix += line + "\n";
  }
  return prefix;
}

std::string format_triple(const MetricsReport::Mean& m) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.4f", m.dice, m.precision, m.recall);
  return buf;
}

}  // namespace

DatasetSplit generate_dataset(const RunConfig& cfg, std::int64_t count, const fs::path& root) {
  if (count < 2) throw ConfigError("count must be at least 2");
  const auto samples = generate_phantoms(count, cfg.data.seed, cfg.data.phantom);
  std::vector<std::string> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.id);
  const DatasetSplit split = split_dataset(ids, cfg.data.train_fraction, cfg.data.seed);
  write_dataset(root, samples, split);
  return split;
}

TrainLog run_training(const RunConfig& cfg, const std::optional<fs::path>& resume,
                      std::ostream& progress) {
  cfg.validate();
  const fs::path& run_dir = cfg.train.checkpoint_dir;
  const DatasetSplit split = read_split(cfg.data.root);
  const std::vector<Sample> train_set = load_samples(cfg.data.root, split.train);

  TrainingState state = make_training_state(cfg.train.loop, cfg.model.generator,
                                            cfg.model.discriminator, cfg.train.seed);
  if (resume) load_checkpoint(*resume, state);
  const std::string prefix =
      log_prefix(train_log_path(run_dir), resume ? state.iteration : 0, cfg.train.loop);

  const nlohmann::json config_json = to_json(cfg);
  TrainHooks hooks;
  hooks.on_record = [&](const TrainRecord& r) {
    if (r.iteration % 10 != 0) return;
    char buf[160];
    std::snprintf(buf, sizeof buf, "iter %lld loss_G %.5f loss_D %.5f", static_cast<long long>(r.iteration),
                  r.loss_g, r.loss_d);
    progress << buf;
    if (state.has_cycle()) {
      std::snprintf(buf, sizeof buf, " loss_cycle %.5f loss_G2 %.5f loss_D2 %.5f", r.loss_cycle,
                    r.loss_g2, r.loss_d2);
      progress << buf;
    }
    progress << '\n';
  };
  hooks.on_checkpoint = [&](const TrainingState& s) {
    save_checkpoint(interval_checkpoint_path(run_dir, s.iteration), s, config_json);
  };

  const TrainLog log = train(state, train_set, cfg.train, hooks);
  const std::string csv = log.to_csv(cfg.train.loop);
  write_text(train_log_path(run_dir), prefix + csv.substr(csv.find('\n') + 1));
  save_checkpoint(final_checkpoint_path(run_dir), state, config_json);
  return log;
}

Generator load_generator(const fs::path& checkpoint) {
  const CheckpointData data = read_checkpoint(checkpoint);
  const RunConfig cfg = parse_run_config(data.config);
  TrainingState state =
      make_training_state(cfg.train.loop, cfg.model.generator, cfg.model.discriminator, 0);
  restore(state, data);
  return state.g;
}

std::vector<Tensor> predict_probabilities(const Generator& g, const std::vector<Sample>& samples,
                                          std::int64_t batch_size) {
  NoGradGuard no_grad;
  std::vector<Tensor> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<std::size_t> order;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) {
      order.push_back(i);
    }
    const Batch batch = stack_samples(samples, order);
    const Tensor probs = g(batch.images);
    const Shape& s = probs.shape();
    const std::int64_t plane = s[2] * s[3];
    const auto values = probs.data();
    for (std::size_t b = 0; b < order.size(); ++b) {
      out.push_back(Tensor::from({1, s[2], s[3]},
                                 std::vector<double>(values.begin() + b * plane,
                                                     values.begin() + (b + 1) * plane)));
    }
  }
  return out;
}

EvalReports evaluate(const Generator& g, const std::vector<Sample>& samples,
                     const EvalSection& eval, const std::optional<fs::path>& overlay_dir) {
  const std::vector<Tensor> probs = predict_probabilities(g, samples);
  EvalReports reports;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const BinaryMask gt = to_mask(samples[i].mask);
    const BinaryMask raw = threshold(probs[i], eval.threshold);
    const BinaryMask post = postprocess(raw, eval.postprocess);
    reports.raw.rows.push_back({samples[i].id, metrics(raw, gt)});
    reports.postprocessed.rows.push_back({samples[i].id, metrics(post, gt)});
    if (overlay_dir) {
      write_ppm(*overlay_dir / (samples[i].id + ".ppm"), overlay(samples[i].image, post, gt));
    }
  }
  return reports;
}

std::string method_name(LoopKind loop) {
  switch (loop) {
    case LoopKind::kNone: return "Transformer";
    case LoopKind::kGan: return "Transformer-GAN";
    case LoopKind::kCycleGan: return "Transformer-CycleGAN";
  }
  return "?";
}

std::string format_experiment_table(const std::vector<ExperimentRow>& rows) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-22s %-7s %-10s %-7s\n", "Method", "Dice", "Precision",
                "Recall");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-22s %.4f  %.4f     %.4f\n", r.method.c_str(),
                  r.postprocessed.dice, r.postprocessed.precision, r.postprocessed.recall);
    out += buf;
  }
  return out;
}

std::string format_experiment_csv(const std::vector<ExperimentRow>& rows) {
  std::string out = "method,loop,dice,precision,recall,raw_dice,raw_precision,raw_recall,iterations\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%lld\n",
                  r.method.c_str(), to_string(r.loop).c_str(), r.postprocessed.dice,
                  r.postprocessed.precision, r.postprocessed.recall, r.raw.dice, r.raw.precision,
                  r.raw.recall, static_cast<long long>(r.iterations));
    out += buf;
  }
  return out;
}

std::vector<ExperimentRow> run_experiment(const RunConfig& base, const fs::path& out_dir,
                                          std::ostream& progress) {
  RunConfig cfg = base;
  cfg.data.root = out_dir / "data";
  cfg.validate();
  const DatasetSplit split = generate_dataset(cfg, cfg.data.count, cfg.data.root);
  progress << "phantoms: " << split.train.size() << " train / " << split.test.size()
           << " test\n";
  const std::vector<Sample> test_set = load_samples(cfg.data.root, split.test);

  std::vector<ExperimentRow> rows;
  for (LoopKind loop : {LoopKind::kNone, LoopKind::kGan, LoopKind::kCycleGan}) {
    RunConfig row_cfg = cfg;
    row_cfg.train.loop = loop;
    row_cfg.train.checkpoint_dir = out_dir / to_string(loop);
    row_cfg.eval.output_dir = row_cfg.train.checkpoint_dir / "eval";
    progress << "== " << method_name(loop) << " (loop=" << to_string(loop) << ")\n";

    const auto start = std::chrono::steady_clock::now();
    const TrainLog log = run_training(row_cfg, std::nullopt, progress);
    const Generator g = load_generator(final_checkpoint_path(row_cfg.train.checkpoint_dir));
    const EvalReports reports = evaluate(g, test_set, row_cfg.eval);
    write_report(reports.raw, row_cfg.eval.output_dir / kRawReportName);
    write_report(reports.postprocessed, row_cfg.eval.output_dir / kPostprocessedReportName);

    ExperimentRow row;
    row.method = method_name(loop);
    row.loop = loop;
    row.postprocessed = reports.postprocessed.mean();
    row.raw = reports.raw.mean();
    row.iterations = log.empty() ? 0 : log.records().back().iteration;
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: dice %.4f (raw %.4f) after %lld iterations, %.1f s\n",
                  row.method.c_str(), row.postprocessed.dice, row.raw.dice,
                  static_cast<long long>(row.iterations), row.seconds);
    progress << buf;
    rows.push_back(row);
  }
  write_text(out_dir / "comparison.csv", format_experiment_csv(rows));
  write_text(out_dir / "comparison.txt", format_experiment_table(rows));
  return rows;
}

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  bool nondeterministic = false;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_run_config(g.config_path);
  if (g.seed) {
    cfg.data.seed = *g.seed;
    cfg.train.seed = *g.seed;
  }
  if (g.deterministic && g.nondeterministic) {
    throw ConfigError("--deterministic and --no-deterministic are exclusive");
  }
  if (g.deterministic) cfg.train.deterministic = true;
  if (g.nondeterministic) cfg.train.deterministic = false;
  cfg.validate();
  return cfg;
}

std::vector<Sample> split_samples(const RunConfig& cfg, const std::string& which) {
  const DatasetSplit split = read_split(cfg.data.root);
  if (which == "test") return load_samples(cfg.data.root, split.test);
  if (which == "train") return load_samples(cfg.data.root, split.train);
  throw ConfigError("--split must be train or test");
}

int cmd_gradcheck(bool fault_fixture, const std::string& filter, std::ostream& out) {
  std::vector<GradCheckCase> cases;
  for (auto& c : gradcheck_registry(fault_fixture)) {
    if (filter.empty() || c.name.find(filter) != std::string::npos) cases.push_back(std::move(c));
  }
  if (cases.empty()) throw ConfigError("no gradient check matches '" + filter + "'");
  const auto start = std::chrono::steady_clock::now();
  const auto results = run_gradcheck(cases);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << format_gradcheck_table(results);
  const auto passed = std::count_if(results.begin(), results.end(),
                                    [](const GradCheckResult& r) { return r.passed(); });
  char buf[96];
  std::snprintf(buf, sizeof buf, "%lld/%zu passed in %.1f s\n", static_cast<long long>(passed),
                results.size(), seconds);
  out << buf;
  return passed == static_cast<long long>(results.size()) ? kExitOk : kExitIo;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transformer-generator GAN segmentation toolkit", "stgan"};
  app.require_subcommand(1);
  Globals globals;
  app.add_option("--config", globals.config_path, "JSON run configuration");
  app.add_option("--seed", globals.seed, "Overrides data.seed and train.seed");
  app.add_flag("--deterministic", globals.deterministic, "Byte-reproducible outputs");
  app.add_flag("--no-deterministic", globals.nondeterministic, "Record wall-clock times");

  auto* config_cmd = app.add_subcommand("config", "Print the effective configuration");

  auto* gen_cmd = app.add_subcommand("generate-data", "Write a phantom dataset");
  std::optional<std::int64_t> gen_count;
  std::string gen_out;
  gen_cmd->add_option("--count", gen_count, "Number of phantoms (default data.count)");
  gen_cmd->add_option("--out", gen_out, "Dataset directory (default data.root)");

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  std::string resume;
  std::string train_loop;
  std::optional<std::int64_t> train_iterations;
  train_cmd->add_option("--resume", resume, "Continue from a checkpoint");
  train_cmd->add_option("--loop", train_loop, "none, gan or cyclegan");
  train_cmd->add_option("--max-iterations", train_iterations, "Iteration cap");

  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a split");
  std::string eval_ckpt;
  std::string eval_split = "test";
  std::string eval_out;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Default <checkpoint_dir>/final.ckpt");
  eval_cmd->add_option("--split", eval_split, "train or test");
  eval_cmd->add_option("--out", eval_out, "Report directory (default eval.output_dir)");

  auto* predict_cmd = app.add_subcommand("predict", "Segment one image");
  std::string p_ckpt, p_image, p_mask, p_gt, p_overlay;
  predict_cmd->add_option("--checkpoint", p_ckpt)->required();
  predict_cmd->add_option("--image", p_image)->required();
  predict_cmd->add_option("--out-mask", p_mask)->required();
  predict_cmd->add_option("--gt", p_gt, "Ground-truth mask, enables --overlay");
  predict_cmd->add_option("--overlay", p_overlay, "PPM overlay output");

  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  bool fault_fixture = false;
  std::string gc_filter;
  gc_cmd->add_flag("--fault-fixture", fault_fixture, "Include an op with a wrong backward");
  gc_cmd->add_option("--filter", gc_filter, "Only cases whose name contains this");

  auto* exp_cmd = app.add_subcommand("experiment", "Three-loop phantom comparison");
  std::string exp_out = "experiment";
  std::optional<std::int64_t> exp_iterations;
  exp_cmd->add_option("--out", exp_out, "Output directory");
  exp_cmd->add_option("--max-iterations", exp_iterations, "Iteration cap per loop");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    RunConfig cfg = resolve_config(globals);

    if (config_cmd->parsed()) {
      out << to_json(cfg).dump(2) << '\n';
      return kExitOk;
    }

    if (gen_cmd->parsed()) {
      const fs::path root = gen_out.empty() ? cfg.data.root : fs::path(gen_out);
      const DatasetSplit split = generate_dataset(cfg, gen_count.value_or(cfg.data.count), root);
      out << "wrote " << split.train.size() + split.test.size() << " phantoms to "
          << root.string() << " (" << split.train.size() << " train / " << split.test.size()
          << " test)\n";
      return kExitOk;
    }

    if (train_cmd->parsed()) {
      if (!train_loop.empty()) cfg.train.loop = parse_loop_kind(train_loop);
      if (train_iterations) cfg.train.max_iterations = *train_iterations;
      std::optional<fs::path> from;
      if (!resume.empty()) from = resume;
      const TrainLog log = run_training(cfg, from, out);
      out << "trained " << log.records().size() << " iterations; checkpoint "
          << final_checkpoint_path(cfg.train.checkpoint_dir).string() << '\n';
      return kExitOk;
    }

    if (eval_cmd->parsed()) {
      const fs::path ckpt =
          eval_ckpt.empty() ? final_checkpoint_path(cfg.train.checkpoint_dir) : fs::path(eval_ckpt);
      const fs::path out_dir = eval_out.empty() ? cfg.eval.output_dir : fs::path(eval_out);
      const Generator g = load_generator(ckpt);
      const auto samples = split_samples(cfg, eval_split);
      std::optional<fs::path> overlays;
      if (cfg.eval.overlays) overlays = out_dir / "overlays";
      const EvalReports reports = evaluate(g, samples, cfg.eval, overlays);
      write_report(reports.raw, out_dir / kRawReportName);
      write_report(reports.postprocessed, out_dir / kPostprocessedReportName);
      out << format_triple(reports.postprocessed.mean()) << '\n';
      err << "without post-processing: " << format_triple(reports.raw.mean()) << '\n';
      return kExitOk;
    }

    if (predict_cmd->parsed()) {
      if (!p_overlay.empty() && p_gt.empty()) throw ConfigError("--overlay requires --gt");
      const Generator g = load_generator(p_ckpt);
      const Tensor image = load_image_pgm(p_image);
      const std::int64_t div = g.config.spatial_divisor();
      if (image.shape()[1] % div != 0 || image.shape()[2] % div != 0) {
        throw ConfigError("image dimensions must be divisible by " + std::to_string(div));
      }
      const std::vector<Sample> one{{"input", image, Tensor::zeros(image.shape())}};
      const Tensor probs = predict_probabilities(g, one).front();
      const BinaryMask mask = postprocess(threshold(probs, cfg.eval.threshold), cfg.eval.postprocess);
      save_mask_pgm(p_mask, to_tensor(mask));
      if (!p_gt.empty()) {
        const BinaryMask gt = to_mask(load_mask_pgm(p_gt));
        if (!(gt.height == mask.height && gt.width == mask.width)) {
          throw ConfigError("ground truth size differs from the image");
        }
        const Metrics m = metrics(mask, gt);
        char buf[96];
        std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.4f\n", m.dice, m.precision, m.recall);
        out << buf;
        if (!p_overlay.empty()) write_ppm(p_overlay, overlay(image, mask, gt));
      }
      return kExitOk;
    }

    if (gc_cmd->parsed()) return cmd_gradcheck(fault_fixture, gc_filter, out);

    if (exp_cmd->parsed()) {
      if (exp_iterations) cfg.train.max_iterations = *exp_iterations;
      const auto rows = run_experiment(cfg, exp_out, out);
      out << format_experiment_table(rows);
      return kExitOk;
    }
  } catch (const NonFiniteError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const GenerationError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitConfig;
}

}  // namespace stgan::cli
