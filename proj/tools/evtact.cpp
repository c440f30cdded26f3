#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "evtact/checkpoint.hpp"
#include "evtact/common.hpp"
#include "evtact/config.hpp"
#include "evtact/gradcheck.hpp"
#include "evtact/manifest.hpp"
#include "evtact/pipeline.hpp"

namespace fs = std::filesystem;
using namespace evt;

namespace {

int run_synth(const std::string& out_dir, std::uint64_t seed, int train_per_class,
              int test_per_class, std::int64_t duration_usec, double rate) {
  SynthCorpusSpec spec;
  spec.train_per_class = train_per_class;
  spec.test_per_class = test_per_class;
  spec.params.duration_usec = duration_usec;
  spec.params.rate = rate;
  SynthCorpus corpus = build_synth_manifest(spec, seed, out_dir);
  std::printf("wrote %zu train and %zu test samples under %s\n",
              corpus.train.samples.size(), corpus.test.samples.size(),
              out_dir.c_str());
  return 0;
}

int run_prepare(const std::string& root, const std::string& protocol,
                const std::string& out_dir, bool cache_events) {
  DvsProtocol proto;
  if (protocol == "10") {
    proto = DvsProtocol::TenClass;
  } else if (protocol == "11") {
    proto = DvsProtocol::ElevenClass;
  } else {
    throw ConfigError("protocol must be 10 or 11, got '" + protocol + "'");
  }
  DvsManifests manifests = build_dvs_manifest(root, proto);
  fs::create_directories(out_dir);
  if (cache_events) {
    manifests.train =
        materialize_manifest(manifests.train, (fs::path(out_dir) / "train_events").string());
    manifests.test =
        materialize_manifest(manifests.test, (fs::path(out_dir) / "test_events").string());
  }
  save_manifest((fs::path(out_dir) / "train_manifest.json").string(), manifests.train);
  save_manifest((fs::path(out_dir) / "test_manifest.json").string(), manifests.test);
  std::printf("wrote manifests for %zu train and %zu test samples under %s\n",
              manifests.train.samples.size(), manifests.test.samples.size(),
              out_dir.c_str());
  return 0;
}

int run_train(const std::string& config_path, const std::string& resume_path) {
  RunConfig cfg = load_run_config(config_path);
  cfg.validate();
  if (cfg.train_manifest.empty())
    throw ConfigError(config_path + ": train_manifest is required");
  DatasetManifest manifest = load_manifest(cfg.train_manifest);
  fs::create_directories(cfg.output_dir);
  save_run_config((fs::path(cfg.output_dir) / "resolved_config.json").string(), cfg);

  TrainResult result;
  if (!resume_path.empty()) {
    TrainState state = load_train_state(resume_path);
    result = train(manifest, cfg.model, cfg.train, cfg.output_dir, &state);
  } else {
    result = train(manifest, cfg.model, cfg.train, cfg.output_dir);
  }
  std::printf("trained %d epochs, checkpoint at %s\n", result.state.epoch,
              result.checkpoint_path.c_str());
  if (!result.logs.empty()) {
    const EpochLog& last = result.logs.back();
    std::printf("final epoch: ce %.4f ec %.4f total %.4f\n", last.ce, last.ec,
                last.total);
  }
  return 0;
}

int run_eval(const std::string& checkpoint_path, const std::string& manifest_path,
             int clips, const std::string& report_path) {
  TrainState state = load_train_state(checkpoint_path);
  DatasetManifest manifest = load_manifest(manifest_path);
  EvalReport report = evaluate(state.params, state.model, manifest,
                               state.train.encoder, state.train.clip_len, clips);
  std::string text = eval_report_json(report);
  if (!report_path.empty()) write_file(report_path, text);
  std::printf("%s", text.c_str());
  return 0;
}

int run_bench(const std::string& checkpoint_path, int trials,
              const std::string& report_path) {
  TrainState state = load_train_state(checkpoint_path);
  SynthParams params;
  params.width = state.train.encoder.spatial_size;
  params.height = state.train.encoder.spatial_size;
  params.duration_usec =
      state.train.encoder.rho_usec * static_cast<std::int64_t>(state.train.clip_len);
  SynthResult sample = synth_stream(SynthPattern::RotatingDot, params, 1);
  TimingReport report = benchmark(state.params, state.model, sample.stream,
                                  state.train.encoder, state.train.clip_len, trials);
  std::string text = timing_report_json(report);
  if (!report_path.empty()) write_file(report_path, text);
  std::printf("%s", text.c_str());
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  GradCheckReport report = gradient_check(gradcheck_config(), LossConfig{}, seed);
  std::printf("gradient check: %zu blocks, max rel error %.3e, %.1f s\n",
              report.blocks.size(), report.max_rel_error, report.seconds);
  if (report.max_rel_error > 1e-4) {
    for (const auto& b : report.blocks)
      if (b.rel_error > 1e-4)
        std::printf("  block %s rel error %.3e\n", b.name.c_str(), b.rel_error);
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-camera action recognition toolkit"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Build a synthetic event corpus");
  std::string synth_out = "synth_corpus";
  std::uint64_t synth_seed = 1;
  int train_per_class = 8, test_per_class = 4;
  std::int64_t duration = 160000;
  double rate = 0.05;
  synth->add_option("--out", synth_out, "Output directory");
  synth->add_option("--seed", synth_seed, "Corpus seed");
  synth->add_option("--train-per-class", train_per_class, "Train samples per class");
  synth->add_option("--test-per-class", test_per_class, "Test samples per class");
  synth->add_option("--duration-usec", duration, "Stream duration in microseconds");
  synth->add_option("--rate", rate, "Expected events per microsecond");

  auto* prepare = app.add_subcommand("prepare", "Build DVS gesture manifests");
  std::string dvs_root, protocol = "11", prepare_out = "dvs_prepared";
  bool cache_events = false;
  prepare->add_option("--root", dvs_root, "DVS dataset root")->required();
  prepare->add_option("--protocol", protocol, "10 or 11 classes");
  prepare->add_option("--out", prepare_out, "Output directory");
  prepare->add_flag("--cache-events", cache_events,
                    "Cut segments into canonical EVT files");

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  std::string config_path, resume_path;
  train_cmd->add_option("--config", config_path, "Run config JSON")->required();
  train_cmd->add_option("--resume", resume_path, "Checkpoint to resume from");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_ckpt, eval_manifest, eval_report;
  int eval_clips = 5;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "Test manifest")->required();
  eval_cmd->add_option("--clips", eval_clips, "Clips per video");
  eval_cmd->add_option("--report", eval_report, "Write the report JSON here");

  auto* bench_cmd = app.add_subcommand("bench", "Time preprocessing and forward");
  std::string bench_ckpt, bench_report;
  int trials = 50;
  bench_cmd->add_option("--checkpoint", bench_ckpt, "Checkpoint file")->required();
  bench_cmd->add_option("--trials", trials, "Timed iterations");
  bench_cmd->add_option("--report", bench_report, "Write the report JSON here");

  auto* gradcheck_cmd =
      app.add_subcommand("gradcheck", "Finite-difference gradient check");
  std::uint64_t gc_seed = 7;
  gradcheck_cmd->add_option("--seed", gc_seed, "Check seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed())
      return run_synth(synth_out, synth_seed, train_per_class, test_per_class,
                       duration, rate);
    if (prepare->parsed())
      return run_prepare(dvs_root, protocol, prepare_out, cache_events);
    if (train_cmd->parsed()) return run_train(config_path, resume_path);
    if (eval_cmd->parsed())
      return run_eval(eval_ckpt, eval_manifest, eval_clips, eval_report);
    if (bench_cmd->parsed()) return run_bench(bench_ckpt, trials, bench_report);
    if (gradcheck_cmd->parsed()) return run_gradcheck(gc_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
