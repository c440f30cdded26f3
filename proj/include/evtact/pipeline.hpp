#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evtact/frames.hpp"
#include "evtact/losses.hpp"
#include "evtact/manifest.hpp"
#include "evtact/model.hpp"

namespace evt {

struct TrainConfig {
  int epochs = 100;
  int warmup_epochs = 10;
  double base_lr = 4e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 16;
  double alpha = 1.0;
  double tau = 0.1;
  bool symmetric_ec = false;
  bool ce_both_views = false;
  std::uint64_t seed = 0;
  int clip_len = 16;
  AugmentConfig augment;
  EncoderConfig encoder;

  void validate() const;
  LossConfig loss_config() const;

  bool operator==(const TrainConfig&) const = default;
};

// Per-step learning rate: linear ramp from base_lr / warmup_steps over the
// warmup epochs, then a cosine decay to 0 at the final epoch. The epoch
// coordinate is continuous (step / steps_per_epoch), making the schedule
// continuous at the boundary.
double lr_at(std::int64_t step, int steps_per_epoch, const TrainConfig& cfg);

// First and second moment estimates, one slot per parameter block in
// visit_params order, plus the shared step counter for bias correction.
struct AdamState {
  std::vector<Mat> m;
  std::vector<Mat> v;
  std::int64_t t = 0;
};

AdamState make_adam_state(ModelParams& params);

// One Adam update with bias correction. Throws on non-finite gradients,
// naming the offending parameter block.
void adam_step(ModelParams& params, ModelParams& grads, AdamState& moments,
               double lr, const TrainConfig& cfg);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double ce = 0.0;
  double ec = 0.0;
  double total = 0.0;
  double wall_s = 0.0;
};

std::string epoch_log_line(const EpochLog& log);

// Full training state as written to disk every epoch.
struct TrainState {
  ModelConfig model;
  TrainConfig train;
  ModelParams params;
  AdamState moments;
  int epoch = 0;  // epochs completed
};

void save_train_state(const std::string& path, const TrainState& state);
TrainState load_train_state(const std::string& path);

struct TrainResult {
  TrainState state;
  std::vector<EpochLog> logs;
  std::string checkpoint_path;
};

// Runs the training loop over the manifest: per sample two augmented views,
// cross entropy on view one plus the weighted contrastive term, one Adam step
// per batch. Writes <out_dir>/checkpoint.bin after every epoch and appends to
// <out_dir>/train_log.jsonl. Passing a state loaded from a checkpoint resumes
// after its last completed epoch and reproduces the uninterrupted run.
// stop_after_epoch > 0 pauses the run once that epoch completes (the schedule
// still spans the configured epochs).
TrainResult train(const DatasetManifest& manifest, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const std::string& out_dir,
                  const TrainState* resume_from = nullptr,
                  int stop_after_epoch = 0);

struct Prediction {
  int label = 0;
  Vec probabilities;
};

// Averages the softmax probabilities of k uniformly spaced clips and picks
// the argmax, lowest index on ties.
Prediction predict_video(const ModelParams& params, const ModelConfig& cfg,
                         const Video& video, int n, int k = 5);

struct EvalReport {
  double top1_accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::vector<std::int64_t>> confusion_matrix;  // [true][predicted]
  int num_videos = 0;
};

std::string eval_report_json(const EvalReport& report);

EvalReport evaluate(const ModelParams& params, const ModelConfig& cfg,
                    const DatasetManifest& manifest, const EncoderConfig& encoder,
                    int n, int k = 5);

struct TimingReport {
  double preprocess_ms_mean = 0.0;
  double preprocess_ms_sd = 0.0;
  double forward_ms_mean = 0.0;
  double forward_ms_sd = 0.0;
  int trials = 0;
  std::string hardware;
};

std::string timing_report_json(const TimingReport& report);

// Times clip preprocessing (encode plus clip assembly) and the eval-mode
// forward pass of a single clip, mean and standard deviation over trials
// after at least five discarded warmup iterations.
TimingReport benchmark(const ModelParams& params, const ModelConfig& cfg,
                       const EventStream& stream, const EncoderConfig& encoder,
                       int n, int trials);

}  // namespace evt
