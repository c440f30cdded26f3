#include "evtact/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "evtact/checkpoint.hpp"
#include "evtact/common.hpp"
#include "evtact/config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace evt {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs)
    throw ConfigError("train: warmup_epochs must be in [0, epochs)");
  if (base_lr <= 0.0) throw ConfigError("train: base_lr must be > 0");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
    throw ConfigError("train: adam betas must be in [0, 1)");
  if (adam_eps <= 0.0) throw ConfigError("train: adam_eps must be > 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (clip_len < 1) throw ConfigError("train: clip_len must be >= 1");
  if (alpha != 0.0 && clip_len < 2)
    throw ConfigError("train: the contrastive term needs clip_len >= 2");
  loss_config().validate();
  augment.validate();
  encoder.validate();
}

LossConfig TrainConfig::loss_config() const {
  LossConfig cfg;
  cfg.tau = tau;
  cfg.alpha = alpha;
  cfg.symmetric_ec = symmetric_ec;
  return cfg;
}

double lr_at(std::int64_t step, int steps_per_epoch, const TrainConfig& cfg) {
  if (step < 0) throw std::invalid_argument("lr_at: step must be >= 0");
  if (steps_per_epoch < 1)
    throw std::invalid_argument("lr_at: steps_per_epoch must be >= 1");
  const double warmup_steps =
      static_cast<double>(cfg.warmup_epochs) * steps_per_epoch;
  if (static_cast<double>(step) < warmup_steps)
    return cfg.base_lr * (static_cast<double>(step) + 1.0) / warmup_steps;
  double e = static_cast<double>(step) / steps_per_epoch;
  double x = std::numbers::pi * (e - cfg.warmup_epochs) /
             (cfg.epochs - cfg.warmup_epochs);
  x = std::min(x, std::numbers::pi);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(x));
}

AdamState make_adam_state(ModelParams& params) {
  AdamState state;
  visit_params(params, [&](const std::string&, Mat& m) {
    state.m.push_back(Mat::Zero(m.rows(), m.cols()));
    state.v.push_back(Mat::Zero(m.rows(), m.cols()));
  });
  return state;
}

void adam_step(ModelParams& params, ModelParams& grads, AdamState& moments,
               double lr, const TrainConfig& cfg) {
  std::vector<std::pair<std::string, Mat*>> gs;
  visit_params(grads, [&](const std::string& name, Mat& m) {
    gs.emplace_back(name, &m);
  });
  if (gs.size() != moments.m.size())
    throw std::invalid_argument("adam_step: moment state does not match model");
  moments.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(moments.t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(moments.t));
  size_t i = 0;
  visit_params(params, [&](const std::string& name, Mat& p) {
    const Mat& g = *gs[i].second;
    if (!g.allFinite())
      throw std::runtime_error("adam_step: non-finite gradient in block " + name);
    Mat& m = moments.m[i];
    Mat& v = moments.v[i];
    m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
    v = cfg.adam_beta2 * v.array().matrix() +
        (1.0 - cfg.adam_beta2) * g.array().square().matrix();
    p.array() -= lr * (m.array() / bc1) /
                 ((v.array() / bc2).sqrt() + cfg.adam_eps);
    ++i;
  });
}

std::string epoch_log_line(const EpochLog& log) {
  json j{{"epoch", log.epoch}, {"lr", log.lr},       {"ce", log.ce},
         {"ec", log.ec},       {"total", log.total}, {"wall_s", log.wall_s}};
  return j.dump();
}

void save_train_state(const std::string& path, const TrainState& state) {
  Archive a;
  json meta;
  meta["kind"] = "train";
  meta["model"] = model_config_to_json(state.model);
  meta["train"] = train_config_to_json(state.train);
  meta["epoch"] = state.epoch;
  meta["adam_t"] = state.moments.t;
  a.meta_json = meta.dump();
  ModelParams& p = const_cast<ModelParams&>(state.params);
  size_t i = 0;
  visit_params(p, [&](const std::string& name, Mat& m) {
    a.tensors.emplace_back(name, m);
    a.tensors.emplace_back("adam.m." + name, state.moments.m[i]);
    a.tensors.emplace_back("adam.v." + name, state.moments.v[i]);
    ++i;
  });
  write_archive(path, a);
}

TrainState load_train_state(const std::string& path) {
  Archive a = read_archive(path);
  json meta;
  try {
    meta = json::parse(a.meta_json);
  } catch (const json::parse_error& e) {
    throw ParseError("checkpoint " + path + ": meta is not JSON: " + e.what());
  }
  TrainState state;
  try {
    state.model = model_config_from_json(meta.at("model"), "checkpoint.model");
    state.train = train_config_from_json(meta.at("train"), "checkpoint.train");
    state.epoch = meta.at("epoch").get<int>();
    state.moments.t = meta.at("adam_t").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw ParseError("checkpoint " + path + ": " + e.what());
  }
  state.model.validate();
  state.params = init_params(state.model, 0);
  visit_params(state.params, [&](const std::string& name, Mat& m) {
    for (const std::string& prefix : {std::string(), std::string("adam.m."),
                                      std::string("adam.v.")}) {
      const Mat* stored = a.find(prefix + name);
      if (!stored)
        throw ParseError("checkpoint " + path + ": missing tensor " + prefix + name);
      if (stored->rows() != m.rows() || stored->cols() != m.cols())
        throw ParseError("checkpoint " + path + ": tensor " + prefix + name +
                         " has the wrong shape");
      if (prefix.empty())
        m = *stored;
      else if (prefix == "adam.m.")
        state.moments.m.push_back(*stored);
      else
        state.moments.v.push_back(*stored);
    }
  });
  return state;
}

namespace {

Vec softmax_vec(const Vec& logits) {
  Vec z = (logits.array() - logits.maxCoeff()).exp();
  return z / z.sum();
}

struct SampleStats {
  double ce = 0.0;
  double ec = 0.0;
  double total = 0.0;
};

// Forward and backward for one training sample; gradients are accumulated
// into grads with weight `scale` (one over the batch size).
SampleStats train_sample(const ModelParams& params, const ModelConfig& mcfg,
                         const TrainConfig& tcfg, const EventStream& stream,
                         const std::string& source_id, int label,
                         std::uint64_t sample_seed, ModelParams& grads,
                         double scale) {
  AugmentConfig aug = tcfg.augment;
  aug.seed = sample_seed;
  ClipSpec spec;
  spec.n = tcfg.clip_len;
  spec.encoder = tcfg.encoder;
  TwoViews views;
  try {
    views = make_two_views(stream, spec, aug);
  } catch (const std::exception& e) {
    throw std::runtime_error("sample " + source_id + ": " + e.what());
  }

  std::mt19937_64 drop_rng(mix_seed(sample_seed, 0xd09u));
  DropoutPlan drop{mcfg.dropout, mcfg.dropout > 0.0 ? &drop_rng : nullptr};

  SpatialStageCache sc1, sc2;
  TemporalStageCache tc1, tc2;
  ProjStageCache pc1, pc2;
  Mat e1 = spatial_encode_cached(params, mcfg, views.view1, &sc1, drop);
  Mat e2 = spatial_encode_cached(params, mcfg, views.view2, &sc2, drop);
  Vec logits = classify_cached(params, mcfg, e1, &tc1, drop);
  Mat z1 = project_cached(params, e1, &pc1);
  Mat z2 = project_cached(params, e2, &pc2);

  Vec dlogits;
  Mat dz1, dz2;
  LossParts parts =
      total_loss_with_grad(logits, label, z1, z2, tcfg.loss_config(), dlogits,
                           dz1, dz2);

  Vec dlogits2;
  if (tcfg.ce_both_views) {
    Vec logits2 = classify_cached(params, mcfg, e2, &tc2, drop);
    double ce2 = cross_entropy(logits2, label);
    dlogits *= 0.5;
    dlogits2 = 0.5 * cross_entropy_grad(logits2, label);
    parts.ce_part = 0.5 * (parts.ce_part + ce2);
    parts.total = parts.ce_part + tcfg.alpha * parts.ec_part;
  }

  if (!std::isfinite(parts.total))
    throw std::runtime_error("sample " + source_id + ": loss is not finite");

  Mat de1 = classify_backward(params, mcfg, tc1, (scale * dlogits).eval(), grads);
  de1 += project_backward(params, pc1, (scale * dz1).eval(), grads);
  Mat de2 = project_backward(params, pc2, (scale * dz2).eval(), grads);
  if (tcfg.ce_both_views)
    de2 += classify_backward(params, mcfg, tc2, (scale * dlogits2).eval(), grads);
  spatial_encode_backward(params, mcfg, sc1, de1, grads);
  spatial_encode_backward(params, mcfg, sc2, de2, grads);

  return {parts.ce_part, parts.ec_part, parts.total};
}

}  // namespace

TrainResult train(const DatasetManifest& manifest, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const std::string& out_dir,
                  const TrainState* resume_from, int stop_after_epoch) {
  model_cfg.validate();
  train_cfg.validate();
  if (manifest.samples.empty()) throw ConfigError("training manifest is empty");
  if (manifest.num_classes() != model_cfg.num_classes)
    throw ConfigError("manifest has " + std::to_string(manifest.num_classes()) +
                      " classes, model expects " +
                      std::to_string(model_cfg.num_classes));
  if (train_cfg.clip_len != model_cfg.clip_len)
    throw ConfigError("train.clip_len does not match model.clip_len");
  fs::create_directories(out_dir);

  TrainResult result;
  TrainState& state = result.state;
  if (resume_from) {
    if (!(resume_from->model == model_cfg))
      throw ConfigError(
          "resume: checkpoint model configuration does not match the requested "
          "model");
    state = *resume_from;
    state.model = model_cfg;
    state.train = train_cfg;
  } else {
    state.model = model_cfg;
    state.train = train_cfg;
    state.params = init_params(model_cfg, train_cfg.seed);
    state.moments = make_adam_state(state.params);
    state.epoch = 0;
  }

  const int num = static_cast<int>(manifest.samples.size());
  std::vector<EventStream> streams(static_cast<size_t>(num));
  parallel_chunks(num, [&](int, int begin, int end) {
    for (int i = begin; i < end; ++i)
      streams[static_cast<size_t>(i)] =
          load_sample_stream(manifest.samples[static_cast<size_t>(i)]);
  });

  const int steps_per_epoch = (num + train_cfg.batch_size - 1) / train_cfg.batch_size;
  result.checkpoint_path = (fs::path(out_dir) / "checkpoint.bin").string();
  const std::string log_path = (fs::path(out_dir) / "train_log.jsonl").string();

  int last_epoch = train_cfg.epochs;
  if (stop_after_epoch > 0) last_epoch = std::min(last_epoch, stop_after_epoch);
  for (int ep = state.epoch; ep < last_epoch; ++ep) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<int> order(static_cast<size_t>(num));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 erng(mix_seed(train_cfg.seed, 0xe90c000ull + static_cast<std::uint64_t>(ep)));
    std::shuffle(order.begin(), order.end(), erng);

    double ce_sum = 0.0, ec_sum = 0.0, total_sum = 0.0;
    double last_lr = 0.0;
    for (int b = 0; b < steps_per_epoch; ++b) {
      const int lo = b * train_cfg.batch_size;
      const int hi = std::min(num, lo + train_cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(hi - lo);
      ModelParams grads = zeros_like_params(state.params);
      for (int i = lo; i < hi; ++i) {
        const ManifestSample& s = manifest.samples[static_cast<size_t>(order[static_cast<size_t>(i)])];
        const EventStream& stream = streams[static_cast<size_t>(order[static_cast<size_t>(i)])];
        std::uint64_t sample_seed = mix_seed(
            mix_seed(train_cfg.seed, 0x5eedull + static_cast<std::uint64_t>(ep)),
            hash_str(s.source_id));
        SampleStats stats;
        try {
          stats = train_sample(state.params, model_cfg, train_cfg, stream,
                               s.source_id, s.label, sample_seed, grads, scale);
        } catch (const std::exception& e) {
          throw std::runtime_error(
              "training diverged or failed at epoch " + std::to_string(ep + 1) +
              " step " + std::to_string(b) + " (" + e.what() +
              "); last checkpoint retained at " + result.checkpoint_path);
        }
        ce_sum += stats.ce;
        ec_sum += stats.ec;
        total_sum += stats.total;
      }
      std::int64_t step = static_cast<std::int64_t>(ep) * steps_per_epoch + b;
      last_lr = lr_at(step, steps_per_epoch, train_cfg);
      adam_step(state.params, grads, state.moments, last_lr, train_cfg);
    }

    double wall_s = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    EpochLog log;
    log.epoch = ep + 1;
    log.lr = last_lr;
    log.ce = ce_sum / num;
    log.ec = ec_sum / num;
    log.total = total_sum / num;
    log.wall_s = wall_s;
    result.logs.push_back(log);
    {
      std::ofstream out(log_path, std::ios::app);
      out << epoch_log_line(log) << "\n";
    }
    state.epoch = ep + 1;
    save_train_state(result.checkpoint_path, state);
  }
  return result;
}

Prediction predict_video(const ModelParams& params, const ModelConfig& cfg,
                         const Video& video, int n, int k) {
  if (video.frames.empty()) throw std::invalid_argument("empty video");
  std::vector<Clip> clips = sample_clips_uniform(video, n, k);
  Vec mean = Vec::Zero(cfg.num_classes);
  for (const Clip& clip : clips)
    mean += softmax_vec(forward_eval(params, cfg, clip));
  mean /= static_cast<double>(clips.size());
  Prediction pred;
  pred.probabilities = mean;
  pred.label = 0;
  for (int c = 1; c < cfg.num_classes; ++c)
    if (mean(c) > mean(pred.label)) pred.label = c;
  return pred;
}

EvalReport evaluate(const ModelParams& params, const ModelConfig& cfg,
                    const DatasetManifest& manifest, const EncoderConfig& encoder,
                    int n, int k) {
  if (manifest.num_classes() != cfg.num_classes)
    throw ConfigError("manifest has " + std::to_string(manifest.num_classes()) +
                      " classes, model expects " +
                      std::to_string(cfg.num_classes));
  const int num = static_cast<int>(manifest.samples.size());
  std::vector<int> predicted(static_cast<size_t>(num), -1);
  parallel_chunks(num, [&](int, int begin, int end) {
    for (int i = begin; i < end; ++i) {
      const ManifestSample& s = manifest.samples[static_cast<size_t>(i)];
      Video video = encode_frames(load_sample_stream(s), encoder, s.source_id,
                                  s.label);
      predicted[static_cast<size_t>(i)] =
          predict_video(params, cfg, video, n, k).label;
    }
  });

  EvalReport report;
  const int nc = cfg.num_classes;
  report.confusion_matrix.assign(static_cast<size_t>(nc),
                                 std::vector<std::int64_t>(static_cast<size_t>(nc), 0));
  for (int i = 0; i < num; ++i) {
    int truth = manifest.samples[static_cast<size_t>(i)].label;
    report.confusion_matrix[static_cast<size_t>(truth)]
                           [static_cast<size_t>(predicted[static_cast<size_t>(i)])]++;
  }
  std::int64_t correct = 0;
  report.per_class_accuracy.assign(static_cast<size_t>(nc), 0.0);
  for (int c = 0; c < nc; ++c) {
    std::int64_t row = 0;
    for (int d = 0; d < nc; ++d) row += report.confusion_matrix[static_cast<size_t>(c)][static_cast<size_t>(d)];
    correct += report.confusion_matrix[static_cast<size_t>(c)][static_cast<size_t>(c)];
    if (row > 0)
      report.per_class_accuracy[static_cast<size_t>(c)] =
          static_cast<double>(report.confusion_matrix[static_cast<size_t>(c)][static_cast<size_t>(c)]) /
          static_cast<double>(row);
  }
  report.num_videos = num;
  report.top1_accuracy = num > 0 ? static_cast<double>(correct) / num : 0.0;
  return report;
}

std::string eval_report_json(const EvalReport& report) {
  json j{{"top1_accuracy", report.top1_accuracy},
         {"per_class_accuracy", report.per_class_accuracy},
         {"confusion_matrix", report.confusion_matrix},
         {"num_videos", report.num_videos}};
  return j.dump(2) + "\n";
}

namespace {

std::pair<double, double> mean_sd(const std::vector<double>& xs) {
  double mean = std::accumulate(xs.begin(), xs.end(), 0.0) /
                static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  double sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
  return {mean, sd};
}

std::string hardware_string() {
  std::string cpu = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      auto pos = line.find(':');
      if (pos != std::string::npos) {
        cpu = line.substr(pos + 1);
        while (!cpu.empty() && cpu.front() == ' ') cpu.erase(cpu.begin());
      }
      break;
    }
  }
  return cpu + ", " + std::to_string(std::thread::hardware_concurrency()) +
         " threads";
}

}  // namespace

TimingReport benchmark(const ModelParams& params, const ModelConfig& cfg,
                       const EventStream& stream, const EncoderConfig& encoder,
                       int n, int trials) {
  if (trials < 30) throw std::invalid_argument("benchmark: trials must be >= 30");
  const int warmup = 5;
  using clock = std::chrono::steady_clock;

  std::vector<double> pre_ms, fwd_ms;
  Clip clip;
  for (int i = 0; i < warmup + trials; ++i) {
    auto t0 = clock::now();
    Video video = encode_frames(stream, encoder);
    std::vector<Clip> clips = sample_clips_uniform(video, n, 1);
    double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    if (i >= warmup) pre_ms.push_back(ms);
    clip = std::move(clips.front());
  }
  for (int i = 0; i < warmup + trials; ++i) {
    auto t0 = clock::now();
    Vec logits = forward_eval(params, cfg, clip);
    double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    if (logits.size() != cfg.num_classes)
      throw std::logic_error("benchmark: unexpected logit count");
    if (i >= warmup) fwd_ms.push_back(ms);
  }

  TimingReport report;
  std::tie(report.preprocess_ms_mean, report.preprocess_ms_sd) = mean_sd(pre_ms);
  std::tie(report.forward_ms_mean, report.forward_ms_sd) = mean_sd(fwd_ms);
  report.trials = trials;
  report.hardware = hardware_string();
  return report;
}

std::string timing_report_json(const TimingReport& report) {
  json j{{"preprocess_ms", {{"mean", report.preprocess_ms_mean},
                            {"sd", report.preprocess_ms_sd}}},
         {"forward_ms", {{"mean", report.forward_ms_mean},
                         {"sd", report.forward_ms_sd}}},
         {"trials", report.trials},
         {"hardware", report.hardware}};
  return j.dump(2) + "\n";
}

}  // namespace evt
