#include "evtact/frames.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>

#include "evtact/tensor.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace evt {

void EncoderConfig::validate() const {
  if (rho_usec <= 0) throw ConfigError("encoder: rho_usec must be > 0");
  if (spatial_size <= 0) throw ConfigError("encoder: spatial_size must be > 0");
  if (normalization == Normalization::ClampK && clamp_k < 1)
    throw ConfigError("encoder: clamp_k must be >= 1");
}

void AugmentConfig::validate() const {
  if (drop_prob < 0.0 || drop_prob > 1.0)
    throw ConfigError("augment: drop_prob outside [0, 1]");
  if (rho_choices.empty()) throw ConfigError("augment: empty rho_choices");
  for (auto rho : rho_choices)
    if (rho <= 0) throw ConfigError("augment: rho_choices must all be > 0");
  if (!(crop_scale_lo > 0.0 && crop_scale_lo <= crop_scale_hi &&
        crop_scale_hi <= 1.0))
    throw ConfigError("augment: crop_scale range must satisfy 0 < lo <= hi <= 1");
  if (hflip_prob < 0.0 || hflip_prob > 1.0)
    throw ConfigError("augment: hflip_prob outside [0, 1]");
}

double EventFrame::sum() const {
  double s = 0.0;
  for (double v : data) s += v;
  return s;
}

namespace {

// Overlap weights mapping in_len cells onto out_len cells. Column sums are 1,
// so W_rows * image * W_cols^T preserves the total.
Mat resize_weights(int in_len, int out_len) {
  Mat w = Mat::Zero(out_len, in_len);
  double r = static_cast<double>(in_len) / out_len;
  for (int o = 0; o < out_len; ++o) {
    double a = o * r;
    double b = (o + 1) * r;
    int i0 = std::max(0, static_cast<int>(std::floor(a)));
    int i1 = std::min(in_len, static_cast<int>(std::ceil(b)));
    for (int i = i0; i < i1; ++i) {
      double overlap = std::min(b, static_cast<double>(i + 1)) -
                       std::max(a, static_cast<double>(i));
      if (overlap > 0.0) w(o, i) = overlap;
    }
  }
  return w;
}

enum class ResizeMode { SumPreserving, MeanPreserving };

// Per-channel separable box resampling of [row][col][channel] data.
std::vector<double> box_resize(const std::vector<double>& in, int in_h, int in_w,
                               int channels, int out_h, int out_w,
                               ResizeMode mode) {
  Mat wr = resize_weights(in_h, out_h);
  Mat wc = resize_weights(in_w, out_w);
  if (mode == ResizeMode::MeanPreserving) {
    wr *= static_cast<double>(out_h) / in_h;
    wc *= static_cast<double>(out_w) / in_w;
  }
  std::vector<double> out(static_cast<size_t>(out_h) * out_w * channels, 0.0);
  Mat plane(in_h, in_w);
  for (int ch = 0; ch < channels; ++ch) {
    for (int r = 0; r < in_h; ++r)
      for (int c = 0; c < in_w; ++c)
        plane(r, c) = in[(static_cast<size_t>(r) * in_w + c) * channels + ch];
    Mat resized = wr * plane * wc.transpose();
    for (int r = 0; r < out_h; ++r)
      for (int c = 0; c < out_w; ++c)
        out[(static_cast<size_t>(r) * out_w + c) * channels + ch] = resized(r, c);
  }
  return out;
}

}  // namespace

Video encode_frames(const EventStream& stream, const EncoderConfig& config,
                    const std::string& source_id, int label) {
  config.validate();
  if (stream.width < 1 || stream.height < 1)
    throw std::invalid_argument("encode_frames: stream resolution must be at least 1x1");
  const int channels = config.channels();
  const int sensor_w = stream.width;
  const int sensor_h = stream.height;
  const std::int64_t rho = config.rho_usec;
  const std::int64_t duration = stream.duration_usec();
  const std::int64_t num_frames =
      stream.empty() ? 1 : (duration + rho - 1) / rho;

  // Count at sensor resolution first; resizing afterwards preserves totals.
  std::vector<std::vector<double>> counts(
      static_cast<size_t>(num_frames),
      std::vector<double>(static_cast<size_t>(sensor_w) * sensor_h * channels, 0.0));
  for (const EventRecord& e : stream.events) {
    std::int64_t k = e.t / rho;
    auto& grid = counts[static_cast<size_t>(k)];
    size_t base = (static_cast<size_t>(e.y) * sensor_w + e.x) * channels;
    int ch = e.polarity == Polarity::Positive ? 0 : 1;
    grid[base + ch] += 1.0;
    if (channels == 3) grid[base + 2] += 1.0;
  }

  const int S = config.spatial_size;
  Video video;
  video.source_id = source_id;
  video.label = label;
  video.frames.reserve(static_cast<size_t>(num_frames));
  for (std::int64_t k = 0; k < num_frames; ++k) {
    EventFrame f;
    f.size = S;
    f.channels = channels;
    f.index = static_cast<int>(k);
    f.t_start = k * rho;
    f.t_end = (k + 1) * rho;
    if (!stream.empty() && k == num_frames - 1) f.t_end = duration;
    if (sensor_w == S && sensor_h == S) {
      f.data = std::move(counts[static_cast<size_t>(k)]);
    } else {
      f.data = box_resize(counts[static_cast<size_t>(k)], sensor_h, sensor_w,
                          channels, S, S, ResizeMode::SumPreserving);
    }
    if (config.normalization == Normalization::ClampK) {
      double k_inv = 1.0 / config.clamp_k;
      for (double& v : f.data) v = std::min(v, static_cast<double>(config.clamp_k)) * k_inv;
    }
    video.frames.push_back(std::move(f));
  }
  return video;
}

EventStream event_drop(const EventStream& stream, double p, std::uint64_t seed) {
  if (p < 0.0 || p > 1.0)
    throw std::invalid_argument("event_drop: p outside [0, 1]");
  std::mt19937_64 rng(seed);
  EventStream out;
  out.width = stream.width;
  out.height = stream.height;
  out.events.reserve(stream.events.size());
  for (const EventRecord& e : stream.events) {
    if (uniform01(rng) >= p) out.events.push_back(e);
  }
  return out;
}

namespace {

void pad_to_length(std::vector<EventFrame>& frames, int n) {
  while (static_cast<int>(frames.size()) < n) {
    EventFrame copy = frames.back();
    copy.index = static_cast<int>(frames.size());
    frames.push_back(std::move(copy));
  }
}

Clip encode_view(const EventStream& stream, std::int64_t start,
                 const ClipSpec& spec, const ViewTrace& trace, double drop_prob) {
  EncoderConfig cfg = spec.encoder;
  cfg.rho_usec = trace.rho_usec;
  std::int64_t span = static_cast<std::int64_t>(spec.n) * trace.rho_usec;
  EventStream sliced = slice_stream(stream, start, start + span);
  EventStream kept = event_drop(sliced, drop_prob, trace.drop_seed);
  Video video = encode_frames(kept, cfg);
  if (video.num_frames() > spec.n) video.frames.resize(static_cast<size_t>(spec.n));
  pad_to_length(video.frames, spec.n);

  const int S = cfg.spatial_size;
  Clip clip;
  clip.start_index = 0;
  clip.frames.reserve(static_cast<size_t>(spec.n));
  bool identity_crop = trace.crop_side == S && trace.crop_x0 == 0 && trace.crop_y0 == 0;
  for (EventFrame& f : video.frames) {
    EventFrame g = identity_crop
                       ? std::move(f)
                       : crop_resize_frame(f, trace.crop_x0, trace.crop_y0,
                                           trace.crop_side);
    if (trace.hflip) g = hflip_frame(g);
    clip.frames.push_back(std::move(g));
  }
  return clip;
}

ViewTrace draw_view_trace(std::mt19937_64& rng, const AugmentConfig& aug, int S) {
  ViewTrace t;
  t.rho_usec = aug.rho_choices[static_cast<size_t>(
      uniform_int(rng, 0, static_cast<std::int64_t>(aug.rho_choices.size()) - 1))];
  t.drop_seed = rng();
  double scale = uniform_range(rng, aug.crop_scale_lo, aug.crop_scale_hi);
  t.crop_side = static_cast<int>(
      std::clamp<std::int64_t>(std::llround(scale * S), 1, S));
  t.crop_x0 = static_cast<int>(uniform_int(rng, 0, S - t.crop_side));
  t.crop_y0 = static_cast<int>(uniform_int(rng, 0, S - t.crop_side));
  t.hflip = uniform01(rng) < aug.hflip_prob;
  return t;
}

}  // namespace

TwoViews make_two_views(const EventStream& stream, const ClipSpec& spec,
                        const AugmentConfig& aug) {
  if (spec.n <= 0) throw std::invalid_argument("make_two_views: n must be > 0");
  spec.encoder.validate();
  aug.validate();

  std::mt19937_64 rng(aug.seed);
  std::int64_t max_rho = *std::max_element(aug.rho_choices.begin(), aug.rho_choices.end());
  std::int64_t span_max = static_cast<std::int64_t>(spec.n) * max_rho;
  std::int64_t latest_start = std::max<std::int64_t>(0, stream.duration_usec() - span_max);

  TwoViews out;
  out.trace.start_usec = latest_start == 0 ? 0 : uniform_int(rng, 0, latest_start);
  out.trace.view1 = draw_view_trace(rng, aug, spec.encoder.spatial_size);
  out.trace.view2 = draw_view_trace(rng, aug, spec.encoder.spatial_size);
  out.view1 = encode_view(stream, out.trace.start_usec, spec, out.trace.view1,
                          aug.drop_prob);
  out.view2 = encode_view(stream, out.trace.start_usec, spec, out.trace.view2,
                          aug.drop_prob);
  return out;
}

Clip sample_clip_random(const Video& video, int n, std::uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("sample_clip_random: n must be > 0");
  if (video.frames.empty())
    throw std::invalid_argument("sample_clip_random: empty video");
  const int total = video.num_frames();
  Clip clip;
  if (total <= n) {
    clip.start_index = 0;
    clip.frames = video.frames;
    pad_to_length(clip.frames, n);
    return clip;
  }
  std::mt19937_64 rng(seed);
  int start = static_cast<int>(uniform_int(rng, 0, total - n));
  clip.start_index = start;
  clip.frames.assign(video.frames.begin() + start, video.frames.begin() + start + n);
  return clip;
}

std::vector<Clip> sample_clips_uniform(const Video& video, int n, int k) {
  if (n <= 0) throw std::invalid_argument("sample_clips_uniform: n must be > 0");
  if (k <= 0) throw std::invalid_argument("sample_clips_uniform: k must be > 0");
  if (video.frames.empty())
    throw std::invalid_argument("sample_clips_uniform: empty video");
  const int total = video.num_frames();
  std::vector<Clip> clips;
  clips.reserve(static_cast<size_t>(k));
  if (total <= n) {
    Clip clip;
    clip.start_index = 0;
    clip.frames = video.frames;
    pad_to_length(clip.frames, n);
    for (int j = 0; j < k; ++j) clips.push_back(clip);
    return clips;
  }
  for (int j = 0; j < k; ++j) {
    double pos = k == 1 ? 0.0
                        : static_cast<double>(j) * (total - n) / (k - 1);
    int start = static_cast<int>(std::floor(pos + 0.5));  // round half up
    Clip clip;
    clip.start_index = start;
    clip.frames.assign(video.frames.begin() + start,
                       video.frames.begin() + start + n);
    clips.push_back(std::move(clip));
  }
  return clips;
}

EventFrame crop_resize_frame(const EventFrame& f, int x0, int y0, int side) {
  if (side < 1 || x0 < 0 || y0 < 0 || x0 + side > f.size || y0 + side > f.size)
    throw std::invalid_argument("crop_resize_frame: crop window out of range");
  EventFrame out = f;
  if (side == f.size && x0 == 0 && y0 == 0) return out;
  std::vector<double> crop(static_cast<size_t>(side) * side * f.channels);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c)
      for (int ch = 0; ch < f.channels; ++ch)
        crop[(static_cast<size_t>(r) * side + c) * f.channels + ch] =
            f.at(y0 + r, x0 + c, ch);
  // Mean-preserving zoom keeps normalized values in range.
  out.data = box_resize(crop, side, side, f.channels, f.size, f.size,
                        ResizeMode::MeanPreserving);
  return out;
}

EventFrame hflip_frame(const EventFrame& f) {
  EventFrame out = f;
  for (int r = 0; r < f.size; ++r)
    for (int c = 0; c < f.size; ++c)
      for (int ch = 0; ch < f.channels; ++ch)
        out.at(r, c, ch) = f.at(r, f.size - 1 - c, ch);
  return out;
}

void write_frames_dir(const std::string& dir, const Video& video) {
  fs::create_directories(dir);
  json meta;
  meta["size"] = video.frames.empty() ? 0 : video.frames[0].size;
  meta["channels"] = video.frames.empty() ? 0 : video.frames[0].channels;
  meta["num_frames"] = video.num_frames();
  meta["source_id"] = video.source_id;
  meta["label"] = video.label;
  json t0 = json::array(), t1 = json::array();
  for (const auto& f : video.frames) {
    t0.push_back(f.t_start);
    t1.push_back(f.t_end);
  }
  meta["t_start"] = t0;
  meta["t_end"] = t1;
  write_file((fs::path(dir) / "meta.json").string(), meta.dump(2) + "\n");

  char name[32];
  for (int i = 0; i < video.num_frames(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%06d.bin", i);
    const auto& f = video.frames[static_cast<size_t>(i)];
    std::string bytes(reinterpret_cast<const char*>(f.data.data()),
                      f.data.size() * sizeof(double));
    write_file((fs::path(dir) / name).string(), bytes);
  }
}

Video load_frames_dir(const std::string& dir) {
  json meta = json::parse(read_file((fs::path(dir) / "meta.json").string()));
  Video video;
  video.source_id = meta.value("source_id", std::string{});
  video.label = meta.value("label", -1);
  int num_frames = meta.at("num_frames").get<int>();
  int size = meta.at("size").get<int>();
  int channels = meta.at("channels").get<int>();
  char name[32];
  for (int i = 0; i < num_frames; ++i) {
    std::snprintf(name, sizeof(name), "frame_%06d.bin", i);
    std::string bytes = read_file((fs::path(dir) / name).string());
    size_t expected = static_cast<size_t>(size) * size * channels * sizeof(double);
    if (bytes.size() != expected)
      throw ParseError("frames dir: " + std::string(name) + " has " +
                       std::to_string(bytes.size()) + " bytes, expected " +
                       std::to_string(expected));
    EventFrame f;
    f.size = size;
    f.channels = channels;
    f.index = i;
    if (meta.contains("t_start")) f.t_start = meta["t_start"][static_cast<size_t>(i)].get<std::int64_t>();
    if (meta.contains("t_end")) f.t_end = meta["t_end"][static_cast<size_t>(i)].get<std::int64_t>();
    f.data.resize(static_cast<size_t>(size) * size * channels);
    std::memcpy(f.data.data(), bytes.data(), bytes.size());
    video.frames.push_back(std::move(f));
  }
  return video;
}

}  // namespace evt
