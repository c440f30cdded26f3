#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evtact/events.hpp"

namespace evt {

enum class ChannelLayout { TwoChannel, ThreeChannel };
enum class Normalization { None, ClampK };

struct EncoderConfig {
  std::int64_t rho_usec = 20000;  // temporal aggregation window
  int spatial_size = 64;          // square output side
  ChannelLayout channel_layout = ChannelLayout::TwoChannel;
  Normalization normalization = Normalization::ClampK;
  int clamp_k = 8;

  int channels() const {
    return channel_layout == ChannelLayout::TwoChannel ? 2 : 3;
  }
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

/// One aggregated count image. data is [row][col][channel]; with
/// normalization none the values are integer counts.
struct EventFrame {
  int size = 0;
  int channels = 0;
  std::vector<double> data;
  int index = 0;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;

  double& at(int r, int c, int ch) {
    return data[(static_cast<size_t>(r) * size + c) * channels + ch];
  }
  double at(int r, int c, int ch) const {
    return data[(static_cast<size_t>(r) * size + c) * channels + ch];
  }
  double sum() const;
};

struct Video {
  std::vector<EventFrame> frames;
  std::string source_id;
  int label = -1;  // -1 = unlabeled

  int num_frames() const { return static_cast<int>(frames.size()); }
};

struct Clip {
  std::vector<EventFrame> frames;
  int start_index = 0;

  int length() const { return static_cast<int>(frames.size()); }
};

struct AugmentConfig {
  double drop_prob = 0.0;
  std::vector<std::int64_t> rho_choices;  // candidate temporal windows
  double crop_scale_lo = 1.0;
  double crop_scale_hi = 1.0;
  double hflip_prob = 0.0;
  std::uint64_t seed = 0;

  void validate() const;

  bool operator==(const AugmentConfig&) const = default;
};

/// Aggregate a stream into T = ceil(duration / rho) frames; frame k counts
/// events in [k*rho, (k+1)*rho) per polarity channel, then resizes to SxS and
/// applies normalization. Empty stream yields one all-zero frame.
Video encode_frames(const EventStream& stream, const EncoderConfig& config,
                    const std::string& source_id = {}, int label = -1);

/// Keep each event independently with probability 1-p. Order preserved.
EventStream event_drop(const EventStream& stream, double p, std::uint64_t seed);

struct ClipSpec {
  int n = 16;
  EncoderConfig encoder;  // rho_usec is overridden by the per-view draw
};

struct ViewTrace {
  std::int64_t rho_usec = 0;
  std::uint64_t drop_seed = 0;
  int crop_x0 = 0, crop_y0 = 0, crop_side = 0;
  bool hflip = false;
};

struct TwoViewTrace {
  std::int64_t start_usec = 0;
  ViewTrace view1, view2;
};

struct TwoViews {
  Clip view1, view2;
  TwoViewTrace trace;
};

/// Two independently augmented encodings of the same temporal span; frame t of
/// both views is anchored at the same start time (positives pair by position).
TwoViews make_two_views(const EventStream& stream, const ClipSpec& spec,
                        const AugmentConfig& aug);

/// Contiguous n-frame window at a uniform-random start; videos shorter than n
/// are padded by repeating the final frame.
Clip sample_clip_random(const Video& video, int n, std::uint64_t seed);

/// k windows with starts round(j*(T-n)/(k-1)), round-half-up.
std::vector<Clip> sample_clips_uniform(const Video& video, int n, int k);

// Frame-level augmentations (also used for pre-encoded frame directories).
EventFrame crop_resize_frame(const EventFrame& f, int x0, int y0, int side);
EventFrame hflip_frame(const EventFrame& f);

// Pre-encoded frames directory: meta.json + frame_%06d.bin (f64 LE, row-major
// [row][col][channel]).
void write_frames_dir(const std::string& dir, const Video& video);
Video load_frames_dir(const std::string& dir);

}  // namespace evt
