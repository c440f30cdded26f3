#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evtact/common.hpp"

namespace evt {

enum class Polarity : std::uint8_t { Negative = 0, Positive = 1 };

struct EventRecord {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  Polarity polarity = Polarity::Positive;
  std::int64_t t = 0;  // microseconds, non-negative, < 2^63

  bool operator==(const EventRecord&) const = default;
};

/// Raw sensor stream. Events are sorted by t (ties keep file order) and every
/// event lies inside (width, height).
struct EventStream {
  int width = 0;
  int height = 0;
  std::vector<EventRecord> events;

  bool operator==(const EventStream&) const = default;
  bool empty() const { return events.empty(); }
  /// last timestamp + 1; 0 for an empty stream.
  std::int64_t duration_usec() const {
    return events.empty() ? 0 : events.back().t + 1;
  }
};

struct GestureSegment {
  int class_id = 0;  // 1-based class id from the label file
  std::int64_t start_usec = 0;
  std::int64_t end_usec = 0;

  bool operator==(const GestureSegment&) const = default;
};

/// Throws ParseError if events are unsorted or out of bounds.
void validate_stream(const EventStream& s);

// Canonical EVT interchange format (bit-exact, see README):
//   "EVT1 <width> <height> <count>\n" then <count> 16-byte little-endian
//   records: u16 x, u16 y, u8 polarity, 3 zero pad bytes, u64 t.
EventStream parse_canonical(const std::string& bytes);
std::string write_canonical(const EventStream& s);

struct AedatResult {
  EventStream stream;
  int skipped_packets = 0;  // non-polarity packets
};

/// AEDAT 3.1 import (polarity packets only). Resolution comes from a
/// recognized camera name in the header, else the given default.
AedatResult parse_aedat(const std::string& bytes, int default_width = 128,
                        int default_height = 128);

/// CSV with header `class,startTime_usec,endTime_usec`.
std::vector<GestureSegment> parse_gesture_labels(const std::string& text);

/// Events with t0 <= t < t1, timestamps re-based to t - t0.
EventStream slice_stream(const EventStream& s, std::int64_t t0, std::int64_t t1);

enum class SynthPattern : int {
  TranslatingBar = 0,
  RotatingDot = 1,
  ExpandingRing = 2,
  Flicker = 3,
};
constexpr int kNumSynthPatterns = 4;

struct SynthParams {
  int width = 64;
  int height = 64;
  std::int64_t duration_usec = 160000;
  double rate = 0.05;  // expected events per microsecond
};

struct SynthResult {
  EventStream stream;
  int class_id = 0;  // pattern index
};

/// Deterministic synthetic stream for a motion pattern.
SynthResult synth_stream(SynthPattern pattern, const SynthParams& params,
                         std::uint64_t seed);

SynthPattern synth_pattern_from_name(const std::string& name);
const char* synth_pattern_name(SynthPattern p);

}  // namespace evt
