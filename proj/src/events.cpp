#include "evtact/events.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "canonical and AEDAT decoding assume a little-endian host");

namespace evt {

namespace {

constexpr std::int64_t kMaxTimestamp = (std::int64_t(1) << 62) - 1 + (std::int64_t(1) << 62);  // 2^63 - 1

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const unsigned char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

std::uint64_t read_u64(const unsigned char* p) {
  std::uint64_t v;
  std::memcpy(&v, p, 8);
  return v;
}

std::int32_t read_i32(const unsigned char* p) {
  std::int32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

bool parse_int_token(const std::string& tok, std::int64_t& out) {
  if (tok.empty()) return false;
  size_t i = 0;
  bool neg = false;
  if (tok[0] == '-') {
    neg = true;
    i = 1;
    if (tok.size() == 1) return false;
  }
  std::int64_t v = 0;
  for (; i < tok.size(); ++i) {
    if (tok[i] < '0' || tok[i] > '9') return false;
    if (v > (std::numeric_limits<std::int64_t>::max() - 9) / 10) return false;
    v = v * 10 + (tok[i] - '0');
  }
  out = neg ? -v : v;
  return true;
}

}  // namespace

void validate_stream(const EventStream& s) {
  if (s.width < 1 || s.height < 1)
    throw ParseError("stream resolution must be at least 1x1");
  std::int64_t prev = -1;
  for (size_t i = 0; i < s.events.size(); ++i) {
    const EventRecord& e = s.events[i];
    if (e.x >= s.width || e.y >= s.height)
      throw ParseError("event " + std::to_string(i) + " out of bounds: (" +
                       std::to_string(e.x) + "," + std::to_string(e.y) +
                       ") vs " + std::to_string(s.width) + "x" +
                       std::to_string(s.height));
    if (e.t < 0)
      throw ParseError("event " + std::to_string(i) + " has negative timestamp");
    if (e.t < prev)
      throw ParseError("event " + std::to_string(i) +
                       " breaks timestamp order: " + std::to_string(e.t) +
                       " < " + std::to_string(prev));
    prev = e.t;
  }
}

EventStream parse_canonical(const std::string& bytes) {
  size_t nl = bytes.find('\n');
  if (nl == std::string::npos)
    throw ParseError("malformed header: missing newline", 0);
  std::istringstream hs(bytes.substr(0, nl));
  std::string magic, wtok, htok, ctok, extra;
  hs >> magic >> wtok >> htok >> ctok;
  if (hs >> extra)
    throw ParseError("malformed header: trailing token '" + extra + "'", 0);
  if (magic != "EVT1")
    throw ParseError("malformed header: expected EVT1, got '" + magic + "'", 0);
  std::int64_t width = 0, height = 0, count = 0;
  if (!parse_int_token(wtok, width) || !parse_int_token(htok, height) ||
      !parse_int_token(ctok, count))
    throw ParseError("malformed header: non-integer field", 0);
  if (width < 1 || width > 65536 || height < 1 || height > 65536)
    throw ParseError("malformed header: resolution out of range", 0);
  if (count < 0) throw ParseError("malformed header: negative count", 0);

  size_t payload_off = nl + 1;
  size_t payload = bytes.size() - payload_off;
  size_t expected = static_cast<size_t>(count) * 16;
  if (payload < expected) {
    size_t whole = payload / 16;
    throw ParseError("truncated payload: record " + std::to_string(whole) +
                         " incomplete",
                     static_cast<std::int64_t>(payload_off + whole * 16));
  }
  if (payload > expected)
    throw ParseError("trailing bytes after last record",
                     static_cast<std::int64_t>(payload_off + expected));

  EventStream s;
  s.width = static_cast<int>(width);
  s.height = static_cast<int>(height);
  s.events.resize(static_cast<size_t>(count));
  const unsigned char* base =
      reinterpret_cast<const unsigned char*>(bytes.data()) + payload_off;
  std::int64_t prev_t = -1;
  for (std::int64_t i = 0; i < count; ++i) {
    const unsigned char* p = base + i * 16;
    std::int64_t off = static_cast<std::int64_t>(payload_off) + i * 16;
    EventRecord& e = s.events[static_cast<size_t>(i)];
    e.x = read_u16(p);
    e.y = read_u16(p + 2);
    std::uint8_t pol = p[4];
    if (pol > 1)
      throw ParseError("record " + std::to_string(i) + ": invalid polarity " +
                           std::to_string(pol),
                       off);
    e.polarity = static_cast<Polarity>(pol);
    if (p[5] != 0 || p[6] != 0 || p[7] != 0)
      throw ParseError("record " + std::to_string(i) + ": nonzero pad bytes", off);
    std::uint64_t t = read_u64(p + 8);
    if (t > static_cast<std::uint64_t>(kMaxTimestamp))
      throw ParseError("record " + std::to_string(i) + ": timestamp exceeds 63 bits",
                       off);
    e.t = static_cast<std::int64_t>(t);
    if (e.x >= s.width || e.y >= s.height)
      throw ParseError("record " + std::to_string(i) + ": coordinate (" +
                           std::to_string(e.x) + "," + std::to_string(e.y) +
                           ") out of bounds for " + std::to_string(s.width) +
                           "x" + std::to_string(s.height),
                       off);
    if (e.t < prev_t)
      throw ParseError("record " + std::to_string(i) + ": timestamp regression",
                       off);
    prev_t = e.t;
  }
  return s;
}

std::string write_canonical(const EventStream& s) {
  validate_stream(s);
  std::string out = "EVT1 " + std::to_string(s.width) + " " +
                    std::to_string(s.height) + " " +
                    std::to_string(s.events.size()) + "\n";
  out.reserve(out.size() + s.events.size() * 16);
  for (const EventRecord& e : s.events) {
    unsigned char rec[16] = {0};
    rec[0] = static_cast<unsigned char>(e.x & 0xff);
    rec[1] = static_cast<unsigned char>(e.x >> 8);
    rec[2] = static_cast<unsigned char>(e.y & 0xff);
    rec[3] = static_cast<unsigned char>(e.y >> 8);
    rec[4] = static_cast<unsigned char>(e.polarity);
    std::uint64_t t = static_cast<std::uint64_t>(e.t);
    std::memcpy(rec + 8, &t, 8);
    out.append(reinterpret_cast<const char*>(rec), 16);
  }
  return out;
}

AedatResult parse_aedat(const std::string& bytes, int default_width,
                        int default_height) {
  // AEDAT 3.1 as published by the sensor vendor (iniVation/inilabs):
  // "#!AER-DAT3.1\r\n" + '#' header lines through "#!END-HEADER\r\n",
  // then packets of [28-byte header][eventNumber * eventSize bytes].
  const std::string version = "#!AER-DAT3.1\r\n";
  if (bytes.size() < version.size() || bytes.compare(0, version.size(), version) != 0) {
    if (bytes.rfind("#!AER-DAT", 0) == 0)
      throw ParseError("unsupported AEDAT version (only 3.1 is handled)");
    throw ParseError("missing AEDAT version header");
  }

  size_t pos = version.size();
  std::string header_text = version;
  while (pos < bytes.size() && bytes[pos] == '#') {
    size_t nl = bytes.find('\n', pos);
    size_t line_end = (nl == std::string::npos) ? bytes.size() : nl + 1;
    std::string line = bytes.substr(pos, line_end - pos);
    header_text += line;
    pos = line_end;
    if (line.rfind("#!END-HEADER", 0) == 0) break;
  }

  int width = default_width;
  int height = default_height;
  if (header_text.find("DVS128") != std::string::npos) {
    width = 128;
    height = 128;
  } else if (header_text.find("DAVIS240") != std::string::npos) {
    width = 240;
    height = 180;
  } else if (header_text.find("DAVIS346") != std::string::npos) {
    width = 346;
    height = 260;
  }

  AedatResult result;
  result.stream.width = width;
  result.stream.height = height;

  constexpr int kPolarityEvent = 1;
  const unsigned char* data = reinterpret_cast<const unsigned char*>(bytes.data());
  int packet_index = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 28)
      throw ParseError("truncated packet header at packet " +
                       std::to_string(packet_index));
    const unsigned char* h = data + pos;
    int event_type = static_cast<std::int16_t>(read_u16(h));
    std::int32_t event_size = read_i32(h + 4);
    std::int32_t ts_overflow = read_i32(h + 12);
    std::int32_t event_number = read_i32(h + 20);
    if (event_size <= 0 || event_number < 0)
      throw ParseError("invalid packet header at packet " +
                       std::to_string(packet_index));
    size_t payload = static_cast<size_t>(event_size) * static_cast<size_t>(event_number);
    if (bytes.size() - pos - 28 < payload)
      throw ParseError("truncated packet payload at packet " +
                       std::to_string(packet_index));
    const unsigned char* body = h + 28;
    if (event_type == kPolarityEvent) {
      if (event_size != 8)
        throw ParseError("unexpected polarity event size at packet " +
                         std::to_string(packet_index));
      for (std::int32_t i = 0; i < event_number; ++i) {
        std::uint32_t word = read_u32(body + i * 8);
        if ((word & 1u) == 0) continue;  // invalidated event
        std::uint32_t ts32 = read_u32(body + i * 8 + 4);
        EventRecord e;
        e.polarity = static_cast<Polarity>((word >> 1) & 1u);
        e.y = static_cast<std::uint16_t>((word >> 2) & 0x7fffu);
        e.x = static_cast<std::uint16_t>((word >> 17) & 0x7fffu);
        e.t = (static_cast<std::int64_t>(ts_overflow) << 31) |
              static_cast<std::int64_t>(ts32 & 0x7fffffffu);
        if (e.x >= width || e.y >= height)
          throw ParseError("event out of bounds in packet " +
                           std::to_string(packet_index));
        result.stream.events.push_back(e);
      }
    } else {
      result.skipped_packets++;
    }
    pos += 28 + payload;
    packet_index++;
  }

  if (!std::is_sorted(result.stream.events.begin(), result.stream.events.end(),
                      [](const EventRecord& a, const EventRecord& b) {
                        return a.t < b.t;
                      })) {
    std::stable_sort(result.stream.events.begin(), result.stream.events.end(),
                     [](const EventRecord& a, const EventRecord& b) {
                       return a.t < b.t;
                     });
  }
  return result;
}

std::vector<GestureSegment> parse_gesture_labels(const std::string& text) {
  std::vector<std::string> lines;
  size_t start = 0;
  while (start <= text.size()) {
    size_t nl = text.find('\n', start);
    if (nl == std::string::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  for (auto& l : lines)
    if (!l.empty() && l.back() == '\r') l.pop_back();
  while (!lines.empty() && lines.back().empty()) lines.pop_back();

  if (lines.empty())
    throw ParseError("label file is empty", 1);
  if (lines[0] != "class,startTime_usec,endTime_usec")
    throw ParseError("unexpected label header: '" + lines[0] + "'", 1);

  std::vector<GestureSegment> segments;
  for (size_t i = 1; i < lines.size(); ++i) {
    std::int64_t line_no = static_cast<std::int64_t>(i + 1);
    const std::string& line = lines[i];
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t p = 0;
    while (true) {
      size_t c = line.find(',', p);
      if (c == std::string::npos) {
        fields.push_back(line.substr(p));
        break;
      }
      fields.push_back(line.substr(p, c - p));
      p = c + 1;
    }
    if (fields.size() != 3)
      throw ParseError("line " + std::to_string(line_no) +
                           ": expected 3 fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    std::int64_t cls = 0, t0 = 0, t1 = 0;
    if (!parse_int_token(fields[0], cls) || !parse_int_token(fields[1], t0) ||
        !parse_int_token(fields[2], t1))
      throw ParseError("line " + std::to_string(line_no) + ": non-integer field",
                       line_no);
    if (cls < 1 || cls > 11)
      throw ParseError("line " + std::to_string(line_no) + ": class " +
                           std::to_string(cls) + " outside [1, 11]",
                       line_no);
    if (t0 < 0 || t1 < 0)
      throw ParseError("line " + std::to_string(line_no) + ": negative time",
                       line_no);
    if (t0 >= t1)
      throw ParseError("line " + std::to_string(line_no) +
                           ": start >= end (" + std::to_string(t0) + " >= " +
                           std::to_string(t1) + ")",
                       line_no);
    segments.push_back(GestureSegment{static_cast<int>(cls), t0, t1});
  }
  return segments;
}

EventStream slice_stream(const EventStream& s, std::int64_t t0, std::int64_t t1) {
  if (t0 >= t1)
    throw std::invalid_argument("slice_stream: t0 >= t1 (" + std::to_string(t0) +
                                " >= " + std::to_string(t1) + ")");
  EventStream out;
  out.width = s.width;
  out.height = s.height;
  auto lo = std::lower_bound(s.events.begin(), s.events.end(), t0,
                             [](const EventRecord& e, std::int64_t t) {
                               return e.t < t;
                             });
  auto hi = std::lower_bound(lo, s.events.end(), t1,
                             [](const EventRecord& e, std::int64_t t) {
                               return e.t < t;
                             });
  out.events.reserve(static_cast<size_t>(hi - lo));
  for (auto it = lo; it != hi; ++it) {
    EventRecord e = *it;
    e.t -= t0;
    out.events.push_back(e);
  }
  return out;
}

namespace {

std::int64_t sample_poisson(double mean, std::mt19937_64& rng) {
  if (mean <= 0.0) return 0;
  if (mean < 60.0) {
    double limit = std::exp(-mean);
    std::int64_t k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform01(rng);
    } while (p > limit);
    return k - 1;
  }
  double n = std::llround(mean + std::sqrt(mean) * gaussian(rng));
  return n < 0 ? 0 : static_cast<std::int64_t>(n);
}

int clamp_coord(double v, int hi) {
  std::int64_t r = std::llround(v);
  if (r < 0) return 0;
  if (r > hi) return hi;
  return static_cast<int>(r);
}

}  // namespace

SynthResult synth_stream(SynthPattern pattern, const SynthParams& params,
                         std::uint64_t seed) {
  if (params.duration_usec <= 0)
    throw std::invalid_argument("synth_stream: zero duration");
  if (params.width < 2 || params.height < 2)
    throw std::invalid_argument("synth_stream: resolution must be at least 2x2");
  if (params.rate < 0.0)
    throw std::invalid_argument("synth_stream: negative event rate");

  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(pattern)));
  const double duration = static_cast<double>(params.duration_usec);
  std::int64_t n = sample_poisson(params.rate * duration, rng);

  std::vector<std::int64_t> times(static_cast<size_t>(n));
  for (auto& t : times) t = uniform_int(rng, 0, params.duration_usec - 1);
  std::sort(times.begin(), times.end());

  const int w = params.width;
  const int h = params.height;
  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;
  const std::int64_t flicker_period = std::max<std::int64_t>(1, params.duration_usec / 8);

  EventStream s;
  s.width = w;
  s.height = h;
  s.events.reserve(times.size());
  for (std::int64_t t : times) {
    double f = static_cast<double>(t) / duration;
    EventRecord e;
    e.t = t;
    switch (pattern) {
      case SynthPattern::TranslatingBar: {
        double jitter = gaussian(rng);
        e.x = static_cast<std::uint16_t>(clamp_coord(f * (w - 1) + jitter, w - 1));
        e.y = static_cast<std::uint16_t>(uniform_int(rng, 0, h - 1));
        e.polarity = jitter >= 0.0 ? Polarity::Positive : Polarity::Negative;
        break;
      }
      case SynthPattern::RotatingDot: {
        double theta = 2.0 * std::numbers::pi * (2.0 * f);
        double radius = 0.33 * std::min(w, h);
        double jx = gaussian(rng) * 1.5;
        double jy = gaussian(rng) * 1.5;
        e.x = static_cast<std::uint16_t>(
            clamp_coord(cx + radius * std::cos(theta) + jx, w - 1));
        e.y = static_cast<std::uint16_t>(
            clamp_coord(cy + radius * std::sin(theta) + jy, h - 1));
        e.polarity = jx >= 0.0 ? Polarity::Positive : Polarity::Negative;
        break;
      }
      case SynthPattern::ExpandingRing: {
        double radius = f * 0.45 * std::min(w, h);
        double phi = uniform_range(rng, 0.0, 2.0 * std::numbers::pi);
        double jitter = gaussian(rng);
        double r = radius + jitter;
        e.x = static_cast<std::uint16_t>(clamp_coord(cx + r * std::cos(phi), w - 1));
        e.y = static_cast<std::uint16_t>(clamp_coord(cy + r * std::sin(phi), h - 1));
        e.polarity = jitter >= 0.0 ? Polarity::Positive : Polarity::Negative;
        break;
      }
      case SynthPattern::Flicker: {
        e.x = static_cast<std::uint16_t>(uniform_int(rng, 0, w - 1));
        e.y = static_cast<std::uint16_t>(uniform_int(rng, 0, h - 1));
        e.polarity = ((t / flicker_period) % 2 == 0) ? Polarity::Positive
                                                     : Polarity::Negative;
        break;
      }
    }
    s.events.push_back(e);
  }
  return SynthResult{std::move(s), static_cast<int>(pattern)};
}

SynthPattern synth_pattern_from_name(const std::string& name) {
  if (name == "translating_bar") return SynthPattern::TranslatingBar;
  if (name == "rotating_dot") return SynthPattern::RotatingDot;
  if (name == "expanding_ring") return SynthPattern::ExpandingRing;
  if (name == "flicker") return SynthPattern::Flicker;
  throw std::invalid_argument("unknown synth pattern: " + name);
}

const char* synth_pattern_name(SynthPattern p) {
  switch (p) {
    case SynthPattern::TranslatingBar: return "translating_bar";
    case SynthPattern::RotatingDot: return "rotating_dot";
    case SynthPattern::ExpandingRing: return "expanding_ring";
    case SynthPattern::Flicker: return "flicker";
  }
  return "unknown";
}

}  // namespace evt
