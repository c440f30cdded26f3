#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "evtact/frames.hpp"
#include "testutil.hpp"

using namespace evt;
using testutil::contains;
using testutil::error_message;
using testutil::random_stream;
using testutil::TempDir;

namespace {

EncoderConfig raw_counts(std::int64_t rho, int size,
                         ChannelLayout layout = ChannelLayout::TwoChannel) {
  EncoderConfig cfg;
  cfg.rho_usec = rho;
  cfg.spatial_size = size;
  cfg.channel_layout = layout;
  cfg.normalization = Normalization::None;
  return cfg;
}

double frame_total(const EventFrame& f) { return f.sum(); }

}  // namespace

TEST_CASE("single event lands in its cell and window") {
  EventStream s;
  s.width = 8;
  s.height = 8;
  s.events = {{3, 4, Polarity::Positive, 100}};
  Video v = encode_frames(s, raw_counts(1000, 8));
  REQUIRE(v.num_frames() == 1);
  const EventFrame& f = v.frames[0];
  CHECK(f.size == 8);
  CHECK(f.channels == 2);
  CHECK(f.at(4, 3, 0) == 1.0);
  CHECK(frame_total(f) == 1.0);
  CHECK(f.t_start == 0);
  CHECK(f.t_end == 101);
}

TEST_CASE("frame count is ceil(duration / rho)") {
  EventStream s;
  s.width = 4;
  s.height = 4;
  s.events = {{0, 0, Polarity::Positive, 0}, {1, 1, Polarity::Negative, 1999}};
  Video v = encode_frames(s, raw_counts(1000, 4));
  REQUIRE(v.num_frames() == 2);
  CHECK(v.frames[0].at(0, 0, 0) == 1.0);
  CHECK(v.frames[1].at(1, 1, 1) == 1.0);
  CHECK(v.frames[0].t_end == 1000);
  CHECK(v.frames[1].t_end == 2000);

  s.events.push_back({2, 2, Polarity::Positive, 2000});
  Video w = encode_frames(s, raw_counts(1000, 4));
  REQUIRE(w.num_frames() == 3);
  CHECK(w.frames[2].at(2, 2, 0) == 1.0);
  CHECK(w.frames[2].t_start == 2000);
  CHECK(w.frames[2].t_end == 2001);
}

TEST_CASE("empty stream encodes to one zero frame") {
  EventStream s;
  s.width = 4;
  s.height = 4;
  Video v = encode_frames(s, raw_counts(500, 4));
  REQUIRE(v.num_frames() == 1);
  CHECK(frame_total(v.frames[0]) == 0.0);
  CHECK(v.frames[0].t_start == 0);
  CHECK(v.frames[0].t_end == 500);
}

TEST_CASE("resized encoding conserves event count exactly") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    int w = static_cast<int>(uniform_int(rng, 3, 150));
    int h = static_cast<int>(uniform_int(rng, 3, 150));
    int n = static_cast<int>(uniform_int(rng, 1, 500));
    EventStream s = random_stream(rng, w, h, n);
    Video v = encode_frames(s, raw_counts(200, 64));
    double total = 0.0;
    for (const auto& f : v.frames) total += frame_total(f);
    CHECK(total == doctest::Approx(static_cast<double>(n)).epsilon(1e-12));
  }
}

TEST_CASE("three channel layout sums both polarities") {
  EventStream s;
  s.width = 4;
  s.height = 4;
  s.events = {{1, 2, Polarity::Positive, 10},
              {1, 2, Polarity::Negative, 20},
              {1, 2, Polarity::Positive, 30}};
  Video v = encode_frames(s, raw_counts(1000, 4, ChannelLayout::ThreeChannel));
  const EventFrame& f = v.frames[0];
  CHECK(f.channels == 3);
  CHECK(f.at(2, 1, 0) == 2.0);
  CHECK(f.at(2, 1, 1) == 1.0);
  CHECK(f.at(2, 1, 2) == 3.0);
}

TEST_CASE("clamp normalization maps counts into [0, 1]") {
  EventStream s;
  s.width = 2;
  s.height = 2;
  for (int i = 0; i < 10; ++i)
    s.events.push_back({0, 0, Polarity::Positive, static_cast<std::int64_t>(i)});
  for (int i = 0; i < 4; ++i)
    s.events.push_back({1, 1, Polarity::Negative, static_cast<std::int64_t>(10 + i)});
  std::sort(s.events.begin(), s.events.end(),
            [](const EventRecord& a, const EventRecord& b) { return a.t < b.t; });
  EncoderConfig cfg = raw_counts(1000, 2);
  cfg.normalization = Normalization::ClampK;
  cfg.clamp_k = 8;
  Video v = encode_frames(s, cfg);
  const EventFrame& f = v.frames[0];
  CHECK(f.at(0, 0, 0) == 1.0);   // 10 clamped to 8, divided by 8
  CHECK(f.at(1, 1, 1) == 0.5);   // 4 / 8
  for (double x : f.data) {
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
  }
}

TEST_CASE("coarser windows aggregate exactly the finer ones") {
  SynthParams params;
  params.duration_usec = 64000;
  EventStream s = synth_stream(SynthPattern::RotatingDot, params, 5).stream;
  Video fine = encode_frames(s, raw_counts(1000, 32));
  Video coarse = encode_frames(s, raw_counts(2000, 32));
  REQUIRE(coarse.num_frames() == (fine.num_frames() + 1) / 2);
  for (int j = 0; j < coarse.num_frames(); ++j) {
    double expect = frame_total(fine.frames[static_cast<size_t>(2 * j)]);
    if (2 * j + 1 < fine.num_frames())
      expect += frame_total(fine.frames[static_cast<size_t>(2 * j + 1)]);
    CHECK(frame_total(coarse.frames[static_cast<size_t>(j)]) ==
          doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("event_drop keeps order and honours the edge probabilities") {
  std::mt19937_64 rng(3);
  EventStream s = random_stream(rng, 32, 32, 500);
  CHECK(event_drop(s, 0.0, 9) == s);
  CHECK(event_drop(s, 1.0, 9).events.empty());
  EventStream a = event_drop(s, 0.3, 123);
  EventStream b = event_drop(s, 0.3, 123);
  CHECK(a == b);
  CHECK(a.events.size() < s.events.size());
  CHECK(a.events.size() > s.events.size() / 2);
  size_t pos = 0;
  for (const auto& e : a.events) {
    while (pos < s.events.size() && !(s.events[pos] == e)) ++pos;
    REQUIRE(pos < s.events.size());  // kept events appear in original order
    ++pos;
  }
  CHECK_THROWS_AS(event_drop(s, -0.1, 0), std::invalid_argument);
  CHECK_THROWS_AS(event_drop(s, 1.5, 0), std::invalid_argument);
}

TEST_CASE("two views are deterministic per seed") {
  SynthParams params;
  params.duration_usec = 400000;
  EventStream s = synth_stream(SynthPattern::TranslatingBar, params, 1).stream;
  ClipSpec spec;
  spec.n = 8;
  spec.encoder = raw_counts(20000, 32);
  AugmentConfig aug;
  aug.drop_prob = 0.2;
  aug.rho_choices = {10000, 20000};
  aug.crop_scale_lo = 0.7;
  aug.crop_scale_hi = 1.0;
  aug.hflip_prob = 0.5;
  aug.seed = 77;

  TwoViews a = make_two_views(s, spec, aug);
  TwoViews b = make_two_views(s, spec, aug);
  CHECK(a.trace.start_usec == b.trace.start_usec);
  CHECK(a.trace.view1.rho_usec == b.trace.view1.rho_usec);
  CHECK(a.trace.view2.drop_seed == b.trace.view2.drop_seed);
  REQUIRE(a.view1.length() == spec.n);
  REQUIRE(a.view2.length() == spec.n);
  for (int i = 0; i < spec.n; ++i) {
    CHECK(a.view1.frames[static_cast<size_t>(i)].data ==
          b.view1.frames[static_cast<size_t>(i)].data);
    CHECK(a.view2.frames[static_cast<size_t>(i)].data ==
          b.view2.frames[static_cast<size_t>(i)].data);
  }

  aug.seed = 78;
  TwoViews c = make_two_views(s, spec, aug);
  bool any_diff = c.trace.start_usec != a.trace.start_usec ||
                  c.trace.view1.rho_usec != a.trace.view1.rho_usec ||
                  c.trace.view1.drop_seed != a.trace.view1.drop_seed;
  CHECK(any_diff);
}

TEST_CASE("identity augmentation makes both views equal") {
  SynthParams params;
  params.duration_usec = 300000;
  EventStream s = synth_stream(SynthPattern::ExpandingRing, params, 2).stream;
  ClipSpec spec;
  spec.n = 8;
  spec.encoder = raw_counts(20000, 32);
  AugmentConfig aug;
  aug.rho_choices = {20000};
  aug.seed = 5;

  TwoViews v = make_two_views(s, spec, aug);
  CHECK(v.trace.view1.rho_usec == 20000);
  CHECK(v.trace.view2.rho_usec == 20000);
  for (int i = 0; i < spec.n; ++i)
    CHECK(v.view1.frames[static_cast<size_t>(i)].data ==
          v.view2.frames[static_cast<size_t>(i)].data);
}

TEST_CASE("a coarse view frame matches the sum of the two fine frames") {
  SynthParams params;
  params.duration_usec = 800000;
  params.rate = 0.05;
  EventStream s = synth_stream(SynthPattern::Flicker, params, 9).stream;
  ClipSpec spec;
  spec.n = 8;
  spec.encoder = raw_counts(10000, 32);
  AugmentConfig aug;
  aug.rho_choices = {10000, 20000};

  for (std::uint64_t seed = 0;; ++seed) {
    REQUIRE(seed < 64);  // a (rho, 2 rho) draw shows up quickly
    aug.seed = seed;
    TwoViews v = make_two_views(s, spec, aug);
    const bool fine_first = v.trace.view1.rho_usec == 10000 &&
                            v.trace.view2.rho_usec == 20000;
    const bool coarse_first = v.trace.view1.rho_usec == 20000 &&
                              v.trace.view2.rho_usec == 10000;
    if (!fine_first && !coarse_first) continue;
    const Clip& fine = fine_first ? v.view1 : v.view2;
    const Clip& coarse = fine_first ? v.view2 : v.view1;
    for (int j = 0; j < spec.n / 2; ++j) {
      double expect = frame_total(fine.frames[static_cast<size_t>(2 * j)]) +
                      frame_total(fine.frames[static_cast<size_t>(2 * j + 1)]);
      CHECK(frame_total(coarse.frames[static_cast<size_t>(j)]) ==
            doctest::Approx(expect).epsilon(1e-12));
    }
    break;
  }
}

TEST_CASE("short inputs are padded by repeating the last frame") {
  EventStream s;
  s.width = 8;
  s.height = 8;
  s.events = {{1, 1, Polarity::Positive, 100}};
  ClipSpec spec;
  spec.n = 4;
  spec.encoder = raw_counts(1000, 8);
  AugmentConfig aug;
  aug.rho_choices = {1000};
  TwoViews v = make_two_views(s, spec, aug);
  REQUIRE(v.view1.length() == 4);
  CHECK(v.trace.start_usec == 0);
  for (int i = 1; i < 4; ++i) {
    CHECK(v.view1.frames[static_cast<size_t>(i)].data == v.view1.frames[0].data);
    CHECK(v.view1.frames[static_cast<size_t>(i)].index == i);
  }
}

TEST_CASE("augment validation rejects bad configs") {
  AugmentConfig aug;
  CHECK(contains(error_message([&] { aug.validate(); }), "rho_choices"));
  aug.rho_choices = {1000};
  aug.drop_prob = 1.2;
  CHECK(contains(error_message([&] { aug.validate(); }), "drop_prob"));
  aug.drop_prob = 0.0;
  aug.crop_scale_lo = 0.0;
  CHECK(contains(error_message([&] { aug.validate(); }), "crop_scale"));
  aug.crop_scale_lo = 0.9;
  aug.crop_scale_hi = 0.8;
  CHECK(contains(error_message([&] { aug.validate(); }), "crop_scale"));
  aug.crop_scale_hi = 1.0;
  aug.hflip_prob = -0.5;
  CHECK(contains(error_message([&] { aug.validate(); }), "hflip"));

  EncoderConfig enc;
  enc.rho_usec = 0;
  CHECK(contains(error_message([&] { enc.validate(); }), "rho"));
  enc.rho_usec = 1000;
  enc.spatial_size = 0;
  CHECK(contains(error_message([&] { enc.validate(); }), "spatial_size"));
  enc.spatial_size = 8;
  enc.clamp_k = 0;
  CHECK(contains(error_message([&] { enc.validate(); }), "clamp_k"));
}

TEST_CASE("random clip sampling stays in range and pads short videos") {
  Video v;
  for (int i = 0; i < 10; ++i) {
    EventFrame f;
    f.size = 2;
    f.channels = 1;
    f.index = i;
    f.data = {static_cast<double>(i), 0, 0, 0};
    v.frames.push_back(f);
  }
  bool saw_nonzero = false;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Clip c = sample_clip_random(v, 4, seed);
    REQUIRE(c.length() == 4);
    CHECK(c.start_index >= 0);
    CHECK(c.start_index <= 6);
    for (int i = 0; i < 4; ++i)
      CHECK(c.frames[static_cast<size_t>(i)].data[0] ==
            static_cast<double>(c.start_index + i));
    if (c.start_index > 0) saw_nonzero = true;
    CHECK(sample_clip_random(v, 4, seed).start_index == c.start_index);
  }
  CHECK(saw_nonzero);

  Video shortv;
  shortv.frames.assign(v.frames.begin(), v.frames.begin() + 3);
  Clip padded = sample_clip_random(shortv, 5, 0);
  REQUIRE(padded.length() == 5);
  CHECK(padded.start_index == 0);
  CHECK(padded.frames[3].data[0] == 2.0);
  CHECK(padded.frames[4].data[0] == 2.0);
}

TEST_CASE("uniform clip starts follow round(j * (T - n) / (k - 1))") {
  auto starts = [](int total, int n, int k) {
    Video v;
    for (int i = 0; i < total; ++i) {
      EventFrame f;
      f.size = 1;
      f.channels = 1;
      f.index = i;
      f.data = {0.0};
      v.frames.push_back(f);
    }
    std::vector<int> out;
    for (const Clip& c : sample_clips_uniform(v, n, k)) out.push_back(c.start_index);
    return out;
  };
  CHECK(starts(100, 16, 5) == std::vector<int>{0, 21, 42, 63, 84});
  CHECK(starts(17, 16, 5) == std::vector<int>{0, 0, 1, 1, 1});
  CHECK(starts(100, 16, 1) == std::vector<int>{0});
  CHECK(starts(100, 16, 2) == std::vector<int>{0, 84});
  CHECK(starts(16, 16, 3) == std::vector<int>{0, 0, 0});
  CHECK(starts(10, 16, 2) == std::vector<int>{0, 0});  // padded
}

TEST_CASE("crop zoom preserves constant frames and value range") {
  EventFrame f;
  f.size = 8;
  f.channels = 2;
  f.data.assign(8 * 8 * 2, 0.25);
  EventFrame z = crop_resize_frame(f, 1, 2, 5);
  REQUIRE(z.size == 8);
  for (double v : z.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  EventFrame single;
  single.size = 2;
  single.channels = 1;
  single.data = {1.0, 0.0, 0.0, 0.0};
  EventFrame zoomed = crop_resize_frame(single, 0, 0, 1);
  for (double v : zoomed.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

  CHECK(crop_resize_frame(f, 0, 0, 8).data == f.data);
  CHECK_THROWS_AS(crop_resize_frame(f, 5, 5, 4), std::invalid_argument);
  CHECK_THROWS_AS(crop_resize_frame(f, 0, 0, 0), std::invalid_argument);
}

TEST_CASE("horizontal flip mirrors columns and is an involution") {
  EventFrame f;
  f.size = 3;
  f.channels = 1;
  f.data = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  EventFrame g = hflip_frame(f);
  CHECK(g.data == std::vector<double>{3, 2, 1, 6, 5, 4, 9, 8, 7});
  CHECK(hflip_frame(g).data == f.data);
}

TEST_CASE("frames directory round trip") {
  SynthParams params;
  params.duration_usec = 50000;
  EventStream s = synth_stream(SynthPattern::TranslatingBar, params, 4).stream;
  Video v = encode_frames(s, raw_counts(10000, 16), "sample_a", 3);
  TempDir dir("frames_io");
  write_frames_dir(dir.str(), v);
  Video back = load_frames_dir(dir.str());
  REQUIRE(back.num_frames() == v.num_frames());
  CHECK(back.source_id == "sample_a");
  CHECK(back.label == 3);
  for (int i = 0; i < v.num_frames(); ++i) {
    const auto& a = v.frames[static_cast<size_t>(i)];
    const auto& b = back.frames[static_cast<size_t>(i)];
    CHECK(a.data == b.data);
    CHECK(a.t_start == b.t_start);
    CHECK(a.t_end == b.t_end);
    CHECK(b.index == i);
  }
}
