#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "dense_oracle.hpp"
#include "evtact/model.hpp"
#include "testutil.hpp"

using namespace evt;
using testutil::contains;
using testutil::error_message;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 16;
  cfg.in_channels = 2;
  cfg.embed_dim = 8;
  cfg.spatial_depth = 1;
  cfg.spatial_heads = 2;
  cfg.temporal_layers = 1;
  cfg.temporal_heads = 2;
  cfg.attention_window = 2;
  cfg.clip_len = 4;
  cfg.num_classes = 5;
  cfg.proj_hidden = 8;
  cfg.proj_dim = 6;
  return cfg;
}

Clip random_clip(const ModelConfig& cfg, int length, std::mt19937_64& rng) {
  Clip clip;
  for (int i = 0; i < length; ++i) {
    EventFrame f;
    f.size = cfg.image_size;
    f.channels = cfg.in_channels;
    f.index = i;
    f.data.resize(static_cast<size_t>(cfg.image_size) * cfg.image_size *
                  cfg.in_channels);
    for (double& v : f.data) v = uniform01(rng);
    clip.frames.push_back(std::move(f));
  }
  return clip;
}

Mat random_embeddings(int n, int d, std::mt19937_64& rng) {
  Mat e(n, d);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) e(r, c) = gaussian(rng);
  return e;
}

void randomize(Mat& m, std::mt19937_64& rng) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = gaussian(rng) * 0.2;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.patch_size = 7;
  CHECK(contains(error_message([&] { cfg.validate(); }), "divisible"));
  cfg = tiny_config();
  cfg.spatial_heads = 3;
  CHECK(contains(error_message([&] { cfg.validate(); }), "spatial_heads"));
  cfg = tiny_config();
  cfg.attention_window = 0;
  CHECK(contains(error_message([&] { cfg.validate(); }), "attention_window"));
  cfg = tiny_config();
  cfg.dropout = 1.0;
  CHECK(contains(error_message([&] { cfg.validate(); }), "dropout"));
  cfg = tiny_config();
  cfg.num_classes = 1;
  CHECK(contains(error_message([&] { cfg.validate(); }), "num_classes"));
}

TEST_CASE("initialization is deterministic and finite") {
  ModelConfig cfg = tiny_config();
  ModelParams a = init_params(cfg, 42);
  ModelParams b = init_params(cfg, 42);
  ModelParams c = init_params(cfg, 43);
  bool all_equal = true, any_diff = false, all_finite = true;
  std::vector<Mat*> bs, cs;
  visit_params(b, [&](const std::string&, Mat& m) { bs.push_back(&m); });
  visit_params(c, [&](const std::string&, Mat& m) { cs.push_back(&m); });
  size_t idx = 0;
  visit_params(a, [&](const std::string&, Mat& m) {
    if (m != *bs[idx]) all_equal = false;
    if (m != *cs[idx]) any_diff = true;
    if (!m.allFinite()) all_finite = false;
    idx++;
  });
  CHECK(all_equal);
  CHECK(any_diff);
  CHECK(all_finite);
  CHECK(a.spatial_cls.isZero());
  CHECK(a.temporal_pos.isZero());
  CHECK(a.spatial_blocks[0].ln1.gamma.isOnes());
  CHECK(a.patch_embed.w.cwiseAbs().maxCoeff() <= 0.04);  // 2 sigma cutoff
}

TEST_CASE("parameter count matches the allocated tensors") {
  ModelConfig cfg = tiny_config();
  ModelParams p = init_params(cfg, 1);
  std::int64_t total = 0;
  visit_params(p, [&](const std::string&, Mat& m) { total += m.size(); });
  CHECK(total == count_params(cfg));

  ModelConfig more = cfg;
  more.num_classes = cfg.num_classes + 9;
  CHECK(count_params(more) - count_params(cfg) == 9 * (cfg.embed_dim + 1));

  ModelConfig deeper = cfg;
  deeper.temporal_layers = 2 * cfg.temporal_layers;
  CHECK(count_params(deeper) > count_params(cfg));

  CHECK(count_params(ModelConfig{}) == 1492875);
}

TEST_CASE("spatial encoder shape, equivariance and constancy") {
  ModelConfig cfg = tiny_config();
  ModelParams p = init_params(cfg, 7);
  std::mt19937_64 rng(1);
  Clip clip = random_clip(cfg, 4, rng);

  Mat e = spatial_encode(p, cfg, clip);
  CHECK(e.rows() == 4);
  CHECK(e.cols() == cfg.embed_dim);
  CHECK(e.allFinite());

  Clip permuted;
  for (int i : {2, 0, 3, 1}) permuted.frames.push_back(clip.frames[static_cast<size_t>(i)]);
  Mat pe = spatial_encode(p, cfg, permuted);
  CHECK(pe.row(0) == e.row(2));
  CHECK(pe.row(1) == e.row(0));
  CHECK(pe.row(2) == e.row(3));
  CHECK(pe.row(3) == e.row(1));

  Clip zeros;
  for (int i = 0; i < 3; ++i) {
    EventFrame f;
    f.size = cfg.image_size;
    f.channels = cfg.in_channels;
    f.index = i;
    f.data.assign(static_cast<size_t>(cfg.image_size) * cfg.image_size *
                      cfg.in_channels,
                  0.0);
    zeros.frames.push_back(f);
  }
  Mat ez = spatial_encode(p, cfg, zeros);
  CHECK(ez.row(0) == ez.row(1));
  CHECK(ez.row(1) == ez.row(2));

  Clip bad = clip;
  bad.frames[1].size = 16;
  bad.frames[1].data.resize(16 * 16 * 2);
  CHECK(contains(error_message([&] { spatial_encode(p, cfg, bad); }), "frame 1"));
}

TEST_CASE("zero temporal layers return the CLS slot embedding") {
  ModelConfig cfg = tiny_config();
  cfg.temporal_layers = 0;
  ModelParams p = init_params(cfg, 3);
  std::mt19937_64 rng(2);
  randomize(p.temporal_cls, rng);
  randomize(p.temporal_pos, rng);
  Mat emb = random_embeddings(cfg.clip_len, cfg.embed_dim, rng);
  Vec cls = temporal_encode(p, cfg, emb);
  Vec expect = (p.temporal_cls.row(0) + p.temporal_pos.row(0)).transpose();
  CHECK(cls == expect);
}

TEST_CASE("windowed attention with w >= n matches the dense oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 12; ++trial) {
    ModelConfig cfg = tiny_config();
    cfg.embed_dim = (trial % 2 == 0) ? 8 : 16;
    cfg.temporal_heads = (trial % 3 == 0) ? 4 : 2;
    cfg.temporal_layers = 1 + trial % 2;
    cfg.clip_len = 2 + static_cast<int>(uniform_int(rng, 0, 4));
    cfg.attention_window = cfg.clip_len + static_cast<int>(uniform_int(rng, 0, 3));
    ModelParams p = init_params(cfg, 100 + static_cast<std::uint64_t>(trial));
    randomize(p.temporal_cls, rng);
    randomize(p.temporal_pos, rng);
    Mat emb = random_embeddings(cfg.clip_len, cfg.embed_dim, rng);

    Mat ours = temporal_tokens(p, cfg, emb);
    Mat dense = oracle::dense_temporal(p, cfg, emb);
    double diff = (ours - dense).cwiseAbs().maxCoeff();
    CHECK(diff <= 1e-5);
    Vec cls = temporal_encode(p, cfg, emb);
    CHECK((cls.transpose() - dense.row(0)).cwiseAbs().maxCoeff() <= 1e-5);
  }
}

TEST_CASE("window mask geometry") {
  Mat m = window_mask(5, 2);
  CHECK(m.rows() == 6);
  for (int j = 0; j < 6; ++j) CHECK(m(0, j) == 0.0);  // CLS sees everything
  for (int t = 1; t <= 5; ++t) CHECK(m(t, 0) == 0.0);  // everyone sees CLS
  CHECK(m(1, 3) == 0.0);
  CHECK(std::isinf(m(1, 4)));
  CHECK(std::isinf(m(5, 2)));
  CHECK(m(5, 3) == 0.0);
}

TEST_CASE("tokens outside the window cannot influence a token") {
  ModelConfig cfg = tiny_config();
  cfg.clip_len = 6;
  cfg.temporal_layers = 1;
  cfg.attention_window = 2;
  ModelParams p = init_params(cfg, 5);
  std::mt19937_64 rng(3);
  randomize(p.temporal_cls, rng);
  randomize(p.temporal_pos, rng);
  Mat emb = random_embeddings(6, cfg.embed_dim, rng);

  // Mask that additionally cuts the CLS key column so the probe token depends
  // on its window alone.
  const double neg_inf = -std::numeric_limits<double>::infinity();
  Mat mask = window_mask(6, 2);
  for (int t = 1; t <= 6; ++t) mask(t, 0) = neg_inf;

  Mat base = temporal_tokens(p, cfg, emb, &mask);
  Mat far = emb;
  far.row(5).setZero();  // token 6; probe token 2 has |2 - 6| = 4 > w
  Mat out = temporal_tokens(p, cfg, far, &mask);
  CHECK(out.row(2) == base.row(2));
  CHECK(out.row(6) != base.row(6));  // the zeroed token itself changes
  CHECK(out.row(4) != base.row(4));  // |4 - 6| = 2 is inside the window

  // With the standard mask the CLS token aggregates globally.
  Mat base_cls = temporal_tokens(p, cfg, emb);
  Mat far_cls = temporal_tokens(p, cfg, far);
  CHECK(base_cls.row(0) != far_cls.row(0));
}

TEST_CASE("classification head is affine") {
  ModelConfig cfg = tiny_config();
  cfg.num_classes = cfg.embed_dim;
  ModelParams p = init_params(cfg, 9);
  std::mt19937_64 rng(4);
  Vec cls(cfg.embed_dim);
  for (int i = 0; i < cfg.embed_dim; ++i) cls(i) = gaussian(rng);

  p.head.w.setZero();
  p.head.b.setZero();
  CHECK(classify(p, cls).isZero());

  p.head.w.setIdentity();
  CHECK(classify(p, cls) == cls);

  p.head.b.setConstant(0.5);
  CHECK(classify(p, cls) == (cls.array() + 0.5).matrix());
}

TEST_CASE("projection head maps per frame") {
  ModelConfig cfg = tiny_config();
  ModelParams p = init_params(cfg, 13);
  std::mt19937_64 rng(6);
  Mat emb = random_embeddings(4, cfg.embed_dim, rng);
  Mat z = project(p, emb);
  CHECK(z.rows() == 4);
  CHECK(z.cols() == cfg.proj_dim);

  Mat same = emb;
  same.row(2) = emb.row(1);
  Mat z2 = project(p, same);
  CHECK(z2.row(1) == z2.row(2));

  p.proj_fc2.w.setZero();
  p.proj_fc2.b.setConstant(0.25);
  Mat zb = project(p, emb);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < cfg.proj_dim; ++c) CHECK(zb(r, c) == 0.25);
}

TEST_CASE("train forward wiring") {
  ModelConfig cfg = tiny_config();
  ModelParams p = init_params(cfg, 21);
  std::mt19937_64 rng(7);
  Clip v1 = random_clip(cfg, cfg.clip_len, rng);
  Clip v2 = random_clip(cfg, cfg.clip_len, rng);

  ForwardCache cache;
  ForwardResult r = forward_train(p, cfg, v1, v1, cache, nullptr);
  CHECK(r.logits.size() == cfg.num_classes);
  CHECK(r.proj1 == r.proj2);

  ForwardCache cache2;
  ForwardResult r2 = forward_train(p, cfg, v1, v2, cache2, nullptr);
  CHECK(r2.logits == r.logits);  // logits never depend on view2
  CHECK(r2.proj2 != r.proj2);

  Vec eval_logits = forward_eval(p, cfg, v1);
  CHECK(eval_logits == r.logits);
}

TEST_CASE("dropout perturbs training and leaves eval deterministic") {
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.3;
  ModelParams p = init_params(cfg, 22);
  std::mt19937_64 rng(8);
  Clip v1 = random_clip(cfg, cfg.clip_len, rng);

  std::mt19937_64 d1(99), d2(99), d3(100);
  ForwardCache c1, c2, c3;
  ForwardResult a = forward_train(p, cfg, v1, v1, c1, &d1);
  ForwardResult b = forward_train(p, cfg, v1, v1, c2, &d2);
  ForwardResult c = forward_train(p, cfg, v1, v1, c3, &d3);
  CHECK(a.logits == b.logits);  // same dropout stream
  CHECK(a.logits != c.logits);  // different dropout stream

  CHECK(forward_eval(p, cfg, v1) == forward_eval(p, cfg, v1));
}

TEST_CASE("temporal encoder rejects bad sequence lengths") {
  ModelConfig cfg = tiny_config();
  ModelParams p = init_params(cfg, 31);
  std::mt19937_64 rng(9);
  Mat too_long = random_embeddings(cfg.clip_len + 1, cfg.embed_dim, rng);
  CHECK(contains(error_message([&] { temporal_encode(p, cfg, too_long); }),
                 "length"));
  Mat wrong_dim = random_embeddings(2, cfg.embed_dim + 1, rng);
  CHECK(contains(error_message([&] { temporal_encode(p, cfg, wrong_dim); }),
                 "dimension"));
  Mat single = random_embeddings(1, cfg.embed_dim, rng);
  Vec cls = temporal_encode(p, cfg, single);
  CHECK(cls.allFinite());
}

TEST_CASE("no NaN or Inf anywhere for inputs in the unit interval") {
  ModelConfig cfg = tiny_config();
  cfg.spatial_depth = 2;
  cfg.temporal_layers = 2;
  ModelParams p = init_params(cfg, 77);
  std::mt19937_64 rng(10);
  Clip v1 = random_clip(cfg, cfg.clip_len, rng);
  Clip v2 = random_clip(cfg, cfg.clip_len, rng);
  ForwardCache cache;
  ForwardResult r = forward_train(p, cfg, v1, v2, cache, nullptr);
  CHECK(r.logits.allFinite());
  CHECK(r.proj1.allFinite());
  CHECK(r.proj2.allFinite());
  CHECK(cache.spatial1.embeddings.allFinite());
  CHECK(cache.temporal.cls_out.allFinite());
}
