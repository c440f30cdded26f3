#include "evtact/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "evtact/common.hpp"

namespace evt {

void ModelConfig::validate() const {
  if (image_size < 1 || patch_size < 1 || in_channels < 1)
    throw ConfigError("model: image_size, patch_size and in_channels must be >= 1");
  if (image_size % patch_size != 0)
    throw ConfigError("model: image_size must be divisible by patch_size");
  if (embed_dim < 1) throw ConfigError("model: embed_dim must be >= 1");
  if (spatial_depth < 0 || temporal_layers < 0)
    throw ConfigError("model: block counts must be >= 0");
  if (spatial_heads < 1 || embed_dim % spatial_heads != 0)
    throw ConfigError("model: embed_dim must be divisible by spatial_heads");
  if (temporal_heads < 1 || embed_dim % temporal_heads != 0)
    throw ConfigError("model: embed_dim must be divisible by temporal_heads");
  if (attention_window < 1) throw ConfigError("model: attention_window must be >= 1");
  if (clip_len < 1) throw ConfigError("model: clip_len must be >= 1");
  if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
  if (proj_hidden < 0) throw ConfigError("model: proj_hidden must be >= 0");
  if (proj_dim < 1) throw ConfigError("model: proj_dim must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("model: dropout outside [0, 1)");
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int d = cfg.embed_dim;
  ModelParams p;
  p.patch_embed = make_linear(cfg.patch_dim(), d, rng);
  p.spatial_pos = Mat::Zero(cfg.patches_per_frame() + 1, d);
  p.spatial_cls = Mat::Zero(1, d);
  for (int i = 0; i < cfg.spatial_depth; ++i)
    p.spatial_blocks.push_back(make_block(d, cfg.mlp_hidden(), rng));
  p.spatial_ln = make_layer_norm(d);
  p.temporal_pos = Mat::Zero(cfg.clip_len + 1, d);
  p.temporal_cls = Mat::Zero(1, d);
  for (int i = 0; i < cfg.temporal_layers; ++i)
    p.temporal_blocks.push_back(make_block(d, cfg.mlp_hidden(), rng));
  p.head = make_linear(d, cfg.num_classes, rng);
  p.proj_fc1 = make_linear(d, cfg.proj_hidden_dim(), rng);
  p.proj_fc2 = make_linear(cfg.proj_hidden_dim(), cfg.proj_dim, rng);
  return p;
}

ModelParams zeros_like_params(const ModelParams& p) {
  ModelParams z;
  z.patch_embed = zeros_like(p.patch_embed);
  z.spatial_pos = Mat::Zero(p.spatial_pos.rows(), p.spatial_pos.cols());
  z.spatial_cls = Mat::Zero(1, p.spatial_cls.cols());
  for (const auto& b : p.spatial_blocks) z.spatial_blocks.push_back(zeros_like(b));
  z.spatial_ln = zeros_like(p.spatial_ln);
  z.temporal_pos = Mat::Zero(p.temporal_pos.rows(), p.temporal_pos.cols());
  z.temporal_cls = Mat::Zero(1, p.temporal_cls.cols());
  for (const auto& b : p.temporal_blocks) z.temporal_blocks.push_back(zeros_like(b));
  z.head = zeros_like(p.head);
  z.proj_fc1 = zeros_like(p.proj_fc1);
  z.proj_fc2 = zeros_like(p.proj_fc2);
  return z;
}

namespace {

void visit_linear(const std::string& prefix, LinearP& p, const ParamVisitor& fn) {
  fn(prefix + ".w", p.w);
  fn(prefix + ".b", p.b);
}

void visit_block(const std::string& prefix, BlockP& b, const ParamVisitor& fn) {
  fn(prefix + ".ln1.gamma", b.ln1.gamma);
  fn(prefix + ".ln1.beta", b.ln1.beta);
  visit_linear(prefix + ".wq", b.wq, fn);
  visit_linear(prefix + ".wk", b.wk, fn);
  visit_linear(prefix + ".wv", b.wv, fn);
  visit_linear(prefix + ".wo", b.wo, fn);
  fn(prefix + ".ln2.gamma", b.ln2.gamma);
  fn(prefix + ".ln2.beta", b.ln2.beta);
  visit_linear(prefix + ".fc1", b.fc1, fn);
  visit_linear(prefix + ".fc2", b.fc2, fn);
}

}  // namespace

void visit_params(ModelParams& p, const ParamVisitor& fn) {
  visit_linear("patch_embed", p.patch_embed, fn);
  fn("spatial.pos", p.spatial_pos);
  fn("spatial.cls", p.spatial_cls);
  for (size_t i = 0; i < p.spatial_blocks.size(); ++i)
    visit_block("spatial.block" + std::to_string(i), p.spatial_blocks[i], fn);
  fn("spatial.ln.gamma", p.spatial_ln.gamma);
  fn("spatial.ln.beta", p.spatial_ln.beta);
  fn("temporal.pos", p.temporal_pos);
  fn("temporal.cls", p.temporal_cls);
  for (size_t i = 0; i < p.temporal_blocks.size(); ++i)
    visit_block("temporal.block" + std::to_string(i), p.temporal_blocks[i], fn);
  visit_linear("head", p.head, fn);
  visit_linear("proj.fc1", p.proj_fc1, fn);
  visit_linear("proj.fc2", p.proj_fc2, fn);
}

std::int64_t count_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t d = cfg.embed_dim;
  const std::int64_t mlp = cfg.mlp_hidden();
  const std::int64_t block = 2 * d + 4 * (d * d + d) + 2 * d +
                             (d * mlp + mlp) + (mlp * d + d);
  std::int64_t total = 0;
  total += static_cast<std::int64_t>(cfg.patch_dim()) * d + d;
  total += static_cast<std::int64_t>(cfg.patches_per_frame() + 1) * d + d;
  total += cfg.spatial_depth * block + 2 * d;
  total += static_cast<std::int64_t>(cfg.clip_len + 1) * d + d;
  total += cfg.temporal_layers * block;
  total += d * cfg.num_classes + cfg.num_classes;
  const std::int64_t ph = cfg.proj_hidden_dim();
  total += d * ph + ph + ph * cfg.proj_dim + cfg.proj_dim;
  return total;
}

Mat window_mask(int n, int w) {
  const double neg_inf = -std::numeric_limits<double>::infinity();
  Mat mask = Mat::Zero(n + 1, n + 1);
  for (int t = 1; t <= n; ++t)
    for (int u = 1; u <= n; ++u)
      if (std::abs(t - u) > w) mask(t, u) = neg_inf;
  return mask;
}

namespace {

void check_frame(const EventFrame& f, const ModelConfig& cfg, int index) {
  if (f.size != cfg.image_size || f.channels != cfg.in_channels)
    throw std::invalid_argument(
        "clip frame " + std::to_string(index) + " is " + std::to_string(f.size) +
        "x" + std::to_string(f.size) + "x" + std::to_string(f.channels) +
        ", model expects " + std::to_string(cfg.image_size) + "x" +
        std::to_string(cfg.image_size) + "x" + std::to_string(cfg.in_channels));
  if (f.data.size() !=
      static_cast<size_t>(f.size) * f.size * static_cast<size_t>(f.channels))
    throw std::invalid_argument("clip frame " + std::to_string(index) +
                                " has inconsistent buffer size");
}

Mat patchify(const EventFrame& f, int patch) {
  const int grid = f.size / patch;
  Mat m(grid * grid, patch * patch * f.channels);
  for (int gr = 0; gr < grid; ++gr) {
    for (int gc = 0; gc < grid; ++gc) {
      int row = gr * grid + gc;
      int col = 0;
      for (int pr = 0; pr < patch; ++pr)
        for (int pc = 0; pc < patch; ++pc)
          for (int ch = 0; ch < f.channels; ++ch)
            m(row, col++) = f.at(gr * patch + pr, gc * patch + pc, ch);
    }
  }
  return m;
}

Mat temporal_tokens_in(const ModelParams& p, const Mat& embeddings) {
  const Eigen::Index m = embeddings.rows();
  Mat tokens(m + 1, embeddings.cols());
  tokens.row(0) = p.temporal_cls.row(0) + p.temporal_pos.row(0);
  for (Eigen::Index t = 0; t < m; ++t)
    tokens.row(t + 1) = embeddings.row(t) + p.temporal_pos.row(t + 1);
  return tokens;
}

void check_embeddings(const Mat& embeddings, const ModelConfig& cfg) {
  if (embeddings.rows() < 1 || embeddings.rows() > cfg.clip_len)
    throw std::invalid_argument(
        "embedding sequence length " + std::to_string(embeddings.rows()) +
        " outside [1, " + std::to_string(cfg.clip_len) + "]");
  if (embeddings.cols() != cfg.embed_dim)
    throw std::invalid_argument("embedding dimension " +
                                std::to_string(embeddings.cols()) +
                                " does not match embed_dim " +
                                std::to_string(cfg.embed_dim));
}

}  // namespace

Mat spatial_encode_cached(const ModelParams& p, const ModelConfig& cfg,
                          const Clip& clip, SpatialStageCache* cache,
                          const DropoutPlan& drop) {
  if (clip.frames.empty()) throw std::invalid_argument("empty clip");
  const Eigen::Index m = static_cast<Eigen::Index>(clip.frames.size());
  const int d = cfg.embed_dim;
  Mat embeddings(m, d);
  if (cache) cache->frames.assign(static_cast<size_t>(m), FrameCache{});
  for (Eigen::Index i = 0; i < m; ++i) {
    const EventFrame& f = clip.frames[static_cast<size_t>(i)];
    check_frame(f, cfg, static_cast<int>(i));
    FrameCache* fc = cache ? &cache->frames[static_cast<size_t>(i)] : nullptr;
    Mat patches = patchify(f, cfg.patch_size);
    Mat x = linear(patches, p.patch_embed);
    Mat tokens(x.rows() + 1, d);
    tokens.row(0) = p.spatial_cls.row(0) + p.spatial_pos.row(0);
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      tokens.row(r + 1) = x.row(r) + p.spatial_pos.row(r + 1);
    if (fc) {
      fc->patches = std::move(patches);
      fc->tokens_in = tokens;
      fc->blocks.resize(p.spatial_blocks.size());
    }
    for (size_t b = 0; b < p.spatial_blocks.size(); ++b)
      tokens = block_forward(tokens, p.spatial_blocks[b], cfg.spatial_heads,
                             nullptr, fc ? &fc->blocks[b] : nullptr, drop);
    Mat cls_row = tokens.row(0);
    Mat e = layer_norm(cls_row, p.spatial_ln, fc ? &fc->ln : nullptr);
    embeddings.row(i) = e.row(0);
  }
  if (cache) cache->embeddings = embeddings;
  return embeddings;
}

void spatial_encode_backward(const ModelParams& p, const ModelConfig& cfg,
                             const SpatialStageCache& cache,
                             const Mat& d_embeddings, ModelParams& grads) {
  const Eigen::Index m = d_embeddings.rows();
  const int d = cfg.embed_dim;
  for (Eigen::Index i = 0; i < m; ++i) {
    const FrameCache& fc = cache.frames[static_cast<size_t>(i)];
    Mat de = d_embeddings.row(i);
    Mat dcls = layer_norm_backward(fc.ln, p.spatial_ln, de, grads.spatial_ln);
    Mat dtok = Mat::Zero(cfg.patches_per_frame() + 1, d);
    dtok.row(0) = dcls.row(0);
    for (size_t b = p.spatial_blocks.size(); b-- > 0;)
      dtok = block_backward(fc.blocks[b], p.spatial_blocks[b], cfg.spatial_heads,
                            nullptr, dtok, grads.spatial_blocks[b]);
    grads.spatial_cls.row(0) += dtok.row(0);
    grads.spatial_pos += dtok;
    Mat dx = dtok.bottomRows(dtok.rows() - 1);
    linear_backward(fc.patches, p.patch_embed, dx, nullptr, grads.patch_embed);
  }
}

Vec classify_cached(const ModelParams& p, const ModelConfig& cfg,
                    const Mat& embeddings, TemporalStageCache* cache,
                    const DropoutPlan& drop) {
  check_embeddings(embeddings, cfg);
  const int m = static_cast<int>(embeddings.rows());
  Mat tokens = temporal_tokens_in(p, embeddings);
  Mat mask = window_mask(m, cfg.attention_window);
  if (cache) {
    cache->tokens_in = tokens;
    cache->mask = mask;
    cache->blocks.resize(p.temporal_blocks.size());
  }
  for (size_t b = 0; b < p.temporal_blocks.size(); ++b)
    tokens = block_forward(tokens, p.temporal_blocks[b], cfg.temporal_heads,
                           &mask, cache ? &cache->blocks[b] : nullptr, drop);
  Mat cls = tokens.row(0);
  if (cache) cache->cls_out = cls;
  Mat logits = linear(cls, p.head);
  return logits.row(0).transpose();
}

Mat classify_backward(const ModelParams& p, const ModelConfig& cfg,
                      const TemporalStageCache& cache, const Vec& dlogits,
                      ModelParams& grads) {
  const Eigen::Index m = cache.tokens_in.rows() - 1;
  Mat dlog = dlogits.transpose();
  Mat dcls(1, cfg.embed_dim);
  linear_backward(cache.cls_out, p.head, dlog, &dcls, grads.head);
  Mat dtok = Mat::Zero(m + 1, cfg.embed_dim);
  dtok.row(0) = dcls.row(0);
  for (size_t b = p.temporal_blocks.size(); b-- > 0;)
    dtok = block_backward(cache.blocks[b], p.temporal_blocks[b],
                          cfg.temporal_heads, &cache.mask, dtok,
                          grads.temporal_blocks[b]);
  grads.temporal_cls.row(0) += dtok.row(0);
  grads.temporal_pos.topRows(m + 1) += dtok;
  return dtok.bottomRows(m);
}

Mat project_cached(const ModelParams& p, const Mat& embeddings,
                   ProjStageCache* cache) {
  Mat fc1_out = linear(embeddings, p.proj_fc1);
  Mat act = gelu(fc1_out);
  Mat out = linear(act, p.proj_fc2);
  if (cache) {
    cache->in = embeddings;
    cache->fc1_out = std::move(fc1_out);
    cache->act = std::move(act);
  }
  return out;
}

Mat project_backward(const ModelParams& p, const ProjStageCache& cache,
                     const Mat& dproj, ModelParams& grads) {
  Mat dact(cache.act.rows(), cache.act.cols());
  linear_backward(cache.act, p.proj_fc2, dproj, &dact, grads.proj_fc2);
  Mat dfc1 = gelu_backward(cache.fc1_out, dact);
  Mat din(cache.in.rows(), cache.in.cols());
  linear_backward(cache.in, p.proj_fc1, dfc1, &din, grads.proj_fc1);
  return din;
}

Mat spatial_encode(const ModelParams& p, const ModelConfig& cfg, const Clip& clip) {
  return spatial_encode_cached(p, cfg, clip, nullptr);
}

Vec temporal_encode(const ModelParams& p, const ModelConfig& cfg,
                    const Mat& embeddings) {
  return temporal_tokens(p, cfg, embeddings).row(0).transpose();
}

Mat temporal_tokens(const ModelParams& p, const ModelConfig& cfg,
                    const Mat& embeddings, const Mat* mask_override) {
  check_embeddings(embeddings, cfg);
  const int m = static_cast<int>(embeddings.rows());
  Mat tokens = temporal_tokens_in(p, embeddings);
  Mat mask = mask_override ? *mask_override : window_mask(m, cfg.attention_window);
  if (mask.rows() != m + 1 || mask.cols() != m + 1)
    throw std::invalid_argument("attention mask shape mismatch");
  for (const auto& b : p.temporal_blocks)
    tokens = block_forward(tokens, b, cfg.temporal_heads, &mask, nullptr);
  return tokens;
}

Vec classify(const ModelParams& p, const Vec& cls_output) {
  Mat row = cls_output.transpose();
  return linear(row, p.head).row(0).transpose();
}

Mat project(const ModelParams& p, const Mat& embeddings) {
  return project_cached(p, embeddings, nullptr);
}

ForwardResult forward_train(const ModelParams& p, const ModelConfig& cfg,
                            const Clip& view1, const Clip& view2,
                            ForwardCache& cache, std::mt19937_64* dropout_rng) {
  DropoutPlan drop{cfg.dropout, cfg.dropout > 0.0 ? dropout_rng : nullptr};
  ForwardResult r;
  Mat e1 = spatial_encode_cached(p, cfg, view1, &cache.spatial1, drop);
  Mat e2 = spatial_encode_cached(p, cfg, view2, &cache.spatial2, drop);
  r.logits = classify_cached(p, cfg, e1, &cache.temporal, drop);
  r.proj1 = project_cached(p, e1, &cache.proj1);
  r.proj2 = project_cached(p, e2, &cache.proj2);
  return r;
}

void forward_backward(const ModelParams& p, const ModelConfig& cfg,
                      const ForwardCache& cache, const Vec& dlogits,
                      const Mat& dproj1, const Mat& dproj2, ModelParams& grads) {
  Mat de1 = classify_backward(p, cfg, cache.temporal, dlogits, grads);
  de1 += project_backward(p, cache.proj1, dproj1, grads);
  Mat de2 = project_backward(p, cache.proj2, dproj2, grads);
  spatial_encode_backward(p, cfg, cache.spatial1, de1, grads);
  spatial_encode_backward(p, cfg, cache.spatial2, de2, grads);
}

Vec forward_eval(const ModelParams& p, const ModelConfig& cfg, const Clip& clip) {
  Mat e = spatial_encode(p, cfg, clip);
  return classify_cached(p, cfg, e, nullptr);
}

}  // namespace evt
