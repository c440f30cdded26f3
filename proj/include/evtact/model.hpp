#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "evtact/frames.hpp"
#include "evtact/nn.hpp"

namespace evt {

struct ModelConfig {
  int image_size = 64;
  int patch_size = 16;
  int in_channels = 2;
  int embed_dim = 128;
  int spatial_depth = 4;
  int spatial_heads = 4;
  int temporal_layers = 3;
  int temporal_heads = 8;
  int attention_window = 8;  // one-sided token window
  int clip_len = 16;
  int num_classes = 11;
  int proj_hidden = 0;  // 0 means embed_dim
  int proj_dim = 128;
  double dropout = 0.0;

  int patches_per_frame() const {
    int g = image_size / patch_size;
    return g * g;
  }
  int patch_dim() const { return patch_size * patch_size * in_channels; }
  int proj_hidden_dim() const { return proj_hidden > 0 ? proj_hidden : embed_dim; }
  int mlp_hidden() const { return 4 * embed_dim; }
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Spatial encoder, temporal encoder, classification head and projection head.
// All parameters live here; visit_params walks them in a fixed named order.
struct ModelParams {
  LinearP patch_embed;
  Mat spatial_pos;  // (patches + 1, d), slot 0 for the spatial CLS
  Mat spatial_cls;  // (1, d)
  std::vector<BlockP> spatial_blocks;
  LayerNormP spatial_ln;  // applied to the per-frame CLS readout
  Mat temporal_pos;       // (clip_len + 1, d), slot 0 for the sequence CLS
  Mat temporal_cls;       // (1, d)
  std::vector<BlockP> temporal_blocks;
  LinearP head;
  LinearP proj_fc1, proj_fc2;
};

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
ModelParams zeros_like_params(const ModelParams& p);

using ParamVisitor = std::function<void(const std::string&, Mat&)>;
void visit_params(ModelParams& p, const ParamVisitor& fn);

std::int64_t count_params(const ModelConfig& cfg);

// Additive attention mask for a length-n token sequence plus a leading CLS:
// token t attends to tokens within |t - t'| <= w and to CLS; CLS attends to
// everything. Entries are 0 or -inf, rows are queries.
Mat window_mask(int n, int w);

// Stage-level API with caches, composable by the training loop.

struct FrameCache {
  Mat patches;    // (patches, patch_dim)
  Mat tokens_in;  // (patches + 1, d)
  std::vector<BlockCache> blocks;
  LayerNormCache ln;
};

struct SpatialStageCache {
  std::vector<FrameCache> frames;
  Mat embeddings;  // (m, d)
};

struct TemporalStageCache {
  Mat tokens_in;  // (m + 1, d)
  Mat mask;
  std::vector<BlockCache> blocks;
  Mat cls_out;  // (1, d)
};

struct ProjStageCache {
  Mat in;       // (m, d)
  Mat fc1_out;  // pre-activation
  Mat act;
};

Mat spatial_encode_cached(const ModelParams& p, const ModelConfig& cfg,
                          const Clip& clip, SpatialStageCache* cache,
                          const DropoutPlan& drop = {});
void spatial_encode_backward(const ModelParams& p, const ModelConfig& cfg,
                             const SpatialStageCache& cache, const Mat& d_embeddings,
                             ModelParams& grads);

Vec classify_cached(const ModelParams& p, const ModelConfig& cfg,
                    const Mat& embeddings, TemporalStageCache* cache,
                    const DropoutPlan& drop = {});
Mat classify_backward(const ModelParams& p, const ModelConfig& cfg,
                      const TemporalStageCache& cache, const Vec& dlogits,
                      ModelParams& grads);

Mat project_cached(const ModelParams& p, const Mat& embeddings,
                   ProjStageCache* cache);
Mat project_backward(const ModelParams& p, const ProjStageCache& cache,
                     const Mat& dproj, ModelParams& grads);

// Contract-level wrappers.

// One d-vector per frame (rows).
Mat spatial_encode(const ModelParams& p, const ModelConfig& cfg, const Clip& clip);

// Final CLS representation of the windowed temporal stack.
Vec temporal_encode(const ModelParams& p, const ModelConfig& cfg,
                    const Mat& embeddings);

// All token states after the temporal stack (row 0 is CLS); mask_override
// replaces the window mask, for locality and dense-oracle tests.
Mat temporal_tokens(const ModelParams& p, const ModelConfig& cfg,
                    const Mat& embeddings, const Mat* mask_override = nullptr);

Vec classify(const ModelParams& p, const Vec& cls_output);
Mat project(const ModelParams& p, const Mat& embeddings);

struct ForwardResult {
  Vec logits;
  Mat proj1, proj2;  // empty in eval mode
};

struct ForwardCache {
  SpatialStageCache spatial1, spatial2;
  TemporalStageCache temporal;
  ProjStageCache proj1, proj2;
};

// Training forward: logits from view1, projections from both views. A null
// dropout_rng (or dropout == 0) makes the pass deterministic.
ForwardResult forward_train(const ModelParams& p, const ModelConfig& cfg,
                            const Clip& view1, const Clip& view2,
                            ForwardCache& cache,
                            std::mt19937_64* dropout_rng = nullptr);
void forward_backward(const ModelParams& p, const ModelConfig& cfg,
                      const ForwardCache& cache, const Vec& dlogits,
                      const Mat& dproj1, const Mat& dproj2, ModelParams& grads);

// Eval forward: logits only, no dropout.
Vec forward_eval(const ModelParams& p, const ModelConfig& cfg, const Clip& clip);

}  // namespace evt
