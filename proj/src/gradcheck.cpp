#include "evtact/gradcheck.hpp"

#include <chrono>
#include <cmath>

#include "evtact/common.hpp"

namespace evt {

ModelConfig gradcheck_config() {
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 8;
  cfg.in_channels = 2;
  cfg.embed_dim = 16;
  cfg.spatial_depth = 1;
  cfg.spatial_heads = 2;
  cfg.temporal_layers = 1;
  cfg.temporal_heads = 2;
  cfg.attention_window = 2;
  cfg.clip_len = 4;
  cfg.num_classes = 5;
  cfg.proj_hidden = 16;
  cfg.proj_dim = 8;
  cfg.dropout = 0.0;
  return cfg;
}

namespace {

Clip random_clip(const ModelConfig& cfg, std::mt19937_64& rng) {
  Clip clip;
  for (int i = 0; i < cfg.clip_len; ++i) {
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

}  // namespace

GradCheckReport gradient_check(const ModelConfig& cfg, const LossConfig& loss_cfg,
                               std::uint64_t seed, double fd_step) {
  auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(mix_seed(seed, 0x9e3779b97f4a7c15ull));
  ModelParams params = init_params(cfg, rng());
  Clip view1 = random_clip(cfg, rng);
  Clip view2 = random_clip(cfg, rng);
  int label = static_cast<int>(uniform_int(rng, 0, cfg.num_classes - 1));

  auto eval = [&](const ModelParams& p) {
    ForwardCache cache;
    ForwardResult r = forward_train(p, cfg, view1, view2, cache, nullptr);
    return total_loss(r.logits, label, r.proj1, r.proj2, loss_cfg).total;
  };

  ModelParams grads = zeros_like_params(params);
  {
    ForwardCache cache;
    ForwardResult r = forward_train(params, cfg, view1, view2, cache, nullptr);
    Vec dlogits;
    Mat dproj1, dproj2;
    total_loss_with_grad(r.logits, label, r.proj1, r.proj2, loss_cfg, dlogits,
                         dproj1, dproj2);
    forward_backward(params, cfg, cache, dlogits, dproj1, dproj2, grads);
  }

  struct BlockRef {
    std::string name;
    Mat* param;
    Mat* grad;
  };
  std::vector<BlockRef> refs;
  {
    std::vector<std::pair<std::string, Mat*>> ps, gs;
    visit_params(params, [&](const std::string& n, Mat& m) { ps.push_back({n, &m}); });
    visit_params(grads, [&](const std::string& n, Mat& m) { gs.push_back({n, &m}); });
    for (size_t i = 0; i < ps.size(); ++i)
      refs.push_back(BlockRef{ps[i].first, ps[i].second, gs[i].second});
  }

  GradCheckReport report;
  for (const BlockRef& ref : refs) {
    Mat& m = *ref.param;
    double num = 0.0, den = 0.0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        double save = m(r, c);
        m(r, c) = save + fd_step;
        double up = eval(params);
        m(r, c) = save - fd_step;
        double dn = eval(params);
        m(r, c) = save;
        double fd = (up - dn) / (2.0 * fd_step);
        double diff = fd - (*ref.grad)(r, c);
        num += diff * diff;
        den += fd * fd;
      }
    }
    double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-30);
    report.blocks.push_back(GradBlockReport{ref.name, rel});
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace evt
