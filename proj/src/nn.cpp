#include "evtact/nn.hpp"

#include <cmath>
#include <numbers>

#include "evtact/common.hpp"

namespace evt {

void trunc_normal(Mat& m, double sigma, std::mt19937_64& rng) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      double z;
      do {
        z = gaussian(rng);
      } while (std::abs(z) > 2.0);
      m(r, c) = z * sigma;
    }
  }
}

LinearP make_linear(int in, int out, std::mt19937_64& rng) {
  LinearP p;
  p.w = Mat(in, out);
  trunc_normal(p.w, 0.02, rng);
  p.b = Mat::Zero(1, out);
  return p;
}

LayerNormP make_layer_norm(int d) {
  LayerNormP p;
  p.gamma = Mat::Ones(1, d);
  p.beta = Mat::Zero(1, d);
  return p;
}

LinearP zeros_like(const LinearP& p) {
  return LinearP{Mat::Zero(p.w.rows(), p.w.cols()), Mat::Zero(1, p.b.cols())};
}

LayerNormP zeros_like(const LayerNormP& p) {
  return LayerNormP{Mat::Zero(1, p.gamma.cols()), Mat::Zero(1, p.beta.cols())};
}

Mat linear(const Mat& x, const LinearP& p) {
  Mat y = x * p.w;
  y.rowwise() += p.b.row(0);
  return y;
}

void linear_backward(const Mat& x, const LinearP& p, const Mat& dy, Mat* dx,
                     LinearP& grad) {
  grad.w.noalias() += x.transpose() * dy;
  grad.b.row(0) += dy.colwise().sum();
  if (dx) dx->noalias() = dy * p.w.transpose();
}

Mat layer_norm(const Mat& x, const LayerNormP& p, LayerNormCache* cache) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  Mat xhat(rows, cols);
  Vec inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double mu = x.row(r).mean();
    double var = (x.row(r).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mu) * is;
    inv_std(r) = is;
  }
  Mat y = xhat;
  for (Eigen::Index r = 0; r < rows; ++r)
    y.row(r) = xhat.row(r).cwiseProduct(p.gamma.row(0)) + p.beta.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat layer_norm_backward(const LayerNormCache& cache, const LayerNormP& p,
                        const Mat& dy, LayerNormP& grad) {
  const Eigen::Index rows = dy.rows(), cols = dy.cols();
  grad.gamma.row(0) += (dy.cwiseProduct(cache.xhat)).colwise().sum();
  grad.beta.row(0) += dy.colwise().sum();
  Mat dx(rows, cols);
  const double inv_d = 1.0 / static_cast<double>(cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(p.gamma.row(0));
    double sum_dxhat = dxhat.sum();
    double sum_dxhat_xhat = dxhat.cwiseProduct(cache.xhat.row(r)).sum();
    dx.row(r) = cache.inv_std(r) *
                (dxhat.array() - inv_d * sum_dxhat -
                 cache.xhat.row(r).array() * inv_d * sum_dxhat_xhat);
  }
  return dx;
}

Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::erf(v * (std::numbers::sqrt2 / 2.0)));
  });
}

Mat gelu_backward(const Mat& x, const Mat& dy) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  Mat dx = x.unaryExpr([](double v) {
    double phi_big = 0.5 * (1.0 + std::erf(v * (std::numbers::sqrt2 / 2.0)));
    double phi_small = inv_sqrt_2pi * std::exp(-0.5 * v * v);
    return phi_big + v * phi_small;
  });
  return dx.cwiseProduct(dy);
}

Mat masked_softmax_rows(const Mat& scores, const Mat* mask) {
  Mat s = scores;
  if (mask) s += *mask;
  Mat probs(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    double m = s.row(r).maxCoeff();
    Eigen::ArrayXd e = (s.row(r).array() - m).exp();
    probs.row(r) = e / e.sum();
  }
  return probs;
}

Mat softmax_rows_backward(const Mat& probs, const Mat& dprobs) {
  Mat ds(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    double dot = dprobs.row(r).dot(probs.row(r));
    ds.row(r) = (probs.row(r).array() * (dprobs.row(r).array() - dot)).matrix();
  }
  return ds;
}

BlockP make_block(int d, int mlp_hidden, std::mt19937_64& rng) {
  BlockP p;
  p.ln1 = make_layer_norm(d);
  p.wq = make_linear(d, d, rng);
  p.wk = make_linear(d, d, rng);
  p.wv = make_linear(d, d, rng);
  p.wo = make_linear(d, d, rng);
  p.ln2 = make_layer_norm(d);
  p.fc1 = make_linear(d, mlp_hidden, rng);
  p.fc2 = make_linear(mlp_hidden, d, rng);
  return p;
}

BlockP zeros_like(const BlockP& p) {
  return BlockP{zeros_like(p.ln1), zeros_like(p.wq), zeros_like(p.wk),
                zeros_like(p.wv),  zeros_like(p.wo), zeros_like(p.ln2),
                zeros_like(p.fc1), zeros_like(p.fc2)};
}

namespace {

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, const DropoutPlan& drop) {
  Mat m(rows, cols);
  const double keep = 1.0 - drop.p;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = uniform01(*drop.rng) < drop.p ? 0.0 : 1.0 / keep;
  return m;
}

}  // namespace

Mat block_forward(const Mat& x, const BlockP& p, int heads, const Mat* mask,
                  BlockCache* cache, const DropoutPlan& drop) {
  const Eigen::Index T = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool use_drop = drop.p > 0.0 && drop.rng != nullptr;

  LayerNormCache ln1c;
  Mat ln1_out = layer_norm(x, p.ln1, cache ? &ln1c : nullptr);
  Mat q = linear(ln1_out, p.wq);
  Mat k = linear(ln1_out, p.wk);
  Mat v = linear(ln1_out, p.wv);

  Mat concat(T, d);
  std::vector<Mat> probs;
  if (cache) probs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    auto qh = q.block(0, h * dh, T, dh);
    auto kh = k.block(0, h * dh, T, dh);
    auto vh = v.block(0, h * dh, T, dh);
    Mat scores = (qh * kh.transpose()) * scale;
    Mat ph = masked_softmax_rows(scores, mask);
    concat.block(0, h * dh, T, dh).noalias() = ph * vh;
    if (cache) probs.push_back(std::move(ph));
  }

  Mat attn = linear(concat, p.wo);
  Mat attn_mask;
  if (use_drop) {
    attn_mask = dropout_mask(T, d, drop);
    attn = attn.cwiseProduct(attn_mask);
  }
  Mat h_res = x + attn;

  LayerNormCache ln2c;
  Mat ln2_out = layer_norm(h_res, p.ln2, cache ? &ln2c : nullptr);
  Mat fc1_out = linear(ln2_out, p.fc1);
  Mat act = gelu(fc1_out);
  Mat mlp = linear(act, p.fc2);
  Mat mlp_mask;
  if (use_drop) {
    mlp_mask = dropout_mask(T, d, drop);
    mlp = mlp.cwiseProduct(mlp_mask);
  }
  Mat y = h_res + mlp;

  if (cache) {
    cache->ln1c = std::move(ln1c);
    cache->ln1_out = std::move(ln1_out);
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->attn_concat = std::move(concat);
    cache->attn_mask = std::move(attn_mask);
    cache->ln2c = std::move(ln2c);
    cache->ln2_out = std::move(ln2_out);
    cache->fc1_out = std::move(fc1_out);
    cache->act = std::move(act);
    cache->mlp_mask = std::move(mlp_mask);
  }
  return y;
}

Mat block_backward(const BlockCache& cache, const BlockP& p, int heads,
                   const Mat* mask, const Mat& dy, BlockP& grad) {
  (void)mask;  // masked positions have zero probability, so no special casing
  const Eigen::Index T = dy.rows();
  const Eigen::Index d = dy.cols();
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // MLP branch.
  Mat dmlp = cache.mlp_mask.size() ? dy.cwiseProduct(cache.mlp_mask) : dy;
  Mat dact(T, cache.act.cols());
  linear_backward(cache.act, p.fc2, dmlp, &dact, grad.fc2);
  Mat dfc1 = gelu_backward(cache.fc1_out, dact);
  Mat dln2_out(T, d);
  linear_backward(cache.ln2_out, p.fc1, dfc1, &dln2_out, grad.fc1);
  Mat dh_res = dy + layer_norm_backward(cache.ln2c, p.ln2, dln2_out, grad.ln2);

  // Attention branch.
  Mat dattn = cache.attn_mask.size() ? dh_res.cwiseProduct(cache.attn_mask)
                                     : dh_res;
  Mat dconcat(T, d);
  linear_backward(cache.attn_concat, p.wo, dattn, &dconcat, grad.wo);

  Mat dq(T, d), dk(T, d), dv(T, d);
  for (int h = 0; h < heads; ++h) {
    auto vh = cache.v.block(0, h * dh, T, dh);
    auto qh = cache.q.block(0, h * dh, T, dh);
    auto kh = cache.k.block(0, h * dh, T, dh);
    const Mat& ph = cache.probs[static_cast<size_t>(h)];
    auto doh = dconcat.block(0, h * dh, T, dh);
    Mat dp = doh * vh.transpose();
    dv.block(0, h * dh, T, dh).noalias() = ph.transpose() * doh;
    Mat ds = softmax_rows_backward(ph, dp);
    dq.block(0, h * dh, T, dh).noalias() = (ds * kh) * scale;
    dk.block(0, h * dh, T, dh).noalias() = (ds.transpose() * qh) * scale;
  }

  Mat dln1_out(T, d), tmp(T, d);
  linear_backward(cache.ln1_out, p.wq, dq, &dln1_out, grad.wq);
  linear_backward(cache.ln1_out, p.wk, dk, &tmp, grad.wk);
  dln1_out += tmp;
  linear_backward(cache.ln1_out, p.wv, dv, &tmp, grad.wv);
  dln1_out += tmp;

  return dh_res + layer_norm_backward(cache.ln1c, p.ln1, dln1_out, grad.ln1);
}

}  // namespace evt
