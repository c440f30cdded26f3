#pragma once

#include <random>
#include <vector>

#include "evtact/tensor.hpp"

namespace evt {

// Row-major matrices throughout; rows are tokens, columns are features.
// Every parameter tensor is a Mat (biases and norm scales are 1 x d) so the
// optimizer, checkpointing and gradient checks can walk a flat (name, Mat)
// view of the whole model.

struct LinearP {
  Mat w;  // (in, out)
  Mat b;  // (1, out)
};

struct LayerNormP {
  Mat gamma;  // (1, d)
  Mat beta;   // (1, d)
};

constexpr double kLayerNormEps = 1e-5;

LinearP make_linear(int in, int out, std::mt19937_64& rng);
LayerNormP make_layer_norm(int d);
LinearP zeros_like(const LinearP& p);
LayerNormP zeros_like(const LayerNormP& p);

Mat linear(const Mat& x, const LinearP& p);
// Accumulates parameter gradients into grad; writes input gradient to dx
// unless dx is null.
void linear_backward(const Mat& x, const LinearP& p, const Mat& dy, Mat* dx,
                     LinearP& grad);

struct LayerNormCache {
  Mat xhat;     // normalized rows
  Vec inv_std;  // per-row 1 / sqrt(var + eps)
};

Mat layer_norm(const Mat& x, const LayerNormP& p, LayerNormCache* cache = nullptr);
Mat layer_norm_backward(const LayerNormCache& cache, const LayerNormP& p,
                        const Mat& dy, LayerNormP& grad);

Mat gelu(const Mat& x);  // exact form, 0.5 x (1 + erf(x / sqrt(2)))
Mat gelu_backward(const Mat& x, const Mat& dy);

// Row-wise softmax with an optional additive mask holding 0 or -inf. Each row
// must keep at least one unmasked entry.
Mat masked_softmax_rows(const Mat& scores, const Mat* mask);
Mat softmax_rows_backward(const Mat& probs, const Mat& dprobs);

// Pre-norm transformer block: x + attn(LN1(x)), then h + mlp(LN2(h)).
struct BlockP {
  LayerNormP ln1;
  LinearP wq, wk, wv, wo;
  LayerNormP ln2;
  LinearP fc1, fc2;
};

BlockP make_block(int d, int mlp_hidden, std::mt19937_64& rng);
BlockP zeros_like(const BlockP& p);

// Dropout is applied after the attention projection and after the MLP output,
// as inverted dropout. A null rng disables it (eval mode).
struct DropoutPlan {
  double p = 0.0;
  std::mt19937_64* rng = nullptr;
};

struct BlockCache {
  LayerNormCache ln1c;
  Mat ln1_out;
  Mat q, k, v;
  std::vector<Mat> probs;  // per head, (T, T)
  Mat attn_concat;
  Mat attn_mask;  // dropout multipliers (already scaled); empty when off
  LayerNormCache ln2c;
  Mat ln2_out;
  Mat fc1_out;  // pre-activation
  Mat act;
  Mat mlp_mask;
};

Mat block_forward(const Mat& x, const BlockP& p, int heads, const Mat* mask,
                  BlockCache* cache, const DropoutPlan& drop = {});
Mat block_backward(const BlockCache& cache, const BlockP& p, int heads,
                   const Mat* mask, const Mat& dy, BlockP& grad);

}  // namespace evt
