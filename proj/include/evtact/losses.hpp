#pragma once

#include "evtact/tensor.hpp"

namespace evt {

struct LossConfig {
  double tau = 0.1;
  double alpha = 1.0;
  // Off by default: anchors come from view 1 only. When on, the loss is the
  // mean of both anchor directions.
  bool symmetric_ec = false;

  void validate() const;

  bool operator==(const LossConfig&) const = default;
};

// -log softmax(logits)[label], max-subtracted.
double cross_entropy(const Vec& logits, int label);
Vec cross_entropy_grad(const Vec& logits, int label);  // softmax - one_hot

// exp(cos(u, v) / tau); zero-norm inputs are an error.
double cosine_sim_exp(const Vec& u, const Vec& v, double tau);

// For each anchor t1 in view 1: positive is proj2[t1]; the denominator sums
// the misaligned similarities from both views and excludes the positive.
// Stabilized in log space.
double event_contrastive(const Mat& proj1, const Mat& proj2, double tau);
double event_contrastive_with_grad(const Mat& proj1, const Mat& proj2,
                                   double tau, Mat& g1, Mat& g2);

struct LossParts {
  double total = 0.0;
  double ce_part = 0.0;
  double ec_part = 0.0;
};

// total = ce + alpha * ec.
LossParts total_loss(const Vec& logits, int label, const Mat& proj1,
                     const Mat& proj2, const LossConfig& cfg);
LossParts total_loss_with_grad(const Vec& logits, int label, const Mat& proj1,
                               const Mat& proj2, const LossConfig& cfg,
                               Vec& dlogits, Mat& dproj1, Mat& dproj2);

}  // namespace evt
