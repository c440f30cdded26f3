#include "evtact/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "evtact/common.hpp"

namespace evt {

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("loss: tau must be > 0");
  if (alpha < 0.0) throw ConfigError("loss: alpha must be >= 0");
}

double cross_entropy(const Vec& logits, int label) {
  if (label < 0 || label >= logits.size())
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                " outside [0, " + std::to_string(logits.size()) +
                                ")");
  double m = logits.maxCoeff();
  double lse = std::log((logits.array() - m).exp().sum()) + m;
  return lse - logits(label);
}

Vec cross_entropy_grad(const Vec& logits, int label) {
  if (label < 0 || label >= logits.size())
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                " outside [0, " + std::to_string(logits.size()) +
                                ")");
  double m = logits.maxCoeff();
  Eigen::ArrayXd e = (logits.array() - m).exp();
  Vec g = (e / e.sum()).matrix();
  g(label) -= 1.0;
  return g;
}

namespace {

constexpr double kNormFloor = 1e-12;

double checked_norm(const Vec& v, const char* what) {
  double n = v.norm();
  if (n < kNormFloor)
    throw std::domain_error(std::string("zero-norm ") + what +
                            " in cosine similarity");
  return n;
}

struct EcTerms {
  Mat c11;  // cos(view1, view1)
  Mat c12;  // cos(view1, view2)
  Mat u1, u2;
  Vec norm1, norm2;
};

EcTerms ec_terms(const Mat& z1, const Mat& z2) {
  if (z1.rows() != z2.rows() || z1.cols() != z2.cols())
    throw std::invalid_argument("event_contrastive: projection sets differ in shape");
  if (z1.rows() < 2)
    throw std::invalid_argument(
        "event_contrastive: needs at least 2 frames, got " +
        std::to_string(z1.rows()));
  EcTerms t;
  t.norm1 = Vec(z1.rows());
  t.norm2 = Vec(z2.rows());
  t.u1 = Mat(z1.rows(), z1.cols());
  t.u2 = Mat(z2.rows(), z2.cols());
  for (Eigen::Index r = 0; r < z1.rows(); ++r) {
    double n1 = z1.row(r).norm();
    if (n1 < kNormFloor)
      throw std::domain_error("zero-norm projection view1[" + std::to_string(r) + "]");
    t.norm1(r) = n1;
    t.u1.row(r) = z1.row(r) / n1;
    double n2 = z2.row(r).norm();
    if (n2 < kNormFloor)
      throw std::domain_error("zero-norm projection view2[" + std::to_string(r) + "]");
    t.norm2(r) = n2;
    t.u2.row(r) = z2.row(r) / n2;
  }
  t.c11 = t.u1 * t.u1.transpose();
  t.c12 = t.u1 * t.u2.transpose();
  return t;
}

// One anchor direction of the loss; when dc11/dc12 are non-null the
// d loss / d cosine entries are accumulated into them.
double ec_value(const EcTerms& t, double tau, Mat* dc11, Mat* dc12) {
  const Eigen::Index n = t.c11.rows();
  const double inv_tau = 1.0 / tau;
  double loss = 0.0;
  std::vector<double> args;
  args.reserve(static_cast<size_t>(2 * (n - 1)));
  for (Eigen::Index t1 = 0; t1 < n; ++t1) {
    args.clear();
    for (Eigen::Index t2 = 0; t2 < n; ++t2) {
      if (t2 == t1) continue;
      args.push_back(t.c11(t1, t2) * inv_tau);
      args.push_back(t.c12(t1, t2) * inv_tau);
    }
    double m = args[0];
    for (double a : args) m = std::max(m, a);
    double sum = 0.0;
    for (double a : args) sum += std::exp(a - m);
    double lse = m + std::log(sum);
    loss += lse - t.c12(t1, t1) * inv_tau;
    if (dc11) {
      for (Eigen::Index t2 = 0; t2 < n; ++t2) {
        if (t2 == t1) continue;
        (*dc11)(t1, t2) += std::exp(t.c11(t1, t2) * inv_tau - lse) * inv_tau;
        (*dc12)(t1, t2) += std::exp(t.c12(t1, t2) * inv_tau - lse) * inv_tau;
      }
      (*dc12)(t1, t1) -= inv_tau;
    }
  }
  return loss;
}

// Chains d loss / d cos through the cosine of rows (a_t1, b_t2), where
// cos_ab(t1, t2) pairs set A row t1 with set B row t2.
void cosine_chain(const Mat& dcos, const Mat& ua, const Vec& na, const Mat& ub,
                  const Vec& nb, bool same_set, Mat& ga, Mat& gb) {
  const Eigen::Index n = dcos.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      double w = dcos(i, j);
      if (w == 0.0) continue;
      if (same_set && i == j) continue;  // diagonal of c11 never contributes
      double c = ua.row(i).dot(ub.row(j));
      ga.row(i) += w / na(i) * (ub.row(j) - c * ua.row(i));
      gb.row(j) += w / nb(j) * (ua.row(i) - c * ub.row(j));
    }
  }
}

}  // namespace

double cosine_sim_exp(const Vec& u, const Vec& v, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("cosine_sim_exp: tau must be > 0");
  if (u.size() != v.size())
    throw std::invalid_argument("cosine_sim_exp: dimension mismatch");
  double nu = checked_norm(u, "first argument");
  double nv = checked_norm(v, "second argument");
  return std::exp(u.dot(v) / (nu * nv * tau));
}

double event_contrastive(const Mat& proj1, const Mat& proj2, double tau) {
  if (!(tau > 0.0))
    throw std::invalid_argument("event_contrastive: tau must be > 0");
  EcTerms t = ec_terms(proj1, proj2);
  return ec_value(t, tau, nullptr, nullptr);
}

double event_contrastive_with_grad(const Mat& proj1, const Mat& proj2,
                                   double tau, Mat& g1, Mat& g2) {
  if (!(tau > 0.0))
    throw std::invalid_argument("event_contrastive: tau must be > 0");
  EcTerms t = ec_terms(proj1, proj2);
  const Eigen::Index n = proj1.rows();
  Mat dc11 = Mat::Zero(n, n);
  Mat dc12 = Mat::Zero(n, n);
  double loss = ec_value(t, tau, &dc11, &dc12);
  g1 = Mat::Zero(proj1.rows(), proj1.cols());
  g2 = Mat::Zero(proj2.rows(), proj2.cols());
  cosine_chain(dc11, t.u1, t.norm1, t.u1, t.norm1, /*same_set=*/true, g1, g1);
  cosine_chain(dc12, t.u1, t.norm1, t.u2, t.norm2, /*same_set=*/false, g1, g2);
  return loss;
}

LossParts total_loss(const Vec& logits, int label, const Mat& proj1,
                     const Mat& proj2, const LossConfig& cfg) {
  cfg.validate();
  LossParts parts;
  parts.ce_part = cross_entropy(logits, label);
  if (cfg.symmetric_ec) {
    parts.ec_part = 0.5 * (event_contrastive(proj1, proj2, cfg.tau) +
                           event_contrastive(proj2, proj1, cfg.tau));
  } else {
    parts.ec_part = event_contrastive(proj1, proj2, cfg.tau);
  }
  parts.total = parts.ce_part + cfg.alpha * parts.ec_part;
  return parts;
}

LossParts total_loss_with_grad(const Vec& logits, int label, const Mat& proj1,
                               const Mat& proj2, const LossConfig& cfg,
                               Vec& dlogits, Mat& dproj1, Mat& dproj2) {
  cfg.validate();
  LossParts parts;
  parts.ce_part = cross_entropy(logits, label);
  dlogits = cross_entropy_grad(logits, label);
  Mat g1, g2;
  if (cfg.symmetric_ec) {
    Mat h1, h2;
    double a = event_contrastive_with_grad(proj1, proj2, cfg.tau, g1, g2);
    double b = event_contrastive_with_grad(proj2, proj1, cfg.tau, h2, h1);
    parts.ec_part = 0.5 * (a + b);
    g1 = 0.5 * (g1 + h1);
    g2 = 0.5 * (g2 + h2);
  } else {
    parts.ec_part = event_contrastive_with_grad(proj1, proj2, cfg.tau, g1, g2);
  }
  dproj1 = cfg.alpha * g1;
  dproj2 = cfg.alpha * g2;
  parts.total = parts.ce_part + cfg.alpha * parts.ec_part;
  return parts;
}

}  // namespace evt
