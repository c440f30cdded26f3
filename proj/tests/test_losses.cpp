#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "evtact/common.hpp"
#include "evtact/losses.hpp"
#include "testutil.hpp"

using namespace evt;
using testutil::contains;
using testutil::error_message;

namespace {

Mat random_rows(std::mt19937_64& rng, int n, int d) {
  Mat m(n, d);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) m(r, c) = gaussian(rng);
  return m;
}

}  // namespace

TEST_CASE("cross entropy of uniform logits is log of the class count") {
  for (int nc : {2, 10, 11}) {
    Vec logits = Vec::Constant(nc, 0.7);
    CHECK(cross_entropy(logits, 0) ==
          doctest::Approx(std::log(static_cast<double>(nc))).epsilon(1e-9));
    CHECK(std::abs(cross_entropy(logits, nc - 1) - std::log(double(nc))) < 1e-6);
  }
}

TEST_CASE("cross entropy of a dominant logit") {
  Vec logits = Vec::Zero(11);
  logits(0) = 10.0;
  double value = cross_entropy(logits, 0);
  CHECK(value == doctest::Approx(std::log1p(10.0 * std::exp(-10.0))).epsilon(1e-12));
  CHECK(std::abs(value - 4.5399e-4) < 1e-7);
}

TEST_CASE("cross entropy is shift invariant and nonnegative") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    int nc = static_cast<int>(uniform_int(rng, 2, 12));
    Vec logits(nc);
    for (int i = 0; i < nc; ++i) logits(i) = gaussian(rng) * 5.0;
    int label = static_cast<int>(uniform_int(rng, 0, nc - 1));
    double base = cross_entropy(logits, label);
    CHECK(base >= 0.0);
    double c = gaussian(rng) * 100.0;
    double shifted = cross_entropy((logits.array() + c).matrix(), label);
    CHECK(std::abs(shifted - base) <= 1e-9);
  }
}

TEST_CASE("cross entropy gradient matches finite differences") {
  std::mt19937_64 rng(2);
  Vec logits(7);
  for (int i = 0; i < 7; ++i) logits(i) = gaussian(rng);
  int label = 3;
  Vec g = cross_entropy_grad(logits, label);
  const double h = 1e-6;
  for (int i = 0; i < 7; ++i) {
    Vec up = logits, dn = logits;
    up(i) += h;
    dn(i) -= h;
    double fd = (cross_entropy(up, label) - cross_entropy(dn, label)) / (2 * h);
    CHECK(g(i) == doctest::Approx(fd).epsilon(1e-6));
  }
  CHECK(std::abs(g.sum()) < 1e-12);  // softmax minus one-hot sums to zero
}

TEST_CASE("cross entropy rejects out-of-range labels") {
  Vec logits = Vec::Zero(4);
  CHECK(contains(error_message([&] { cross_entropy(logits, 4); }), "label"));
  CHECK(contains(error_message([&] { cross_entropy(logits, -1); }), "label"));
}

TEST_CASE("cosine similarity exponent") {
  Vec u(3), v(3);
  u << 1, 2, 3;
  v << -2, 1, 0;  // orthogonal to u
  CHECK(cosine_sim_exp(u, u, 0.1) == doctest::Approx(std::exp(10.0)).epsilon(1e-9));
  CHECK(std::abs(cosine_sim_exp(u, u, 0.1) - 22026.4658) < 1e-2);
  CHECK(cosine_sim_exp(u, v, 0.1) == doctest::Approx(1.0).epsilon(1e-12));
  Vec w(3);
  w << 4, -1, 2;
  double rel = std::abs(cosine_sim_exp(2.0 * u, w, 0.5) -
                        cosine_sim_exp(u, w, 0.5)) /
               cosine_sim_exp(u, w, 0.5);
  CHECK(rel <= 1e-9);
  Vec zero = Vec::Zero(3);
  CHECK(contains(error_message([&] { cosine_sim_exp(zero, u, 0.1); }), "zero-norm"));
}

TEST_CASE("identical projections give n * ln(2(n-1))") {
  std::mt19937_64 rng(3);
  for (int n : {2, 8, 16}) {
    Mat z(n, 6);
    Vec base(6);
    for (int i = 0; i < 6; ++i) base(i) = gaussian(rng);
    for (int r = 0; r < n; ++r) z.row(r) = base.transpose();
    double loss = event_contrastive(z, z, 0.1);
    double expect = n * std::log(2.0 * (n - 1));
    CHECK(std::abs(loss - expect) < 1e-4);
  }
  Mat z2(2, 4);
  z2.setOnes();
  CHECK(std::abs(event_contrastive(z2, z2, 0.1) - 1.386294) < 1e-6);
  Mat z16(16, 4);
  z16.setConstant(0.3);
  CHECK(std::abs(event_contrastive(z16, z16, 0.1) - 54.4192) < 1e-4);
}

TEST_CASE("orthogonal negatives with aligned positives") {
  Mat z(2, 2);
  z << 1, 0, 0, 1;  // z_1 perpendicular to z_2
  double loss = event_contrastive(z, z, 0.1);
  CHECK(std::abs(loss - 2.0 * (std::log(2.0) - 10.0)) < 1e-9);
  CHECK(std::abs(loss - (-18.613706)) < 1e-4);
}

TEST_CASE("per-vector positive rescaling leaves the loss unchanged") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    int n = static_cast<int>(uniform_int(rng, 2, 10));
    int d = static_cast<int>(uniform_int(rng, 3, 12));
    Mat z1 = random_rows(rng, n, d);
    Mat z2 = random_rows(rng, n, d);
    double base = event_contrastive(z1, z2, 0.1);
    Mat s1 = z1, s2 = z2;
    for (int r = 0; r < n; ++r) {
      s1.row(r) *= uniform_range(rng, 0.1, 10.0);
      s2.row(r) *= uniform_range(rng, 0.1, 10.0);
    }
    double scaled = event_contrastive(s1, s2, 0.1);
    CHECK(std::abs(scaled - base) / std::abs(base) <= 1e-6);
  }
}

TEST_CASE("loss can be negative and stays finite for unit inputs") {
  Mat z(2, 2);
  z << 1, 0, 0, 1;
  CHECK(event_contrastive(z, z, 0.1) < 0.0);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Mat z1 = random_rows(rng, 6, 8);
    Mat z2 = random_rows(rng, 6, 8);
    for (int r = 0; r < 6; ++r) {
      z1.row(r).normalize();
      z2.row(r).normalize();
    }
    CHECK(std::isfinite(event_contrastive(z1, z2, 0.1)));
  }
}

TEST_CASE("improving positive alignment lowers the loss, negatives held fixed") {
  // z1 rows are distinct basis vectors; z2 rows tilt away from their anchor
  // inside a plane orthogonal to every other row. All negative cosines stay
  // exactly 0, so the positive similarity cos(theta) is the only moving part
  // and the loss has the closed form n (ln(2(n-1)) - cos(theta)/tau).
  const double tau = 0.1;
  for (int n : {2, 4, 8}) {
    int d = 2 * n;
    Mat z1 = Mat::Zero(n, d);
    for (int t = 0; t < n; ++t) z1(t, t) = 1.0;
    double prev = std::numeric_limits<double>::infinity();
    for (int step = 0; step <= 6; ++step) {
      double theta = 1.5 - 0.25 * step;
      Mat z2 = Mat::Zero(n, d);
      for (int t = 0; t < n; ++t) {
        z2(t, t) = std::cos(theta);
        z2(t, n + t) = std::sin(theta);
      }
      double cur = event_contrastive(z1, z2, tau);
      double expect = n * (std::log(2.0 * (n - 1)) - std::cos(theta) / tau);
      CHECK(cur == doctest::Approx(expect).epsilon(1e-10));
      CHECK(cur < prev);
      prev = cur;
    }
  }
}

TEST_CASE("contrastive loss rejects degenerate inputs") {
  Mat one(1, 4);
  one.setOnes();
  CHECK(contains(error_message([&] { event_contrastive(one, one, 0.1); }),
                 "at least 2"));
  Mat z(2, 4);
  z.setOnes();
  Mat bad = z;
  bad.row(1).setZero();
  CHECK(contains(error_message([&] { event_contrastive(z, bad, 0.1); }),
                 "zero-norm projection view2[1]"));
  CHECK(contains(error_message([&] { event_contrastive(bad, z, 0.1); }),
                 "zero-norm projection view1[1]"));
  Mat other(3, 4);
  other.setOnes();
  CHECK(contains(error_message([&] { event_contrastive(z, other, 0.1); }),
                 "shape"));
}

TEST_CASE("event contrastive gradient matches finite differences") {
  std::mt19937_64 rng(7);
  const double h = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    int n = 4, d = 8;
    Mat z1 = random_rows(rng, n, d);
    Mat z2 = random_rows(rng, n, d);
    Mat g1, g2;
    event_contrastive_with_grad(z1, z2, 0.1, g1, g2);

    double num = 0.0, den = 0.0;
    auto fd_check = [&](Mat& z, const Mat& g) {
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < d; ++c) {
          double save = z(r, c);
          z(r, c) = save + h;
          double up = event_contrastive(z1, z2, 0.1);
          z(r, c) = save - h;
          double dn = event_contrastive(z1, z2, 0.1);
          z(r, c) = save;
          double fd = (up - dn) / (2 * h);
          num += (fd - g(r, c)) * (fd - g(r, c));
          den += fd * fd;
        }
      }
    };
    fd_check(z1, g1);
    fd_check(z2, g2);
    CHECK(std::sqrt(num) / std::max(std::sqrt(den), 1e-30) <= 1e-5);
  }
}

TEST_CASE("total loss composes the parts") {
  std::mt19937_64 rng(8);
  Vec logits = Vec::Constant(11, 0.0);
  Mat z(16, 5);
  Vec base(5);
  for (int i = 0; i < 5; ++i) base(i) = gaussian(rng);
  for (int r = 0; r < 16; ++r) z.row(r) = base.transpose();

  LossConfig cfg;
  cfg.alpha = 1.0;
  LossParts parts = total_loss(logits, 3, z, z, cfg);
  CHECK(std::abs(parts.ce_part - std::log(11.0)) < 1e-9);
  CHECK(std::abs(parts.ec_part - 16.0 * std::log(30.0)) < 1e-9);
  CHECK(std::abs(parts.total - (2.397895 + 54.4192)) < 1e-3);

  cfg.alpha = 0.0;
  LossParts zero_alpha = total_loss(logits, 3, z, z, cfg);
  CHECK(zero_alpha.total == zero_alpha.ce_part);

  cfg.alpha = 2.0;
  LossParts doubled = total_loss(logits, 3, z, z, cfg);
  CHECK(doubled.total - doubled.ce_part ==
        doctest::Approx(2.0 * (parts.total - parts.ce_part)).epsilon(1e-12));
}

TEST_CASE("total loss gradient matches its value function") {
  std::mt19937_64 rng(9);
  Vec logits(6);
  for (int i = 0; i < 6; ++i) logits(i) = gaussian(rng);
  Mat z1 = random_rows(rng, 4, 8);
  Mat z2 = random_rows(rng, 4, 8);
  LossConfig cfg;
  cfg.alpha = 0.7;

  Vec dlogits;
  Mat d1, d2;
  LossParts parts = total_loss_with_grad(logits, 2, z1, z2, cfg, dlogits, d1, d2);
  LossParts same = total_loss(logits, 2, z1, z2, cfg);
  CHECK(parts.total == doctest::Approx(same.total).epsilon(1e-15));

  const double h = 1e-6;
  for (int i = 0; i < 6; ++i) {
    Vec up = logits, dn = logits;
    up(i) += h;
    dn(i) -= h;
    double fd = (total_loss(up, 2, z1, z2, cfg).total -
                 total_loss(dn, 2, z1, z2, cfg).total) /
                (2 * h);
    CHECK(dlogits(i) == doctest::Approx(fd).epsilon(1e-5));
  }
  double save = z1(1, 3);
  z1(1, 3) = save + h;
  double up = total_loss(logits, 2, z1, z2, cfg).total;
  z1(1, 3) = save - h;
  double dn = total_loss(logits, 2, z1, z2, cfg).total;
  z1(1, 3) = save;
  CHECK(d1(1, 3) == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
}

TEST_CASE("symmetric variant averages both anchor directions") {
  std::mt19937_64 rng(10);
  Mat z1 = random_rows(rng, 4, 8);
  Mat z2 = random_rows(rng, 4, 8);
  Vec logits = Vec::Zero(3);
  LossConfig cfg;
  cfg.symmetric_ec = true;
  LossParts sym = total_loss(logits, 0, z1, z2, cfg);
  double expect = 0.5 * (event_contrastive(z1, z2, cfg.tau) +
                         event_contrastive(z2, z1, cfg.tau));
  CHECK(sym.ec_part == doctest::Approx(expect).epsilon(1e-12));

  Vec dlogits;
  Mat d1, d2;
  total_loss_with_grad(logits, 0, z1, z2, cfg, dlogits, d1, d2);
  const double h = 1e-6;
  double save = z2(2, 1);
  z2(2, 1) = save + h;
  double up = total_loss(logits, 0, z1, z2, cfg).total;
  z2(2, 1) = save - h;
  double dn = total_loss(logits, 0, z1, z2, cfg).total;
  z2(2, 1) = save;
  CHECK(d2(2, 1) == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
}
