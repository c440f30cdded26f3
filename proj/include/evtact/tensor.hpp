#pragma once

#include <Eigen/Dense>
#include <random>

namespace evt {

// Row-major keeps token-per-row layouts contiguous.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Truncated normal init: resample draws beyond +/- 2 sigma.
void trunc_normal(Mat& m, double sigma, std::mt19937_64& rng);

}  // namespace evt
