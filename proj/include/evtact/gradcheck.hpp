#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evtact/losses.hpp"
#include "evtact/model.hpp"

namespace evt {

struct GradBlockReport {
  std::string name;
  double rel_error = 0.0;  // relative L2 between analytic and central FD
};

struct GradCheckReport {
  std::vector<GradBlockReport> blocks;
  double max_rel_error = 0.0;
  double seconds = 0.0;
};

// Compares the analytic gradient of total_loss(forward(view1, view2)) against
// central finite differences, per named parameter block, in 64-bit arithmetic.
GradCheckReport gradient_check(const ModelConfig& cfg, const LossConfig& loss_cfg,
                               std::uint64_t seed, double fd_step = 1e-5);

// The small configuration the gradient suite runs on by default.
ModelConfig gradcheck_config();

}  // namespace evt
