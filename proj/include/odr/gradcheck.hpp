#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "odr/model.hpp"

namespace odr {

// Central finite-difference check of every analytic gradient in the
// library, always in double precision.
struct GradcheckOptions {
  std::optional<std::string> component;  // run only this one
  std::optional<double> threshold;       // overrides every per-component threshold
  std::optional<double> epsilon;         // overrides every per-component step
  int trials = 3;
  std::uint64_t seed = 1;
};

struct GradcheckResult {
  std::string component;
  double worst_error = 0;
  double threshold = 0;
  bool passed() const { return worst_error < threshold; }
};

// Component names in run order, with their default thresholds.
const std::vector<std::pair<std::string, double>>& gradcheck_components();

// Throws UsageError for an unknown component.
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options);

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
double relative_error(const Tensor<double>& a, const Tensor<double>& b);

// Central differences of f at x, one coordinate at a time.
Tensor<double> numeric_gradient(const std::function<double(const Tensor<double>&)>& f, const Tensor<double>& x,
                                double epsilon);

// The 32x22 network used for the composite model check: channels 4/8/8,
// 3x3 kernels with same padding, fc width 32, K-1 = 8, dropout off.
ModelConfig gradcheck_model_config();

}  // namespace odr
