#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "odr/tensor.hpp"

namespace odr {

struct AdamSettings {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  bool decoupled_weight_decay = false;

  friend bool operator==(const AdamSettings&, const AdamSettings&) = default;
};

template <typename Scalar>
struct AdamState {
  AdamSettings settings;
  std::uint64_t step = 0;
  std::vector<Tensor<Scalar>> first_moment;
  std::vector<Tensor<Scalar>> second_moment;

  AdamState() = default;
  // Zero moments shaped like `params`.
  AdamState(const AdamSettings& s, std::span<const Tensor<Scalar>> params);
};

// One bias-corrected Adam update. With coupled decay (the default) the term
// weight_decay * theta is added to the gradient; the decoupled form instead
// shrinks theta by lr * weight_decay * theta. `names` labels parameters in
// error messages; a non-finite gradient raises TrainingError.
template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>> params, std::span<const Tensor<Scalar>> grads,
               std::span<const std::string> names, AdamState<Scalar>& state);

// base_lr * factor^floor(epoch / decay_every)
double lr_schedule(int epoch, double base_lr, int decay_every, double factor);

}  // namespace odr
