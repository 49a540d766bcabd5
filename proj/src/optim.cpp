#include "odr/optim.hpp"

#include <cmath>

namespace odr {

template <typename Scalar>
AdamState<Scalar>::AdamState(const AdamSettings& s, std::span<const Tensor<Scalar>> params) : settings(s) {
  for (const auto& p : params) {
    first_moment.emplace_back(p.shape());
    second_moment.emplace_back(p.shape());
  }
}

template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>> params, std::span<const Tensor<Scalar>> grads,
               std::span<const std::string> names, AdamState<Scalar>& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw UsageError("adam_step: parameter, gradient and moment counts differ");
  }
  auto label = [&](std::size_t i) { return i < names.size() ? names[i] : "#" + std::to_string(i); };
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || state.first_moment[i].shape() != params[i].shape()) {
      throw UsageError("adam_step: shape mismatch for parameter " + label(i));
    }
    if (!grads[i].values().allFinite()) {
      throw TrainingError("adam_step: non-finite gradient for parameter " + label(i));
    }
  }

  const AdamSettings& s = state.settings;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const auto b1 = static_cast<Scalar>(s.beta1);
  const auto b2 = static_cast<Scalar>(s.beta2);
  const auto correction1 = static_cast<Scalar>(1.0 - std::pow(s.beta1, t));
  const auto correction2 = static_cast<Scalar>(1.0 - std::pow(s.beta2, t));
  const auto lr = static_cast<Scalar>(s.lr);
  const auto eps = static_cast<Scalar>(s.eps);
  const auto wd = static_cast<Scalar>(s.weight_decay);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].values().array();
    auto m = state.first_moment[i].values().array();
    auto v = state.second_moment[i].values().array();
    Vector<Scalar> g = grads[i].values();
    if (wd != Scalar(0) && !s.decoupled_weight_decay) g += wd * params[i].values();
    m = b1 * m + (Scalar(1) - b1) * g.array();
    v = b2 * v + (Scalar(1) - b2) * g.array().square();
    if (wd != Scalar(0) && s.decoupled_weight_decay) theta -= lr * wd * theta;
    theta -= lr * (m / correction1) / ((v / correction2).sqrt() + eps);
  }
}

double lr_schedule(int epoch, double base_lr, int decay_every, double factor) {
  if (epoch < 0) throw DomainError("lr_schedule: epoch must be non-negative");
  if (decay_every <= 0) return base_lr;
  return base_lr * std::pow(factor, epoch / decay_every);
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::span<Tensor<float>>, std::span<const Tensor<float>>,
                               std::span<const std::string>, AdamState<float>&);
template void adam_step<double>(std::span<Tensor<double>>, std::span<const Tensor<double>>,
                                std::span<const std::string>, AdamState<double>&);

}  // namespace odr
