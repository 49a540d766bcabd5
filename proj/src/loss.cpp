#include "odr/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "odr/ops.hpp"

namespace odr {
namespace {

template <typename Scalar>
void require_matching(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DomainError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  }
  if (a.rank() < 1 || a.size() == 0) throw DomainError(std::string(op) + ": empty input");
}

template <typename Scalar>
void require_simplex_rows(const Tensor<Scalar>& dist, const char* which) {
  const auto m = dist.matrix();
  // 1e-6 at double precision; single precision needs room for the rounding of long rows.
  const double tolerance =
      std::max(1e-6, 8.0 * static_cast<double>(m.cols()) * std::numeric_limits<Scalar>::epsilon());
  for (Index i = 0; i < m.rows(); ++i) {
    const double sum = static_cast<double>(m.row(i).sum());
    if (std::abs(sum - 1.0) > tolerance || m.row(i).minCoeff() < Scalar(0)) {
      throw DomainError(std::string("emd2: ") + which + " row " + std::to_string(i) +
                        " is not a probability vector (sum " + std::to_string(sum) + ")");
    }
  }
}

// Shared binary cross-entropy kernel; value and grad are averaged over rows.
template <typename Scalar>
LossValue<Scalar> binary_cross_entropy(const Tensor<Scalar>& outputs, const Tensor<Scalar>& targets,
                                       Index rows) {
  const Scalar eps = Scalar(kProbabilityClamp);
  const Scalar inv_n = Scalar(1) / Scalar(rows);
  Tensor<Scalar> grad(outputs.shape());
  Scalar total = 0;
  for (Index i = 0; i < outputs.size(); ++i) {
    const Scalar o = std::clamp(outputs[i], eps, Scalar(1) - eps);
    const Scalar t = targets[i];
    total -= t * std::log(o) + (Scalar(1) - t) * std::log(Scalar(1) - o);
    grad[i] = -(t / o - (Scalar(1) - t) / (Scalar(1) - o)) * inv_n;
  }
  return {total * inv_n, std::move(grad)};
}

}  // namespace

template <typename Scalar>
LossValue<Scalar> cross_entropy(const Tensor<Scalar>& outputs, const Tensor<Scalar>& targets) {
  require_matching(outputs, targets, "cross_entropy");
  return binary_cross_entropy(outputs, targets, outputs.dim(0));
}

template <typename Scalar>
LossValue<Scalar> emd2(const Tensor<Scalar>& pred_dist, const Tensor<Scalar>& target_dist) {
  require_matching(pred_dist, target_dist, "emd2");
  require_simplex_rows(pred_dist, "predicted");
  require_simplex_rows(target_dist, "target");

  const auto p = pred_dist.matrix();
  const auto q = target_dist.matrix();
  const Index n = p.rows(), width = p.cols();
  const Scalar inv_n = Scalar(1) / Scalar(n);
  Tensor<Scalar> grad(pred_dist.shape());
  auto g = grad.matrix();
  Scalar total = 0;
  Vector<Scalar> cdf_diff(width);
  for (Index i = 0; i < n; ++i) {
    Scalar running = 0;
    for (Index k = 0; k < width; ++k) {
      running += p(i, k) - q(i, k);
      cdf_diff[k] = running;
      total += running * running;
    }
    // d/dp_k = 2 * sum_{j >= k} cdf_diff_j : a reverse cumulative sum.
    Scalar tail = 0;
    for (Index k = width - 1; k >= 0; --k) {
      tail += cdf_diff[k];
      g(i, k) = Scalar(2) * tail * inv_n;
    }
  }
  return {total * inv_n, std::move(grad)};
}

namespace {

template <typename Scalar>
Tensor<Scalar> require_ordinal_targets(const Tensor<Scalar>& outputs, const Tensor<Scalar>& targets) {
  require_matching(outputs, targets, "odl");
  if (outputs.rank() != 2) throw DomainError("odl: outputs must be [N, K-1], got " + shape_string(outputs.shape()));
  return softmax(targets);
}

}  // namespace

template <typename Scalar>
OdlResult<Scalar> odl(const Tensor<Scalar>& outputs, const Tensor<Scalar>& targets, Scalar lambda,
                      Scalar ce_weight) {
  const Tensor<Scalar> target_dist = require_ordinal_targets(outputs, targets);
  LossValue<Scalar> ce = cross_entropy(outputs, targets);
  const Tensor<Scalar> pred_dist = softmax(outputs);
  const LossValue<Scalar> emd = emd2(pred_dist, target_dist);

  OdlResult<Scalar> result;
  auto& r = result.report;
  r.ce_term = ce.value;
  r.emd_term = emd.value;
  r.lambda = lambda;
  r.ce_weight = ce_weight;
  r.total = ce_weight == Scalar(1) ? ce.value : ce_weight * ce.value;
  result.grad = std::move(ce.grad);
  if (ce_weight != Scalar(1)) result.grad.values() *= ce_weight;
  // Skipping the zero-weight branch keeps lambda = 0 bit-identical to plain CE.
  if (lambda != Scalar(0)) {
    r.total += lambda * emd.value;
    const Tensor<Scalar> through_softmax = softmax_backward(pred_dist, emd.grad);
    result.grad.values() += lambda * through_softmax.values();
  }
  return result;
}

template <typename Scalar>
OdlResult<Scalar> odl_from_logits(const Tensor<Scalar>& outputs, const Tensor<Scalar>& logits,
                                  const Tensor<Scalar>& targets, Scalar lambda, Scalar ce_weight) {
  const Tensor<Scalar> target_dist = require_ordinal_targets(outputs, targets);
  require_matching(outputs, logits, "odl_from_logits");
  LossValue<Scalar> ce = cross_entropy(outputs, targets);
  const Tensor<Scalar> pred_dist = softmax(logits);
  const LossValue<Scalar> emd = emd2(pred_dist, target_dist);

  OdlResult<Scalar> result;
  auto& r = result.report;
  r.ce_term = ce.value;
  r.emd_term = emd.value;
  r.lambda = lambda;
  r.ce_weight = ce_weight;
  r.total = ce_weight == Scalar(1) ? ce.value : ce_weight * ce.value;
  result.grad = std::move(ce.grad);
  if (ce_weight != Scalar(1)) result.grad.values() *= ce_weight;
  if (lambda != Scalar(0)) {
    r.total += lambda * emd.value;
    Tensor<Scalar> logit_grad = softmax_backward(pred_dist, emd.grad);
    logit_grad.values() *= lambda;
    result.logit_grad = std::move(logit_grad);
  }
  return result;
}

template <typename Scalar>
LossValue<Scalar> gender_bce(const Tensor<Scalar>& pred, const Tensor<Scalar>& truth) {
  if (pred.size() != truth.size() || pred.size() == 0 || pred.dim(0) != truth.dim(0)) {
    throw DomainError("gender_bce: shape mismatch " + shape_string(pred.shape()) + " vs " +
                      shape_string(truth.shape()));
  }
  if (pred.size() != pred.dim(0)) throw DomainError("gender_bce: expected one prediction per sample");
  return binary_cross_entropy(pred, truth.reshaped(pred.shape()), pred.dim(0));
}

template <typename Scalar>
LossValue<Scalar> baseline_regression_loss(RegressionLoss kind, const Tensor<Scalar>& pred,
                                           const Tensor<Scalar>& truth) {
  if (pred.size() != truth.size() || pred.size() == 0) {
    throw DomainError("baseline_regression_loss: shape mismatch " + shape_string(pred.shape()) + " vs " +
                      shape_string(truth.shape()));
  }
  const Scalar inv_n = Scalar(1) / Scalar(pred.size());
  Tensor<Scalar> grad(pred.shape());
  Scalar total = 0;
  for (Index i = 0; i < pred.size(); ++i) {
    const Scalar diff = pred[i] - truth[i];
    if (kind == RegressionLoss::euclidean) {
      total += diff * diff;
      grad[i] = Scalar(2) * diff * inv_n;
    } else {
      total += std::abs(diff);
      grad[i] = (diff > Scalar(0) ? Scalar(1) : diff < Scalar(0) ? Scalar(-1) : Scalar(0)) * inv_n;
    }
  }
  return {total * inv_n, std::move(grad)};
}

#define ODR_INSTANTIATE_LOSS(S)                                                                      \
  template LossValue<S> cross_entropy<S>(const Tensor<S>&, const Tensor<S>&);                        \
  template LossValue<S> emd2<S>(const Tensor<S>&, const Tensor<S>&);                                 \
  template OdlResult<S> odl<S>(const Tensor<S>&, const Tensor<S>&, S, S);                            \
  template OdlResult<S> odl_from_logits<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S, S); \
  template LossValue<S> gender_bce<S>(const Tensor<S>&, const Tensor<S>&);                           \
  template LossValue<S> baseline_regression_loss<S>(RegressionLoss, const Tensor<S>&, const Tensor<S>&);

ODR_INSTANTIATE_LOSS(float)
ODR_INSTANTIATE_LOSS(double)

}  // namespace odr
