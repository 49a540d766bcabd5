#pragma once

#include <optional>

#include "odr/tensor.hpp"

namespace odr {

// Clamp applied to probabilities before taking logs.
inline constexpr double kProbabilityClamp = 1e-7;

template <typename Scalar>
struct LossValue {
  Scalar value;
  Tensor<Scalar> grad;
};

// Decomposition of the training objective for one batch:
//   total = ce_weight * ce_term + lambda * emd_term + gender_weight * aux_gender
template <typename Scalar>
struct LossReport {
  Scalar total = 0;
  Scalar ce_term = 0;
  Scalar emd_term = 0;
  Scalar lambda = 0;
  Scalar ce_weight = 1;
  std::optional<Scalar> aux_gender;
  Scalar gender_weight = 0;
};

// Mean over the batch of the summed binary cross-entropy of K-1 classifiers.
// outputs and targets are [N, K-1]; grad is w.r.t. outputs.
template <typename Scalar>
LossValue<Scalar> cross_entropy(const Tensor<Scalar>& outputs, const Tensor<Scalar>& targets);

// Squared earth mover's distance between row distributions, averaged over
// rows: (1/N) sum_i sum_k (CDF_k(pred_i) - CDF_k(target_i))^2. The gradient
// w.r.t. pred uses the closed form (2/N) sum_{j>=k} sum_{l<=j} (pred - target).
template <typename Scalar>
LossValue<Scalar> emd2(const Tensor<Scalar>& pred_dist, const Tensor<Scalar>& target_dist);

template <typename Scalar>
struct OdlResult {
  LossReport<Scalar> report;
  Tensor<Scalar> grad;                         // w.r.t. the sigmoid outputs
  std::optional<Tensor<Scalar>> logit_grad;    // w.r.t. pre-sigmoid logits (logit mode only)
};

// Ordinal distribution loss: cross_entropy(o, t) + lambda * emd2(softmax(o), softmax(t)).
// ce_weight scales the cross-entropy term (0 trains on the distribution term alone).
template <typename Scalar>
OdlResult<Scalar> odl(const Tensor<Scalar>& outputs, const Tensor<Scalar>& targets, Scalar lambda,
                      Scalar ce_weight = Scalar(1));

// Variant where the predicted distribution is softmax over the pre-sigmoid
// logits instead of the sigmoid outputs. The distribution gradient is
// returned separately in logit_grad.
template <typename Scalar>
OdlResult<Scalar> odl_from_logits(const Tensor<Scalar>& outputs, const Tensor<Scalar>& logits,
                                  const Tensor<Scalar>& targets, Scalar lambda,
                                  Scalar ce_weight = Scalar(1));

// Binary cross-entropy for the gender head; pred and truth are [N] or [N,1].
template <typename Scalar>
LossValue<Scalar> gender_bce(const Tensor<Scalar>& pred, const Tensor<Scalar>& truth);

enum class RegressionLoss { euclidean, mae };

// (1/N) sum (pred-truth)^2 or (1/N) sum |pred-truth| (sign subgradient, 0 at ties).
template <typename Scalar>
LossValue<Scalar> baseline_regression_loss(RegressionLoss kind, const Tensor<Scalar>& pred,
                                           const Tensor<Scalar>& truth);

}  // namespace odr
