#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "odr/config.hpp"
#include "odr/data.hpp"
#include "odr/eval.hpp"
#include "odr/loss.hpp"
#include "odr/model.hpp"
#include "odr/optim.hpp"

namespace odr {

struct EpochLog {
  int epoch = 0;  // 1-based
  double ce = 0;
  double emd = 0;
  double total = 0;
  double train_mae = 0;
  double val_mae = 0;
  double lr = 0;
};

inline constexpr const char* kEpochLogHeader = "epoch,ce,emd,total,train_mae,val_mae,lr";
std::string to_csv_row(const EpochLog& log);

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  // Receives a human-readable dump before the TrainingError is thrown.
  std::function<void(const std::string&)> on_nan;
};

template <typename Scalar>
struct TrainOutcome {
  GlcnnModel<Scalar> best_model;
  AdamState<Scalar> best_adam;
  int best_epoch = 0;
  double best_val_mae = 0;
  std::vector<EpochLog> history;
  Split split;
};

// Targets for one batch: [B, K-1] ordinal bits for the ordinal head, or
// [B, 1] ages rescaled to [0,1] over the rank range for the scalar head.
template <typename Scalar>
Tensor<Scalar> make_targets(const RunConfig& config, std::span<const double> ages);

// Loss of one forward pass and the gradient to feed backward().
template <typename Scalar>
struct StepLoss {
  LossReport<Scalar> report;
  OutputGrad<Scalar> grad;
};

template <typename Scalar>
StepLoss<Scalar> step_loss(const RunConfig& config, const ForwardResult<Scalar>& result,
                           std::span<const double> ages, std::span<const int> genders);

// Ages decoded from model outputs: the threshold count for the ordinal head,
// r_min + out * (r_max - r_min) for the scalar head.
template <typename Scalar>
std::vector<double> decode_ages(const RunConfig& config, const Tensor<Scalar>& outputs);

template <typename Scalar>
struct Predictions {
  std::vector<double> ages;
  std::vector<double> truth;
  std::vector<double> probs;  // row-major [n, K-1] in ordinal mode
  std::size_t width = 0;
  std::vector<double> gender_probs;
  std::vector<int> gender_truth;
};

// Eval-mode predictions over the selected samples, in order.
template <typename Scalar>
Predictions<Scalar> predict(const GlcnnModel<Scalar>& model, const RunConfig& config, const Dataset<Scalar>& data,
                            std::span<const std::size_t> indices);

template <typename Scalar>
EvalReport evaluate(const GlcnnModel<Scalar>& model, const RunConfig& config, const Dataset<Scalar>& data,
                    std::span<const std::size_t> indices);

template <typename Scalar>
TrainOutcome<Scalar> train(const RunConfig& config, const Dataset<Scalar>& data, const TrainHooks& hooks = {});

}  // namespace odr
