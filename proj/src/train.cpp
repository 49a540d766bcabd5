#include "odr/train.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>

#include "odr/ordinal.hpp"
#include "odr/rng.hpp"

namespace odr {

std::string to_csv_row(const EpochLog& log) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << log.epoch << ',' << log.ce << ',' << log.emd << ',' << log.total << ',' << log.train_mae << ','
      << log.val_mae << ',' << log.lr;
  return out.str();
}

template <typename Scalar>
Tensor<Scalar> make_targets(const RunConfig& config, std::span<const double> ages) {
  const auto n = static_cast<Index>(ages.size());
  if (config.model.head_mode == HeadMode::scalar_regression) {
    Tensor<Scalar> t({n, 1});
    const double span = config.rank.r_max() - config.rank.r_min;
    for (Index i = 0; i < n; ++i) {
      const double snapped = config.rank.rank(config.rank.snap(ages[static_cast<std::size_t>(i)]));
      t[i] = static_cast<Scalar>((snapped - config.rank.r_min) / span);
    }
    return t;
  }
  const Index width = config.rank.classifiers();
  Tensor<Scalar> t({n, width});
  for (Index i = 0; i < n; ++i) {
    const OrdinalTarget target = encode(ages[static_cast<std::size_t>(i)], config.rank);
    for (Index k = 0; k < width; ++k) t.at({i, k}) = static_cast<Scalar>(target.bits[static_cast<std::size_t>(k)]);
  }
  return t;
}

template <typename Scalar>
StepLoss<Scalar> step_loss(const RunConfig& config, const ForwardResult<Scalar>& result,
                           std::span<const double> ages, std::span<const int> genders) {
  const Tensor<Scalar> targets = make_targets<Scalar>(config, ages);
  const auto lambda = static_cast<Scalar>(config.lambda);
  StepLoss<Scalar> out;
  switch (config.loss) {
    case LossKind::euclidean:
    case LossKind::mae: {
      const auto kind = config.loss == LossKind::mae ? RegressionLoss::mae : RegressionLoss::euclidean;
      LossValue<Scalar> v = baseline_regression_loss(kind, result.outputs, targets);
      out.report.total = v.value;
      out.report.ce_weight = 0;
      out.grad.outputs = std::move(v.grad);
      break;
    }
    case LossKind::odl:
    case LossKind::ce:
    case LossKind::emd2: {
      const Scalar l = config.loss == LossKind::ce ? Scalar(0) : lambda;
      const Scalar ce_weight = config.loss == LossKind::emd2 ? Scalar(0) : Scalar(1);
      OdlResult<Scalar> r = config.softmax_input == SoftmaxInput::logits && l != Scalar(0)
                                ? odl_from_logits(result.outputs, result.logits, targets, l, ce_weight)
                                : odl(result.outputs, targets, l, ce_weight);
      out.report = r.report;
      out.grad.outputs = std::move(r.grad);
      out.grad.logits = std::move(r.logit_grad);
      break;
    }
  }
  if (result.gender) {
    const auto n = static_cast<Index>(genders.size());
    Tensor<Scalar> truth({n, 1});
    for (Index i = 0; i < n; ++i) {
      const int g = genders[static_cast<std::size_t>(i)];
      if (g != 0 && g != 1) throw TrainingError("gender head enabled but sample has no gender label");
      truth[i] = static_cast<Scalar>(g);
    }
    LossValue<Scalar> g = gender_bce(*result.gender, truth);
    const auto mu = static_cast<Scalar>(config.gender_weight);
    out.report.aux_gender = g.value;
    out.report.gender_weight = mu;
    out.report.total += mu * g.value;
    g.grad.values() *= mu;
    out.grad.gender = std::move(g.grad);
  }
  return out;
}

template <typename Scalar>
std::vector<double> decode_ages(const RunConfig& config, const Tensor<Scalar>& outputs) {
  const Index n = outputs.dim(0);
  const Index width = outputs.size() / n;
  std::vector<double> ages(static_cast<std::size_t>(n));
  std::vector<double> row(static_cast<std::size_t>(width));
  for (Index i = 0; i < n; ++i) {
    if (config.model.head_mode == HeadMode::scalar_regression) {
      ages[static_cast<std::size_t>(i)] =
          config.rank.r_min + static_cast<double>(outputs[i]) * (config.rank.r_max() - config.rank.r_min);
      continue;
    }
    for (Index k = 0; k < width; ++k) row[static_cast<std::size_t>(k)] = static_cast<double>(outputs[i * width + k]);
    ages[static_cast<std::size_t>(i)] = decode(row, config.rank);
  }
  return ages;
}

template <typename Scalar>
Predictions<Scalar> predict(const GlcnnModel<Scalar>& model, const RunConfig& config, const Dataset<Scalar>& data,
                            std::span<const std::size_t> indices) {
  Predictions<Scalar> p;
  p.width = static_cast<std::size_t>(model.config().output_width());
  const std::size_t bs = config.batch_size;
  for (std::size_t begin = 0; begin < indices.size(); begin += bs) {
    const auto chunk = indices.subspan(begin, std::min(bs, indices.size() - begin));
    const ForwardResult<Scalar> r = forward(model, gather_images(data, chunk), Mode::eval);
    const std::vector<double> ages = decode_ages(config, r.outputs);
    p.ages.insert(p.ages.end(), ages.begin(), ages.end());
    for (Index i = 0; i < r.outputs.size(); ++i) p.probs.push_back(static_cast<double>(r.outputs[i]));
    for (std::size_t idx : chunk) {
      p.truth.push_back(data.ages[idx]);
      p.gender_truth.push_back(data.genders[idx]);
    }
    if (r.gender) {
      for (Index i = 0; i < r.gender->size(); ++i) p.gender_probs.push_back(static_cast<double>((*r.gender)[i]));
    }
  }
  return p;
}

template <typename Scalar>
EvalReport evaluate(const GlcnnModel<Scalar>& model, const RunConfig& config, const Dataset<Scalar>& data,
                    std::span<const std::size_t> indices) {
  const Predictions<Scalar> p = predict(model, config, data, indices);
  const double violations = config.model.head_mode == HeadMode::ordinal
                                ? monotonicity_violation_rate(std::span<const double>(p.probs), p.width)
                                : 0.0;
  std::optional<double> gender_acc;
  if (!p.gender_probs.empty() && data.has_gender) gender_acc = gender_accuracy(p.gender_probs, p.gender_truth);
  return make_report(p.ages, p.truth, config.cs_max, violations, gender_acc);
}

namespace {

template <typename Scalar>
std::string nan_dump(const RunConfig& config, int epoch, std::size_t batch, std::span<const std::size_t> indices,
                     const LossReport<Scalar>& report, const std::string& what) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "non-finite value at epoch " << epoch << " batch " << batch << "\n";
  out << "cause " << what << "\n";
  out << "loss " << to_string(config.loss) << " total " << report.total << " ce " << report.ce_term << " emd "
      << report.emd_term << "\n";
  out << "samples";
  for (std::size_t i : indices) out << ' ' << i;
  out << "\n";
  return out.str();
}

}  // namespace

template <typename Scalar>
TrainOutcome<Scalar> train(const RunConfig& config, const Dataset<Scalar>& data, const TrainHooks& hooks) {
  if (data.size() < 2) throw TrainingError("training needs at least two samples");
  if (data.images.dim(2) != config.model.input_h || data.images.dim(3) != config.model.input_w) {
    throw ConfigError("dataset images are " + std::to_string(data.images.dim(2)) + "x" +
                      std::to_string(data.images.dim(3)) + ", model expects " + std::to_string(config.model.input_h) +
                      "x" + std::to_string(config.model.input_w));
  }
  if (config.model.gender_head && !data.has_gender) {
    throw TrainingError("gender head enabled but the manifest has no gender column");
  }

  GlcnnModel<Scalar> model = GlcnnModel<Scalar>::build(config.model, config.seed);
  AdamState<Scalar> adam(config.optim, std::span<const Tensor<Scalar>>(model.parameters()));
  const BatchPlan plan(stratified_split(data.ages, config.split_ratio, config.seed), config.batch_size, config.seed);
  if (plan.split().test.empty() || plan.split().train.empty()) throw TrainingError("split left an empty partition");

  TrainOutcome<Scalar> outcome{model, adam, 0, std::numeric_limits<double>::infinity(), {}, plan.split()};
  std::vector<double> batch_ages;
  std::vector<int> batch_genders;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr_decay ? lr_schedule(epoch, config.optim.lr, config.decay_every, config.decay_factor)
                                      : config.optim.lr;
    adam.settings.lr = lr;
    EpochLog log;
    log.epoch = epoch + 1;
    log.lr = lr;
    std::vector<double> train_pred, train_truth;
    const auto batches = plan.train_batches(epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& idx = batches[b];
      batch_ages.clear();
      batch_genders.clear();
      for (std::size_t i : idx) {
        batch_ages.push_back(data.ages[i]);
        batch_genders.push_back(data.genders[i]);
      }
      const auto abort = [&](const std::string& what, const LossReport<Scalar>& report) {
        const std::string dump = nan_dump(config, epoch + 1, b, std::span<const std::size_t>(idx), report, what);
        if (hooks.on_nan) hooks.on_nan(dump);
        throw TrainingError("non-finite value in epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(b) +
                            ": " + what);
      };
      std::optional<ForwardResult<Scalar>> result;
      std::optional<StepLoss<Scalar>> loss;
      std::optional<ModelGrad<Scalar>> grads;
      try {
        result = forward(model, gather_images(data, std::span<const std::size_t>(idx)), Mode::train,
                         mix_seed(config.seed, 0xD80F, epoch, b));
        loss = step_loss(config, *result, batch_ages, batch_genders);
        if (!std::isfinite(static_cast<double>(loss->report.total))) abort("loss is not finite", loss->report);
        grads = backward(model, result->record, loss->grad);
      } catch (const NumericError& e) {
        abort(e.what(), loss ? loss->report : LossReport<Scalar>{});
      }
      adam_step(std::span<Tensor<Scalar>>(model.mutable_parameters()), std::span<const Tensor<Scalar>>(grads->params),
                std::span<const std::string>(model.parameter_names()), adam);

      const double weight = static_cast<double>(idx.size());
      log.ce += weight * static_cast<double>(loss->report.ce_term);
      log.emd += weight * static_cast<double>(loss->report.emd_term);
      log.total += weight * static_cast<double>(loss->report.total);
      const std::vector<double> ages = decode_ages(config, result->outputs);
      train_pred.insert(train_pred.end(), ages.begin(), ages.end());
      train_truth.insert(train_truth.end(), batch_ages.begin(), batch_ages.end());
    }
    const auto n_train = static_cast<double>(train_truth.size());
    log.ce /= n_train;
    log.emd /= n_train;
    log.total /= n_train;
    log.train_mae = mae(train_pred, train_truth);
    log.val_mae = evaluate(model, config, data, std::span<const std::size_t>(plan.split().test)).mae;
    outcome.history.push_back(log);
    if (log.val_mae < outcome.best_val_mae) {
      outcome.best_val_mae = log.val_mae;
      outcome.best_epoch = log.epoch;
      outcome.best_model = model;
      outcome.best_adam = adam;
    }
    if (hooks.on_epoch) hooks.on_epoch(log);
  }
  return outcome;
}

#define ODR_INSTANTIATE_TRAIN(S)                                                                                  \
  template Tensor<S> make_targets<S>(const RunConfig&, std::span<const double>);                                 \
  template StepLoss<S> step_loss<S>(const RunConfig&, const ForwardResult<S>&, std::span<const double>,          \
                                    std::span<const int>);                                                        \
  template std::vector<double> decode_ages<S>(const RunConfig&, const Tensor<S>&);                               \
  template Predictions<S> predict<S>(const GlcnnModel<S>&, const RunConfig&, const Dataset<S>&,                  \
                                     std::span<const std::size_t>);                                               \
  template EvalReport evaluate<S>(const GlcnnModel<S>&, const RunConfig&, const Dataset<S>&,                     \
                                  std::span<const std::size_t>);                                                  \
  template TrainOutcome<S> train<S>(const RunConfig&, const Dataset<S>&, const TrainHooks&);

ODR_INSTANTIATE_TRAIN(float)
ODR_INSTANTIATE_TRAIN(double)

}  // namespace odr
