#include "odr/model.hpp"

#include <atomic>
#include <cmath>

#include "odr/rng.hpp"

namespace odr {
namespace {

std::atomic<std::uint64_t> next_instance_id{1};

void expect(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

// Resolves padding for one axis; returns {before, after, out}.
std::array<Index, 3> plan_axis(const std::string& name, const char* axis, Index extent, Index kernel,
                               PaddingPolicy policy) {
  const Index base = policy == PaddingPolicy::same ? (kernel - 1) / 2 : 0;
  Index before = base, after = base;
  Index out = extent + before + after - kernel + 1;
  expect(out >= 1, name + ": kernel " + std::to_string(kernel) + " does not fit input " + axis + " " +
                       std::to_string(extent));
  if (out % 2 != 0) {
    ++after;
    ++out;
  }
  return {before, after, out};
}

ConvLayerPlan plan_conv(std::string name, Index in_c, Index in_h, Index in_w, Index out_c, Index kernel,
                        PaddingPolicy policy) {
  ConvLayerPlan p;
  p.name = std::move(name);
  p.in_channels = in_c;
  p.in_h = in_h;
  p.in_w = in_w;
  p.out_channels = out_c;
  p.kernel = kernel;
  const auto v = plan_axis(p.name, "height", in_h, kernel, policy);
  const auto h = plan_axis(p.name, "width", in_w, kernel, policy);
  p.padding = {v[0], v[1], h[0], h[1]};
  p.out_h = v[2];
  p.out_w = h[2];
  return p;
}

}  // namespace

ShapePlan audit(const ModelConfig& c) {
  expect(c.input_h > 0 && c.input_w > 0, "model: input size must be positive");
  Index crop_sum = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    expect(c.crop_rows[i] > 0, std::string("model: crop rows for ") + kPartNames[i] + " must be positive");
    crop_sum += c.crop_rows[i];
    expect(c.conv_channels[i] > 0, "model: conv" + std::to_string(i + 1) + " channels must be positive");
    expect(c.conv_kernels[i] > 0 && c.conv_kernels[i] % 2 == 1,
           "model: conv" + std::to_string(i + 1) + " kernel must be a positive odd integer");
  }
  expect(crop_sum == c.input_h, "model: crop rows sum to " + std::to_string(crop_sum) + " but input height is " +
                                    std::to_string(c.input_h));
  expect(c.fc_width > 0, "model: fc_width must be positive");
  expect(c.k_minus_1 > 0, "model: k_minus_1 must be positive");
  expect(c.leaky_slope >= 0.0 && c.leaky_slope < 1.0, "model: leaky_slope must lie in [0,1)");
  expect(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0, "model: dropout_rate must lie in [0,1)");

  ShapePlan plan;
  Index ch = 1, h = c.input_h, w = c.input_w;
  for (std::size_t s = 0; s < 3; ++s) {
    plan.global[s] = plan_conv("global.conv" + std::to_string(s + 1), ch, h, w, c.conv_channels[s],
                               c.conv_kernels[s], c.padding);
    ch = c.conv_channels[s];
    h = plan.global[s].pooled_h();
    w = plan.global[s].pooled_w();
    expect(h >= 1 && w >= 1, plan.global[s].name + ": pooled output is empty");
  }
  const ConvLayerPlan& g3 = plan.global[2];

  Index merged_h = 0;
  Index part_w = -1;
  for (std::size_t part = 0; part < 3; ++part) {
    Index pc = 1, ph = c.crop_rows[part], pw = c.input_w;
    for (std::size_t s = 0; s < 2; ++s) {
      auto& lp = plan.local[part][s];
      lp = plan_conv(std::string("local.") + kPartNames[part] + ".conv" + std::to_string(s + 1), pc, ph, pw,
                     c.conv_channels[s], c.conv_kernels[s], c.padding);
      pc = c.conv_channels[s];
      ph = lp.pooled_h();
      pw = lp.pooled_w();
      expect(ph >= 1 && pw >= 1, lp.name + ": pooled output is empty");
    }
    expect(part_w < 0 || part_w == pw, "local: part widths disagree after conv2");
    part_w = pw;
    merged_h += ph;
  }

  // Shared conv3 over the merged local map: width follows the global conv3
  // exactly, height padding is chosen so the pooled map matches the global one.
  ConvLayerPlan& lm = plan.local_merged;
  lm.name = "local.conv3";
  lm.in_channels = c.conv_channels[1];
  lm.in_h = merged_h;
  lm.in_w = part_w;
  lm.out_channels = c.conv_channels[2];
  lm.kernel = c.conv_kernels[2];
  expect(part_w == g3.in_w, "local.conv3: local width " + std::to_string(part_w) + " differs from global width " +
                                std::to_string(g3.in_w));
  const Index total_pad = g3.out_h - merged_h + lm.kernel - 1;
  expect(total_pad >= 0, "local.conv3: merged local height " + std::to_string(merged_h) +
                             " cannot be mapped onto global height " + std::to_string(g3.out_h) +
                             " with kernel " + std::to_string(lm.kernel));
  lm.padding = {total_pad / 2, total_pad - total_pad / 2, g3.padding.left, g3.padding.right};
  lm.out_h = g3.out_h;
  lm.out_w = g3.out_w;

  plan.merged_channels = 2 * c.conv_channels[2];
  plan.merged_h = g3.pooled_h();
  plan.merged_w = g3.pooled_w();
  plan.flat_features = plan.merged_channels * plan.merged_h * plan.merged_w;
  return plan;
}

template <typename Scalar>
std::array<Tensor<Scalar>, 3> crop_parts(const Tensor<Scalar>& batch, const ModelConfig& config) {
  if (batch.rank() != 4 || batch.dim(1) != 1) {
    throw ConfigError("crop_parts: expected [N,1,H,W], got " + shape_string(batch.shape()));
  }
  const Index rows = config.crop_rows[0] + config.crop_rows[1] + config.crop_rows[2];
  if (batch.dim(2) != rows) {
    throw ConfigError("crop_parts: image height " + std::to_string(batch.dim(2)) +
                      " does not equal the crop row sum " + std::to_string(rows));
  }
  std::array<Tensor<Scalar>, 3> parts;
  Index begin = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    parts[i] = slice(batch, 2, begin, begin + config.crop_rows[i]);
    begin += config.crop_rows[i];
  }
  return parts;
}

template <typename Scalar>
GlcnnModel<Scalar>::GlcnnModel(const GlcnnModel& other)
    : config_(other.config_),
      plan_(other.plan_),
      seed_(other.seed_),
      names_(other.names_),
      params_(other.params_),
      instance_id_(next_instance_id++),
      revision_(0) {}

template <typename Scalar>
GlcnnModel<Scalar>& GlcnnModel<Scalar>::operator=(const GlcnnModel& other) {
  if (this != &other) {
    config_ = other.config_;
    plan_ = other.plan_;
    seed_ = other.seed_;
    names_ = other.names_;
    params_ = other.params_;
    instance_id_ = next_instance_id++;
    revision_ = 0;
  }
  return *this;
}

template <typename Scalar>
void GlcnnModel<Scalar>::add(std::string name, Shape shape) {
  names_.push_back(std::move(name));
  params_.emplace_back(std::move(shape));
}

template <typename Scalar>
GlcnnModel<Scalar> GlcnnModel<Scalar>::build(const ModelConfig& config, std::uint64_t seed) {
  GlcnnModel model;
  model.config_ = config;
  model.plan_ = audit(config);
  model.seed_ = seed;
  model.instance_id_ = next_instance_id++;

  auto add_conv = [&](const ConvLayerPlan& p) {
    model.add(p.name + ".weight", {p.out_channels, p.in_channels, p.kernel, p.kernel});
    model.add(p.name + ".bias", {p.out_channels});
  };
  auto add_dense = [&](const std::string& name, Index in, Index out) {
    model.add(name + ".weight", {in, out});
    model.add(name + ".bias", {out});
  };
  for (const auto& p : model.plan_.global) add_conv(p);
  for (const auto& part : model.plan_.local) {
    for (const auto& p : part) add_conv(p);
  }
  add_conv(model.plan_.local_merged);
  add_dense("fc4", model.plan_.flat_features, config.fc_width);
  add_dense("fc5", config.fc_width, config.fc_width);
  add_dense("fc6", config.fc_width, config.output_width());
  if (config.gender_head) add_dense("gender", config.fc_width, 1);

  // Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)); biases start at zero.
  Engine engine(mix_seed(seed, 0x1417));
  for (std::size_t i = 0; i < model.params_.size(); ++i) {
    Tensor<Scalar>& t = model.params_[i];
    if (t.rank() == 1) continue;
    const Index fan_in = t.rank() == 4 ? t.dim(1) * t.dim(2) * t.dim(3) : t.dim(0);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (Index j = 0; j < t.size(); ++j) t[j] = static_cast<Scalar>(uniform(engine, -bound, bound));
  }
  return model;
}

template <typename Scalar>
std::size_t GlcnnModel<Scalar>::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  throw UsageError("model has no parameter named '" + std::string(name) + "'");
}

template <typename Scalar>
Index GlcnnModel<Scalar>::scalar_count() const {
  Index total = 0;
  for (const auto& p : params_) total += p.size();
  return total;
}

namespace {

// Dropout streams are keyed by layer so that each layer sees independent masks.
enum DropoutSite : std::uint64_t { kDropF4 = 4, kDropF5 = 5, kDropF6 = 6 };

template <typename Scalar>
Tensor<Scalar> conv_block_forward(const GlcnnModel<Scalar>& model, const ConvLayerPlan& plan,
                                  const Tensor<Scalar>& input, ConvBlockRecord<Scalar>& record) {
  const auto slope = static_cast<Scalar>(model.config().leaky_slope);
  record.input = input;
  record.pre_activation = conv2d(input, model.parameter(plan.name + ".weight"),
                                 model.parameter(plan.name + ".bias"), {1, plan.padding});
  record.activation = leaky_relu(record.pre_activation, slope);
  return max_pool2(record.activation);
}

template <typename Scalar>
Tensor<Scalar> conv_block_backward(const GlcnnModel<Scalar>& model, const ConvLayerPlan& plan,
                                   const ConvBlockRecord<Scalar>& record, const Tensor<Scalar>& upstream,
                                   std::vector<Tensor<Scalar>>& grads) {
  const auto slope = static_cast<Scalar>(model.config().leaky_slope);
  const Tensor<Scalar> d_act = max_pool2_backward(record.activation, upstream);
  const Tensor<Scalar> d_pre = leaky_relu_backward(record.pre_activation, d_act, slope);
  LayerGrad<Scalar> g = conv2d_backward(record.input, model.parameter(plan.name + ".weight"), d_pre,
                                        {1, plan.padding});
  grads[model.index_of(plan.name + ".weight")] = std::move(g.param_grads.at("weight"));
  grads[model.index_of(plan.name + ".bias")] = std::move(g.param_grads.at("bias"));
  return std::move(g.input_grad);
}

template <typename Scalar>
Tensor<Scalar> dense_forward(const GlcnnModel<Scalar>& model, const std::string& name,
                             const Tensor<Scalar>& input, bool activate, bool drop, Mode mode,
                             std::uint64_t seed, DenseRecord<Scalar>& record) {
  record.input = input;
  record.pre_activation = affine(input, model.parameter(name + ".weight"), model.parameter(name + ".bias"));
  Tensor<Scalar> act = activate ? leaky_relu(record.pre_activation, static_cast<Scalar>(model.config().leaky_slope))
                                : record.pre_activation;
  const double rate = drop ? model.config().dropout_rate : 0.0;
  DropoutResult<Scalar> d = dropout(act, rate, mode, seed);
  record.mask = std::move(d.mask);
  return std::move(d.output);
}

template <typename Scalar>
Tensor<Scalar> dense_backward(const GlcnnModel<Scalar>& model, const std::string& name, bool activate,
                              const DenseRecord<Scalar>& record, const Tensor<Scalar>& upstream,
                              std::vector<Tensor<Scalar>>& grads) {
  Tensor<Scalar> d = dropout_backward(record.mask, upstream);
  if (activate) d = leaky_relu_backward(record.pre_activation, d, static_cast<Scalar>(model.config().leaky_slope));
  LayerGrad<Scalar> g = affine_backward(record.input, model.parameter(name + ".weight"), d);
  grads[model.index_of(name + ".weight")] = std::move(g.param_grads.at("weight"));
  grads[model.index_of(name + ".bias")] = std::move(g.param_grads.at("bias"));
  return std::move(g.input_grad);
}

}  // namespace

template <typename Scalar>
ForwardResult<Scalar> forward(const GlcnnModel<Scalar>& model, const Tensor<Scalar>& batch, Mode mode,
                              std::uint64_t dropout_seed) {
  const ModelConfig& cfg = model.config();
  const ShapePlan& plan = model.plan();
  if (batch.rank() != 4 || batch.dim(1) != 1 || batch.dim(2) != cfg.input_h || batch.dim(3) != cfg.input_w) {
    throw ConfigError("forward: expected input [N,1," + std::to_string(cfg.input_h) + "," +
                      std::to_string(cfg.input_w) + "], got " + shape_string(batch.shape()));
  }
  ForwardResult<Scalar> result;
  ActivationRecord<Scalar>& rec = result.record;
  rec.model_id = model.instance_id();
  rec.revision = model.revision();
  rec.input_shape = batch.shape();

  Tensor<Scalar> global = batch;
  for (std::size_t s = 0; s < 3; ++s) global = conv_block_forward(model, plan.global[s], global, rec.global[s]);

  const auto crops = crop_parts(batch, cfg);
  std::array<Tensor<Scalar>, 3> parts;
  for (std::size_t p = 0; p < 3; ++p) {
    Tensor<Scalar> x = crops[p];
    for (std::size_t s = 0; s < 2; ++s) x = conv_block_forward(model, plan.local[p][s], x, rec.local[p][s]);
    rec.local_part_shapes[p] = x.shape();
    parts[p] = std::move(x);
  }
  const Tensor<Scalar> local_stack = concat<Scalar>(parts, 2);
  Tensor<Scalar> local = conv_block_forward(model, plan.local_merged, local_stack, rec.local_merged);

  rec.branch_shapes = {global.shape(), local.shape()};
  const std::array<Tensor<Scalar>, 2> branches{std::move(global), std::move(local)};
  const Tensor<Scalar> merged = concat<Scalar>(branches, 1);
  rec.merged_shape = merged.shape();
  const Index n = batch.dim(0);
  const Tensor<Scalar> flat = merged.reshaped({n, plan.flat_features});

  const Tensor<Scalar> h4 = dense_forward(model, "fc4", flat, true, true, mode, mix_seed(dropout_seed, kDropF4), rec.f4);
  rec.f5_output = dense_forward(model, "fc5", h4, true, true, mode, mix_seed(dropout_seed, kDropF5), rec.f5);

  if (cfg.head_mode == HeadMode::ordinal) {
    result.logits = dense_forward(model, "fc6", rec.f5_output, cfg.f6_activation, cfg.f6_dropout, mode,
                                  mix_seed(dropout_seed, kDropF6), rec.f6);
    result.outputs = sigmoid(result.logits);
  } else {
    result.logits = dense_forward(model, "fc6", rec.f5_output, false, false, mode, 0, rec.f6);
    result.outputs = result.logits;
  }
  rec.outputs = result.outputs;

  if (cfg.gender_head) {
    result.gender = sigmoid(affine(rec.f5_output, model.parameter("gender.weight"), model.parameter("gender.bias")));
    rec.gender = result.gender;
  }
  return result;
}

template <typename Scalar>
ModelGrad<Scalar> backward(const GlcnnModel<Scalar>& model, const ActivationRecord<Scalar>& rec,
                           const OutputGrad<Scalar>& upstream, bool want_input_grad) {
  if (rec.model_id != model.instance_id() || rec.revision != model.revision()) {
    throw UsageError("backward: activation record does not belong to this model state");
  }
  const ModelConfig& cfg = model.config();
  const ShapePlan& plan = model.plan();
  if (upstream.outputs.shape() != rec.outputs.shape()) {
    throw UsageError("backward: output gradient shape " + shape_string(upstream.outputs.shape()) +
                     " does not match outputs " + shape_string(rec.outputs.shape()));
  }
  ModelGrad<Scalar> result;
  result.params.resize(model.parameters().size());

  Tensor<Scalar> d_logits;
  if (cfg.head_mode == HeadMode::ordinal) {
    d_logits = sigmoid_backward(rec.outputs, upstream.outputs);
    if (upstream.logits) {
      if (upstream.logits->shape() != d_logits.shape()) throw UsageError("backward: logit gradient shape mismatch");
      d_logits.values() += upstream.logits->values();
    }
  } else {
    d_logits = upstream.outputs;
    if (upstream.logits) d_logits.values() += upstream.logits->values();
  }
  const bool f6_act = cfg.head_mode == HeadMode::ordinal && cfg.f6_activation;
  Tensor<Scalar> d_f5 = dense_backward(model, "fc6", f6_act, rec.f6, d_logits, result.params);

  if (cfg.gender_head) {
    const Index n = rec.outputs.dim(0);
    Tensor<Scalar> d_gender = upstream.gender ? upstream.gender->reshaped({n, 1}) : Tensor<Scalar>({n, 1});
    const Tensor<Scalar> d_pre = sigmoid_backward(*rec.gender, d_gender);
    LayerGrad<Scalar> g = affine_backward(rec.f5_output, model.parameter("gender.weight"), d_pre);
    result.params[model.index_of("gender.weight")] = std::move(g.param_grads.at("weight"));
    result.params[model.index_of("gender.bias")] = std::move(g.param_grads.at("bias"));
    d_f5.values() += g.input_grad.values();
  } else if (upstream.gender) {
    throw UsageError("backward: gender gradient given but the model has no gender head");
  }

  const Tensor<Scalar> d_f4 = dense_backward(model, "fc5", true, rec.f5, d_f5, result.params);
  const Tensor<Scalar> d_flat = dense_backward(model, "fc4", true, rec.f4, d_f4, result.params);
  const auto branch_grads = concat_backward<Scalar>(d_flat.reshaped(rec.merged_shape), rec.branch_shapes, 1);

  Tensor<Scalar> d_global = branch_grads[0];
  for (std::size_t s = 3; s-- > 0;) {
    d_global = conv_block_backward(model, plan.global[s], rec.global[s], d_global, result.params);
  }
  const Tensor<Scalar> d_stack =
      conv_block_backward(model, plan.local_merged, rec.local_merged, branch_grads[1], result.params);
  const auto part_grads = concat_backward<Scalar>(d_stack, rec.local_part_shapes, 2);
  std::array<Tensor<Scalar>, 3> d_crops;
  for (std::size_t p = 0; p < 3; ++p) {
    Tensor<Scalar> d = part_grads[p];
    for (std::size_t s = 2; s-- > 0;) {
      d = conv_block_backward(model, plan.local[p][s], rec.local[p][s], d, result.params);
    }
    d_crops[p] = std::move(d);
  }

  if (want_input_grad) {
    Tensor<Scalar> d_input = concat<Scalar>(d_crops, 2);
    d_input.values() += d_global.values();
    result.input = std::move(d_input);
  }
  for (std::size_t i = 0; i < result.params.size(); ++i) {
    result.params[i].check_finite("gradient of " + model.parameter_names()[i]);
  }
  return result;
}

#define ODR_INSTANTIATE_MODEL(S)                                                                         \
  template std::array<Tensor<S>, 3> crop_parts<S>(const Tensor<S>&, const ModelConfig&);                \
  template class GlcnnModel<S>;                                                                         \
  template ForwardResult<S> forward<S>(const GlcnnModel<S>&, const Tensor<S>&, Mode, std::uint64_t);    \
  template ModelGrad<S> backward<S>(const GlcnnModel<S>&, const ActivationRecord<S>&, const OutputGrad<S>&, \
                                    bool);

ODR_INSTANTIATE_MODEL(float)
ODR_INSTANTIATE_MODEL(double)

}  // namespace odr
