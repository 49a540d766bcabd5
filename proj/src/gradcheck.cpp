#include "odr/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "odr/loss.hpp"
#include "odr/rng.hpp"

namespace odr {
namespace {

using T = Tensor<double>;
using Fn = std::function<double(const T&)>;

T random_tensor(Shape shape, Engine& engine, double lo = -1, double hi = 1) {
  T t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = uniform(engine, lo, hi);
  return t;
}

// Values bounded away from zero so leaky_relu's kink is out of reach.
T margin_tensor(Shape shape, Engine& engine) {
  T t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) {
    const double m = uniform(engine, 0.1, 1.0);
    t[i] = uniform01(engine) < 0.5 ? -m : m;
  }
  return t;
}

double dot(const T& a, const T& b) { return a.values().dot(b.values()); }

double check(const Fn& f, const T& x, const T& analytic, double eps) {
  return relative_error(numeric_gradient(f, x, eps), analytic);
}

T random_simplex(Index rows, Index cols, Engine& engine) {
  T t({rows, cols});
  for (Index r = 0; r < rows; ++r) {
    double sum = 0;
    for (Index c = 0; c < cols; ++c) sum += t.at({r, c}) = uniform(engine, 0.05, 1.0);
    for (Index c = 0; c < cols; ++c) t.at({r, c}) /= sum;
  }
  return t;
}

T random_bits(Shape shape, Engine& engine) {
  T t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = uniform01(engine) < 0.5 ? 0.0 : 1.0;
  return t;
}

// Squared EMD as a plain function of unconstrained rows, so finite
// differences may step off the simplex.
double emd2_value(const T& pred, const T& target) {
  const Index n = pred.dim(0), k = pred.dim(1);
  double total = 0;
  for (Index r = 0; r < n; ++r) {
    double cdf = 0;
    for (Index c = 0; c < k; ++c) {
      cdf += pred.at({r, c}) - target.at({r, c});
      total += cdf * cdf;
    }
  }
  return total / static_cast<double>(n);
}

double conv_check(Engine& e, double eps) {
  const T x = random_tensor({2, 3, 8, 8}, e), w = random_tensor({4, 3, 3, 3}, e), b = random_tensor({4}, e);
  const Conv2dOptions opts{1, Padding{1, 2, 0, 1}};
  const T up = random_tensor(conv2d(x, w, b, opts).shape(), e);
  const LayerGrad<double> g = conv2d_backward(x, w, up, opts);
  return std::max({check([&](const T& v) { return dot(conv2d(v, w, b, opts), up); }, x, g.input_grad, eps),
                   check([&](const T& v) { return dot(conv2d(x, v, b, opts), up); }, w, g.param_grads.at("weight"), eps),
                   check([&](const T& v) { return dot(conv2d(x, w, v, opts), up); }, b, g.param_grads.at("bias"), eps)});
}

double pool_check(Engine& e, double eps) {
  // A shuffled grid of well-separated values keeps every window's maximum
  // unique under a step of eps.
  T x({1, 2, 6, 6});
  std::vector<double> levels(static_cast<std::size_t>(x.size()));
  for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = 0.01 * static_cast<double>(i);
  odr::shuffle(levels.begin(), levels.end(), e);
  for (Index i = 0; i < x.size(); ++i) x[i] = levels[static_cast<std::size_t>(i)];
  const T up = random_tensor({1, 2, 3, 3}, e);
  return check([&](const T& v) { return dot(max_pool2(v), up); }, x, max_pool2_backward(x, up), eps);
}

double affine_check(Engine& e, double eps) {
  const T x = random_tensor({3, 5}, e), w = random_tensor({5, 4}, e), b = random_tensor({4}, e);
  const T up = random_tensor({3, 4}, e);
  const LayerGrad<double> g = affine_backward(x, w, up);
  return std::max({check([&](const T& v) { return dot(affine(v, w, b), up); }, x, g.input_grad, eps),
                   check([&](const T& v) { return dot(affine(x, v, b), up); }, w, g.param_grads.at("weight"), eps),
                   check([&](const T& v) { return dot(affine(x, w, v), up); }, b, g.param_grads.at("bias"), eps)});
}

double leaky_check(Engine& e, double eps) {
  const T x = margin_tensor({4, 6}, e), up = random_tensor({4, 6}, e);
  return check([&](const T& v) { return dot(leaky_relu(v, 0.01), up); }, x, leaky_relu_backward(x, up, 0.01), eps);
}

double sigmoid_check(Engine& e, double eps) {
  const T x = random_tensor({4, 6}, e, -4, 4), up = random_tensor({4, 6}, e);
  return check([&](const T& v) { return dot(sigmoid(v), up); }, x, sigmoid_backward(sigmoid(x), up), eps);
}

double softmax_check(Engine& e, double eps) {
  const T x = random_tensor({3, 7}, e, -3, 3), up = random_tensor({3, 7}, e);
  return check([&](const T& v) { return dot(softmax(v), up); }, x, softmax_backward(softmax(x), up), eps);
}

double concat_check(Engine& e, double eps) {
  const std::array<T, 3> parts{random_tensor({2, 3, 2, 4}, e), random_tensor({2, 3, 5, 4}, e),
                               random_tensor({2, 3, 1, 4}, e)};
  const T up = random_tensor({2, 3, 8, 4}, e);
  const std::array<Shape, 3> shapes{parts[0].shape(), parts[1].shape(), parts[2].shape()};
  const auto grads = concat_backward(up, std::span<const Shape>(shapes), 2);
  double worst = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Fn f = [&](const T& v) {
      std::array<T, 3> xs = parts;
      xs[p] = v;
      return dot(concat(std::span<const T>(xs), 2), up);
    };
    worst = std::max(worst, check(f, parts[p], grads[p], eps));
  }
  return worst;
}

double ce_check(Engine& e, double eps) {
  const T o = random_tensor({4, 6}, e, 0.05, 0.95), t = random_bits({4, 6}, e);
  return check([&](const T& v) { return cross_entropy(v, t).value; }, o, cross_entropy(o, t).grad, eps);
}

double emd2_check(Engine& e, double eps) {
  const T p = random_simplex(4, 6, e), q = random_simplex(4, 6, e);
  return check([&](const T& v) { return emd2_value(v, q); }, p, emd2(p, q).grad, eps);
}

double odl_check(Engine& e, double eps) {
  const T o = random_tensor({4, 8}, e, 0.05, 0.95), t = random_bits({4, 8}, e);
  const double lambda = 10;
  const double a = check([&](const T& v) { return odl(v, t, lambda).report.total; }, o, odl(o, t, lambda).grad, eps);
  // Logit variant: the distribution term differentiates w.r.t. the logits.
  const T z = random_tensor({4, 8}, e, -3, 3);
  const OdlResult<double> r = odl_from_logits(sigmoid(z), z, t, lambda);
  const T total_grad(z.shape(), (sigmoid_backward(sigmoid(z), r.grad).values() + r.logit_grad->values()).eval());
  const double b = check([&](const T& v) { return odl_from_logits(sigmoid(v), v, t, lambda).report.total; }, z,
                         total_grad, eps);
  return std::max(a, b);
}

double gender_check(Engine& e, double eps) {
  const T p = random_tensor({6, 1}, e, 0.05, 0.95), g = random_bits({6, 1}, e);
  return check([&](const T& v) { return gender_bce(v, g).value; }, p, gender_bce(p, g).grad, eps);
}

double euclidean_check(Engine& e, double eps) {
  const T p = random_tensor({6, 1}, e), y = random_tensor({6, 1}, e);
  return check([&](const T& v) { return baseline_regression_loss(RegressionLoss::euclidean, v, y).value; }, p,
               baseline_regression_loss(RegressionLoss::euclidean, p, y).grad, eps);
}

double model_check(Engine& e, double eps) {
  const ModelConfig config = gradcheck_model_config();
  GlcnnModel<double> model = GlcnnModel<double>::build(config, e());
  const T x = random_tensor({2, 1, config.input_h, config.input_w}, e, 0, 1);
  const T t = random_bits({2, config.k_minus_1}, e);
  const double lambda = 10;
  const ForwardResult<double> r = forward(model, x, Mode::train);
  const ModelGrad<double> g = backward(model, r.record, OutputGrad<double>{odl(r.outputs, t, lambda).grad, {}, {}});
  double worst = 0;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const T theta = model.parameters()[i];
    const Fn f = [&](const T& v) {
      model.mutable_parameters()[i] = v;
      const double loss = odl(forward(model, x, Mode::train).outputs, t, lambda).report.total;
      model.mutable_parameters()[i] = theta;
      return loss;
    };
    worst = std::max(worst, check(f, theta, g.params[i], eps));
  }
  return worst;
}

using Check = double (*)(Engine&, double);

struct Entry {
  std::string name;
  double threshold;
  double epsilon;
  Check run;
};

const std::vector<Entry>& entries() {
  // Steps: 1e-4 for single layers; 1e-5 for the log-based losses, whose
  // third derivatives are large near the clamp; 1e-6 for the full network,
  // where a 1e-4 step routinely crosses some LeakyReLU or max-pool kink.
  static const std::vector<Entry> table{
      {"conv2d", 1e-6, 1e-4, conv_check},
      {"max_pool2", 1e-5, 1e-4, pool_check},
      {"affine", 1e-5, 1e-4, affine_check},
      {"leaky_relu", 1e-5, 1e-4, leaky_check},
      {"sigmoid", 1e-5, 1e-4, sigmoid_check},
      {"softmax", 1e-5, 1e-4, softmax_check},
      {"concat", 1e-5, 1e-4, concat_check},
      {"cross_entropy", 1e-6, 1e-5, ce_check},
      {"emd2", 1e-6, 1e-4, emd2_check},
      {"odl", 1e-5, 1e-5, odl_check},
      {"gender_bce", 1e-6, 1e-5, gender_check},
      {"euclidean", 1e-6, 1e-4, euclidean_check},
      {"model", 1e-4, 1e-6, model_check},
  };
  return table;
}

}  // namespace

double relative_error(const T& a, const T& b) {
  if (a.shape() != b.shape()) {
    throw UsageError("relative_error: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const double scale = std::max(a.values().norm(), b.values().norm());
  return scale == 0 ? 0.0 : (a.values() - b.values()).norm() / scale;
}

T numeric_gradient(const Fn& f, const T& x, double epsilon) {
  T grad(x.shape());
  T probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + epsilon;
    const double up = f(probe);
    probe[i] = x[i] - epsilon;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2 * epsilon);
  }
  return grad;
}

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.input_h = 32;
  c.input_w = 22;
  c.crop_rows = {6, 12, 14};
  c.conv_channels = {4, 8, 8};
  c.conv_kernels = {3, 3, 3};
  c.padding = PaddingPolicy::same;
  c.fc_width = 32;
  c.k_minus_1 = 8;
  c.dropout_rate = 0;
  return c;
}

const std::vector<std::pair<std::string, double>>& gradcheck_components() {
  static const auto list = [] {
    std::vector<std::pair<std::string, double>> out;
    for (const Entry& e : entries()) out.emplace_back(e.name, e.threshold);
    return out;
  }();
  return list;
}

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options) {
  if (options.component) {
    const auto& all = entries();
    if (std::none_of(all.begin(), all.end(), [&](const Entry& e) { return e.name == *options.component; })) {
      throw UsageError("unknown gradcheck component '" + *options.component + "'");
    }
  }
  if (options.trials < 1) throw UsageError("gradcheck needs at least one trial");
  std::vector<GradcheckResult> results;
  for (std::size_t c = 0; c < entries().size(); ++c) {
    const Entry& entry = entries()[c];
    if (options.component && *options.component != entry.name) continue;
    GradcheckResult result{entry.name, 0, options.threshold.value_or(entry.threshold)};
    // The composite check is by far the slowest; one trial covers every parameter.
    const int trials = entry.name == "model" ? 1 : options.trials;
    for (int trial = 0; trial < trials; ++trial) {
      Engine engine(mix_seed(options.seed, c, static_cast<std::uint64_t>(trial)));
      result.worst_error = std::max(result.worst_error, entry.run(engine, options.epsilon.value_or(entry.epsilon)));
    }
    results.push_back(result);
  }
  return results;
}

}  // namespace odr
