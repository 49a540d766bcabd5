#include <doctest.h>

#include "odr/gradcheck.hpp"
#include "odr/loss.hpp"
#include "odr/model.hpp"
#include "support.hpp"

using namespace odr;
using namespace odr_test;

namespace {

ModelConfig small_config() {
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

T random_batch(const ModelConfig& c, Index n, Rng& rng) { return random_tensor({n, 1, c.input_h, c.input_w}, rng, 0, 1); }

}  // namespace

TEST_CASE("default configuration audits to the documented geometry") {
  const ModelConfig c;
  CHECK(c.crop_rows == std::array<Index, 3>{22, 48, 58});
  CHECK(c.crop_rows[0] + c.crop_rows[1] + c.crop_rows[2] == 128);
  const ShapePlan plan = audit(c);
  CHECK(plan.global[0].out_h == 122);
  CHECK(plan.global[2].pooled_h() == 14);
  CHECK(plan.global[2].pooled_w() == 9);
  CHECK(plan.local_merged.out_h == plan.global[2].out_h);
  CHECK(plan.merged_channels == 256);
  CHECK(plan.flat_features == 256 * 14 * 9);
  CHECK(c.output_width() == 88);
}

TEST_CASE("audit failures name the layer") {
  ModelConfig c;
  c.crop_rows = {22, 48, 57};
  CHECK_THROWS_WITH_AS(audit(c), doctest::Contains("crop rows"), ConfigError);
  c = ModelConfig{};
  c.input_h = 30;
  c.input_w = 10;
  c.crop_rows = {10, 10, 10};
  CHECK_THROWS_WITH_AS(audit(c), doctest::Contains("conv"), ConfigError);
  c = small_config();
  c.conv_kernels = {3, 4, 3};
  CHECK_THROWS_AS(audit(c), ConfigError);
}

TEST_CASE("crop_parts partitions the rows") {
  ModelConfig c;
  c.input_h = 6;
  c.crop_rows = {2, 2, 2};
  c.input_w = 3;
  T batch({1, 1, 6, 3});
  for (Index r = 0; r < 6; ++r)
    for (Index q = 0; q < 3; ++q) batch.at({0, 0, r, q}) = static_cast<double>(r);
  const auto parts = crop_parts(batch, c);
  for (std::size_t p = 0; p < 3; ++p) {
    CHECK(parts[p].shape() == Shape{1, 1, 2, 3});
    CHECK(parts[p].at({0, 0, 0, 0}) == 2.0 * static_cast<double>(p));
    CHECK(parts[p].at({0, 0, 1, 2}) == 2.0 * static_cast<double>(p) + 1);
  }
  CHECK(concat<double>(parts, 2) == batch);

  const ModelConfig full_size;
  Rng rng(41);
  const auto full = crop_parts(random_tensor({2, 1, 128, 88}, rng), full_size);
  CHECK(full[0].shape() == Shape{2, 1, 22, 88});
  CHECK(full[1].shape() == Shape{2, 1, 48, 88});
  CHECK(full[2].shape() == Shape{2, 1, 58, 88});
  CHECK_THROWS_AS(crop_parts(T({1, 1, 7, 3}), c), ConfigError);
}

TEST_CASE("build is deterministic in the seed") {
  const auto a = GlcnnModel<double>::build(small_config(), 5);
  const auto b = GlcnnModel<double>::build(small_config(), 5);
  const auto c = GlcnnModel<double>::build(small_config(), 6);
  CHECK(a.parameters() == b.parameters());
  CHECK(a.parameters() != c.parameters());
  CHECK(a.scalar_count() == b.scalar_count());
  CHECK(a.parameter("fc6.weight").shape() == Shape{32, 8});
  CHECK_THROWS_AS(a.parameter("nope"), UsageError);
  for (const auto& name : a.parameter_names()) {
    if (name.ends_with(".bias")) CHECK(a.parameter(name).values().isZero());
  }
}

TEST_CASE("initialization bound follows the fan-in") {
  const auto m = GlcnnModel<double>::build(small_config(), 9);
  const T& w = m.parameter("global.conv2.weight");
  const double bound = std::sqrt(6.0 / (4 * 3 * 3));
  CHECK(w.values().cwiseAbs().maxCoeff() <= bound);
  CHECK(w.values().cwiseAbs().maxCoeff() > 0.8 * bound);
}

TEST_CASE("forward shapes and ranges") {
  Rng rng(42);
  ModelConfig c = small_config();
  c.dropout_rate = 0.5;
  const auto model = GlcnnModel<double>::build(c, 1);
  const T x = random_batch(c, 3, rng);
  const auto r = forward(model, x, Mode::eval);
  CHECK(r.outputs.shape() == Shape{3, 8});
  CHECK(!r.gender.has_value());
  for (Index i = 0; i < r.outputs.size(); ++i) CHECK((r.outputs[i] > 0 && r.outputs[i] < 1));
  CHECK(forward(model, x, Mode::eval).outputs == r.outputs);
  CHECK(forward(model, x, Mode::train, 7).outputs == forward(model, x, Mode::train, 7).outputs);
  CHECK(forward(model, x, Mode::train, 7).outputs != forward(model, x, Mode::train, 8).outputs);
  CHECK_THROWS_AS(forward(model, T({1, 1, 30, 22}), Mode::eval), ConfigError);

  c.k_minus_1 = 1;
  const auto degenerate = GlcnnModel<double>::build(c, 1);
  CHECK(forward(degenerate, x, Mode::eval).outputs.shape() == Shape{3, 1});

  c.head_mode = HeadMode::scalar_regression;
  c.gender_head = true;
  const auto scalar = GlcnnModel<double>::build(c, 1);
  const auto rs = forward(scalar, x, Mode::eval);
  CHECK(rs.outputs.shape() == Shape{3, 1});
  REQUIRE(rs.gender.has_value());
  CHECK(rs.gender->shape() == Shape{3, 1});
}

TEST_CASE("backward matches finite differences on the small network") {
  Rng rng(43);
  ModelConfig c = small_config();
  c.gender_head = true;
  auto model = GlcnnModel<double>::build(c, 11);
  const T x = random_batch(c, 2, rng), t = random_bits({2, 8}, rng), g = random_bits({2, 1}, rng);
  const auto loss = [&](const ForwardResult<double>& r) {
    return odl(r.outputs, t, 10.0).report.total + gender_bce(*r.gender, g).value;
  };
  const auto r = forward(model, x, Mode::train);
  OutputGrad<double> up{odl(r.outputs, t, 10.0).grad, {}, gender_bce(*r.gender, g).grad};
  const ModelGrad<double> grads = backward(model, r.record, up, true);
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const T theta = model.parameters()[i];
    const T numeric = fd_gradient(
        [&](const T& v) {
          model.mutable_parameters()[i] = v;
          const double value = loss(forward(model, x, Mode::train));
          model.mutable_parameters()[i] = theta;
          return value;
        },
        theta, 1e-6);
    INFO(model.parameter_names()[i]);
    CHECK(rel_err(grads.params[i], numeric) < 1e-4);
  }
  REQUIRE(grads.input.has_value());
  const T numeric_input = fd_gradient([&](const T& v) { return loss(forward(model, v, Mode::train)); }, x, 1e-6);
  CHECK(rel_err(*grads.input, numeric_input) < 1e-4);
}

TEST_CASE("backward through train-mode dropout uses the recorded masks") {
  Rng rng(44);
  ModelConfig c = small_config();
  c.dropout_rate = 0.3;
  auto model = GlcnnModel<double>::build(c, 12);
  const T x = random_batch(c, 2, rng), up = random_tensor({2, 8}, rng);
  const auto r = forward(model, x, Mode::train, 99);
  const auto grads = backward(model, r.record, OutputGrad<double>{up, {}, {}});
  const std::size_t i = model.index_of("fc5.weight");
  const T theta = model.parameters()[i];
  const T numeric = fd_gradient(
      [&](const T& v) {
        model.mutable_parameters()[i] = v;
        const double value = weighted_sum(forward(model, x, Mode::train, 99).outputs, up);
        model.mutable_parameters()[i] = theta;
        return value;
      },
      theta, 1e-6);
  CHECK(rel_err(grads.params[i], numeric) < 1e-6);
}

TEST_CASE("backward is linear in the upstream gradient") {
  Rng rng(45);
  const auto model = GlcnnModel<double>::build(small_config(), 13);
  const T x = random_batch(small_config(), 2, rng);
  const auto r = forward(model, x, Mode::train);
  const T g1 = random_tensor({2, 8}, rng), g2 = random_tensor({2, 8}, rng);
  const T sum(g1.shape(), (g1.values() + g2.values()).eval());
  const auto a = backward(model, r.record, OutputGrad<double>{g1, {}, {}});
  const auto b = backward(model, r.record, OutputGrad<double>{g2, {}, {}});
  const auto s = backward(model, r.record, OutputGrad<double>{sum, {}, {}});
  const auto zero = backward(model, r.record, OutputGrad<double>{T({2, 8}), {}, {}});
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    CHECK((s.params[i].values() - a.params[i].values() - b.params[i].values()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(zero.params[i].values().isZero());
  }
}

TEST_CASE("logit gradients enter below the sigmoid") {
  Rng rng(46);
  const auto model = GlcnnModel<double>::build(small_config(), 14);
  const auto r = forward(model, random_batch(small_config(), 2, rng), Mode::train);
  const T g = random_tensor({2, 8}, rng);
  const T through_sigmoid(g.shape(), (g.values().array() * r.outputs.values().array() *
                                      (1 - r.outputs.values().array())).matrix().eval());
  const auto a = backward(model, r.record, OutputGrad<double>{g, {}, {}});
  const auto b = backward(model, r.record, OutputGrad<double>{T({2, 8}), through_sigmoid, {}});
  for (std::size_t i = 0; i < a.params.size(); ++i) CHECK(rel_err(a.params[i], b.params[i]) < 1e-12);
}

TEST_CASE("stale activation records are rejected") {
  Rng rng(47);
  auto model = GlcnnModel<double>::build(small_config(), 15);
  const auto r = forward(model, random_batch(small_config(), 1, rng), Mode::train);
  const OutputGrad<double> up{T({1, 8}, 1.0), {}, {}};
  const GlcnnModel<double> copy = model;
  CHECK_THROWS_AS(backward(copy, r.record, up), UsageError);
  model.mutable_parameters();
  CHECK_THROWS_AS(backward(model, r.record, up), UsageError);
  CHECK_THROWS_AS(backward(model, forward(model, random_batch(small_config(), 1, rng), Mode::train).record,
                           OutputGrad<double>{T({1, 8}), {}, T({1, 1})}),
                  UsageError);
}

TEST_CASE("both the global and the local path influence the outputs") {
  Rng rng(48);
  const auto base = GlcnnModel<double>::build(small_config(), 16);
  const T x = random_batch(small_config(), 4, rng);
  const T reference = forward(base, x, Mode::eval).outputs;
  for (const char* prefix : {"global.conv3", "local.conv3"}) {
    auto model = base;
    for (const char* suffix : {".weight", ".bias"}) {
      model.mutable_parameters()[model.index_of(std::string(prefix) + suffix)].values().setZero();
    }
    INFO(prefix);
    CHECK((forward(model, x, Mode::eval).outputs.values() - reference.values()).cwiseAbs().maxCoeff() > 0);
  }
}

TEST_CASE("the gradcheck network configuration is the small one used here") {
  CHECK(gradcheck_model_config() == small_config());
}
