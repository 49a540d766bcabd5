#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "odr/ops.hpp"

namespace odr {

enum class HeadMode { ordinal, scalar_regression };
enum class PaddingPolicy { valid, same };

// Declarative GL-CNN description. Defaults are the full-size network for
// 128x88 inputs; everything is configurable so a small variant can train on
// a CPU.
struct ModelConfig {
  Index input_h = 128;
  Index input_w = 88;
  std::array<Index, 3> crop_rows{22, 48, 58};  // head, body, feet
  std::array<Index, 3> conv_channels{32, 64, 128};
  std::array<Index, 3> conv_kernels{7, 5, 3};
  PaddingPolicy padding = PaddingPolicy::valid;
  Index fc_width = 1024;
  Index k_minus_1 = 88;
  double leaky_slope = 0.01;
  double dropout_rate = 0.5;
  bool f6_activation = true;  // LeakyReLU on F6 before the sigmoid
  bool f6_dropout = true;     // dropout on F6 before the sigmoid
  bool gender_head = false;
  HeadMode head_mode = HeadMode::ordinal;

  Index output_width() const { return head_mode == HeadMode::ordinal ? k_minus_1 : 1; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Resolved geometry of one conv -> LeakyReLU -> max-pool stage.
struct ConvLayerPlan {
  std::string name;
  Index in_channels = 0, in_h = 0, in_w = 0;
  Index out_channels = 0, kernel = 0;
  Padding padding;
  Index out_h = 0, out_w = 0;  // convolution output, before pooling

  Index pooled_h() const { return out_h / 2; }
  Index pooled_w() const { return out_w / 2; }
};

struct ShapePlan {
  std::array<ConvLayerPlan, 3> global;
  std::array<std::array<ConvLayerPlan, 2>, 3> local;  // [part][stage]
  ConvLayerPlan local_merged;                         // shared conv3 after the height merge
  Index merged_channels = 0, merged_h = 0, merged_w = 0;
  Index flat_features = 0;
};

inline constexpr std::array<const char*, 3> kPartNames{"head", "body", "feet"};

// Dry-run shape audit. Throws ConfigError naming the first failing layer.
//
// Padding: each conv gets (k-1)/2 zeros per side under `same` and none under
// `valid`; if the output feeding a pool would be odd, one extra zero row
// (column) is added at the bottom (right). The shared local conv3 gets
// whatever vertical padding makes its pooled height equal the global path's,
// so the two maps can be joined along channels.
ShapePlan audit(const ModelConfig& config);

// Splits [N,1,H,W] into head/body/feet row bands of the configured heights.
template <typename Scalar>
std::array<Tensor<Scalar>, 3> crop_parts(const Tensor<Scalar>& batch, const ModelConfig& config);

template <typename Scalar>
class GlcnnModel {
 public:
  static GlcnnModel build(const ModelConfig& config, std::uint64_t seed);

  GlcnnModel(const GlcnnModel& other);
  GlcnnModel& operator=(const GlcnnModel& other);
  GlcnnModel(GlcnnModel&&) noexcept = default;
  GlcnnModel& operator=(GlcnnModel&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  const ShapePlan& plan() const { return plan_; }
  std::uint64_t seed() const { return seed_; }

  const std::vector<std::string>& parameter_names() const { return names_; }
  const std::vector<Tensor<Scalar>>& parameters() const { return params_; }
  // Any mutable access invalidates outstanding activation records.
  std::vector<Tensor<Scalar>>& mutable_parameters() {
    ++revision_;
    return params_;
  }
  const Tensor<Scalar>& parameter(std::string_view name) const { return params_[index_of(name)]; }
  std::size_t index_of(std::string_view name) const;

  Index scalar_count() const;
  std::uint64_t instance_id() const { return instance_id_; }
  std::uint64_t revision() const { return revision_; }

 private:
  GlcnnModel() = default;
  void add(std::string name, Shape shape);

  ModelConfig config_;
  ShapePlan plan_;
  std::uint64_t seed_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor<Scalar>> params_;
  std::uint64_t instance_id_ = 0;
  std::uint64_t revision_ = 0;
};

template <typename Scalar>
struct ConvBlockRecord {
  Tensor<Scalar> input;
  Tensor<Scalar> pre_activation;
  Tensor<Scalar> activation;
};

template <typename Scalar>
struct DenseRecord {
  Tensor<Scalar> input;
  Tensor<Scalar> pre_activation;
  Tensor<Scalar> mask;
};

// Everything backward() needs; tied to the model instance and revision that
// produced it.
template <typename Scalar>
struct ActivationRecord {
  std::uint64_t model_id = 0;
  std::uint64_t revision = 0;
  Shape input_shape;
  std::array<ConvBlockRecord<Scalar>, 3> global;
  std::array<std::array<ConvBlockRecord<Scalar>, 2>, 3> local;
  std::array<Shape, 3> local_part_shapes;
  ConvBlockRecord<Scalar> local_merged;
  std::array<Shape, 2> branch_shapes;  // global and local maps before the channel join
  Shape merged_shape;
  DenseRecord<Scalar> f4, f5, f6;
  Tensor<Scalar> f5_output;  // after dropout; feeds F6 and the gender head
  Tensor<Scalar> outputs;
  std::optional<Tensor<Scalar>> gender;
};

template <typename Scalar>
struct ForwardResult {
  Tensor<Scalar> outputs;                // [N, K-1] sigmoid outputs, or [N,1] scalar head
  Tensor<Scalar> logits;                 // pre-sigmoid values (equal to outputs in scalar mode)
  std::optional<Tensor<Scalar>> gender;  // [N,1]
  ActivationRecord<Scalar> record;
};

template <typename Scalar>
ForwardResult<Scalar> forward(const GlcnnModel<Scalar>& model, const Tensor<Scalar>& batch, Mode mode,
                              std::uint64_t dropout_seed = 0);

// Upstream gradients at the model's outputs.
template <typename Scalar>
struct OutputGrad {
  Tensor<Scalar> outputs;                // w.r.t. ForwardResult::outputs
  std::optional<Tensor<Scalar>> logits;  // added directly at the pre-sigmoid logits
  std::optional<Tensor<Scalar>> gender;  // w.r.t. ForwardResult::gender
};

template <typename Scalar>
struct ModelGrad {
  std::vector<Tensor<Scalar>> params;  // aligned with parameter_names()
  std::optional<Tensor<Scalar>> input;
};

template <typename Scalar>
ModelGrad<Scalar> backward(const GlcnnModel<Scalar>& model, const ActivationRecord<Scalar>& record,
                           const OutputGrad<Scalar>& grad, bool want_input_grad = false);

}  // namespace odr
