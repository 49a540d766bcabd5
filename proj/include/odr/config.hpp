#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "odr/model.hpp"
#include "odr/optim.hpp"
#include "odr/ordinal.hpp"
#include "odr/synth.hpp"

namespace odr {

enum class LossKind { odl, ce, emd2, euclidean, mae };
enum class SoftmaxInput { outputs, logits };
enum class Precision { f32, f64 };

// Everything needed to reproduce a training run.
//
// Text form: one `key = value` per line, `#` starts a comment, unknown keys
// are errors. to_text() emits every key in a fixed order, so equal configs
// serialize to identical bytes.
struct RunConfig {
  ModelConfig model;  // k_minus_1 and head_mode are derived from rank and loss
  RankSpec rank;

  LossKind loss = LossKind::odl;
  double lambda = 10.0;
  double gender_weight = 1.0;
  SoftmaxInput softmax_input = SoftmaxInput::outputs;

  AdamSettings optim;
  bool lr_decay = false;
  int decay_every = 15;
  double decay_factor = 0.1;

  std::string manifest;  // empty: synthesize a dataset from `synth` into <out_dir>/data
  SynthSpec synth;
  double split_ratio = 0.5;

  int epochs = 300;
  std::size_t batch_size = 300;
  std::uint64_t seed = 1;
  Precision precision = Precision::f32;
  std::string out_dir = "run";
  int cs_max = 15;

  // Applies derived fields and checks value ranges; throws ConfigError.
  void finalize();
  std::string to_text() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Applies the text form on top of `config` without finalizing.
void apply_config_text(RunConfig& config, const std::string& text);

// Parses the text form on top of the defaults, then finalize()s.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string read_config_file(const std::filesystem::path& path);

// Applies one `key = value` assignment (used by the parser and CLI overrides).
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

const char* to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

}  // namespace odr
