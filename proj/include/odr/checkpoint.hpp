#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "odr/config.hpp"
#include "odr/model.hpp"
#include "odr/optim.hpp"

namespace odr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary container, all integers and floats little-endian:
//
//   "ODRCKPT\0" | u32 version | u32 scalar bytes (4|8) | u64 seed | i32 epoch
//   | f64 val_mae | str config text | u32 tensor count
//   | per tensor: str name, u32 rank, u64 extents[rank], scalar values
//   | u64 adam step | f64 lr, beta1, beta2, eps, weight_decay | u8 decoupled
//   | first moments | second moments   (values only, parameter order)
//
// where str is u64 length followed by the bytes.
template <typename Scalar>
struct Checkpoint {
  RunConfig config;
  std::uint64_t seed = 0;
  int epoch = 0;
  double val_mae = 0;
  std::vector<std::string> names;
  std::vector<Tensor<Scalar>> params;
  AdamState<Scalar> adam;
};

struct CheckpointInfo {
  std::uint32_t version = 0;
  std::uint32_t scalar_bytes = 0;
  std::string config_text;
};

template <typename Scalar>
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint<Scalar>& checkpoint);

template <typename Scalar>
Checkpoint<Scalar> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Scalar>& checkpoint);

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path);

// Reads only the header, e.g. to pick the precision before a full load.
CheckpointInfo peek_checkpoint(const std::filesystem::path& path);

// Rebuilds the model from the checkpoint's config and seed and installs the
// stored parameters. Throws ConfigError if names or shapes disagree.
template <typename Scalar>
GlcnnModel<Scalar> restore_model(const Checkpoint<Scalar>& checkpoint);

}  // namespace odr
