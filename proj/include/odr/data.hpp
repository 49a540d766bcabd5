#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "odr/tensor.hpp"

namespace odr {

struct SampleRecord {
  std::string path;  // relative to the manifest's directory unless absolute
  double age = 0;
  std::optional<int> gender;
};

struct SampleManifest {
  std::filesystem::path base_dir;
  std::vector<SampleRecord> records;
  double min_age = 0;
  double max_age = 0;
  bool has_gender = false;

  std::filesystem::path resolve(const SampleRecord& r) const;
};

// CSV with header `path,age` or `path,age,gender`.
SampleManifest load_manifest(const std::filesystem::path& csv_path);
void write_manifest(const SampleManifest& manifest, const std::filesystem::path& csv_path);

// 8-bit grayscale raster.
struct GrayImage {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// Binary PGM ("P5", maxval 255).
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

// [1,H,W] tensor with pixels scaled to [0,1].
template <typename Scalar>
Tensor<Scalar> load_image(const std::filesystem::path& path, Index expected_h, Index expected_w);

template <typename Scalar>
Tensor<Scalar> image_to_tensor(const GrayImage& image);

// All images of a manifest held in memory.
template <typename Scalar>
struct Dataset {
  Tensor<Scalar> images;  // [N,1,H,W]
  std::vector<double> ages;
  std::vector<int> genders;  // -1 when absent
  bool has_gender = false;

  std::size_t size() const { return ages.size(); }
};

template <typename Scalar>
Dataset<Scalar> load_dataset(const SampleManifest& manifest, Index height, Index width);

// Copies the selected samples into a new [B,1,H,W] batch.
template <typename Scalar>
Tensor<Scalar> gather_images(const Dataset<Scalar>& data, std::span<const std::size_t> indices);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Disjoint split stratified by age decile: each decile contributes its share
// of training samples within one sample of split_ratio.
Split stratified_split(std::span<const double> ages, double split_ratio, std::uint64_t seed);

// Train/test batch streams over a fixed split. Training order is reshuffled
// every epoch from (seed, epoch); the last partial batch is kept.
class BatchPlan {
 public:
  BatchPlan(Split split, std::size_t batch_size, std::uint64_t shuffle_seed);

  const Split& split() const { return split_; }
  std::size_t batch_size() const { return batch_size_; }
  std::vector<std::vector<std::size_t>> train_batches(int epoch) const;
  std::vector<std::vector<std::size_t>> test_batches() const;

 private:
  Split split_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

BatchPlan split_and_batch(const SampleManifest& manifest, double split_ratio, std::size_t batch_size,
                          std::uint64_t shuffle_seed);

}  // namespace odr
