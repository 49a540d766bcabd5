#include "odr/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "odr/rng.hpp"

namespace odr {
namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::optional<double> parse_double(const std::string& text) {
  double value = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace

std::filesystem::path SampleManifest::resolve(const SampleRecord& r) const {
  const std::filesystem::path p(r.path);
  return p.is_absolute() ? p : base_dir / p;
}

SampleManifest load_manifest(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IngestionError("cannot open manifest " + csv_path.string());
  SampleManifest manifest;
  manifest.base_dir = csv_path.parent_path();

  std::string line;
  if (!std::getline(in, line)) throw IngestionError(csv_path.string() + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line == "path,age,gender") {
    manifest.has_gender = true;
  } else if (line != "path,age") {
    throw IngestionError(csv_path.string() + ":1: header must be 'path,age' or 'path,age,gender', got '" +
                         line + "'");
  }
  const std::size_t columns = manifest.has_gender ? 3 : 2;

  std::set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = csv_path.string() + ":" + std::to_string(line_no) + ": ";
    const auto fields = split_fields(line);
    if (fields.size() != columns) {
      throw IngestionError(where + "expected " + std::to_string(columns) + " fields, got " +
                           std::to_string(fields.size()));
    }
    SampleRecord record;
    record.path = fields[0];
    if (record.path.empty()) throw IngestionError(where + "empty path");
    const auto age = parse_double(fields[1]);
    if (!age) throw IngestionError(where + "unparseable age '" + fields[1] + "'");
    record.age = *age;
    if (manifest.has_gender) {
      if (fields[2] != "0" && fields[2] != "1") {
        throw IngestionError(where + "gender must be 0 or 1, got '" + fields[2] + "'");
      }
      record.gender = fields[2] == "1" ? 1 : 0;
    }
    if (!seen.insert(record.path).second) throw IngestionError(where + "duplicate path '" + record.path + "'");
    manifest.records.push_back(std::move(record));
  }
  if (manifest.records.empty()) throw IngestionError(csv_path.string() + ": manifest has no records");
  const auto [lo, hi] = std::minmax_element(manifest.records.begin(), manifest.records.end(),
                                            [](const auto& a, const auto& b) { return a.age < b.age; });
  manifest.min_age = lo->age;
  manifest.max_age = hi->age;
  return manifest;
}

void write_manifest(const SampleManifest& manifest, const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw IngestionError("cannot write manifest " + csv_path.string());
  out << (manifest.has_gender ? "path,age,gender\n" : "path,age\n");
  for (const auto& r : manifest.records) {
    std::ostringstream age;
    age.precision(17);
    age << r.age;
    out << r.path << ',' << age.str();
    if (manifest.has_gender) out << ',' << r.gender.value_or(0);
    out << '\n';
  }
  if (!out) throw IngestionError("failed writing manifest " + csv_path.string());
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string token;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(c);
  }
  return token;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open image " + path.string());
  const std::string magic = pgm_token(in);
  if (magic != "P5") throw IngestionError(path.string() + ": expected PGM magic 'P5', found '" + magic + "'");
  GrayImage image;
  const auto w = parse_double(pgm_token(in));
  const auto h = parse_double(pgm_token(in));
  const auto maxval = parse_double(pgm_token(in));
  if (!w || !h || !maxval || *w < 1 || *h < 1) throw IngestionError(path.string() + ": malformed PGM header");
  if (*maxval != 255) throw IngestionError(path.string() + ": only 8-bit PGM (maxval 255) is supported");
  image.width = static_cast<Index>(*w);
  image.height = static_cast<Index>(*h);
  image.pixels.resize(static_cast<std::size_t>(image.width * image.height));
  in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) {
    throw IngestionError(path.string() + ": truncated pixel data");
  }
  return image;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write image " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IngestionError("failed writing image " + path.string());
}

template <typename Scalar>
Tensor<Scalar> image_to_tensor(const GrayImage& image) {
  Tensor<Scalar> t({1, image.height, image.width});
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    t[static_cast<Index>(i)] = static_cast<Scalar>(image.pixels[i]) / Scalar(255);
  }
  return t;
}

template <typename Scalar>
Tensor<Scalar> load_image(const std::filesystem::path& path, Index expected_h, Index expected_w) {
  const GrayImage image = read_pgm(path);
  if (image.height != expected_h || image.width != expected_w) {
    throw IngestionError(path.string() + ": found " + std::to_string(image.height) + "x" +
                         std::to_string(image.width) + " image, expected " + std::to_string(expected_h) + "x" +
                         std::to_string(expected_w));
  }
  return image_to_tensor<Scalar>(image);
}

template <typename Scalar>
Dataset<Scalar> load_dataset(const SampleManifest& manifest, Index height, Index width) {
  Dataset<Scalar> data;
  const auto n = static_cast<Index>(manifest.records.size());
  data.images = Tensor<Scalar>({n, 1, height, width});
  data.has_gender = manifest.has_gender;
  const Index plane = height * width;
  for (Index i = 0; i < n; ++i) {
    const auto& r = manifest.records[static_cast<std::size_t>(i)];
    const Tensor<Scalar> img = load_image<Scalar>(manifest.resolve(r), height, width);
    std::copy_n(img.data(), plane, data.images.data() + i * plane);
    data.ages.push_back(r.age);
    data.genders.push_back(r.gender.value_or(-1));
  }
  return data;
}

template <typename Scalar>
Tensor<Scalar> gather_images(const Dataset<Scalar>& data, std::span<const std::size_t> indices) {
  const Index h = data.images.dim(2), w = data.images.dim(3), plane = h * w;
  Tensor<Scalar> batch({static_cast<Index>(indices.size()), 1, h, w});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    std::copy_n(data.images.data() + static_cast<Index>(indices[b]) * plane, plane,
                batch.data() + static_cast<Index>(b) * plane);
  }
  return batch;
}

Split stratified_split(std::span<const double> ages, double split_ratio, std::uint64_t seed) {
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) {
    throw ConfigError("split ratio must lie strictly between 0 and 1");
  }
  const std::size_t n = ages.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ages[a] < ages[b]; });

  Split split;
  std::size_t cumulative = 0;
  std::size_t train_so_far = 0;
  for (std::size_t decile = 0; decile < 10; ++decile) {
    const std::size_t begin = decile * n / 10, end = (decile + 1) * n / 10;
    std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
    Engine engine(mix_seed(seed, 0x5711, decile));
    odr::shuffle(members.begin(), members.end(), engine);
    // Cumulative rounding keeps both every decile and the total within one sample.
    cumulative += members.size();
    const auto target = static_cast<std::size_t>(std::llround(split_ratio * static_cast<double>(cumulative)));
    const std::size_t take = std::min(target - train_so_far, members.size());
    train_so_far += take;
    split.train.insert(split.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    split.test.insert(split.test.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

BatchPlan::BatchPlan(Split split, std::size_t batch_size, std::uint64_t shuffle_seed)
    : split_(std::move(split)), batch_size_(batch_size), seed_(shuffle_seed) {
  if (batch_size_ < 1) throw ConfigError("batch size must be at least 1");
}

namespace {

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& items, std::size_t size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < items.size(); i += size) {
    batches.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(i),
                         items.begin() + static_cast<std::ptrdiff_t>(std::min(items.size(), i + size)));
  }
  return batches;
}

}  // namespace

std::vector<std::vector<std::size_t>> BatchPlan::train_batches(int epoch) const {
  std::vector<std::size_t> order = split_.train;
  Engine engine(mix_seed(seed_, 0xE90C, static_cast<std::uint64_t>(epoch)));
  odr::shuffle(order.begin(), order.end(), engine);
  return chunk(order, batch_size_);
}

std::vector<std::vector<std::size_t>> BatchPlan::test_batches() const { return chunk(split_.test, batch_size_); }

BatchPlan split_and_batch(const SampleManifest& manifest, double split_ratio, std::size_t batch_size,
                          std::uint64_t shuffle_seed) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  std::vector<double> ages;
  ages.reserve(manifest.records.size());
  for (const auto& r : manifest.records) ages.push_back(r.age);
  return BatchPlan(stratified_split(ages, split_ratio, shuffle_seed), batch_size, shuffle_seed);
}

template Tensor<float> image_to_tensor<float>(const GrayImage&);
template Tensor<double> image_to_tensor<double>(const GrayImage&);
template Tensor<float> load_image<float>(const std::filesystem::path&, Index, Index);
template Tensor<double> load_image<double>(const std::filesystem::path&, Index, Index);
template Dataset<float> load_dataset<float>(const SampleManifest&, Index, Index);
template Dataset<double> load_dataset<double>(const SampleManifest&, Index, Index);
template Tensor<float> gather_images<float>(const Dataset<float>&, std::span<const std::size_t>);
template Tensor<double> gather_images<double>(const Dataset<double>&, std::span<const std::size_t>);

}  // namespace odr
