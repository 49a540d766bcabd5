#include "odr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace odr {
namespace {

constexpr char kMagic[8] = {'O', 'D', 'R', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    uint<std::uint64_t>(s.size());
    raw(s.data(), s.size());
  }
  template <typename Scalar>
  void values(const Tensor<Scalar>& t) {
    for (Index i = 0; i < t.size(); ++i) {
      if constexpr (sizeof(Scalar) == 4) f32(t[i]); else f64(t[i]);
    }
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IngestionError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  template <typename U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string str() {
    const auto n = uint<std::uint64_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  template <typename Scalar>
  void values(Tensor<Scalar>& t) {
    for (Index i = 0; i < t.size(); ++i) {
      if constexpr (sizeof(Scalar) == 4) t[i] = f32(); else t[i] = f64();
    }
    t.check_finite("checkpoint");
  }
  void magic() {
    need(sizeof(kMagic));
    if (std::memcmp(bytes_.data(), kMagic, sizeof(kMagic)) != 0) throw IngestionError("not a checkpoint file (bad magic)");
    pos_ += sizeof(kMagic);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

CheckpointInfo read_header(Reader& in) {
  in.magic();
  CheckpointInfo info;
  info.version = in.uint<std::uint32_t>();
  if (info.version != kCheckpointVersion) {
    throw IngestionError("checkpoint format version " + std::to_string(info.version) + " is not supported (expected " +
                         std::to_string(kCheckpointVersion) + ")");
  }
  info.scalar_bytes = in.uint<std::uint32_t>();
  if (info.scalar_bytes != 4 && info.scalar_bytes != 8) throw IngestionError("checkpoint has invalid scalar width");
  return info;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

template <typename Scalar>
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint<Scalar>& c) {
  if (c.names.size() != c.params.size() || c.adam.first_moment.size() != c.params.size()) {
    throw UsageError("checkpoint: parameter, name and moment counts differ");
  }
  Writer out;
  out.raw(kMagic, sizeof(kMagic));
  out.uint(kCheckpointVersion);
  out.uint(static_cast<std::uint32_t>(sizeof(Scalar)));
  out.uint(c.seed);
  out.uint(static_cast<std::uint32_t>(c.epoch));
  out.f64(c.val_mae);
  out.str(c.config.to_text());
  out.uint(static_cast<std::uint32_t>(c.params.size()));
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    out.str(c.names[i]);
    out.uint(static_cast<std::uint32_t>(c.params[i].rank()));
    for (Index extent : c.params[i].shape()) out.uint(static_cast<std::uint64_t>(extent));
    out.values(c.params[i]);
  }
  const AdamSettings& s = c.adam.settings;
  out.uint(c.adam.step);
  for (double v : {s.lr, s.beta1, s.beta2, s.eps, s.weight_decay}) out.f64(v);
  out.uint(static_cast<std::uint8_t>(s.decoupled_weight_decay ? 1 : 0));
  for (const auto& m : c.adam.first_moment) out.values(m);
  for (const auto& v : c.adam.second_moment) out.values(v);
  return out.take();
}

template <typename Scalar>
Checkpoint<Scalar> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  const CheckpointInfo info = read_header(in);
  if (info.scalar_bytes != sizeof(Scalar)) {
    throw IngestionError("checkpoint stores " + std::to_string(8 * info.scalar_bytes) + "-bit values, requested " +
                         std::to_string(8 * sizeof(Scalar)) + "-bit");
  }
  Checkpoint<Scalar> c;
  c.seed = in.uint<std::uint64_t>();
  c.epoch = static_cast<int>(in.uint<std::uint32_t>());
  c.val_mae = in.f64();
  c.config = parse_run_config(in.str());
  const auto count = in.uint<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    c.names.push_back(in.str());
    const auto rank = in.uint<std::uint32_t>();
    if (rank > 8) throw IngestionError("checkpoint tensor '" + c.names.back() + "' has implausible rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<Index>(in.uint<std::uint64_t>()));
    Tensor<Scalar> t(shape);
    in.values(t);
    c.params.push_back(std::move(t));
  }
  AdamSettings s;
  c.adam.step = in.uint<std::uint64_t>();
  s.lr = in.f64();
  s.beta1 = in.f64();
  s.beta2 = in.f64();
  s.eps = in.f64();
  s.weight_decay = in.f64();
  s.decoupled_weight_decay = in.uint<std::uint8_t>() != 0;
  c.adam.settings = s;
  for (auto* moments : {&c.adam.first_moment, &c.adam.second_moment}) {
    for (const auto& p : c.params) {
      Tensor<Scalar> m(p.shape());
      in.values(m);
      moments->push_back(std::move(m));
    }
  }
  if (!in.done()) throw IngestionError("checkpoint has trailing bytes");
  return c;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Scalar>& checkpoint) {
  const auto bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IngestionError("failed writing checkpoint " + path.string());
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint<Scalar>(read_file(path));
}

CheckpointInfo peek_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  Reader in(bytes);
  CheckpointInfo info = read_header(in);
  in.uint<std::uint64_t>();
  in.uint<std::uint32_t>();
  in.f64();
  info.config_text = in.str();
  return info;
}

template <typename Scalar>
GlcnnModel<Scalar> restore_model(const Checkpoint<Scalar>& c) {
  GlcnnModel<Scalar> model = GlcnnModel<Scalar>::build(c.config.model, c.seed);
  const std::string tag = " (checkpoint format version " + std::to_string(kCheckpointVersion) + ")";
  if (c.names != model.parameter_names()) {
    throw ConfigError("checkpoint parameters do not match the configured model" + tag);
  }
  auto& params = model.mutable_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != c.params[i].shape()) {
      throw ConfigError("checkpoint tensor '" + c.names[i] + "' has shape " + shape_string(c.params[i].shape()) +
                        ", model expects " + shape_string(params[i].shape()) + tag);
    }
    params[i] = c.params[i];
  }
  return model;
}

#define ODR_INSTANTIATE_CKPT(S)                                                              \
  template std::vector<std::uint8_t> serialize_checkpoint<S>(const Checkpoint<S>&);        \
  template Checkpoint<S> deserialize_checkpoint<S>(const std::vector<std::uint8_t>&);      \
  template void save_checkpoint<S>(const std::filesystem::path&, const Checkpoint<S>&);    \
  template Checkpoint<S> load_checkpoint<S>(const std::filesystem::path&);                 \
  template GlcnnModel<S> restore_model<S>(const Checkpoint<S>&);

ODR_INSTANTIATE_CKPT(float)
ODR_INSTANTIATE_CKPT(double)

}  // namespace odr
