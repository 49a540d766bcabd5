#include "odr/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace odr {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::array<Index, 3> to_triple(const std::string& key, const std::string& v) {
  std::array<Index, 3> out{};
  std::istringstream in(v);
  std::string item;
  std::size_t i = 0;
  while (std::getline(in, item, ',')) {
    if (i == 3) throw ConfigError("config key '" + key + "': expected three comma-separated integers");
    out[i++] = static_cast<Index>(to_int(key, trim(item)));
  }
  if (i != 3) throw ConfigError("config key '" + key + "': expected three comma-separated integers");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

std::string fmt(const std::array<Index, 3>& v) {
  return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]);
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Key {
  Setter set;
  Getter get;
};

// Ordered table of every recognised key; defines the canonical text layout.
const std::vector<std::pair<std::string, Key>>& keys() {
  static const std::vector<std::pair<std::string, Key>> table = [] {
    std::vector<std::pair<std::string, Key>> t;
    auto add = [&](std::string name, Setter s, Getter g) { t.emplace_back(std::move(name), Key{std::move(s), std::move(g)}); };
#define ODR_INDEX_KEY(NAME, FIELD)                                                                     \
  add(NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = static_cast<Index>(to_int(k, v)); }, \
      [](const RunConfig& c) { return std::to_string(c.FIELD); })
#define ODR_INT_KEY(NAME, FIELD)                                                                       \
  add(NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = static_cast<int>(to_int(k, v)); }, \
      [](const RunConfig& c) { return std::to_string(c.FIELD); })
#define ODR_DOUBLE_KEY(NAME, FIELD)                                                                    \
  add(NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_double(k, v); }, \
      [](const RunConfig& c) { return fmt(c.FIELD); })
#define ODR_BOOL_KEY(NAME, FIELD)                                                                      \
  add(NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_bool(k, v); },  \
      [](const RunConfig& c) { return fmt(c.FIELD); })
#define ODR_TRIPLE_KEY(NAME, FIELD)                                                                    \
  add(NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_triple(k, v); }, \
      [](const RunConfig& c) { return fmt(c.FIELD); })

    ODR_INDEX_KEY("model.input_h", model.input_h);
    ODR_INDEX_KEY("model.input_w", model.input_w);
    ODR_TRIPLE_KEY("model.crop_rows", model.crop_rows);
    ODR_TRIPLE_KEY("model.conv_channels", model.conv_channels);
    ODR_TRIPLE_KEY("model.conv_kernels", model.conv_kernels);
    add("model.padding",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "valid") c.model.padding = PaddingPolicy::valid;
          else if (v == "same") c.model.padding = PaddingPolicy::same;
          else throw ConfigError("config key '" + k + "': expected valid|same, got '" + v + "'");
        },
        [](const RunConfig& c) { return std::string(c.model.padding == PaddingPolicy::same ? "same" : "valid"); });
    ODR_INDEX_KEY("model.fc_width", model.fc_width);
    ODR_DOUBLE_KEY("model.leaky_slope", model.leaky_slope);
    ODR_DOUBLE_KEY("model.dropout_rate", model.dropout_rate);
    ODR_BOOL_KEY("model.f6_activation", model.f6_activation);
    ODR_BOOL_KEY("model.f6_dropout", model.f6_dropout);
    ODR_BOOL_KEY("model.gender_head", model.gender_head);

    ODR_DOUBLE_KEY("rank.r_min", rank.r_min);
    ODR_DOUBLE_KEY("rank.eta", rank.eta);
    ODR_INT_KEY("rank.k", rank.k);

    add("loss.kind", [](RunConfig& c, const std::string&, const std::string& v) { c.loss = parse_loss_kind(v); },
        [](const RunConfig& c) { return std::string(to_string(c.loss)); });
    ODR_DOUBLE_KEY("loss.lambda", lambda);
    ODR_DOUBLE_KEY("loss.gender_weight", gender_weight);
    add("loss.softmax_input",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "outputs") c.softmax_input = SoftmaxInput::outputs;
          else if (v == "logits") c.softmax_input = SoftmaxInput::logits;
          else throw ConfigError("config key '" + k + "': expected outputs|logits, got '" + v + "'");
        },
        [](const RunConfig& c) { return std::string(c.softmax_input == SoftmaxInput::logits ? "logits" : "outputs"); });

    ODR_DOUBLE_KEY("optim.lr", optim.lr);
    ODR_DOUBLE_KEY("optim.beta1", optim.beta1);
    ODR_DOUBLE_KEY("optim.beta2", optim.beta2);
    ODR_DOUBLE_KEY("optim.eps", optim.eps);
    ODR_DOUBLE_KEY("optim.weight_decay", optim.weight_decay);
    ODR_BOOL_KEY("optim.decoupled_weight_decay", optim.decoupled_weight_decay);
    ODR_BOOL_KEY("optim.lr_decay", lr_decay);
    ODR_INT_KEY("optim.decay_every", decay_every);
    ODR_DOUBLE_KEY("optim.decay_factor", decay_factor);

    add("data.manifest", [](RunConfig& c, const std::string&, const std::string& v) { c.manifest = v; },
        [](const RunConfig& c) { return c.manifest; });
    ODR_DOUBLE_KEY("data.split_ratio", split_ratio);

    add("synth.n", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.n_samples = to_u64(k, v); },
        [](const RunConfig& c) { return std::to_string(c.synth.n_samples); });
    ODR_INDEX_KEY("synth.height", synth.height);
    ODR_INDEX_KEY("synth.width", synth.width);
    add("synth.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.seed = to_u64(k, v); },
        [](const RunConfig& c) { return std::to_string(c.synth.seed); });
    ODR_DOUBLE_KEY("synth.age_min", synth.age_min);
    ODR_DOUBLE_KEY("synth.age_max", synth.age_max);
    ODR_DOUBLE_KEY("synth.noise", synth.noise);
    ODR_BOOL_KEY("synth.gender_effect", synth.gender_effect);

    ODR_INT_KEY("train.epochs", epochs);
    add("train.batch_size",
        [](RunConfig& c, const std::string& k, const std::string& v) { c.batch_size = static_cast<std::size_t>(to_u64(k, v)); },
        [](const RunConfig& c) { return std::to_string(c.batch_size); });
    add("train.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); },
        [](const RunConfig& c) { return std::to_string(c.seed); });
    add("train.precision",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "32") c.precision = Precision::f32;
          else if (v == "64") c.precision = Precision::f64;
          else throw ConfigError("config key '" + k + "': expected 32|64, got '" + v + "'");
        },
        [](const RunConfig& c) { return std::string(c.precision == Precision::f64 ? "64" : "32"); });
    add("train.out_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; },
        [](const RunConfig& c) { return c.out_dir; });
    ODR_INT_KEY("eval.cs_max", cs_max);
#undef ODR_INDEX_KEY
#undef ODR_INT_KEY
#undef ODR_DOUBLE_KEY
#undef ODR_BOOL_KEY
#undef ODR_TRIPLE_KEY
    return t;
  }();
  return table;
}

}  // namespace

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::odl: return "odl";
    case LossKind::ce: return "ce";
    case LossKind::emd2: return "emd2";
    case LossKind::euclidean: return "euclidean";
    case LossKind::mae: return "mae";
  }
  return "odl";
}

LossKind parse_loss_kind(const std::string& text) {
  if (text == "odl") return LossKind::odl;
  if (text == "ce") return LossKind::ce;
  if (text == "emd2") return LossKind::emd2;
  if (text == "euclidean") return LossKind::euclidean;
  if (text == "mae") return LossKind::mae;
  throw ConfigError("unknown loss '" + text + "' (expected odl|ce|emd2|euclidean|mae)");
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& [name, k] : keys()) {
    if (name == key) {
      k.set(config, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::finalize() {
  rank = RankSpec(rank.r_min, rank.eta, rank.k);
  model.k_minus_1 = rank.k - 1;
  model.head_mode = (loss == LossKind::euclidean || loss == LossKind::mae) ? HeadMode::scalar_regression
                                                                          : HeadMode::ordinal;
  if (lambda < 0) throw ConfigError("loss.lambda must be non-negative");
  if (gender_weight < 0) throw ConfigError("loss.gender_weight must be non-negative");
  if (!(optim.lr > 0)) throw ConfigError("optim.lr must be positive");
  if (!(optim.beta1 >= 0 && optim.beta1 < 1) || !(optim.beta2 >= 0 && optim.beta2 < 1)) {
    throw ConfigError("optim.beta1/beta2 must lie in [0,1)");
  }
  if (!(optim.eps > 0)) throw ConfigError("optim.eps must be positive");
  if (optim.weight_decay < 0) throw ConfigError("optim.weight_decay must be non-negative");
  if (decay_every < 1) throw ConfigError("optim.decay_every must be at least 1");
  if (!(split_ratio > 0 && split_ratio < 1)) throw ConfigError("data.split_ratio must lie strictly between 0 and 1");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (cs_max < 0) throw ConfigError("eval.cs_max must be non-negative");
  if (manifest.empty() && (synth.height != model.input_h || synth.width != model.input_w)) {
    throw ConfigError("synth image size " + std::to_string(synth.height) + "x" + std::to_string(synth.width) +
                      " differs from model input " + std::to_string(model.input_h) + "x" +
                      std::to_string(model.input_w));
  }
  audit(model);
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [name, k] : keys()) out += name + " = " + k.get(*this) + "\n";
  return out;
}

void apply_config_text(RunConfig& config, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    try {
      set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig config;
  apply_config_text(config, text);
  config.finalize();
  return config;
}

std::string read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_config_file(path)); }

}  // namespace odr
