// odr: synthesize data, train, evaluate and gradient-check the GL-CNN.
//
// Exit codes: 0 ok, 1 failed check or training abort, 2 usage or I/O error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "odr/checkpoint.hpp"
#include "odr/config.hpp"
#include "odr/data.hpp"
#include "odr/eval.hpp"
#include "odr/gradcheck.hpp"
#include "odr/synth.hpp"
#include "odr/train.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

struct SynthFlags {
  std::string config;
  std::string out = "synth";
  std::optional<std::size_t> n;
  std::optional<std::string> size;
  std::optional<std::uint64_t> seed;
  std::optional<double> noise, age_min, age_max;
  bool gender_effect = false;
};

struct TrainFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, loss;
  std::optional<double> lambda, gender;
  std::optional<int> epochs;
  bool lr_decay = false;
  std::vector<std::string> overrides;
};

struct EvalFlags {
  std::string checkpoint;
  std::optional<std::string> manifest, out;
  std::string split = "test";
};

struct GradcheckFlags {
  std::optional<std::string> component;
  std::optional<double> threshold;
  int trials = 3;
  std::uint64_t seed = 1;
};

void apply_overrides(odr::RunConfig& config, const std::vector<std::string>& overrides) {
  for (const std::string& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw odr::UsageError("--set expects key=value, got '" + item + "'");
    odr::set_config_value(config, item.substr(0, eq), item.substr(eq + 1));
  }
}

// Config flags apply on top of the file, so finalize() runs only after them.
odr::RunConfig base_config(const std::string& path) {
  odr::RunConfig config;
  if (!path.empty()) odr::apply_config_text(config, odr::read_config_file(path));
  return config;
}

int cmd_synth(const SynthFlags& f) {
  odr::SynthSpec spec = base_config(f.config).synth;
  if (f.n) spec.n_samples = *f.n;
  if (f.seed) spec.seed = *f.seed;
  if (f.noise) spec.noise = *f.noise;
  if (f.age_min) spec.age_min = *f.age_min;
  if (f.age_max) spec.age_max = *f.age_max;
  if (f.gender_effect) spec.gender_effect = true;
  if (f.size) {
    const auto x = f.size->find('x');
    if (x == std::string::npos) throw odr::UsageError("--size expects HxW, got '" + *f.size + "'");
    try {
      spec.height = std::stol(f.size->substr(0, x));
      spec.width = std::stol(f.size->substr(x + 1));
    } catch (const std::exception&) {
      throw odr::UsageError("--size expects HxW, got '" + *f.size + "'");
    }
  }
  if (spec.n_samples < 1) throw odr::UsageError("--n must be at least 1");
  const odr::SampleManifest manifest = odr::synth_generate(spec, f.out);
  std::cout << (fs::path(f.out) / "manifest.csv").string() << "\n";
  std::cout << manifest.records.size() << " samples, ages " << manifest.min_age << "-" << manifest.max_age << "\n";
  return kOk;
}

// Resolves the data source of a run: an explicit manifest or a synthetic
// set generated (once) under <run_dir>/data.
odr::SampleManifest run_manifest(const odr::RunConfig& config, const fs::path& run_dir) {
  if (!config.manifest.empty()) return odr::load_manifest(config.manifest);
  const fs::path data_dir = run_dir / "data";
  if (fs::exists(data_dir / "manifest.csv")) return odr::load_manifest(data_dir / "manifest.csv");
  return odr::synth_generate(config.synth, data_dir);
}

template <typename Scalar>
int run_training(const odr::RunConfig& config) {
  const fs::path run_dir = config.out_dir;
  fs::create_directories(run_dir);
  {
    std::ofstream echo(run_dir / "config.txt");
    echo << config.to_text();
  }
  const odr::SampleManifest manifest = run_manifest(config, run_dir);
  const auto data = odr::load_dataset<Scalar>(manifest, config.model.input_h, config.model.input_w);

  std::ofstream log(run_dir / "epochs.csv");
  log << odr::kEpochLogHeader << "\n";
  odr::TrainHooks hooks;
  hooks.on_epoch = [&](const odr::EpochLog& e) {
    log << odr::to_csv_row(e) << "\n" << std::flush;
    std::cout << "epoch " << e.epoch << " total " << e.total << " train_mae " << e.train_mae << " val_mae "
              << e.val_mae << "\n";
  };
  hooks.on_nan = [&](const std::string& dump) {
    std::ofstream(run_dir / "nan_dump.txt") << dump;
    std::cerr << dump;
  };
  const odr::TrainOutcome<Scalar> outcome = odr::train(config, data, hooks);

  odr::Checkpoint<Scalar> checkpoint;
  checkpoint.config = config;
  checkpoint.config.out_dir = ".";  // paths in the echo are relative to the checkpoint's directory
  checkpoint.seed = config.seed;
  checkpoint.epoch = outcome.best_epoch;
  checkpoint.val_mae = outcome.best_val_mae;
  checkpoint.names = outcome.best_model.parameter_names();
  checkpoint.params = outcome.best_model.parameters();
  checkpoint.adam = outcome.best_adam;
  odr::save_checkpoint(run_dir / "checkpoint.bin", checkpoint);

  const odr::EvalReport report = odr::evaluate(outcome.best_model, config, data, outcome.split.test);
  odr::write_report(report, run_dir, "val_report");
  std::cout << std::setprecision(17) << "best epoch " << outcome.best_epoch << " val_mae " << outcome.best_val_mae
            << "\n";
  return kOk;
}

int cmd_train(const TrainFlags& f) {
  odr::RunConfig config = base_config(f.config);
  apply_overrides(config, f.overrides);
  if (f.seed) config.seed = *f.seed;
  if (f.out) config.out_dir = *f.out;
  if (f.loss) config.loss = odr::parse_loss_kind(*f.loss);
  if (f.lambda) config.lambda = *f.lambda;
  if (f.gender) {
    config.gender_weight = *f.gender;
    config.model.gender_head = *f.gender > 0;
  }
  if (f.epochs) config.epochs = *f.epochs;
  if (f.lr_decay) config.lr_decay = true;
  config.finalize();
  return config.precision == odr::Precision::f64 ? run_training<double>(config) : run_training<float>(config);
}

template <typename Scalar>
int run_eval(const EvalFlags& f) {
  const fs::path ckpt_path = f.checkpoint;
  const auto checkpoint = odr::load_checkpoint<Scalar>(ckpt_path);
  const odr::RunConfig& config = checkpoint.config;
  const odr::GlcnnModel<Scalar> model = odr::restore_model(checkpoint);

  const fs::path run_dir = ckpt_path.has_parent_path() ? ckpt_path.parent_path() : fs::path(".");
  odr::SampleManifest manifest;
  if (f.manifest) {
    manifest = odr::load_manifest(*f.manifest);
  } else if (!config.manifest.empty()) {
    manifest = odr::load_manifest(config.manifest);
  } else {
    manifest = odr::load_manifest(run_dir / "data" / "manifest.csv");
  }
  const auto data = odr::load_dataset<Scalar>(manifest, config.model.input_h, config.model.input_w);

  std::vector<std::size_t> indices;
  if (f.split == "all") {
    for (std::size_t i = 0; i < data.size(); ++i) indices.push_back(i);
  } else {
    const odr::Split split = odr::stratified_split(data.ages, config.split_ratio, config.seed);
    indices = f.split == "train" ? split.train : split.test;
  }
  const odr::EvalReport report = odr::evaluate(model, config, data, indices);
  std::cout << report.to_text();
  odr::write_report(report, f.out ? fs::path(*f.out) : run_dir, "eval_" + f.split);
  return kOk;
}

int cmd_eval(const EvalFlags& f) {
  if (!fs::exists(f.checkpoint)) throw odr::IngestionError("checkpoint not found: " + f.checkpoint);
  const odr::CheckpointInfo info = odr::peek_checkpoint(f.checkpoint);
  return info.scalar_bytes == 8 ? run_eval<double>(f) : run_eval<float>(f);
}

int cmd_gradcheck(const GradcheckFlags& f) {
  odr::GradcheckOptions options;
  options.component = f.component;
  options.threshold = f.threshold;
  options.trials = f.trials;
  options.seed = f.seed;
  bool ok = true;
  for (const odr::GradcheckResult& r : odr::run_gradcheck(options)) {
    std::printf("%-14s worst %.3e  threshold %.1e  %s\n", r.component.c_str(), r.worst_error, r.threshold,
                r.passed() ? "ok" : "FAIL");
    if (!r.passed()) {
      std::fprintf(stderr, "gradcheck failed: %s\n", r.component.c_str());
      ok = false;
    }
  }
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ordinal distribution regression with a global/local CNN"};
  app.require_subcommand(1);

  SynthFlags sf;
  auto* synth = app.add_subcommand("synth", "Render a synthetic gait-energy-image dataset");
  synth->add_option("--config", sf.config, "Run config; its synth.* keys are the defaults");
  synth->add_option("--out", sf.out, "Output directory")->capture_default_str();
  synth->add_option("--n", sf.n, "Number of samples");
  synth->add_option("--size", sf.size, "Image size as HxW");
  synth->add_option("--seed", sf.seed, "Generator seed");
  synth->add_option("--noise", sf.noise, "Pixel noise standard deviation");
  synth->add_option("--age-min", sf.age_min, "Youngest age");
  synth->add_option("--age-max", sf.age_max, "Oldest age");
  synth->add_flag("--gender-effect", sf.gender_effect, "Let gender modulate silhouette width");

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Train a model and write the best checkpoint");
  train->add_option("--config", tf.config, "Run config file");
  train->add_option("--seed", tf.seed, "Training seed");
  train->add_option("--out", tf.out, "Run directory");
  train->add_option("--loss", tf.loss, "odl|ce|emd2|euclidean|mae");
  train->add_option("--lambda", tf.lambda, "Weight of the distribution term");
  train->add_option("--gender", tf.gender, "Gender loss weight; > 0 enables the gender head");
  train->add_option("--epochs", tf.epochs, "Number of epochs");
  train->add_flag("--lr-decay", tf.lr_decay, "Step-decay the learning rate");
  train->add_option("--set", tf.overrides, "Extra key=value config overrides");

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", ef.checkpoint, "Checkpoint file")->required();
  eval->add_option("--manifest", ef.manifest, "Manifest to evaluate (default: the run's data)");
  eval->add_option("--split", ef.split, "all|train|test")
      ->check(CLI::IsMember({"all", "train", "test"}))
      ->capture_default_str();
  eval->add_option("--out", ef.out, "Report directory (default: beside the checkpoint)");

  GradcheckFlags gf;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  gradcheck->add_option("--component", gf.component, "Check a single component");
  gradcheck->add_option("--threshold", gf.threshold, "Override every threshold");
  gradcheck->add_option("--trials", gf.trials, "Random trials per component")->capture_default_str();
  gradcheck->add_option("--seed", gf.seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*synth) return cmd_synth(sf);
    if (*train) return cmd_train(tf);
    if (*eval) return cmd_eval(ef);
    return cmd_gradcheck(gf);
  } catch (const odr::TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  } catch (const odr::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
}
