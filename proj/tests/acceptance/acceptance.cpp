// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,4,9] [--work DIR] [--known-red 7] [--strict]
//
// Exit status is 0 when every criterion passes or fails only among the
// --known-red set, 1 otherwise. --strict ignores --known-red.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "odr/config.hpp"
#include "odr/eval.hpp"
#include "odr/loss.hpp"
#include "odr/model.hpp"
#include "odr/ordinal.hpp"
#include "odr/synth.hpp"
#include "odr/train.hpp"

namespace fs = std::filesystem;
using odr::Index;
using odr::Tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream out;
  out << std::setprecision(precision) << v;
  return out.str();
}

std::string sci(double v) {
  std::ostringstream out;
  out << std::scientific << std::setprecision(2) << v;
  return out.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- oracles, written out longhand and independent of the library ----

double ce_oracle(const Tensor<double>& o, const Tensor<double>& t) {
  const auto n = o.dim(0), m = o.dim(1);
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < m; ++k) {
      const double p = std::clamp(o.at({i, k}), odr::kProbabilityClamp, 1 - odr::kProbabilityClamp);
      const double y = t.at({i, k});
      total -= y * std::log(p) + (1 - y) * std::log(1 - p);
    }
  }
  return total / static_cast<double>(n);
}

double emd_oracle(const Tensor<double>& p, const Tensor<double>& q) {
  const auto n = p.dim(0), m = p.dim(1);
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    double cp = 0, cq = 0;
    for (Index k = 0; k < m; ++k) {
      cp += p.at({i, k});
      cq += q.at({i, k});
      total += (cp - cq) * (cp - cq);
    }
  }
  return total / static_cast<double>(n);
}

Tensor<double> softmax_rows(const Tensor<double>& x) {
  Tensor<double> out(x.shape());
  for (Index i = 0; i < x.dim(0); ++i) {
    double mx = -1e300;
    for (Index k = 0; k < x.dim(1); ++k) mx = std::max(mx, x.at({i, k}));
    double z = 0;
    for (Index k = 0; k < x.dim(1); ++k) z += std::exp(x.at({i, k}) - mx);
    for (Index k = 0; k < x.dim(1); ++k) out.at({i, k}) = std::exp(x.at({i, k}) - mx) / z;
  }
  return out;
}

double odl_oracle(const Tensor<double>& o, const Tensor<double>& t, double lambda) {
  return ce_oracle(o, t) + lambda * emd_oracle(softmax_rows(o), softmax_rows(t));
}

Tensor<double> central_difference(const std::function<double(const Tensor<double>&)>& f, Tensor<double> x,
                                   double eps) {
  Tensor<double> g(x.shape());
  for (Index i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f(x);
    x[i] = keep - eps;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

double rel_err(const Tensor<double>& a, const Tensor<double>& b) {
  const double scale = std::max(a.values().norm(), b.values().norm());
  return scale == 0 ? 0 : (a.values() - b.values()).norm() / scale;
}

// Separate generator so the oracles share nothing with odr::Engine.
struct Draw {
  std::mt19937_64 gen;
  explicit Draw(unsigned long long seed) : gen(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen); }

  Tensor<double> matrix(Index n, Index m, double lo, double hi) {
    Tensor<double> t({n, m});
    for (Index i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
    return t;
  }
  Tensor<double> bits(Index n, Index m) {
    Tensor<double> t({n, m});
    for (Index i = 0; i < t.size(); ++i) t[i] = integer(0, 1);
    return t;
  }
  Tensor<double> simplex(Index n, Index m) {
    Tensor<double> t({n, m});
    for (Index i = 0; i < n; ++i) {
      double z = 0;
      for (Index k = 0; k < m; ++k) z += t.at({i, k}) = -std::log(uniform(1e-12, 1.0));
      for (Index k = 0; k < m; ++k) t.at({i, k}) /= z;
    }
    return t;
  }
};

// ---- desk-scale training setup ----

const char* kDeskConfig =
    "model.input_h = 32\n"
    "model.input_w = 22\n"
    "model.crop_rows = 6,12,14\n"
    "model.conv_channels = 4,8,8\n"
    "model.conv_kernels = 3,3,3\n"
    "model.padding = same\n"
    "model.fc_width = 32\n"
    "model.f6_activation = false\n"
    "model.f6_dropout = false\n"
    "rank.r_min = 2\n"
    "rank.eta = 4\n"
    "rank.k = 23\n"
    "synth.height = 32\n"
    "synth.width = 22\n"
    "synth.n = 2000\n"
    "synth.noise = 0.1\n"
    "synth.age_min = 2\n"
    "synth.age_max = 90\n"
    "train.batch_size = 32\n"
    "train.epochs = 50\n"
    "optim.lr = 0.001\n"
    "train.precision = 32\n";

struct RunSummary {
  double mae = 0;
  double violation = 0;
  double gender_accuracy = 0;
  double median_baseline = 0;
  double seconds = 0;
};

class Bench {
 public:
  explicit Bench(fs::path work) : work_(std::move(work)) {}

  const fs::path& work() const { return work_; }

  const odr::Dataset<float>& dataset(bool gender) {
    auto& slot = gender ? gender_data_ : plain_data_;
    if (!slot) {
      odr::SynthSpec spec = odr::parse_run_config(kDeskConfig).synth;
      spec.seed = 2024;
      spec.gender_effect = gender;
      const auto manifest = odr::synth_generate(spec, work_ / (gender ? "synth_gender" : "synth"));
      slot = odr::load_dataset<float>(manifest, spec.height, spec.width);
    }
    return *slot;
  }

  const RunSummary& run(const std::string& loss, std::uint64_t seed, bool gender_data, bool gender_head) {
    const std::string key = loss + "/" + std::to_string(seed) + (gender_data ? "/g" : "") + (gender_head ? "/h" : "");
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;

    odr::RunConfig config = odr::parse_run_config(std::string(kDeskConfig) + "loss.kind = " + loss + "\n" +
                                                  "train.seed = " + std::to_string(seed) + "\n" +
                                                  (gender_head ? "model.gender_head = true\nloss.gender_weight = 2\n" : ""));
    const auto& data = dataset(gender_data);
    const auto t0 = Clock::now();
    const auto outcome = odr::train(config, data);
    RunSummary s;
    s.seconds = seconds_since(t0);
    const auto report = odr::evaluate(outcome.best_model, config, data, outcome.split.test);
    s.mae = report.mae;
    s.violation = report.monotonicity_violation_rate;
    s.gender_accuracy = report.gender_accuracy.value_or(-1);

    std::vector<double> train_ages;
    for (std::size_t i : outcome.split.train) train_ages.push_back(data.ages[i]);
    const double med = median(train_ages);
    double err = 0;
    for (std::size_t i : outcome.split.test) err += std::abs(data.ages[i] - med);
    s.median_baseline = err / static_cast<double>(outcome.split.test.size());

    std::cout << "    " << key << ": mae " << fmt(s.mae) << " violation " << fmt(s.violation);
    if (gender_head) std::cout << " gender_acc " << fmt(s.gender_accuracy);
    std::cout << " best_epoch " << outcome.best_epoch << " (" << fmt(s.seconds, 3) << " s)" << std::endl;
    return cache_.emplace(key, s).first->second;
  }

 private:
  fs::path work_;
  std::optional<odr::Dataset<float>> plain_data_, gender_data_;
  std::map<std::string, RunSummary> cache_;
};

// ---- criteria ----

Verdict criterion_1() {
  const auto t0 = Clock::now();
  Draw draw(101);
  double worst = 0, worst_value = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const Index n = draw.integer(1, 6), m = draw.integer(2, 24);
    const auto o = draw.matrix(n, m, 0.02, 0.98);
    const auto t = draw.bits(n, m);
    const auto analytic = odr::cross_entropy(o, t);
    const auto numeric = central_difference([&](const Tensor<double>& x) { return ce_oracle(x, t); }, o, 1e-5);
    worst = std::max(worst, rel_err(analytic.grad, numeric));
    worst_value = std::max(worst_value, std::abs(analytic.value - ce_oracle(o, t)) / std::abs(ce_oracle(o, t)));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && worst_value < 1e-12 && secs < 5,
          "60 batches, worst grad rel err " + sci(worst) + " (< 1e-6), value rel err " + sci(worst_value) + ", " +
              fmt(secs) + " s"};
}

Verdict criterion_2() {
  const auto t0 = Clock::now();
  Draw draw(202);
  double worst = 0, worst_value = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const Index n = draw.integer(1, 5), m = draw.integer(2, 30);
    const auto p = draw.simplex(n, m);
    const auto q = draw.simplex(n, m);
    const auto analytic = odr::emd2(p, q);
    const auto numeric = central_difference([&](const Tensor<double>& x) { return emd_oracle(x, q); }, p, 1e-4);
    worst = std::max(worst, rel_err(analytic.grad, numeric));
    worst_value = std::max(worst_value, std::abs(analytic.value - emd_oracle(p, q)));
  }
  const Tensor<double> pred({1, 3}, {0.4, 0.3, 0.3});
  const Tensor<double> target({1, 3}, {0.3, 0.4, 0.3});
  const auto hand = odr::emd2(pred, target);
  const double hand_err = rel_err(hand.grad, Tensor<double>({1, 3}, {0.2, 0.0, 0.0}));
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && worst_value < 1e-12 && hand_err < 1e-9 && secs < 5,
          "60 pairs, worst rel err " + sci(worst) + " (< 1e-6); hand grad [" + fmt(hand.grad[0]) + "," +
              fmt(hand.grad[1]) + "," + fmt(hand.grad[2]) + "] vs [0.2,0,0]; " + fmt(secs) + " s"};
}

Verdict criterion_3() {
  const auto t0 = Clock::now();
  odr::ModelConfig mc;
  mc.input_h = 32;
  mc.input_w = 22;
  mc.crop_rows = {6, 12, 14};
  mc.conv_channels = {4, 8, 8};
  mc.conv_kernels = {3, 3, 3};
  mc.padding = odr::PaddingPolicy::same;
  mc.fc_width = 32;
  mc.k_minus_1 = 8;
  mc.dropout_rate = 0;
  mc.f6_dropout = false;
  const double lambda = 10;

  auto model = odr::GlcnnModel<double>::build(mc, 33);
  Draw draw(303);
  const auto batch = draw.matrix(2, 32 * 22, 0, 1).reshaped({2, 1, 32, 22});
  Tensor<double> targets({2, 8});
  const odr::RankSpec spec(2, 1, 9);
  for (Index i = 0; i < 2; ++i) {
    const auto enc = odr::encode(spec.rank(draw.integer(0, 8)), spec);
    for (Index k = 0; k < 8; ++k) targets.at({i, k}) = enc.bits[k];
  }

  const auto result = odr::forward(model, batch, odr::Mode::train);
  const auto loss = odr::odl(result.outputs, targets, lambda);
  odr::OutputGrad<double> up;
  up.outputs = loss.grad;
  const auto analytic = odr::backward(model, result.record, up);
  const double value_err = std::abs(loss.report.total - odl_oracle(result.outputs, targets, lambda));

  double worst = 0;
  std::string worst_name;
  const std::size_t count = model.parameters().size();
  for (std::size_t p = 0; p < count; ++p) {
    auto f = [&](const Tensor<double>& x) {
      model.mutable_parameters()[p] = x;
      return odl_oracle(odr::forward(model, batch, odr::Mode::eval).outputs, targets, lambda);
    };
    const Tensor<double> keep = model.parameters()[p];
    const auto numeric = central_difference(f, keep, 1e-6);
    model.mutable_parameters()[p] = keep;
    const double e = rel_err(analytic.params[p], numeric);
    if (e >= worst) {
      worst = e;
      worst_name = model.parameter_names()[p];
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && value_err < 1e-10 && secs < 120,
          std::to_string(count) + " parameter tensors, worst rel err " + sci(worst) + " at " + worst_name +
              " (< 1e-4), " + fmt(secs) + " s"};
}

Verdict criterion_4() {
  const auto t0 = Clock::now();
  const odr::RankSpec spec(2, 1, 89);
  int round_trip_bad = 0;
  for (int age = 2; age <= 90; ++age) {
    if (odr::decode(std::span<const double>(odr::encode(age, spec).bits), spec) != age) ++round_trip_bad;
  }
  Draw draw(404);
  int oracle_bad = 0;
  std::vector<double> probs(88);
  for (int trial = 0; trial < 10000; ++trial) {
    int count = 0;
    for (double& p : probs) {
      p = draw.integer(0, 9) == 0 ? 0.5 : draw.uniform(0, 1);
      if (p > 0.5) ++count;
    }
    if (odr::decode(std::span<const double>(probs), spec) != 2.0 + count) ++oracle_bad;
  }
  const double secs = seconds_since(t0);
  return {round_trip_bad == 0 && oracle_bad == 0 && secs < 5,
          "89 grid ages, " + std::to_string(round_trip_bad) + " round-trip mismatches; 10000 random vectors, " +
              std::to_string(oracle_bad) + " oracle mismatches; " + fmt(secs) + " s"};
}

Verdict criterion_5() {
  const auto t0 = Clock::now();
  Draw draw(505);
  int negative = 0, asymmetric = 0, zero_wrong = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const Index m = draw.integer(2, 30);
    const auto p = draw.simplex(1, m);
    auto q = draw.simplex(1, m);
    if (trial % 4 == 0) q = p;
    if (trial % 4 == 1) {
      // Same CDF written with a different rounding path.
      for (Index k = 0; k < m; ++k) q[k] = p[k] * 0.5 + p[k] * 0.5;
    }
    const double pq = odr::emd2(p, q).value;
    const double qp = odr::emd2(q, p).value;
    if (pq < 0) ++negative;
    if (std::abs(pq - qp) > 1e-15) ++asymmetric;
    double cdf_gap = 0, cp = 0, cq = 0;
    for (Index k = 0; k < m; ++k) {
      cp += p[k];
      cq += q[k];
      cdf_gap = std::max(cdf_gap, std::abs(cp - cq));
    }
    const bool equal_cdf = cdf_gap == 0;
    if (equal_cdf != (pq == 0)) ++zero_wrong;
  }
  const double hand = odr::emd2(Tensor<double>({1, 3}, {1, 0, 0}), Tensor<double>({1, 3}, {0, 0, 1})).value;
  const double secs = seconds_since(t0);
  return {negative == 0 && asymmetric == 0 && zero_wrong == 0 && hand == 2 && secs < 5,
          "10000 pairs: " + std::to_string(negative) + " negative, " + std::to_string(asymmetric) + " asymmetric, " +
              std::to_string(zero_wrong) + " zero-iff-equal-CDF failures; hand value " + fmt(hand) + "; " +
              fmt(secs) + " s"};
}

Verdict criterion_6(Bench& bench) {
  const RunSummary& s = bench.run("odl", 1, false, false);
  const double bound = 0.5 * s.median_baseline;
  return {s.mae < bound && s.seconds < 900,
          "held-out mae " + fmt(s.mae) + " vs 0.5 x median-predictor mae " + fmt(bound) + " (" +
              fmt(s.median_baseline) + "), " + fmt(s.seconds) + " s"};
}

Verdict criterion_7(Bench& bench) {
  std::vector<double> odl_v, ce_v, odl_m, ce_m;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto& o = bench.run("odl", seed, false, false);
    const auto& c = bench.run("ce", seed, false, false);
    odl_v.push_back(o.violation);
    ce_v.push_back(c.violation);
    odl_m.push_back(o.mae);
    ce_m.push_back(c.mae);
  }
  const double ov = median(odl_v), cv = median(ce_v), om = median(odl_m), cm = median(ce_m);
  return {ov < cv && om <= cm + 0.25, "median violation odl " + fmt(ov, 4) + " vs ce " + fmt(cv, 4) +
                                          "; median mae odl " + fmt(om) + " vs ce " + fmt(cm) + " + 0.25"};
}

Verdict criterion_8(Bench& bench) {
  std::vector<double> acc, joint_m, plain_m;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto& j = bench.run("odl", seed, true, true);
    const auto& p = bench.run("odl", seed, true, false);
    acc.push_back(j.gender_accuracy);
    joint_m.push_back(j.mae);
    plain_m.push_back(p.mae);
  }
  const double a = median(acc), jm = median(joint_m), pm = median(plain_m);
  return {a > 95 && jm <= pm + 0.25, "mu 2, median gender accuracy " + fmt(a, 4) + "% (> 95); median mae joint " +
                                         fmt(jm) + " vs age-only " + fmt(pm) + " + 0.25"};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ODR_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict criterion_9(Bench& bench) {
  const fs::path dir = bench.work() / "determinism";
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << kDeskConfig << "train.precision = 64\ntrain.epochs = 3\nsynth.n = 400\nsynth.seed = 9\n";
  }
  const std::string base = "train --config " + (dir / "run.cfg").string() + " --seed 17 --out ";
  const int a = run_cli(base + (dir / "a").string());
  const int b = run_cli(base + (dir / "b").string());
  const std::string ca = slurp(dir / "a/checkpoint.bin");
  const std::string cb = slurp(dir / "b/checkpoint.bin");
  const bool same = !ca.empty() && ca == cb;
  return {a == 0 && b == 0 && same, "exit codes " + std::to_string(a) + "/" + std::to_string(b) + ", checkpoints " +
                                        std::to_string(ca.size()) + " bytes, " +
                                        (same ? "byte-identical" : "different")};
}

Verdict criterion_10(Bench& bench) {
  Draw draw(1010);
  int mismatched = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = draw.integer(1, 8), m = draw.integer(2, 30);
    const auto o = draw.matrix(n, m, 0.001, 0.999);
    const auto t = draw.bits(n, m);
    const auto reduced = odr::odl(o, t, 0.0);
    const auto ce = odr::cross_entropy(o, t);
    if (reduced.report.total != ce.value || !(reduced.grad == ce.grad)) ++mismatched;
  }

  const auto& data = bench.dataset(false);
  const std::string short_run = "train.epochs = 3\ntrain.seed = 4\n";
  const auto zero = odr::train(odr::parse_run_config(std::string(kDeskConfig) + short_run + "loss.lambda = 0\n"), data);
  const auto ce = odr::train(odr::parse_run_config(std::string(kDeskConfig) + short_run + "loss.kind = ce\n"), data);
  bool epochs_equal = zero.history.size() == ce.history.size();
  for (std::size_t e = 0; epochs_equal && e < zero.history.size(); ++e) {
    epochs_equal = zero.history[e].ce == ce.history[e].ce && zero.history[e].total == ce.history[e].total &&
                   zero.history[e].val_mae == ce.history[e].val_mae;
  }
  const bool weights_equal = zero.best_model.parameters() == ce.best_model.parameters();
  return {mismatched == 0 && epochs_equal && weights_equal,
          "200 random batches, " + std::to_string(mismatched) + " mismatches; 3-epoch training losses " +
              (epochs_equal ? "identical" : "different") + ", weights " + (weights_equal ? "identical" : "different")};
}

std::set<int> parse_list(const std::string& text) {
  std::set<int> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.insert(std::stoi(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string only, known_red;
  std::string work = (fs::temp_directory_path() / "odr_acceptance").string();
  bool strict = false;
  app.add_option("--only", only, "Comma-separated criteria to run");
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  app.add_option("--known-red", known_red, "Criteria whose FAIL does not change the exit status");
  app.add_flag("--strict", strict, "Every FAIL changes the exit status");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10} : parse_list(only);
  const std::set<int> tolerated = strict ? std::set<int>{} : parse_list(known_red);
  fs::remove_all(work);
  fs::create_directories(work);
  Bench bench(work);

  const std::map<int, std::function<Verdict()>> criteria{
      {1, criterion_1},
      {2, criterion_2},
      {3, criterion_3},
      {4, criterion_4},
      {5, criterion_5},
      {6, [&] { return criterion_6(bench); }},
      {7, [&] { return criterion_7(bench); }},
      {8, [&] { return criterion_8(bench); }},
      {9, [&] { return criterion_9(bench); }},
      {10, [&] { return criterion_10(bench); }},
  };

  int blocking = 0;
  std::vector<std::string> lines;
  for (const auto& [id, check] : criteria) {
    if (!selected.contains(id)) continue;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    std::ostringstream line;
    line << "criterion " << std::setw(2) << id << ' ' << (v.pass ? "PASS" : "FAIL") << "  " << v.detail;
    if (!v.pass && tolerated.contains(id)) line << "  [known red]";
    std::cout << line.str() << std::endl;
    lines.push_back(line.str());
    if (!v.pass && !tolerated.contains(id)) ++blocking;
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << '\n';
  return blocking == 0 ? 0 : 1;
}
