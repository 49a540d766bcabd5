#include "odr/eval.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "odr/errors.hpp"

namespace odr {
namespace {

void require_pairs(std::size_t a, std::size_t b, const char* op) {
  if (a == 0 || b == 0) throw DomainError(std::string(op) + ": empty input");
  if (a != b) throw DomainError(std::string(op) + ": length mismatch " + std::to_string(a) + " vs " + std::to_string(b));
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

double mae(std::span<const double> pred, std::span<const double> truth) {
  require_pairs(pred.size(), truth.size(), "mae");
  double total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += std::abs(pred[i] - truth[i]);
  return total / static_cast<double>(pred.size());
}

double cs(std::span<const double> pred, std::span<const double> truth, double k) {
  require_pairs(pred.size(), truth.size(), "cs");
  if (k < 0) throw DomainError("cs: k must be non-negative");
  std::size_t within = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (std::abs(pred[i] - truth[i]) <= k) ++within;
  }
  return 100.0 * static_cast<double>(within) / static_cast<double>(pred.size());
}

double gender_accuracy(std::span<const double> probs, std::span<const int> truths) {
  require_pairs(probs.size(), truths.size(), "gender_accuracy");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) throw DomainError("gender_accuracy: probability outside [0,1]");
    const int predicted = probs[i] >= 0.5 ? 1 : 0;
    if (predicted == truths[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(probs.size());
}

EvalReport make_report(std::span<const double> pred, std::span<const double> truth, int cs_max,
                       double violation_rate, std::optional<double> gender_acc) {
  EvalReport report;
  report.n = pred.size();
  report.mae = mae(pred, truth);
  for (int k = 0; k <= cs_max; ++k) report.cs_curve[k] = cs(pred, truth, k);
  report.gender_accuracy = gender_acc;
  report.monotonicity_violation_rate = violation_rate;
  return report;
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  out << "n " << n << '\n';
  out << "mae " << format_double(mae) << '\n';
  for (const auto& [k, v] : cs_curve) out << "cs." << k << ' ' << format_double(v) << '\n';
  if (gender_accuracy) out << "gender_accuracy " << format_double(*gender_accuracy) << '\n';
  out << "monotonicity_violation_rate " << format_double(monotonicity_violation_rate) << '\n';
  return out.str();
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["n"] = n;
  j["mae"] = mae;
  nlohmann::ordered_json curve = nlohmann::ordered_json::object();
  for (const auto& [k, v] : cs_curve) curve[std::to_string(k)] = v;
  j["cs_curve"] = curve;
  j["gender_accuracy"] = gender_accuracy ? nlohmann::ordered_json(*gender_accuracy) : nlohmann::ordered_json(nullptr);
  j["monotonicity_violation_rate"] = monotonicity_violation_rate;
  return j.dump(2) + "\n";
}

std::string EvalReport::cs_csv() const {
  std::ostringstream out;
  out << "k,cs\n";
  for (const auto& [k, v] : cs_curve) out << k << ',' << format_double(v) << '\n';
  return out.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& dir, const std::string& stem) {
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw IngestionError("cannot write " + (dir / name).string());
    out << content;
  };
  write(stem + ".txt", report.to_text());
  write(stem + ".json", report.to_json());
  write(stem + "_cs.csv", report.cs_csv());
}

}  // namespace odr
