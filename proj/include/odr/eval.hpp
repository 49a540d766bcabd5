#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>

namespace odr {

// Mean absolute error in years.
double mae(std::span<const double> pred_ages, std::span<const double> true_ages);

// Percentage of samples whose absolute error is at most k years.
double cs(std::span<const double> pred_ages, std::span<const double> true_ages, double k);

// Percentage correct after thresholding at 0.5; a probability of exactly 0.5 counts as class 1.
double gender_accuracy(std::span<const double> pred_probs, std::span<const int> truths);

struct EvalReport {
  std::size_t n = 0;
  double mae = 0;
  std::map<int, double> cs_curve;  // k -> percentage
  std::optional<double> gender_accuracy;
  double monotonicity_violation_rate = 0;

  // `key value` lines with stable key names.
  std::string to_text() const;
  std::string to_json() const;
  std::string cs_csv() const;
};

EvalReport make_report(std::span<const double> pred_ages, std::span<const double> true_ages, int cs_max,
                       double violation_rate, std::optional<double> gender_acc = std::nullopt);

// Writes <stem>.txt, <stem>.json and <stem>_cs.csv into dir.
void write_report(const EvalReport& report, const std::filesystem::path& dir, const std::string& stem);

}  // namespace odr
