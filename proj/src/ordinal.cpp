#include "odr/ordinal.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace odr {

RankSpec::RankSpec(double r_min_, double eta_, int k_) : r_min(r_min_), eta(eta_), k(k_) {
  if (k < 2) throw ConfigError("rank spec: K must be >= 2, got " + std::to_string(k));
  if (!(eta > 0.0)) throw ConfigError("rank spec: eta must be positive");
  if (!std::isfinite(r_min)) throw ConfigError("rank spec: r_min must be finite");
}

int RankSpec::snap(double age) const {
  const double position = (age - r_min) / eta;
  const double lower = std::floor(position);
  // Exact midpoints go to the lower rank.
  const int index = position - lower > 0.5 ? static_cast<int>(lower) + 1 : static_cast<int>(lower);
  return index;
}

OrdinalTarget encode(double age, const RankSpec& spec) {
  constexpr double kSlack = 1e-9;
  if (!(age >= spec.r_min - kSlack && age <= spec.r_max() + kSlack)) {
    throw RangeError("age " + std::to_string(age) + " outside rank range [" + std::to_string(spec.r_min) +
                     ", " + std::to_string(spec.r_max()) + "]");
  }
  const int index = std::clamp(spec.snap(age), 0, spec.k - 1);
  const auto width = static_cast<std::size_t>(spec.classifiers());
  OrdinalTarget target;
  target.bits.resize(width);
  for (std::size_t j = 0; j < width; ++j) target.bits[j] = static_cast<int>(j) < index ? 1.0 : 0.0;

  // Two-level softmax: the bits only take values 0 and 1.
  double ones = static_cast<double>(index);
  const double zeros = static_cast<double>(width) - ones;
  const double denom = ones * std::exp(1.0) + zeros;
  target.dist.resize(width);
  for (std::size_t j = 0; j < width; ++j) target.dist[j] = (target.bits[j] > 0.5 ? std::exp(1.0) : 1.0) / denom;
  return target;
}

namespace {

template <typename T>
double decode_impl(std::span<const T> probs, const RankSpec& spec) {
  if (static_cast<int>(probs.size()) != spec.classifiers()) {
    throw DomainError("decode: expected " + std::to_string(spec.classifiers()) + " probabilities, got " +
                      std::to_string(probs.size()));
  }
  int count = 0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const double p = static_cast<double>(probs[j]);
    if (!(p >= 0.0 && p <= 1.0)) {
      throw DomainError("decode: probability " + std::to_string(p) + " at index " + std::to_string(j) +
                        " outside [0,1]");
    }
    if (p > 0.5) ++count;
  }
  return spec.r_min + spec.eta * count;
}

template <typename T>
double violation_impl(std::span<const T> probs, std::size_t width) {
  if (probs.empty() || width == 0) throw DomainError("monotonicity_violation_rate: empty batch");
  if (probs.size() % width != 0) {
    throw DomainError("monotonicity_violation_rate: batch length not a multiple of the row width");
  }
  const std::size_t rows = probs.size() / width;
  std::size_t pairs = 0, violations = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = probs.data() + r * width;
    for (std::size_t j = 1; j < width; ++j) {
      ++pairs;
      if (static_cast<double>(row[j]) > static_cast<double>(row[j - 1]) + 1e-9) ++violations;
    }
  }
  return pairs == 0 ? 0.0 : static_cast<double>(violations) / static_cast<double>(pairs);
}

}  // namespace

double decode(std::span<const double> probs, const RankSpec& spec) { return decode_impl(probs, spec); }
double decode(std::span<const float> probs, const RankSpec& spec) { return decode_impl(probs, spec); }

double monotonicity_violation_rate(std::span<const double> probs, std::size_t width) {
  return violation_impl(probs, width);
}
double monotonicity_violation_rate(std::span<const float> probs, std::size_t width) {
  return violation_impl(probs, width);
}

}  // namespace odr
