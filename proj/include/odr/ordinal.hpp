#pragma once

#include <span>
#include <vector>

#include "odr/errors.hpp"

namespace odr {

// Uniform rank grid r_k = r_min + (k-1) * eta for k = 1..K.
struct RankSpec {
  double r_min = 2.0;
  double eta = 1.0;
  int k = 89;

  RankSpec() = default;
  RankSpec(double r_min, double eta, int k);

  double rank(int index) const { return r_min + index * eta; }  // 0-based
  double r_max() const { return rank(k - 1); }
  int classifiers() const { return k - 1; }

  // Index of the grid rank nearest to `age`; ties round down.
  int snap(double age) const;

  friend bool operator==(const RankSpec&, const RankSpec&) = default;
};

struct OrdinalTarget {
  std::vector<double> bits;  // bits[k] = 1 iff age > r_{k+1}
  std::vector<double> dist;  // softmax(bits)
};

// Throws RangeError for ages outside [r_min, r_max]. Off-grid ages are
// snapped to the nearest rank first.
OrdinalTarget encode(double age, const RankSpec& spec);

// r_min + eta * #{k : probs[k] > 0.5}. Throws DomainError for entries
// outside [0,1] or a length other than K-1.
double decode(std::span<const double> probs, const RankSpec& spec);
double decode(std::span<const float> probs, const RankSpec& spec);

// Fraction of adjacent classifier pairs with probs[k] > probs[k-1] + 1e-9,
// pooled over the batch. probs_batch is row-major [rows, width].
double monotonicity_violation_rate(std::span<const double> probs_batch, std::size_t width);
double monotonicity_violation_rate(std::span<const float> probs_batch, std::size_t width);

}  // namespace odr
