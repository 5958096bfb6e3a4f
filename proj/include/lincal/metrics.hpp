#pragma once

// Calibration metrics over (probability, outcome) pairs. Bin "distance" is
// measured from the bin midpoint, not from the mean prediction in the bin.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lincal/corpus.hpp"

namespace lincal {

// Partition of [0, 1] into bins [lo, hi); the last bin is closed.
class BinSpec {
 public:
  static BinSpec equal_width(std::size_t count);
  // Sorted, strictly increasing cut points in (0, 1).
  static BinSpec thresholds(std::vector<double> cuts);

  std::size_t size() const { return edges_.size() - 1; }
  double lo(std::size_t bin) const { return edges_[bin]; }
  double hi(std::size_t bin) const { return edges_[bin + 1]; }
  std::size_t bin_of(double p) const;

 private:
  explicit BinSpec(std::vector<double> edges) : edges_(std::move(edges)) {}
  std::vector<double> edges_;
};

struct ReliabilityBin {
  double lo = 0.0;
  double hi = 0.0;
  double midpoint = 0.0;
  std::size_t n = 0;
  std::size_t correct = 0;
  std::optional<double> empirical_accuracy;  // absent for empty bins
  std::optional<double> distance;
};

struct ReliabilityReport {
  std::vector<ReliabilityBin> bins;
  double ece = 0.0;
  double mce = 0.0;
  double anll = 0.0;
  std::size_t total_n = 0;
};

// Labels are 1 for correct, 0 for incorrect. Empty bins are excluded from
// both ECE and MCE.
ReliabilityReport bin_reliability(std::span<const double> preds, std::span<const int> labels, const BinSpec& spec);

// Mean negative log-likelihood of the outcomes (natural log), with p clamped
// to [1e-12, 1 - 1e-12].
double anll(std::span<const double> preds, std::span<const int> labels);

// CSV with header bin_lo,bin_hi,midpoint,n,empirical_accuracy; one row per
// bin in ascending order, empty accuracy field for empty bins.
std::string export_reliability_csv(const ReliabilityReport& report);
Json reliability_to_json(const ReliabilityReport& report);

}  // namespace lincal
