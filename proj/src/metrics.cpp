#include "lincal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace lincal {

BinSpec BinSpec::equal_width(std::size_t count) {
  if (count == 0) throw DataError("bin count must be at least 1");
  std::vector<double> edges(count + 1);
  for (std::size_t i = 0; i <= count; ++i) edges[i] = static_cast<double>(i) / static_cast<double>(count);
  return BinSpec(std::move(edges));
}

BinSpec BinSpec::thresholds(std::vector<double> cuts) {
  std::vector<double> edges{0.0};
  for (double c : cuts) {
    if (!(c > 0.0 && c < 1.0)) throw DataError("bin thresholds must lie strictly inside (0, 1)");
    if (c <= edges.back()) throw DataError("bin thresholds must be strictly increasing");
    edges.push_back(c);
  }
  edges.push_back(1.0);
  return BinSpec(std::move(edges));
}

std::size_t BinSpec::bin_of(double p) const {
  // first interior edge strictly greater than p
  const auto it = std::upper_bound(edges_.begin() + 1, edges_.end() - 1, p);
  return static_cast<std::size_t>(it - (edges_.begin() + 1));
}

namespace {

void check_inputs(std::span<const double> preds, std::span<const int> labels) {
  if (preds.empty()) throw DataError("calibration metrics need at least one prediction");
  if (preds.size() != labels.size()) throw DataError("prediction and label counts differ");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!(preds[i] >= 0.0 && preds[i] <= 1.0)) {
      throw DataError("prediction " + std::to_string(i) + " outside [0, 1]");
    }
    if (labels[i] != 0 && labels[i] != 1) throw DataError("labels must be 0 or 1");
  }
}

}  // namespace

double anll(std::span<const double> preds, std::span<const int> labels) {
  check_inputs(preds, labels);
  constexpr double kEps = 1e-12;
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double p = std::clamp(preds[i], kEps, 1.0 - kEps);
    total += labels[i] ? -std::log(p) : -std::log1p(-p);
  }
  return total / static_cast<double>(preds.size());
}

ReliabilityReport bin_reliability(std::span<const double> preds, std::span<const int> labels, const BinSpec& spec) {
  check_inputs(preds, labels);
  ReliabilityReport report;
  report.total_n = preds.size();
  report.bins.resize(spec.size());
  for (std::size_t b = 0; b < spec.size(); ++b) {
    auto& bin = report.bins[b];
    bin.lo = spec.lo(b);
    bin.hi = spec.hi(b);
    bin.midpoint = (bin.lo + bin.hi) / 2.0;
  }
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto& bin = report.bins[spec.bin_of(preds[i])];
    ++bin.n;
    bin.correct += static_cast<std::size_t>(labels[i]);
  }
  double weighted = 0.0;
  for (auto& bin : report.bins) {
    if (bin.n == 0) continue;
    bin.empirical_accuracy = static_cast<double>(bin.correct) / static_cast<double>(bin.n);
    bin.distance = std::abs(bin.midpoint - *bin.empirical_accuracy);
    weighted += static_cast<double>(bin.n) / static_cast<double>(report.total_n) * *bin.distance;
    report.mce = std::max(report.mce, *bin.distance);
  }
  // a weighted mean cannot exceed the max; clamp away rounding residue
  report.ece = std::min(weighted, report.mce);
  report.anll = anll(preds, labels);
  return report;
}

std::string export_reliability_csv(const ReliabilityReport& report) {
  std::string out = "bin_lo,bin_hi,midpoint,n,empirical_accuracy\n";
  char buf[160];
  for (const auto& bin : report.bins) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%zu,", bin.lo, bin.hi, bin.midpoint, bin.n);
    out += buf;
    if (bin.empirical_accuracy) {
      std::snprintf(buf, sizeof(buf), "%.17g", *bin.empirical_accuracy);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

Json reliability_to_json(const ReliabilityReport& report) {
  Json j = Json::object();
  j["ece"] = report.ece;
  j["mce"] = report.mce;
  j["anll"] = report.anll;
  j["total_n"] = report.total_n;
  Json bins = Json::array();
  for (const auto& bin : report.bins) {
    Json b = Json::object();
    b["lo"] = bin.lo;
    b["hi"] = bin.hi;
    b["midpoint"] = bin.midpoint;
    b["n"] = bin.n;
    b["empirical_accuracy"] = bin.empirical_accuracy ? Json(*bin.empirical_accuracy) : Json(nullptr);
    b["distance"] = bin.distance ? Json(*bin.distance) : Json(nullptr);
    bins.push_back(std::move(b));
  }
  j["bins"] = std::move(bins);
  return j;
}

}  // namespace lincal
