#include <bit>
#include <cmath>
#include <cstdint>
#include <random>

#include "lincal/pipeline.hpp"

namespace lincal {
namespace {

void check_pairs(std::size_t na, std::size_t nb) {
  if (na != nb) throw DataError("paired permutation test: vectors differ in length");
  if (na == 0) throw DataError("paired permutation test: need at least one pair");
}

// Counts sign assignments whose statistic is at least as extreme as the
// observed one. `flip(i)` toggles discordant pair i and `extreme()` tests the
// current assignment. Exhaustive enumeration walks a Gray code so each step
// flips one pair.
template <typename Flip, typename Extreme>
double permutation_p(std::size_t discordant, const PermutationOptions& options, Flip flip, Extreme extreme) {
  if (discordant == 0) return 1.0;
  if (discordant <= options.max_exhaustive) {
    const std::uint64_t total = std::uint64_t{1} << discordant;
    std::uint64_t hits = extreme() ? 1 : 0;
    for (std::uint64_t k = 1; k < total; ++k) {
      flip(static_cast<std::size_t>(std::countr_zero(k)));
      if (extreme()) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
  }
  std::mt19937_64 rng(options.seed);
  std::vector<bool> state(discordant, false);
  std::uint64_t hits = 0;
  for (std::size_t d = 0; d < options.draws; ++d) {
    for (std::size_t i = 0; i < discordant; ++i) {
      const bool want = (rng() >> 63) != 0;
      if (want != state[i]) {
        flip(i);
        state[i] = want;
      }
    }
    if (extreme()) ++hits;
  }
  // observed assignment counted once
  return static_cast<double>(hits + 1) / static_cast<double>(options.draws + 1);
}

}  // namespace

double paired_permutation_test(std::span<const int> a, std::span<const int> b, const PermutationOptions& options) {
  check_pairs(a.size(), b.size());
  std::vector<int> diffs;
  long observed = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] != 0 && a[i] != 1) || (b[i] != 0 && b[i] != 1)) {
      throw DataError("paired permutation test expects binary vectors");
    }
    const int d = a[i] - b[i];
    if (d != 0) diffs.push_back(d);
    observed += d;
  }
  const long target = std::labs(observed);
  long current = observed;
  auto flip = [&](std::size_t i) {
    current -= 2 * diffs[i];
    diffs[i] = -diffs[i];
  };
  auto extreme = [&] { return std::labs(current) >= target; };
  return permutation_p(diffs.size(), options, flip, extreme);
}

double paired_permutation_test_hi(std::span<const HiOutcome> a, std::span<const HiOutcome> b,
                                  const PermutationOptions& options) {
  check_pairs(a.size(), b.size());
  // HI counts / HI-correct counts for each side
  long a_hi = 0, a_ok = 0, b_hi = 0, b_ok = 0;
  std::vector<std::pair<HiOutcome, HiOutcome>> discordant;
  for (std::size_t i = 0; i < a.size(); ++i) {
    a_hi += a[i].hi;
    a_ok += a[i].hi && a[i].correct;
    b_hi += b[i].hi;
    b_ok += b[i].hi && b[i].correct;
    const bool a_counts = a[i].hi, b_counts = b[i].hi;
    const bool a_good = a[i].hi && a[i].correct, b_good = b[i].hi && b[i].correct;
    if (a_counts != b_counts || a_good != b_good) discordant.emplace_back(a[i], b[i]);
  }
  auto stat = [&] {
    const double ra = a_hi ? static_cast<double>(a_ok) / static_cast<double>(a_hi) : 0.0;
    const double rb = b_hi ? static_cast<double>(b_ok) / static_cast<double>(b_hi) : 0.0;
    return ra - rb;
  };
  const double target = std::abs(stat()) - 1e-12;
  auto flip = [&](std::size_t i) {
    auto& [x, y] = discordant[i];
    const long dx_hi = static_cast<long>(y.hi) - static_cast<long>(x.hi);
    const long dx_ok = static_cast<long>(y.hi && y.correct) - static_cast<long>(x.hi && x.correct);
    a_hi += dx_hi;
    a_ok += dx_ok;
    b_hi -= dx_hi;
    b_ok -= dx_ok;
    std::swap(x, y);
  };
  auto extreme = [&] { return std::abs(stat()) >= target; };
  return permutation_p(discordant.size(), options, flip, extreme);
}

}  // namespace lincal
