#pragma once

// Gaussian-guided perplexity sampling.
//
// Candidates are bucketed into M = ceil((p_max - p_min) / w) PPL bins, each bin
// receives a quota proportional to a normal density evaluated at its center,
// and quotas are filled with the longest responses first while no query
// contributes more than `max_per_query` responses overall.

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "oxa/record.hpp"

namespace oxa {

inline constexpr std::size_t kUnlimited = std::numeric_limits<std::size_t>::max();

struct GaussianTarget {
  double mu = 2.5;
  double sigma = 0.25;
  double p_min = 1.0;
  double p_max = 5.0;
  double bin_width = 0.05;
  std::size_t total = 50000;
  std::size_t max_per_query = 1;

  // Throws ValidationError if the fields are inconsistent.
  void validate() const;
};

struct BinAllocation {
  std::size_t bin_count = 0;
  std::vector<double> edges;    // bin_count + 1 entries, edges.back() == p_max
  std::vector<double> centers;  // midpoint of each bin
  std::vector<double> densities;
  std::vector<std::size_t> targets;
  std::vector<std::size_t> selected_per_bin;
};

// Allocation with edges and centers filled in; densities and counts zeroed.
BinAllocation make_bins(const GaussianTarget& target);

// Bin i covers [edges[i], edges[i+1]); the last bin also contains p_max.
// Returns bin_count for a value outside [p_min, p_max].
std::size_t bin_index(const BinAllocation& bins, double ppl);

struct BinnedRecords {
  BinAllocation skeleton;
  std::vector<std::vector<std::size_t>> members;  // corpus indices per bin
  std::size_t discarded = 0;                      // outside [p_min, p_max]
};

// Throws PreconditionError naming the record when ppl or length is absent.
BinnedRecords bin_records(const Corpus& corpus, const GaussianTarget& target);

// Densities and floor quotas. With remainder_topup the leftover
// N - sum(floor) goes one unit at a time to the largest fractional parts
// (ties to the lower bin index), so the targets sum to N exactly.
BinAllocation allocate_targets(BinAllocation skeleton, const GaussianTarget& target,
                               bool remainder_topup = true);

struct PromotionOptions {
  bool remainder_topup = true;
  // Move quota left unused by exhausted bins to bins that still have
  // admissible candidates, using the same largest-remainder rule.
  bool redistribute = false;
};

struct PromotionResult {
  Corpus selected;
  BinAllocation allocation;
  std::size_t discarded = 0;
};

PromotionResult select_promotion(const Corpus& corpus, const GaussianTarget& target,
                                 const PromotionOptions& options = {});

enum class ExtremeDirection { kLowestPpl, kHighestPpl };

// Greedy sort-and-take by ppl (ties by id) under the per-query cap.
// Throws DomainError when count == 0.
Corpus select_extreme(const Corpus& corpus, std::size_t count, ExtremeDirection direction,
                      std::size_t max_per_query);

// Up to `total` records with low <= ppl < high, longest first, query-capped.
Corpus select_interval(const Corpus& corpus, double low, double high, std::size_t total,
                       std::size_t max_per_query);

// CSV with header bin_center,density,target,selected.
std::string allocation_report_csv(const BinAllocation& allocation);

}  // namespace oxa
