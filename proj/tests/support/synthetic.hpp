#pragma once

// Synthetic corpora for tests. Deterministic for a given seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "oxa/record.hpp"

namespace oxa::testing {

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline TrajectoryRecord make_record(std::string id, std::string query, double ppl,
                                    std::size_t length, bool verified) {
  TrajectoryRecord r;
  r.id = std::move(id);
  r.query = std::move(query);
  r.response = fmt::format("reasoning for {} \\boxed{{{}}}", r.id, verified ? 1 : 2);
  r.gold_answer = "1";
  r.ppl = ppl;
  r.length = length;
  r.verified = verified;
  return r;
}

// `per_bin` distinct-query candidates spread uniformly inside every bin of
// [p_min, p_max) with width w. Every record has its own query.
inline std::vector<TrajectoryRecord> uniform_bin_corpus(double p_min, double w, std::size_t bins,
                                                        std::size_t per_bin, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrajectoryRecord> out;
  out.reserve(bins * per_bin);
  for (std::size_t b = 0; b < bins; ++b) {
    for (std::size_t k = 0; k < per_bin; ++k) {
      // Keep clear of the edges so floating-point edge placement cannot move a record.
      const double u = 0.02 + 0.96 * (static_cast<double>(k) + uniform01(rng)) / static_cast<double>(per_bin);
      const double ppl = p_min + (static_cast<double>(b) + u) * w;
      const std::size_t length = 100 + static_cast<std::size_t>(rng() % 5000);
      out.push_back(make_record(fmt::format("r{:03}-{:05}", b, k), fmt::format("q{:03}-{:05}", b, k),
                                ppl, length, true));
    }
  }
  return out;
}

// Random small corpus with shared queries, used by the property suites.
struct CorpusShape {
  std::size_t records = 60;
  std::size_t queries = 15;
  double ppl_lo = 1.0;
  double ppl_hi = 5.4;
  std::size_t max_length = 40;  // small range forces length ties
  double incorrect_fraction = 0.4;
};

inline std::vector<TrajectoryRecord> random_corpus(const CorpusShape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrajectoryRecord> out;
  for (std::size_t i = 0; i < shape.records; ++i) {
    double ppl = shape.ppl_lo + (shape.ppl_hi - shape.ppl_lo) * uniform01(rng);
    // Some values snap to a quarter grid: duplicate ppls and exact bin edges.
    if (rng() % 10 == 0) ppl = std::max(1.0, std::round(ppl * 4.0) / 4.0);
    const std::size_t length = 1 + static_cast<std::size_t>(rng() % shape.max_length);
    const bool verified = uniform01(rng) >= shape.incorrect_fraction;
    out.push_back(make_record(fmt::format("id{:04}", (rng() % 100000)) + fmt::format("-{}", i),
                              fmt::format("query-{}", rng() % shape.queries), ppl, length, verified));
  }
  return out;
}

}  // namespace oxa::testing
