#include "oxa/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>

#include "oxa/errors.hpp"

namespace oxa {
namespace {

// Fractional parts closer than this are treated as tied; exact ties arise for
// bins placed symmetrically around mu.
constexpr double kFractionQuantum = 1e-9;

std::size_t compute_bin_count(double span, double width) {
  const double q = span / width;
  const double r = std::nearbyint(q);
  if (r >= 1.0 && std::abs(q - r) <= 1e-9 * r) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::ceil(q));
}

// Largest-remainder apportionment of `amount` units over `weights`.
std::vector<std::size_t> apportion(std::size_t amount, const std::vector<double>& weights,
                                   bool distribute_remainder) {
  const std::size_t n = weights.size();
  std::vector<std::size_t> out(n, 0);
  if (n == 0 || amount == 0) return out;
  double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<double> w = weights;
  if (!(sum > 0.0)) {
    std::fill(w.begin(), w.end(), 1.0);
    sum = static_cast<double>(n);
  }
  std::vector<long long> frac_key(n, 0);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = static_cast<double>(amount) * (w[i] / sum);
    double whole = std::floor(exact);
    double frac = exact - whole;
    if (frac > 1.0 - kFractionQuantum) {
      whole += 1.0;
      frac = 0.0;
    }
    out[i] = static_cast<std::size_t>(whole);
    frac_key[i] = std::llround(frac / kFractionQuantum);
    assigned += out[i];
  }
  if (!distribute_remainder || assigned >= amount) return out;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac_key[a] > frac_key[b]; });
  std::size_t remainder = amount - assigned;
  for (std::size_t k = 0; remainder > 0; k = (k + 1) % n, --remainder) ++out[order[k]];
  return out;
}

class QueryCounter {
 public:
  explicit QueryCounter(std::size_t cap) : cap_(cap) {}
  bool admits(const std::string& query) const {
    auto it = counts_.find(query);
    return it == counts_.end() || it->second < cap_;
  }
  void add(const std::string& query) { ++counts_[query]; }

 private:
  std::size_t cap_;
  std::unordered_map<std::string, std::size_t> counts_;
};

Corpus gather(const Corpus& corpus, const std::vector<std::size_t>& indices) {
  std::vector<TrajectoryRecord> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(corpus[i]);
  return Corpus(std::move(out));
}

double require_ppl(const TrajectoryRecord& r, const char* stage) {
  if (!r.ppl) throw PreconditionError(fmt::format("{}: record '{}' has no ppl", stage, r.id));
  return *r.ppl;
}

std::size_t require_length(const TrajectoryRecord& r, const char* stage) {
  if (!r.length) throw PreconditionError(fmt::format("{}: record '{}' has no length", stage, r.id));
  return *r.length;
}

// Longest first, ties by corpus (= id) order.
void sort_by_length_desc(const Corpus& corpus, std::vector<std::size_t>& indices) {
  std::sort(indices.begin(), indices.end(), [&](std::size_t a, std::size_t b) {
    const std::size_t la = *corpus[a].length;
    const std::size_t lb = *corpus[b].length;
    return la != lb ? la > lb : a < b;
  });
}

}  // namespace

void GaussianTarget::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("sigma must be > 0");
  if (!std::isfinite(mu)) throw ValidationError("mu must be finite");
  if (!(p_min >= 1.0) || !(p_min < p_max) || !std::isfinite(p_max)) {
    throw ValidationError(fmt::format("PPL range must satisfy 1 <= p_min < p_max (got [{}, {}])",
                                      p_min, p_max));
  }
  if (!(bin_width > 0.0) || bin_width > (p_max - p_min) * (1.0 + 1e-12)) {
    throw ValidationError("bin width must lie in (0, p_max - p_min]");
  }
  if (total == 0) throw ValidationError("total must be positive");
  if (max_per_query == 0) throw ValidationError("max_per_query must be positive");
}

BinAllocation make_bins(const GaussianTarget& target) {
  target.validate();
  BinAllocation bins;
  const std::size_t m = compute_bin_count(target.p_max - target.p_min, target.bin_width);
  bins.bin_count = m;
  bins.edges.resize(m + 1);
  for (std::size_t i = 0; i < m; ++i) {
    bins.edges[i] = target.p_min + static_cast<double>(i) * target.bin_width;
  }
  bins.edges[m] = target.p_max;
  bins.centers.resize(m);
  for (std::size_t i = 0; i < m; ++i) bins.centers[i] = 0.5 * (bins.edges[i] + bins.edges[i + 1]);
  bins.densities.assign(m, 0.0);
  bins.targets.assign(m, 0);
  bins.selected_per_bin.assign(m, 0);
  return bins;
}

std::size_t bin_index(const BinAllocation& bins, double ppl) {
  const std::size_t m = bins.bin_count;
  if (m == 0 || !(ppl >= bins.edges.front()) || !(ppl <= bins.edges.back())) return m;
  const double width = bins.edges.size() > 2 ? bins.edges[1] - bins.edges[0]
                                             : bins.edges.back() - bins.edges.front();
  double guess = std::floor((ppl - bins.edges.front()) / width);
  std::size_t i = guess < 0.0 ? 0 : std::min(static_cast<std::size_t>(guess), m - 1);
  while (i > 0 && ppl < bins.edges[i]) --i;
  while (i + 1 < m && ppl >= bins.edges[i + 1]) ++i;
  return i;
}

BinnedRecords bin_records(const Corpus& corpus, const GaussianTarget& target) {
  BinnedRecords out;
  out.skeleton = make_bins(target);
  out.members.resize(out.skeleton.bin_count);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const double ppl = require_ppl(corpus[i], "bin_records");
    require_length(corpus[i], "bin_records");
    const std::size_t b = bin_index(out.skeleton, ppl);
    if (b == out.skeleton.bin_count) {
      ++out.discarded;
    } else {
      out.members[b].push_back(i);
    }
  }
  return out;
}

BinAllocation allocate_targets(BinAllocation alloc, const GaussianTarget& target,
                               bool remainder_topup) {
  target.validate();
  const double norm = 1.0 / (target.sigma * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t i = 0; i < alloc.bin_count; ++i) {
    const double z = (alloc.centers[i] - target.mu) / target.sigma;
    alloc.densities[i] = norm * std::exp(-0.5 * z * z);
  }
  alloc.targets = apportion(target.total, alloc.densities, remainder_topup);
  alloc.selected_per_bin.assign(alloc.bin_count, 0);
  return alloc;
}

PromotionResult select_promotion(const Corpus& corpus, const GaussianTarget& target,
                                 const PromotionOptions& options) {
  BinnedRecords binned = bin_records(corpus, target);
  BinAllocation alloc = allocate_targets(std::move(binned.skeleton), target, options.remainder_topup);
  auto& members = binned.members;
  const std::size_t m = alloc.bin_count;
  for (auto& bin : members) sort_by_length_desc(corpus, bin);

  QueryCounter counter(target.max_per_query);
  std::vector<char> taken(corpus.size(), 0);
  std::vector<std::size_t> selected;

  auto fill_bin = [&](std::size_t b) {
    for (std::size_t idx : members[b]) {
      if (alloc.selected_per_bin[b] >= alloc.targets[b]) break;
      if (taken[idx] || !counter.admits(corpus[idx].query)) continue;
      taken[idx] = 1;
      counter.add(corpus[idx].query);
      selected.push_back(idx);
      ++alloc.selected_per_bin[b];
    }
  };
  for (std::size_t b = 0; b < m; ++b) fill_bin(b);

  if (options.redistribute) {
    while (true) {
      std::size_t shortfall = 0;
      std::vector<std::size_t> eligible;
      for (std::size_t b = 0; b < m; ++b) {
        if (alloc.selected_per_bin[b] < alloc.targets[b]) {
          shortfall += alloc.targets[b] - alloc.selected_per_bin[b];
          alloc.targets[b] = alloc.selected_per_bin[b];
          continue;
        }
        const bool has_supply = std::any_of(members[b].begin(), members[b].end(), [&](std::size_t idx) {
          return !taken[idx] && counter.admits(corpus[idx].query);
        });
        if (has_supply) eligible.push_back(b);
      }
      if (shortfall == 0 || eligible.empty()) break;
      std::vector<double> weights;
      weights.reserve(eligible.size());
      for (std::size_t b : eligible) weights.push_back(alloc.densities[b]);
      const auto shares = apportion(shortfall, weights, true);
      for (std::size_t k = 0; k < eligible.size(); ++k) alloc.targets[eligible[k]] += shares[k];
      const std::size_t before = selected.size();
      for (std::size_t b : eligible) fill_bin(b);
      if (selected.size() == before) break;
    }
  }

  std::sort(selected.begin(), selected.end());
  PromotionResult result;
  result.selected = gather(corpus, selected);
  result.allocation = std::move(alloc);
  result.discarded = binned.discarded;
  return result;
}

Corpus select_extreme(const Corpus& corpus, std::size_t count, ExtremeDirection direction,
                      std::size_t max_per_query) {
  if (count == 0) throw DomainError("select_extreme: count must be positive");
  if (max_per_query == 0) throw DomainError("select_extreme: max_per_query must be positive");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> ppl(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) ppl[i] = require_ppl(corpus[i], "select_extreme");
  const bool ascending = direction == ExtremeDirection::kLowestPpl;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (ppl[a] != ppl[b]) return ascending ? ppl[a] < ppl[b] : ppl[a] > ppl[b];
    return a < b;
  });
  QueryCounter counter(max_per_query);
  std::vector<std::size_t> selected;
  for (std::size_t idx : order) {
    if (selected.size() == count) break;
    if (!counter.admits(corpus[idx].query)) continue;
    counter.add(corpus[idx].query);
    selected.push_back(idx);
  }
  std::sort(selected.begin(), selected.end());
  return gather(corpus, selected);
}

Corpus select_interval(const Corpus& corpus, double low, double high, std::size_t total,
                       std::size_t max_per_query) {
  if (max_per_query == 0) throw DomainError("select_interval: max_per_query must be positive");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const double ppl = require_ppl(corpus[i], "select_interval");
    require_length(corpus[i], "select_interval");
    if (ppl >= low && ppl < high) candidates.push_back(i);
  }
  sort_by_length_desc(corpus, candidates);
  QueryCounter counter(max_per_query);
  std::vector<std::size_t> selected;
  for (std::size_t idx : candidates) {
    if (selected.size() == total) break;
    if (!counter.admits(corpus[idx].query)) continue;
    counter.add(corpus[idx].query);
    selected.push_back(idx);
  }
  std::sort(selected.begin(), selected.end());
  return gather(corpus, selected);
}

std::string allocation_report_csv(const BinAllocation& a) {
  std::string out = "bin_center,density,target,selected\n";
  for (std::size_t i = 0; i < a.bin_count; ++i) {
    out += fmt::format("{:.6f},{:.12e},{},{}\n", a.centers[i], a.densities[i], a.targets[i],
                       a.selected_per_bin[i]);
  }
  return out;
}

}  // namespace oxa
