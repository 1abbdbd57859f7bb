// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "oxa/metrics.hpp"
#include "oxa/objective.hpp"
#include "oxa/pipeline.hpp"
#include "oxa/sampler.hpp"
#include "oxa/toy_lm.hpp"
#include "oxa/verifier.hpp"
#include "support/fs_util.hpp"
#include "support/oracles.hpp"
#include "support/properties.hpp"
#include "support/synthetic.hpp"
#include "support/verifier_table.hpp"

using namespace oxa;
using namespace oxa::testing;
namespace fs = std::filesystem;

namespace {

using Vec = std::vector<double>;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
  std::vector<std::string> problems;

  void require(bool ok, std::string what) {
    if (!ok) {
      pass = false;
      if (problems.size() < 5) problems.push_back(std::move(what));
    }
  }
};

struct Trial {
  Vec z;
  std::size_t target;
};

// 1000 draws: V uniform in [2, 64], logits uniform in [-10, 10]. For the UL
// set, draws with p_t > 0.999 are replaced.
std::vector<Trial> draw_trials(std::uint64_t seed, bool ul) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> vocab(2, 64);
  std::uniform_real_distribution<double> logit(-10.0, 10.0);
  std::vector<Trial> out;
  while (out.size() < 1000) {
    Trial t;
    t.z.resize(vocab(rng));
    for (auto& x : t.z) x = logit(rng);
    t.target = std::uniform_int_distribution<std::size_t>(0, t.z.size() - 1)(rng);
    if (ul && softmax(t.z)[t.target] > 0.999) continue;
    out.push_back(std::move(t));
  }
  return out;
}

// Closed forms in long double, written out directly.
std::vector<long double> probs_ld(const Vec& z) {
  const long double m = *std::max_element(z.begin(), z.end());
  std::vector<long double> p(z.size());
  long double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(static_cast<long double>(z[i]) - m);
  for (auto& x : p) x /= s;
  return p;
}

double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-2});
}

Outcome criterion_gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst_fd = 0.0, worst_closed = 0.0;
  for (bool ul : {false, true}) {
    for (const auto& tr : draw_trials(ul ? 2 : 1, ul)) {
      const auto g = ul ? ul_grad(tr.z, tr.target) : ce_grad(tr.z, tr.target);
      auto loss = [&](const Vec& x) { return ul ? ul_step_loss(x, tr.target) : ce_step_loss(x, tr.target); };
      const auto p = probs_ld(tr.z);
      const long double pt = p[tr.target];
      long double rest = 0;
      for (std::size_t j = 0; j < p.size(); ++j) rest += j == tr.target ? 0.0L : p[j];
      for (std::size_t j = 0; j < tr.z.size(); ++j) {
        const double fd = central_difference(loss, tr.z, j, 1e-5);
        worst_fd = std::max(worst_fd, rel_error(g[j], fd));
        long double closed;
        if (!ul) {
          closed = p[j] - (j == tr.target ? 1.0L : 0.0L);
        } else {
          closed = j == tr.target ? pt : -p[j] * pt / rest;
        }
        worst_closed = std::max(worst_closed, static_cast<double>(std::abs(g[j] - closed)));
      }
    }
  }
  const double secs = seconds_since(t0);
  o.require(worst_fd < 1e-6, fmt::format("finite-difference rel error {:.3g}", worst_fd));
  o.require(worst_closed < 1e-12, fmt::format("closed-form deviation {:.3g}", worst_closed));
  o.require(secs < 5.0, fmt::format("runtime {:.2f}s", secs));
  o.detail = fmt::format("2x1000 trials, max FD rel err {:.2e}, max closed-form dev {:.2e}, {:.2f}s",
                         worst_fd, worst_closed, secs);
  return o;
}

Outcome criterion_odds() {
  Outcome o;
  double worst = 0.0;
  for (std::size_t v : {2u, 5u, 64u}) {
    Vec z(v, 0.0);
    z[0] = std::log(0.99 * static_cast<double>(v - 1) / 0.01);
    const auto p = softmax(z);
    o.require(std::abs(p[0] - 0.99) < 1e-12, fmt::format("V={} p_t={}", v, p[0]));
    worst = std::max(worst, std::abs(odds_ratio(z, 0) - 99.0));
    const auto g = ul_grad(z, 0);
    for (std::size_t j = 1; j < v; ++j) worst = std::max(worst, std::abs(-g[j] / p[j] - 99.0));
  }
  o.require(worst < 1e-9, fmt::format("deviation {:.3g}", worst));
  o.detail = fmt::format("amplification factor 99, max deviation {:.2e}", worst);
  return o;
}

Outcome criterion_zero_sum() {
  Outcome o;
  double worst_sum = 0.0, worst_ce = 0.0;
  for (bool ul : {false, true}) {
    for (const auto& tr : draw_trials(ul ? 2 : 1, ul)) {
      for (bool which_ul : {false, true}) {
        if (which_ul && !ul) continue;
        const auto g = which_ul ? ul_grad(tr.z, tr.target) : ce_grad(tr.z, tr.target);
        worst_sum = std::max(worst_sum, std::abs(std::accumulate(g.begin(), g.end(), 0.0)));
        if (!which_ul) {
          for (double x : g) worst_ce = std::max(worst_ce, std::abs(x));
        }
      }
    }
  }
  o.require(worst_sum <= 1e-12, fmt::format("gradient sum {:.3g}", worst_sum));
  o.require(worst_ce < 1.0, fmt::format("ce component {:.17g}", worst_ce));
  o.detail = fmt::format("max |sum| {:.2e}, max |ce component| {:.17g}", worst_sum, worst_ce);
  return o;
}

const std::vector<std::size_t> kFrozenTargets10k = [] {
  std::vector<std::size_t> t(80, 0);
  const std::size_t mid[] = {1,   2,   3,   7,   12,  21,  35,  57,  88,  131, 188, 259, 343,
                             436, 532, 624, 704, 763, 794, 794, 763, 704, 624, 532, 436, 343,
                             259, 188, 131, 88,  57,  35,  21,  12,  7,   3,   2,   1};
  std::copy(std::begin(mid), std::end(mid), t.begin() + 11);
  return t;
}();

Outcome criterion_sampler() {
  Outcome o;
  GaussianTarget target;
  target.total = 10000;
  target.max_per_query = kUnlimited;
  const Corpus corpus(uniform_bin_corpus(1.0, 0.05, 80, 1000, 2024));
  const auto t0 = Clock::now();
  const auto oracle = gaussian_targets_50("2.5", "0.25", "1", "5", "0.05", 10000);
  const PromotionResult res = select_promotion(corpus, target);
  std::vector<std::size_t> counted(80, 0);
  double sum = 0.0, sq = 0.0;
  for (const auto& r : res.selected) {
    const long b = exact_bin(*r.ppl, 1.0, 5.0, 0.05, 80);
    if (b >= 0) ++counted[static_cast<std::size_t>(b)];
    sum += *r.ppl;
  }
  const double n = static_cast<double>(res.selected.size());
  const double mean = sum / n;
  for (const auto& r : res.selected) sq += (*r.ppl - mean) * (*r.ppl - mean);
  const double sd = std::sqrt(sq / n);
  const double secs = seconds_since(t0);
  o.require(oracle == kFrozenTargets10k, "live oracle disagrees with the frozen vector");
  o.require(counted == oracle, "per-bin selected counts differ from the oracle");
  o.require(res.allocation.selected_per_bin == oracle, "reported per-bin counts differ from the oracle");
  o.require(std::abs(mean - 2.5) <= 0.05, fmt::format("mean {}", mean));
  o.require(std::abs(sd - 0.25) <= 0.10, fmt::format("sd {}", sd));
  o.require(secs < 10.0, fmt::format("runtime {:.2f}s", secs));
  o.detail = fmt::format("80 bins x 1000 candidates, {} selected, mean {:.4f}, sd {:.4f}, {:.2f}s",
                         res.selected.size(), mean, sd, secs);
  return o;
}

Outcome criterion_properties() {
  Outcome o;
  constexpr std::uint64_t kCorpora = 500;
  for (std::uint64_t seed = 10000; seed < 10000 + kCorpora; ++seed) {
    for (const auto& msg : check_selection_properties(seed)) o.require(false, msg);
  }
  o.detail = fmt::format("{} generated corpora: cap, range, length prefix, order independence, "
                         "suppression prefix", kCorpora);
  return o;
}

Outcome criterion_entropy() {
  Outcome o;
  const auto t0 = Clock::now();
  const ToyTask task = entropy_dynamics_task();
  const ToyModel init = make_model(task);
  for (std::size_t i : {0u, 1u}) {
    const auto& p = task.prompts[i];
    const double p_wrong = std::exp(sequence_logprob(init, p.prompt, p.incorrect[0]));
    const double p_right = std::exp(sequence_logprob(init, p.prompt, p.correct[0]));
    o.require(p_wrong >= 0.9, fmt::format("prompt {} incorrect init prob {}", i, p_wrong));
    o.require(p_right <= 0.05, fmt::format("prompt {} correct init prob {}", i, p_right));
  }
  TrainConfig ce;
  ce.objective = ToyObjective::kCeOnly;
  ce.steps = kToySteps;
  ce.step_size = kToyStepSize;
  TrainConfig oxa_cfg = ce;
  oxa_cfg.objective = ToyObjective::kOxaFull;
  oxa_cfg.alpha = kToyAlpha;
  // CE and OXA train on the high-PPL correct sequences (OXA adds the
  // incorrect ones); the low-PPL arm sees only already-likely correct ones.
  const auto split = split_by_perplexity(init, task, kToySplitPerplexity);

  const auto r_ce = train(init, split.high, ce);
  const auto r_oxa = train(init, split.high, oxa_cfg);
  const auto r_lp = train(init, split.low, ce);
  const auto r_oxa2 = train(init, split.high, oxa_cfg);
  const double h_ce = r_ce.trace.back().mean_entropy;
  const double h_oxa = r_oxa.trace.back().mean_entropy;
  const double h_lp = r_lp.trace.back().mean_entropy;
  const double secs = seconds_since(t0);
  o.require(h_oxa > h_ce, fmt::format("OXA {} <= CE {}", h_oxa, h_ce));
  o.require(h_lp < h_ce && h_lp < h_oxa, fmt::format("low-PPL arm {} not lowest", h_lp));
  o.require(trace_csv(r_oxa.trace) == trace_csv(r_oxa2.trace), "trace not deterministic");
  o.require(secs < 30.0, fmt::format("runtime {:.2f}s", secs));
  o.detail = fmt::format("after {} steps: OXA {:.6f} > CE {:.6f} > low-PPL {:.6f} (alpha {}, step {}), {:.2f}s",
                         kToySteps, h_oxa, h_ce, h_lp, kToyAlpha, kToyStepSize, secs);
  return o;
}

Outcome criterion_directions() {
  Outcome o;
  const ToyTask task = entropy_dynamics_task();
  const ToyModel m0 = make_model(task);
  TrainConfig cfg;
  cfg.objective = ToyObjective::kOxaFull;
  cfg.alpha = kToyAlpha;
  cfg.steps = 1;
  cfg.step_size = kToyStepSize;
  const ToyModel m1 = train(m0, task, cfg).model;
  double min_up = INFINITY, min_down = INFINITY;
  for (std::size_t i : {0u, 1u}) {
    const auto& p = task.prompts[i];
    const double up = sequence_logprob(m1, p.prompt, p.correct[0]) - sequence_logprob(m0, p.prompt, p.correct[0]);
    const double down =
        sequence_logprob(m0, p.prompt, p.incorrect[0]) - sequence_logprob(m1, p.prompt, p.incorrect[0]);
    o.require(up > 0.0, fmt::format("prompt {} correct logprob change {}", i, up));
    o.require(down > 0.0, fmt::format("prompt {} incorrect logprob change {}", i, -down));
    min_up = std::min(min_up, up);
    min_down = std::min(min_down, down);
  }

  // Suppression alone: every other token in each affected context gains mass.
  ToyTask sup = task;
  for (auto& p : sup.prompts) p.correct.clear();
  const ToyModel s1 = train(m0, sup, cfg).model;
  std::size_t contexts = 0;
  for (const auto& p : sup.prompts) {
    for (const auto& bad : p.incorrect) {
      for (std::size_t t = 0; t < bad.size(); ++t) {
        const Context ctx = m0.context_at(p.prompt, bad, t);
        const auto before = m0.next_token_probs(ctx);
        const auto after = s1.next_token_probs(ctx);
        o.require(after[bad[t]] < before[bad[t]], "suppressed token did not lose mass");
        for (std::size_t j = 0; j < before.size(); ++j) {
          if (j != bad[t]) o.require(after[j] > before[j], fmt::format("token {} did not gain mass", j));
        }
        ++contexts;
      }
    }
  }
  o.detail = fmt::format("min correct gain {:.3e}, min incorrect drop {:.3e}, {} suppressed contexts redistributed",
                         min_up, min_down, contexts);
  return o;
}

Outcome criterion_verifier() {
  Outcome o;
  std::size_t ok = 0;
  for (const auto& row : kGoldenTable) {
    TrajectoryRecord r;
    r.id = "g";
    r.query = "q";
    r.response = std::string(row.response);
    r.gold_answer = std::string(row.gold);
    const auto res = verify(r);
    const bool good = res.status == row.expected;
    o.require(good, fmt::format("'{}' vs '{}' gave {}", row.response, row.gold, to_string(res.status)));
    ok += good ? 1 : 0;
    const auto boxed = extract_boxed(row.response);
    if (!boxed) continue;
    const auto a = read_rational(normalize_answer(*boxed));
    const auto b = read_rational(row.gold);
    if (a && b) {
      o.require(same_rational(*a, *b) == (row.expected == VerificationStatus::kCorrect),
                fmt::format("rational reader disagrees on '{}'", row.response));
    }
  }
  o.require(answers_equivalent("\\frac{1}{2}", "0.5"), "\\frac{1}{2} != 0.5");
  o.require(!answers_equivalent("0.3333", "1/3"), "0.3333 == 1/3");
  o.detail = fmt::format("{}/{} golden cases", ok, kGoldenTable.size());
  return o;
}

Outcome criterion_metrics() {
  Outcome o;
  const double l2 = std::log(2.0);
  const double ppl = perplexity(Vec{-l2, -l2, -l2});
  const double h = entropy(Vec{0.25, 0.25, 0.25, 0.25});
  const double pk = pass_at_k(4, 1, 2);
  // Subsets of {0,1,2,3} of size 2; sample 0 is the correct one.
  std::size_t hit = 0, all = 0;
  for (unsigned a = 0; a < 4; ++a) {
    for (unsigned b = a + 1; b < 4; ++b) {
      ++all;
      hit += (a == 0 || b == 0) ? 1 : 0;
    }
  }
  const double brute = static_cast<double>(hit) / static_cast<double>(all);
  o.require(std::abs(ppl - 2.0) < 1e-12, fmt::format("perplexity {}", ppl));
  o.require(std::abs(h - std::log(4.0)) < 1e-12, fmt::format("entropy {}", h));
  o.require(std::abs(pk - brute) < 1e-12 && brute == 0.5, fmt::format("pass@k {} vs {}", pk, brute));
  o.detail = fmt::format("ppl {:.15f}, H {:.15f}, pass@2 {} (enumeration {})", ppl, h, pk, brute);
  return o;
}

// 200k records: correct PPLs concentrated near 2.5, incorrect ones spread
// over [1, 6], queries shared by a few responses.
std::vector<TrajectoryRecord> big_corpus() {
  std::mt19937_64 rng(200000);
  std::normal_distribution<double> centered(2.5, 0.5);
  std::vector<TrajectoryRecord> out;
  out.reserve(200000);
  for (std::size_t i = 0; i < 200000; ++i) {
    const bool correct = uniform01(rng) < 0.75;
    double ppl = correct ? centered(rng) : 1.0 + 5.0 * uniform01(rng);
    ppl = std::clamp(ppl, 1.0, 6.0);
    const std::size_t length = 50 + rng() % 4000;
    TrajectoryRecord r = make_record(fmt::format("rec-{:06}", i), fmt::format("q-{:06}", rng() % 180000),
                                     ppl, length, correct);
    r.verified.reset();
    if (i % 20 == 0) {
      const std::size_t k = 20 + rng() % 40;
      r.token_logprobs = Vec(k, -std::log(ppl));
      r.length = k;
      r.ppl.reset();
    }
    out.push_back(std::move(r));
  }
  return out;
}

Outcome criterion_pipeline() {
  Outcome o;
  const fs::path dir = fresh_dir("acceptance_pipeline");
  const Corpus input(big_corpus());
  save_corpus(input, dir / "corpus.jsonl");
  const char* files[] = {"promote.jsonl", "suppress.jsonl", "report.csv", "manifest.json"};

  PipelineConfig cfg;
  cfg.input = dir / "corpus.jsonl";
  std::vector<std::vector<std::string>> outputs;
  double worst = 0.0;
  cfg.output_dir = dir / "out";
  for (int run = 0; run < 2; ++run) {
    const auto t0 = Clock::now();
    run_pipeline(cfg);
    worst = std::max(worst, seconds_since(t0));
    std::vector<std::string> texts;
    for (const char* f : files) texts.push_back(slurp(cfg.output_dir / f));
    outputs.push_back(std::move(texts));
  }
  for (std::size_t k = 0; k < 4; ++k) o.require(outputs[0][k] == outputs[1][k], fmt::format("{} differs", files[k]));

  // Counts recomputed with the naive selection rules.
  const Corpus scored = fill_perplexity(verify_corpus(input));
  const auto targets = gaussian_targets_50("2.5", "0.25", "1", "5", "0.05", 50000);
  std::vector<std::vector<NaiveCandidate>> bins(80);
  std::size_t failed = 0;
  for (const auto& r : scored) {
    if (!*r.verified) {
      ++failed;
      continue;
    }
    const long b = exact_bin(*r.ppl, 1.0, 5.0, 0.05, 80);
    if (b >= 0) bins[static_cast<std::size_t>(b)].push_back({r.id, r.query, *r.length, *r.ppl});
  }
  const auto want_promote = naive_promotion(bins, targets, 1);
  const auto want_suppress = naive_suppression(scored.records(), 50000, 1);
  const Corpus promote = parse_corpus(outputs[0][0]);
  const Corpus suppress = parse_corpus(outputs[0][1]);
  o.require(ids_of(promote) == want_promote, "promotion differs from the naive recount");
  o.require(ids_of(suppress) == want_suppress, "suppression differs from the naive recount");
  o.require(promote.size() == 50000, fmt::format("|promote| = {}", promote.size()));
  std::map<std::string, int> failed_queries;
  for (const auto& r : scored) {
    if (!*r.verified) failed_queries[r.query] = 1;
  }
  const std::size_t supply = failed_queries.size();
  o.require(suppress.size() == std::min<std::size_t>(50000, supply),
            fmt::format("|suppress| = {}, capped supply {}", suppress.size(), supply));
  o.require(worst < 120.0, fmt::format("runtime {:.1f}s", worst));
  o.detail = fmt::format("200000 records ({} failed), |promote| {}, |suppress| {}, identical reruns, slowest run {:.2f}s",
                         failed, promote.size(), suppress.size(), worst);
  fs::remove_all(dir);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient closed forms", criterion_gradients},
      {"odds-ratio anchor", criterion_odds},
      {"zero-sum and boundedness", criterion_zero_sum},
      {"sampler exactness", criterion_sampler},
      {"selection properties", criterion_properties},
      {"entropy-dynamics ordering", criterion_entropy},
      {"promotion/suppression directions", criterion_directions},
      {"verifier vectors", criterion_verifier},
      {"metric anchors", criterion_metrics},
      {"pipeline determinism", criterion_pipeline},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.problems.push_back(fmt::format("exception: {}", e.what()));
    }
    fmt::print("{} {:>2} {}: {}\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail);
    for (const auto& p : o.problems) fmt::print("        {}\n", p);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
