#include "oxa/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "oxa/errors.hpp"

namespace oxa {
namespace {

const double kLogEpsilon = std::log(kUlEpsilon);

void check_step(std::span<const double> logits, std::size_t target) {
  if (logits.size() < 2) throw ValidationError("logit vector needs at least 2 entries");
  if (target >= logits.size()) {
    throw ValidationError(fmt::format("target {} out of range for V={}", target, logits.size()));
  }
  for (double z : logits) {
    if (!std::isfinite(z)) throw ValidationError("logits must be finite");
  }
}

double log_sum_exp_excluding(std::span<const double> values, std::size_t skip) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i != skip) m = std::max(m, values[i]);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i != skip) s += std::exp(values[i] - m);
  }
  return m + std::log(s);
}

// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename Mode>
double mean_step_loss(const TokenBatch& batch, StepMode mode, Mode&& step_loss) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : batch.steps) {
    if (s.mode != mode) continue;
    sum += step_loss(s);
    ++n;
  }
  if (n == 0) throw DomainError("loss over an empty batch");
  return sum / static_cast<double>(n);
}

}  // namespace

void TokenBatch::validate() const {
  for (const auto& s : steps) check_step(s.logits, s.target);
  if (boundaries.empty()) return;
  if (boundaries.front() != 0) throw ValidationError("first sequence boundary must be 0");
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (boundaries[i] <= boundaries[i - 1]) throw ValidationError("boundaries must increase");
  }
  if (boundaries.back() >= steps.size() && !steps.empty()) {
    throw ValidationError("boundary past the last step");
  }
}

std::size_t TokenBatch::count(StepMode mode) const {
  return static_cast<std::size_t>(
      std::count_if(steps.begin(), steps.end(), [mode](const TokenStep& s) { return s.mode == mode; }));
}

double log_sum_exp(std::span<const double> values) {
  return log_sum_exp_excluding(values, values.size());
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  for (double& p : out) p /= s;
  return out;
}

double log_complement(std::span<const double> logits, std::size_t target, ClampCounter* clamps) {
  check_step(logits, target);
  const double value = log_sum_exp_excluding(logits, target) - log_sum_exp(logits);
  if (value < kLogEpsilon) {
    if (clamps) ++clamps->events;
    return kLogEpsilon;
  }
  return value;
}

double ce_step_loss(std::span<const double> logits, std::size_t target) {
  check_step(logits, target);
  return log_sum_exp(logits) - logits[target];
}

double ul_step_loss(std::span<const double> logits, std::size_t target, ClampCounter* clamps) {
  return -log_complement(logits, target, clamps);
}

double ce_loss(const TokenBatch& batch) {
  return mean_step_loss(batch, StepMode::kPromote,
                        [](const TokenStep& s) { return ce_step_loss(s.logits, s.target); });
}

double ul_loss(const TokenBatch& batch, ClampCounter* clamps) {
  return mean_step_loss(batch, StepMode::kSuppress, [clamps](const TokenStep& s) {
    return ul_step_loss(s.logits, s.target, clamps);
  });
}

double combined_loss(const TokenBatch& batch, double alpha, ClampCounter* clamps) {
  if (batch.steps.empty()) throw DomainError("combined_loss over an empty batch");
  if (!(alpha >= 0.0)) throw DomainError("alpha must be >= 0");
  double total = 0.0;
  if (batch.count(StepMode::kPromote) > 0) total += ce_loss(batch);
  if (batch.count(StepMode::kSuppress) > 0) total += alpha * ul_loss(batch, clamps);
  return total;
}

std::vector<double> ce_grad(std::span<const double> logits, std::size_t target) {
  check_step(logits, target);
  std::vector<double> g = softmax(logits);
  g[target] -= 1.0;
  return g;
}

std::vector<double> ul_grad(std::span<const double> logits, std::size_t target,
                            ClampCounter* clamps) {
  check_step(logits, target);
  std::vector<double> p = softmax(logits);
  const double raw = log_sum_exp_excluding(logits, target) - log_sum_exp(logits);
  double p_target = p[target];
  double complement = std::exp(raw);
  if (raw < kLogEpsilon) {
    if (clamps) ++clamps->events;
    p_target = 1.0 - kUlEpsilon;
    complement = kUlEpsilon;
  }
  const double odds = p_target / complement;
  for (std::size_t j = 0; j < p.size(); ++j) {
    p[j] = j == target ? p_target : -p[j] * odds;
  }
  return p;
}

double odds_ratio(std::span<const double> logits, std::size_t target) {
  const double raw = log_complement(logits, target);
  if (raw <= kLogEpsilon) return (1.0 - kUlEpsilon) / kUlEpsilon;
  return std::exp(logits[target] - log_sum_exp_excluding(logits, target));
}

double grad_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

std::string to_string(LossKind kind) { return kind == LossKind::kCe ? "ce" : "ul"; }

std::string GradCheckReport::to_string() const {
  return fmt::format(
      "grad-check loss={} trials={} redrawn={} clamped={} max_rel_error={:.3e} "
      "max_abs_error={:.3e} worst(trial={} V={} target={} component={} analytic={:.12e} "
      "numeric={:.12e}) result={}",
      oxa::to_string(loss), trials, redrawn, clamped, max_rel_error, max_abs_error, worst_trial,
      worst_vocab, worst_target, worst_component, worst_analytic, worst_numeric,
      passed ? "PASS" : "FAIL");
}

GradCheckReport grad_check(const GradCheckOptions& opt) {
  if (opt.trials == 0) throw DomainError("grad_check needs at least one trial");
  if (!(opt.h > 0.0)) throw DomainError("grad_check step h must be positive");
  if (opt.min_vocab < 2 || opt.max_vocab < opt.min_vocab) {
    throw DomainError("grad_check vocabulary range must satisfy 2 <= min <= max");
  }
  std::mt19937_64 rng(opt.seed);
  GradCheckReport report;
  report.loss = opt.loss;

  auto loss_at = [&](std::span<const double> z, std::size_t t) {
    return opt.loss == LossKind::kCe ? ce_step_loss(z, t) : ul_step_loss(z, t);
  };

  const std::size_t vocab_span = opt.max_vocab - opt.min_vocab + 1;
  std::vector<double> z;
  for (std::size_t trial = 0; trial < opt.trials; ++trial) {
    std::size_t v = 0;
    std::size_t t = 0;
    while (true) {
      v = opt.min_vocab + static_cast<std::size_t>(rng() % vocab_span);
      z.resize(v);
      for (double& x : z) x = (2.0 * unit_uniform(rng) - 1.0) * opt.logit_range;
      t = static_cast<std::size_t>(rng() % v);
      if (opt.loss == LossKind::kUl && softmax(z)[t] > opt.max_ul_target_prob) {
        ++report.redrawn;
        continue;
      }
      break;
    }
    ClampCounter clamps;
    const auto analytic = opt.loss == LossKind::kCe ? ce_grad(z, t) : ul_grad(z, t, &clamps);
    if (clamps.events > 0) {
      ++report.clamped;
      continue;
    }
    for (std::size_t j = 0; j < v; ++j) {
      const double saved = z[j];
      z[j] = saved + opt.h;
      const double up = loss_at(z, t);
      z[j] = saved - opt.h;
      const double down = loss_at(z, t);
      z[j] = saved;
      const double numeric = (up - down) / (2.0 * opt.h);
      const double rel = grad_rel_error(analytic[j], numeric);
      report.max_abs_error = std::max(report.max_abs_error, std::abs(analytic[j] - numeric));
      if (rel > report.max_rel_error || (trial == 0 && j == 0)) {
        report.max_rel_error = rel;
        report.worst_trial = trial;
        report.worst_component = j;
        report.worst_vocab = v;
        report.worst_target = t;
        report.worst_analytic = analytic[j];
        report.worst_numeric = numeric;
      }
    }
    ++report.trials;
  }
  report.passed = report.max_rel_error < opt.tolerance;
  return report;
}

}  // namespace oxa
