#pragma once

// Cross-entropy, token-level unlikelihood and their weighted combination,
// with closed-form gradients with respect to the logits.
//
//   CE:  -log p_t                 dCE/dz_j = p_j - [j == t]
//   UL:  -log(1 - p_t)            dUL/dz_t = p_t
//                                 dUL/dz_j = -p_j * p_t / (1 - p_t),  j != t
//
// The odds ratio p_t / (1 - p_t) grows without bound as p_t -> 1, so p_t is
// clamped to at most 1 - kUlEpsilon in both the loss and the gradient.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace oxa {

inline constexpr double kUlEpsilon = 1e-12;
inline constexpr double kDefaultAlpha = 1e-4;

enum class StepMode { kPromote, kSuppress };

struct TokenStep {
  std::vector<double> logits;
  std::size_t target = 0;
  StepMode mode = StepMode::kPromote;
};

struct TokenBatch {
  std::vector<TokenStep> steps;
  // Start offsets of each sequence in `steps`; the first is 0. Empty means
  // the batch is one sequence.
  std::vector<std::size_t> boundaries;

  // Throws ValidationError on invalid logits, targets or boundaries.
  void validate() const;
  std::size_t count(StepMode mode) const;
};

// Counts p_t clamping events; a plain value owned by the caller.
struct ClampCounter {
  std::size_t events = 0;
};

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);
double log_sum_exp(std::span<const double> values);

// log(1 - p_t) as log-sum-exp over the non-target logits minus log-sum-exp
// over all logits, floored at log(kUlEpsilon).
double log_complement(std::span<const double> logits, std::size_t target,
                      ClampCounter* clamps = nullptr);

// Per-step losses.
double ce_step_loss(std::span<const double> logits, std::size_t target);
double ul_step_loss(std::span<const double> logits, std::size_t target,
                    ClampCounter* clamps = nullptr);

// Mean over the Promote (resp. Suppress) steps of the batch, normalized by
// the total number of such tokens. Throws DomainError if there are none.
double ce_loss(const TokenBatch& batch);
double ul_loss(const TokenBatch& batch, ClampCounter* clamps = nullptr);

// ce_loss + alpha * ul_loss; a mode with no steps contributes 0.
double combined_loss(const TokenBatch& batch, double alpha, ClampCounter* clamps = nullptr);

std::vector<double> ce_grad(std::span<const double> logits, std::size_t target);
std::vector<double> ul_grad(std::span<const double> logits, std::size_t target,
                            ClampCounter* clamps = nullptr);

// p_t / (1 - p_t) with the same clamp as ul_grad.
double odds_ratio(std::span<const double> logits, std::size_t target);

enum class LossKind { kCe, kUl };

struct GradCheckOptions {
  LossKind loss = LossKind::kCe;
  std::size_t trials = 1000;
  std::uint64_t seed = 0;
  double h = 1e-5;
  double tolerance = 1e-6;
  std::size_t min_vocab = 2;
  std::size_t max_vocab = 64;
  double logit_range = 10.0;
  // UL trials with p_t above this are redrawn; they sit in the clamped,
  // ill-conditioned regime the finite differences cannot resolve.
  double max_ul_target_prob = 0.999;
};

struct GradCheckReport {
  LossKind loss = LossKind::kCe;
  std::size_t trials = 0;
  std::size_t redrawn = 0;
  std::size_t clamped = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_trial = 0;
  std::size_t worst_component = 0;
  std::size_t worst_vocab = 0;
  std::size_t worst_target = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;

  std::string to_string() const;
};

// |a - n| / max(|a|, |n|, kGradCheckFloor)
inline constexpr double kGradCheckFloor = 1e-2;
double grad_rel_error(double analytic, double numeric);

// Compares closed-form gradients with central differences on random inputs.
GradCheckReport grad_check(const GradCheckOptions& options);

std::string to_string(LossKind kind);

}  // namespace oxa
