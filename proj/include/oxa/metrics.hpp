#pragma once

// Confidence metrics over log-probabilities and next-token distributions.
// Natural logarithm throughout.

#include <span>
#include <vector>

namespace oxa {

// Absolute tolerance on sum(p) == 1 accepted by entropy().
inline constexpr double kProbSumTolerance = 1e-9;

// exp(-mean(logprobs)). The mean is taken in log space before the single
// exponentiation, so very unconfident sequences stay finite.
// Throws DomainError on an empty list or a positive / non-finite entry.
double perplexity(std::span<const double> token_logprobs);

// Shannon entropy -sum p log p with 0 log 0 = 0. Throws DomainError when the
// vector has a negative or non-finite entry or does not sum to 1.
double entropy(std::span<const double> probs);

// Arithmetic mean of per-step entropies. Throws DomainError on empty input.
double mean_sequence_entropy(std::span<const std::vector<double>> per_step_probs);

}  // namespace oxa
