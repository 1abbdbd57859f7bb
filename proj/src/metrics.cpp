#include "oxa/metrics.hpp"

#include <cmath>

#include <fmt/format.h>

#include "oxa/errors.hpp"

namespace oxa {

double perplexity(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) throw DomainError("perplexity of an empty sequence");
  double sum = 0.0;
  for (std::size_t i = 0; i < token_logprobs.size(); ++i) {
    const double v = token_logprobs[i];
    if (!std::isfinite(v) || v > 0.0) {
      throw DomainError(fmt::format("perplexity: logprob[{}] = {} is not finite and <= 0", i, v));
    }
    sum += v;
  }
  return std::exp(-sum / static_cast<double>(token_logprobs.size()));
}

double entropy(std::span<const double> probs) {
  if (probs.empty()) throw DomainError("entropy of an empty distribution");
  double total = 0.0;
  double h = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (!std::isfinite(p) || p < 0.0) {
      throw DomainError(fmt::format("entropy: probs[{}] = {} is not a probability", i, p));
    }
    total += p;
    if (p > 0.0) h -= p * std::log(p);
  }
  if (std::abs(total - 1.0) > kProbSumTolerance) {
    throw DomainError(fmt::format("entropy: probabilities sum to {}, not 1", total));
  }
  return h > 0.0 ? h : 0.0;
}

double mean_sequence_entropy(std::span<const std::vector<double>> per_step_probs) {
  if (per_step_probs.empty()) throw DomainError("mean_sequence_entropy of an empty sequence");
  double sum = 0.0;
  for (const auto& step : per_step_probs) sum += entropy(step);
  return sum / static_cast<double>(per_step_probs.size());
}

}  // namespace oxa
