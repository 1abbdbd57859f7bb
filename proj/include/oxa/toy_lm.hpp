#pragma once

// Tabular autoregressive toy model: each context (the last n tokens, padded
// with a start symbol) owns a logit vector, and the next-token distribution
// is its softmax. Training applies the per-step logit gradients from
// objective.hpp directly to the table.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace oxa {

using Token = std::size_t;
using TokenSeq = std::vector<Token>;
using Context = std::vector<Token>;

class ToyModel {
 public:
  // vocab_size in [2, 64], context_order in [1, 3].
  ToyModel(std::size_t vocab_size, std::size_t context_order);

  std::size_t vocab_size() const noexcept { return vocab_size_; }
  std::size_t context_order() const noexcept { return context_order_; }
  Token start_token() const noexcept { return vocab_size_; }

  // Context for predicting sequence[t] after `prompt`.
  Context context_at(std::span<const Token> prompt, std::span<const Token> sequence,
                     std::size_t t) const;

  // Unseen contexts have all-zero logits.
  const std::vector<double>& logits(const Context& context) const;
  std::vector<double>& mutable_logits(const Context& context);
  std::vector<double> next_token_probs(const Context& context) const;

  // Adds `amount` to the logit of every token of `sequence` in its context.
  void boost(std::span<const Token> prompt, std::span<const Token> sequence, double amount);

  const std::map<Context, std::vector<double>>& table() const noexcept { return table_; }

  bool operator==(const ToyModel&) const = default;

 private:
  std::size_t vocab_size_;
  std::size_t context_order_;
  std::vector<double> zeros_;
  std::map<Context, std::vector<double>> table_;
};

struct ToyPrompt {
  TokenSeq prompt;
  std::vector<TokenSeq> correct;
  std::vector<TokenSeq> incorrect;

  bool operator==(const ToyPrompt&) const = default;
};

struct InitBoost {
  std::size_t prompt_index = 0;
  TokenSeq sequence;
  double amount = 0.0;

  bool operator==(const InitBoost&) const = default;
};

struct ToyTask {
  std::size_t vocab_size = 8;
  std::size_t context_order = 2;
  std::size_t generation_length = 3;
  std::vector<ToyPrompt> prompts;
  std::vector<InitBoost> init_boosts;

  // Throws ValidationError: tokens out of range, overlapping correct and
  // incorrect sets, bad boost references.
  void validate() const;

  bool operator==(const ToyTask&) const = default;
};

ToyTask task_from_json(const nlohmann::json& j);
nlohmann::ordered_json task_to_json(const ToyTask& task);
ToyTask load_task(const std::filesystem::path& path);

// Fresh model for the task with its init boosts applied.
ToyModel make_model(const ToyTask& task);

// Sum of log p(s_t | context_t). Throws DomainError for tokens outside [0, V).
double sequence_logprob(const ToyModel& model, std::span<const Token> prompt,
                        std::span<const Token> sequence);

// Per-token log-probabilities, for perplexity scoring.
std::vector<double> token_logprobs(const ToyModel& model, std::span<const Token> prompt,
                                   std::span<const Token> sequence);

// Greedy decode (argmax, ties to the lowest token) and the next-token
// distribution seen at every step.
struct GreedyRollout {
  TokenSeq tokens;
  std::vector<std::vector<double>> step_probs;
};
GreedyRollout greedy_rollout(const ToyModel& model, std::span<const Token> prompt,
                             std::size_t length);

// Mean entropy over every step of the greedy rollouts from all prompts.
double greedy_mean_entropy(const ToyModel& model, const ToyTask& task);

enum class ToyObjective { kCeOnly, kOxaFull };

struct TrainConfig {
  ToyObjective objective = ToyObjective::kCeOnly;
  double alpha = 1e-4;
  std::size_t steps = 500;
  double step_size = 0.02;
  std::uint64_t seed = 0;
};

struct TraceRow {
  std::size_t step = 0;
  double loss_ce = 0.0;
  double loss_ul = 0.0;
  double loss_combined = 0.0;
  double mean_entropy = 0.0;

  bool operator==(const TraceRow&) const = default;
};

struct TrainResult {
  ToyModel model;
  // Row k describes the model after k updates; row 0 is the initial model.
  std::vector<TraceRow> trace;
  std::size_t clamp_events = 0;
};

// Full-batch gradient descent on the logit table: CE on every correct
// sequence and, for kOxaFull, alpha-weighted UL on every incorrect one.
// Throws InvariantError if a loss becomes non-finite.
TrainResult train(ToyModel model, const ToyTask& task, const TrainConfig& config);

// Trace CSV: step,loss_ce,loss_ul,loss_combined,mean_entropy
std::string trace_csv(std::span<const TraceRow> trace);

// Ancestral sampling from softmax(logits / temperature).
std::vector<TokenSeq> rollout(const ToyModel& model, std::span<const Token> prompt,
                              std::size_t samples, double temperature, std::uint64_t seed,
                              std::size_t length);

// Seed for prompt `index` derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

// Unbiased pass@k: 1 - C(n-c, k) / C(n, k).
double pass_at_k(std::size_t n, std::size_t c, std::size_t k);

struct PassAtKSummary {
  std::size_t samples = 0;
  std::size_t k = 0;
  double pass_at_1 = 0.0;
  double pass_at_k = 0.0;
};

// Samples `samples` rollouts per prompt that has correct sequences; a rollout
// is correct when it starts with one of them.
PassAtKSummary evaluate_pass_at_k(const ToyModel& model, const ToyTask& task, std::size_t samples,
                                  std::size_t k, double temperature, std::uint64_t seed);

// Splits correct sequences by perplexity under `model`: `high` keeps those with
// ppl >= threshold plus all incorrect sequences, `low` keeps the rest and no
// incorrect sequences. Both keep every prompt.
struct ConfidenceSplit {
  ToyTask high;
  ToyTask low;
};
ConfidenceSplit split_by_perplexity(const ToyModel& model, const ToyTask& task, double threshold);

// Constructed entropy-dynamics task: "hard" prompts where the model starts
// confidently wrong (incorrect continuation ~0.9, correct one below a
// flattened tail), "easy" prompts where it starts confidently right.
ToyTask entropy_dynamics_task();

// Constants paired with entropy_dynamics_task(). The UL weight is a toy-scale
// stand-in for the LLM default of 1e-4, which has no visible effect on an
// 8-token table within 500 steps. The step size keeps the 500-step budget in
// the early phase, before the correct continuation saturates.
inline constexpr double kToyAlpha = 0.1;
inline constexpr double kToyStepSize = 0.02;
inline constexpr std::size_t kToySteps = 500;
inline constexpr double kToySplitPerplexity = 2.0;

std::string to_string(ToyObjective objective);

}  // namespace oxa
