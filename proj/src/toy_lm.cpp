#include "oxa/toy_lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <fmt/format.h>

#include "oxa/errors.hpp"
#include "oxa/metrics.hpp"
#include "oxa/objective.hpp"

namespace oxa {
namespace {

using nlohmann::json;

void check_tokens(std::span<const Token> tokens, std::size_t vocab, const char* what) {
  for (Token t : tokens) {
    if (t >= vocab) {
      throw DomainError(fmt::format("{}: token {} outside vocabulary of size {}", what, t, vocab));
    }
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

TokenSeq seq_from_json(const json& j, const char* what) {
  if (!j.is_array()) throw ValidationError(fmt::format("{} must be an array of tokens", what));
  TokenSeq out;
  for (const auto& t : j) {
    if (!t.is_number_unsigned()) {
      throw ValidationError(fmt::format("{} must contain nonnegative integers", what));
    }
    out.push_back(t.get<Token>());
  }
  return out;
}

std::vector<TokenSeq> seqs_from_json(const json& j, const char* key) {
  std::vector<TokenSeq> out;
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return out;
  if (!it->is_array()) throw ValidationError(fmt::format("'{}' must be an array", key));
  for (const auto& s : *it) out.push_back(seq_from_json(s, key));
  return out;
}

bool starts_with(std::span<const Token> seq, std::span<const Token> prefix) {
  return prefix.size() <= seq.size() && std::equal(prefix.begin(), prefix.end(), seq.begin());
}

// Per-context gradient sums for one full-batch step.
using GradTable = std::map<Context, std::vector<double>>;

void accumulate(GradTable& grads, const Context& ctx, std::span<const double> g, double scale) {
  auto [it, inserted] = grads.try_emplace(ctx, g.size(), 0.0);
  auto& acc = it->second;
  for (std::size_t j = 0; j < g.size(); ++j) acc[j] += scale * g[j];
}

struct LossValues {
  double ce = 0.0;
  double ul = 0.0;
};

LossValues evaluate_losses(const ToyModel& model, const ToyTask& task, ClampCounter* clamps) {
  double ce_sum = 0.0;
  double ul_sum = 0.0;
  std::size_t ce_n = 0;
  std::size_t ul_n = 0;
  for (const auto& p : task.prompts) {
    for (const auto& seq : p.correct) {
      for (std::size_t t = 0; t < seq.size(); ++t) {
        ce_sum += ce_step_loss(model.logits(model.context_at(p.prompt, seq, t)), seq[t]);
        ++ce_n;
      }
    }
    for (const auto& seq : p.incorrect) {
      for (std::size_t t = 0; t < seq.size(); ++t) {
        ul_sum += ul_step_loss(model.logits(model.context_at(p.prompt, seq, t)), seq[t], clamps);
        ++ul_n;
      }
    }
  }
  LossValues out;
  if (ce_n > 0) out.ce = ce_sum / static_cast<double>(ce_n);
  if (ul_n > 0) out.ul = ul_sum / static_cast<double>(ul_n);
  return out;
}

}  // namespace

ToyModel::ToyModel(std::size_t vocab_size, std::size_t context_order)
    : vocab_size_(vocab_size), context_order_(context_order), zeros_(vocab_size, 0.0) {
  if (vocab_size < 2 || vocab_size > 64) throw ValidationError("vocab_size must be in [2, 64]");
  if (context_order < 1 || context_order > 3) throw ValidationError("context_order must be in [1, 3]");
}

Context ToyModel::context_at(std::span<const Token> prompt, std::span<const Token> sequence,
                             std::size_t t) const {
  Context ctx(context_order_, start_token());
  // Fill from the right with the most recent tokens of prompt ++ sequence[:t].
  std::size_t filled = 0;
  for (std::size_t k = t; k > 0 && filled < context_order_; --k, ++filled) {
    ctx[context_order_ - 1 - filled] = sequence[k - 1];
  }
  for (std::size_t k = prompt.size(); k > 0 && filled < context_order_; --k, ++filled) {
    ctx[context_order_ - 1 - filled] = prompt[k - 1];
  }
  return ctx;
}

const std::vector<double>& ToyModel::logits(const Context& context) const {
  auto it = table_.find(context);
  return it == table_.end() ? zeros_ : it->second;
}

std::vector<double>& ToyModel::mutable_logits(const Context& context) {
  return table_.try_emplace(context, zeros_).first->second;
}

std::vector<double> ToyModel::next_token_probs(const Context& context) const {
  return softmax(logits(context));
}

void ToyModel::boost(std::span<const Token> prompt, std::span<const Token> sequence, double amount) {
  check_tokens(prompt, vocab_size_, "boost prompt");
  check_tokens(sequence, vocab_size_, "boost sequence");
  for (std::size_t t = 0; t < sequence.size(); ++t) {
    mutable_logits(context_at(prompt, sequence, t))[sequence[t]] += amount;
  }
}

void ToyTask::validate() const {
  ToyModel probe(vocab_size, context_order);  // range checks
  if (generation_length == 0) throw ValidationError("generation_length must be positive");
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto& p = prompts[i];
    check_tokens(p.prompt, vocab_size, "prompt");
    for (const auto& s : p.correct) check_tokens(s, vocab_size, "correct sequence");
    for (const auto& s : p.incorrect) check_tokens(s, vocab_size, "incorrect sequence");
    std::set<TokenSeq> correct(p.correct.begin(), p.correct.end());
    for (const auto& s : p.incorrect) {
      if (correct.count(s)) {
        throw ValidationError(fmt::format("prompt {}: a sequence is both correct and incorrect", i));
      }
    }
  }
  for (const auto& b : init_boosts) {
    if (b.prompt_index >= prompts.size()) throw ValidationError("init boost references a missing prompt");
    check_tokens(b.sequence, vocab_size, "init boost sequence");
    if (!std::isfinite(b.amount)) throw ValidationError("init boost amount must be finite");
  }
}

ToyTask task_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("task must be a JSON object");
  ToyTask task;
  try {
    task.vocab_size = j.at("vocab_size").get<std::size_t>();
    task.context_order = j.at("context_order").get<std::size_t>();
    task.generation_length = j.value("generation_length", std::size_t{3});
    for (const auto& p : j.at("prompts")) {
      ToyPrompt tp;
      tp.prompt = seq_from_json(p.at("prompt"), "prompt");
      tp.correct = seqs_from_json(p, "correct");
      tp.incorrect = seqs_from_json(p, "incorrect");
      task.prompts.push_back(std::move(tp));
    }
    if (auto it = j.find("init_boosts"); it != j.end()) {
      for (const auto& b : *it) {
        InitBoost boost;
        boost.prompt_index = b.at("prompt").get<std::size_t>();
        boost.sequence = seq_from_json(b.at("sequence"), "init boost sequence");
        boost.amount = b.at("amount").get<double>();
        task.init_boosts.push_back(std::move(boost));
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("invalid task file: {}", e.what()));
  }
  task.validate();
  return task;
}

nlohmann::ordered_json task_to_json(const ToyTask& task) {
  nlohmann::ordered_json j;
  j["vocab_size"] = task.vocab_size;
  j["context_order"] = task.context_order;
  j["generation_length"] = task.generation_length;
  j["prompts"] = nlohmann::ordered_json::array();
  for (const auto& p : task.prompts) {
    nlohmann::ordered_json jp;
    jp["prompt"] = p.prompt;
    jp["correct"] = p.correct;
    jp["incorrect"] = p.incorrect;
    j["prompts"].push_back(std::move(jp));
  }
  j["init_boosts"] = nlohmann::ordered_json::array();
  for (const auto& b : task.init_boosts) {
    nlohmann::ordered_json jb;
    jb["prompt"] = b.prompt_index;
    jb["sequence"] = b.sequence;
    jb["amount"] = b.amount;
    j["init_boosts"].push_back(std::move(jb));
  }
  return j;
}

ToyTask load_task(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open task file '{}'", path.string()));
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("{}: malformed JSON: {}", path.string(), e.what()));
  }
  return task_from_json(j);
}

ToyModel make_model(const ToyTask& task) {
  task.validate();
  ToyModel model(task.vocab_size, task.context_order);
  for (const auto& b : task.init_boosts) {
    model.boost(task.prompts[b.prompt_index].prompt, b.sequence, b.amount);
  }
  return model;
}

std::vector<double> token_logprobs(const ToyModel& model, std::span<const Token> prompt,
                                   std::span<const Token> sequence) {
  check_tokens(prompt, model.vocab_size(), "prompt");
  check_tokens(sequence, model.vocab_size(), "sequence");
  std::vector<double> out;
  out.reserve(sequence.size());
  for (std::size_t t = 0; t < sequence.size(); ++t) {
    const auto& z = model.logits(model.context_at(prompt, sequence, t));
    out.push_back(z[sequence[t]] - log_sum_exp(z));
  }
  return out;
}

double sequence_logprob(const ToyModel& model, std::span<const Token> prompt,
                        std::span<const Token> sequence) {
  double sum = 0.0;
  for (double lp : token_logprobs(model, prompt, sequence)) sum += lp;
  return sum;
}

GreedyRollout greedy_rollout(const ToyModel& model, std::span<const Token> prompt,
                             std::size_t length) {
  GreedyRollout out;
  for (std::size_t t = 0; t < length; ++t) {
    auto probs = model.next_token_probs(model.context_at(prompt, out.tokens, t));
    const auto best = std::max_element(probs.begin(), probs.end());
    out.tokens.push_back(static_cast<Token>(best - probs.begin()));
    out.step_probs.push_back(std::move(probs));
  }
  return out;
}

double greedy_mean_entropy(const ToyModel& model, const ToyTask& task) {
  std::vector<std::vector<double>> steps;
  for (const auto& p : task.prompts) {
    auto r = greedy_rollout(model, p.prompt, task.generation_length);
    for (auto& s : r.step_probs) steps.push_back(std::move(s));
  }
  return mean_sequence_entropy(steps);
}

TrainResult train(ToyModel model, const ToyTask& task, const TrainConfig& config) {
  task.validate();
  if (model.vocab_size() != task.vocab_size || model.context_order() != task.context_order) {
    throw ValidationError("model shape does not match the task");
  }
  if (config.steps == 0) throw DomainError("train: steps must be >= 1");
  if (!(config.alpha >= 0.0)) throw DomainError("train: alpha must be >= 0");
  if (!(config.step_size > 0.0)) throw DomainError("train: step size must be positive");
  if (task.prompts.empty()) throw DomainError("train: task has no prompts");

  std::size_t promote_tokens = 0;
  std::size_t suppress_tokens = 0;
  for (const auto& p : task.prompts) {
    for (const auto& s : p.correct) promote_tokens += s.size();
    for (const auto& s : p.incorrect) suppress_tokens += s.size();
  }
  const bool use_ul = config.objective == ToyObjective::kOxaFull && suppress_tokens > 0;
  if (promote_tokens == 0 && !use_ul) throw DomainError("train: task has no training tokens");

  TrainResult result{std::move(model), {}, 0};
  ToyModel& m = result.model;
  ClampCounter clamps;

  auto record = [&](std::size_t step) {
    const LossValues losses = evaluate_losses(m, task, nullptr);
    TraceRow row;
    row.step = step;
    row.loss_ce = losses.ce;
    row.loss_ul = losses.ul;
    row.loss_combined = losses.ce + (config.objective == ToyObjective::kOxaFull ? config.alpha * losses.ul : 0.0);
    row.mean_entropy = greedy_mean_entropy(m, task);
    if (!std::isfinite(row.loss_combined) || !std::isfinite(row.mean_entropy)) {
      throw InvariantError(fmt::format("train: non-finite loss or entropy at step {}", step));
    }
    result.trace.push_back(row);
  };

  record(0);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    GradTable grads;
    for (const auto& p : task.prompts) {
      for (const auto& seq : p.correct) {
        for (std::size_t t = 0; t < seq.size(); ++t) {
          const Context ctx = m.context_at(p.prompt, seq, t);
          accumulate(grads, ctx, ce_grad(m.logits(ctx), seq[t]),
                     1.0 / static_cast<double>(promote_tokens));
        }
      }
      if (!use_ul) continue;
      for (const auto& seq : p.incorrect) {
        for (std::size_t t = 0; t < seq.size(); ++t) {
          const Context ctx = m.context_at(p.prompt, seq, t);
          accumulate(grads, ctx, ul_grad(m.logits(ctx), seq[t], &clamps),
                     config.alpha / static_cast<double>(suppress_tokens));
        }
      }
    }
    for (const auto& [ctx, g] : grads) {
      auto& z = m.mutable_logits(ctx);
      for (std::size_t j = 0; j < z.size(); ++j) z[j] -= config.step_size * g[j];
    }
    record(step);
  }
  result.clamp_events = clamps.events;
  return result;
}

std::string trace_csv(std::span<const TraceRow> trace) {
  std::string out = "step,loss_ce,loss_ul,loss_combined,mean_entropy\n";
  for (const auto& r : trace) {
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.step, r.loss_ce, r.loss_ul,
                       r.loss_combined, r.mean_entropy);
  }
  return out;
}

std::vector<TokenSeq> rollout(const ToyModel& model, std::span<const Token> prompt,
                              std::size_t samples, double temperature, std::uint64_t seed,
                              std::size_t length) {
  if (samples == 0) throw DomainError("rollout: samples must be >= 1");
  if (!(temperature > 0.0)) throw DomainError("rollout: temperature must be > 0");
  check_tokens(prompt, model.vocab_size(), "rollout prompt");
  std::mt19937_64 rng(seed);
  std::vector<TokenSeq> out;
  out.reserve(samples);
  std::vector<double> scaled(model.vocab_size());
  for (std::size_t s = 0; s < samples; ++s) {
    TokenSeq seq;
    for (std::size_t t = 0; t < length; ++t) {
      const auto& z = model.logits(model.context_at(prompt, seq, t));
      for (std::size_t j = 0; j < z.size(); ++j) scaled[j] = z[j] / temperature;
      const auto probs = softmax(scaled);
      const double u = unit_uniform(rng);
      double cumulative = 0.0;
      Token pick = probs.size() - 1;
      for (std::size_t j = 0; j < probs.size(); ++j) {
        cumulative += probs[j];
        if (u < cumulative) {
          pick = j;
          break;
        }
      }
      seq.push_back(pick);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ (index + 1));
}

double pass_at_k(std::size_t n, std::size_t c, std::size_t k) {
  if (c > n) throw DomainError(fmt::format("pass_at_k: c={} exceeds n={}", c, n));
  if (k < 1 || k > n) throw DomainError(fmt::format("pass_at_k: k={} outside [1, n={}]", k, n));
  if (n - c < k) return 1.0;
  // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (1 - k / i)
  long double ratio = 1.0L;
  for (std::size_t i = n - c + 1; i <= n; ++i) {
    ratio *= 1.0L - static_cast<long double>(k) / static_cast<long double>(i);
  }
  return static_cast<double>(1.0L - ratio);
}

PassAtKSummary evaluate_pass_at_k(const ToyModel& model, const ToyTask& task, std::size_t samples,
                                  std::size_t k, double temperature, std::uint64_t seed) {
  PassAtKSummary summary{samples, k, 0.0, 0.0};
  std::size_t evaluated = 0;
  for (std::size_t i = 0; i < task.prompts.size(); ++i) {
    const auto& p = task.prompts[i];
    if (p.correct.empty()) continue;
    const auto draws =
        rollout(model, p.prompt, samples, temperature, derive_seed(seed, i), task.generation_length);
    std::size_t correct = 0;
    for (const auto& d : draws) {
      const bool ok = std::any_of(p.correct.begin(), p.correct.end(),
                                  [&](const TokenSeq& s) { return starts_with(d, s); });
      if (ok) ++correct;
    }
    summary.pass_at_1 += pass_at_k(samples, correct, 1);
    summary.pass_at_k += pass_at_k(samples, correct, k);
    ++evaluated;
  }
  if (evaluated > 0) {
    summary.pass_at_1 /= static_cast<double>(evaluated);
    summary.pass_at_k /= static_cast<double>(evaluated);
  }
  return summary;
}

ConfidenceSplit split_by_perplexity(const ToyModel& model, const ToyTask& task, double threshold) {
  ConfidenceSplit split{task, task};
  for (std::size_t i = 0; i < task.prompts.size(); ++i) {
    auto& high = split.high.prompts[i];
    auto& low = split.low.prompts[i];
    high.correct.clear();
    low.correct.clear();
    low.incorrect.clear();
    for (const auto& s : task.prompts[i].correct) {
      if (s.empty()) continue;
      const double ppl = perplexity(token_logprobs(model, task.prompts[i].prompt, s));
      (ppl >= threshold ? high : low).correct.push_back(s);
    }
  }
  return split;
}

ToyTask entropy_dynamics_task() {
  ToyTask task;
  task.vocab_size = 8;
  task.context_order = 2;
  task.generation_length = 3;
  // Hard prompts 0 and 1: confidently wrong. Easy prompts 2 and 3: confidently right.
  task.prompts = {
      {{0}, {{7, 6, 5}}, {{4, 5, 6}}},
      {{1}, {{6, 7, 4}}, {{5, 4, 7}}},
      {{2}, {{4, 6, 5}}, {}},
      {{3}, {{7, 5, 4}}, {}},
  };
  // Boost so that a boosted token has probability 0.97 against 7 zero logits.
  const double peak = std::log(0.97 * 7.0 / 0.03);
  const double trough = -1.0;
  task.init_boosts = {
      {0, {4, 5, 6}, peak}, {0, {7, 6, 5}, trough}, {1, {5, 4, 7}, peak},
      {1, {6, 7, 4}, trough}, {2, {4, 6, 5}, peak}, {3, {7, 5, 4}, peak},
  };
  return task;
}

std::string to_string(ToyObjective objective) {
  return objective == ToyObjective::kCeOnly ? "ce" : "oxa";
}

}  // namespace oxa
