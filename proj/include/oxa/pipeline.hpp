#pragma once

// Offline curation pipeline:
//   verify -> ppl fill -> split by verification ->
//   Gaussian-guided promotion over correct records +
//   lowest-PPL suppression over incorrect records -> outputs + manifest.
// Every stage is deterministic and available on its own.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "oxa/objective.hpp"
#include "oxa/record.hpp"
#include "oxa/sampler.hpp"

namespace oxa {

struct VerifyCounts {
  std::size_t correct = 0;
  std::size_t incorrect = 0;
  std::size_t unparseable = 0;
};

// Sets `verified` on every record (Correct -> true, otherwise false).
Corpus verify_corpus(const Corpus& corpus, VerifyCounts* counts = nullptr);

// Fills ppl (and length when absent) from token_logprobs. Records that only
// carry ppl are kept; a record with neither is a PreconditionError.
Corpus fill_perplexity(const Corpus& corpus);

// Records whose verified flag equals `value`. PreconditionError if a record
// has not been verified.
Corpus filter_verified(const Corpus& corpus, bool value);

struct PipelineConfig {
  std::filesystem::path input;
  std::optional<std::filesystem::path> rollouts;  // separate suppression supply
  std::filesystem::path output_dir;
  GaussianTarget target;
  PromotionOptions promotion;
  std::size_t suppress_count = 50000;
  std::size_t suppress_max_per_query = 1;
  ExtremeDirection suppress_direction = ExtremeDirection::kLowestPpl;
  double alpha = kDefaultAlpha;
  std::uint64_t seed = 0;
  std::vector<std::pair<double, double>> intervals = {{2.0, 2.5}, {2.5, 3.0}, {2.5, 3.5}};

  // Throws ValidationError when the output would overwrite an input.
  void validate() const;
  nlohmann::ordered_json to_json() const;
};

// Overlays the keys present in `j` onto `config`. Keys: input, rollouts,
// out_dir, mu, sigma, ppl_min, ppl_max, bin_width, total, max_per_query,
// remainder_topup, redistribute, suppress_count, suppress_max_per_query,
// direction ("lowest"|"highest"), alpha, seed, intervals ([[lo, hi], ...]).
// max_per_query values may be the string "inf".
void apply_config_json(PipelineConfig& config, const nlohmann::json& j);
PipelineConfig load_config_file(const std::filesystem::path& path);

std::string to_string(ExtremeDirection direction);
ExtremeDirection parse_direction(const std::string& text);
std::string format_cap(std::size_t cap);
std::size_t parse_cap(const std::string& text);

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);

// Writes promote.jsonl, suppress.jsonl, report.csv and manifest.json into
// config.output_dir and returns the manifest. On failure nothing is left
// behind in the output directory by this run.
nlohmann::ordered_json run_pipeline(const PipelineConfig& config);

struct SweepRow {
  double low = 0.0;
  double high = 0.0;
  std::size_t candidates = 0;
  std::size_t selected = 0;
  double mean_ppl = 0.0;
  double mean_length = 0.0;
  std::string file;
};

// For each [low, high) interval, selects up to target.total verified-correct
// records (longest first, query-capped) and writes one JSONL per interval plus
// sweep_summary.csv into config.output_dir.
std::vector<SweepRow> sweep_ppl_intervals(const PipelineConfig& config,
                                          const std::vector<std::pair<double, double>>& intervals);

std::string sweep_summary_csv(const std::vector<SweepRow>& rows);

}  // namespace oxa
