#include "oxa/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "oxa/errors.hpp"
#include "oxa/metrics.hpp"
#include "oxa/verifier.hpp"

namespace oxa {
namespace fs = std::filesystem;

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw IoError(fmt::format("error writing '{}'", path.string()));
}

// Writes a set of files, removing every file of the set on failure.
void write_all(const std::vector<std::pair<fs::path, std::string>>& files) {
  std::vector<fs::path> written;
  try {
    for (const auto& [path, text] : files) {
      written.push_back(path);
      write_file(path, text);
    }
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written) fs::remove(p, ec);
    throw;
  }
}

fs::path normalized(const fs::path& p) {
  std::error_code ec;
  auto out = fs::weakly_canonical(p, ec);
  return ec ? p.lexically_normal() : out;
}

// Loads, verifies and scores a corpus, tagging errors with the stage name.
struct PreparedCorpus {
  Corpus corpus;
  VerifyCounts verify;
  std::string digest;
  std::size_t bytes = 0;
};

PreparedCorpus prepare(const fs::path& path) {
  PreparedCorpus out;
  const std::string text = read_file(path);
  out.digest = sha256_hex(text);
  out.bytes = text.size();
  Corpus raw;
  try {
    raw = parse_corpus(text, path.string());
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("stage load: {}", e.what()));
  }
  try {
    raw = verify_corpus(raw, &out.verify);
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("stage verify: {}", e.what()));
  }
  try {
    out.corpus = fill_perplexity(raw);
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("stage ppl: {}", e.what()));
  }
  return out;
}

ordered_json input_entry(const fs::path& path, const PreparedCorpus& c) {
  ordered_json j;
  j["path"] = path.string();
  j["sha256"] = c.digest;
  j["bytes"] = c.bytes;
  j["records"] = c.corpus.size();
  j["verified_correct"] = c.verify.correct;
  j["verified_incorrect"] = c.verify.incorrect;
  j["unparseable"] = c.verify.unparseable;
  return j;
}

std::size_t cap_from_json(const json& v) {
  if (v.is_string()) return parse_cap(v.get<std::string>());
  if (!v.is_number_unsigned() || v.get<std::size_t>() == 0) {
    throw ValidationError("per-query cap must be a positive integer or \"inf\"");
  }
  return v.get<std::size_t>();
}

}  // namespace

Corpus verify_corpus(const Corpus& corpus, VerifyCounts* counts) {
  std::vector<TrajectoryRecord> out(corpus.begin(), corpus.end());
  VerifyCounts local;
  for (auto& r : out) {
    const VerificationResult v = verify(r);
    r.verified = v.status == VerificationStatus::kCorrect;
    switch (v.status) {
      case VerificationStatus::kCorrect:
        ++local.correct;
        break;
      case VerificationStatus::kIncorrect:
        ++local.incorrect;
        break;
      case VerificationStatus::kUnparseable:
        ++local.unparseable;
        break;
    }
  }
  if (counts) *counts = local;
  return Corpus(std::move(out));
}

Corpus fill_perplexity(const Corpus& corpus) {
  std::vector<TrajectoryRecord> out(corpus.begin(), corpus.end());
  for (auto& r : out) {
    if (r.token_logprobs && !r.token_logprobs->empty()) {
      r.ppl = perplexity(*r.token_logprobs);
      if (!r.length) r.length = r.token_logprobs->size();
    } else if (!r.ppl) {
      throw PreconditionError(
          fmt::format("record '{}' has neither token_logprobs nor ppl", r.id));
    }
  }
  return Corpus(std::move(out));
}

Corpus filter_verified(const Corpus& corpus, bool value) {
  std::vector<TrajectoryRecord> out;
  for (const auto& r : corpus) {
    if (!r.verified) {
      throw PreconditionError(fmt::format("record '{}' has not been verified", r.id));
    }
    if (*r.verified == value) out.push_back(r);
  }
  return Corpus(std::move(out));
}

void PipelineConfig::validate() const {
  target.validate();
  if (suppress_count == 0) throw ValidationError("suppression count must be positive");
  if (suppress_max_per_query == 0) throw ValidationError("suppression per-query cap must be positive");
  if (!(alpha >= 0.0)) throw ValidationError("alpha must be >= 0");
  if (output_dir.empty()) throw ValidationError("output directory is required");
  const fs::path out = normalized(output_dir);
  std::vector<fs::path> inputs;
  if (!input.empty()) inputs.push_back(input);
  if (rollouts) inputs.push_back(*rollouts);
  for (const auto& in : inputs) {
    const fs::path n = normalized(in);
    if (n == out) {
      throw ValidationError(fmt::format("output directory '{}' coincides with input '{}'",
                                        output_dir.string(), in.string()));
    }
    for (const char* name : {"promote.jsonl", "suppress.jsonl", "report.csv", "manifest.json"}) {
      if (n == normalized(output_dir / name)) {
        throw ValidationError(fmt::format("output '{}' would overwrite input '{}'",
                                          (output_dir / name).string(), in.string()));
      }
    }
  }
}

ordered_json PipelineConfig::to_json() const {
  ordered_json j;
  j["input"] = input.string();
  j["rollouts"] = rollouts ? ordered_json(rollouts->string()) : ordered_json(nullptr);
  j["out_dir"] = output_dir.string();
  j["mu"] = target.mu;
  j["sigma"] = target.sigma;
  j["ppl_min"] = target.p_min;
  j["ppl_max"] = target.p_max;
  j["bin_width"] = target.bin_width;
  j["total"] = target.total;
  j["max_per_query"] = format_cap(target.max_per_query);
  j["remainder_topup"] = promotion.remainder_topup;
  j["redistribute"] = promotion.redistribute;
  j["suppress_count"] = suppress_count;
  j["suppress_max_per_query"] = format_cap(suppress_max_per_query);
  j["direction"] = to_string(suppress_direction);
  j["alpha"] = alpha;
  j["seed"] = seed;
  j["intervals"] = ordered_json::array();
  for (const auto& [lo, hi] : intervals) j["intervals"].push_back({lo, hi});
  return j;
}

void apply_config_json(PipelineConfig& c, const json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  static const std::set<std::string> kKeys = {
      "input", "rollouts", "out_dir", "mu", "sigma", "ppl_min", "ppl_max", "bin_width",
      "total", "max_per_query", "remainder_topup", "redistribute", "suppress_count",
      "suppress_max_per_query", "direction", "alpha", "seed", "intervals"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!kKeys.count(it.key())) throw ValidationError(fmt::format("unknown config key '{}'", it.key()));
  }
  try {
    if (j.contains("input")) c.input = j["input"].get<std::string>();
    if (j.contains("rollouts")) {
      if (j["rollouts"].is_null()) {
        c.rollouts.reset();
      } else {
        c.rollouts = fs::path(j["rollouts"].get<std::string>());
      }
    }
    if (j.contains("out_dir")) c.output_dir = j["out_dir"].get<std::string>();
    if (j.contains("mu")) c.target.mu = j["mu"].get<double>();
    if (j.contains("sigma")) c.target.sigma = j["sigma"].get<double>();
    if (j.contains("ppl_min")) c.target.p_min = j["ppl_min"].get<double>();
    if (j.contains("ppl_max")) c.target.p_max = j["ppl_max"].get<double>();
    if (j.contains("bin_width")) c.target.bin_width = j["bin_width"].get<double>();
    if (j.contains("total")) c.target.total = j["total"].get<std::size_t>();
    if (j.contains("max_per_query")) c.target.max_per_query = cap_from_json(j["max_per_query"]);
    if (j.contains("remainder_topup")) c.promotion.remainder_topup = j["remainder_topup"].get<bool>();
    if (j.contains("redistribute")) c.promotion.redistribute = j["redistribute"].get<bool>();
    if (j.contains("suppress_count")) c.suppress_count = j["suppress_count"].get<std::size_t>();
    if (j.contains("suppress_max_per_query")) {
      c.suppress_max_per_query = cap_from_json(j["suppress_max_per_query"]);
    }
    if (j.contains("direction")) c.suppress_direction = parse_direction(j["direction"].get<std::string>());
    if (j.contains("alpha")) c.alpha = j["alpha"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("intervals")) {
      c.intervals.clear();
      for (const auto& iv : j["intervals"]) {
        c.intervals.emplace_back(iv.at(0).get<double>(), iv.at(1).get<double>());
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("invalid config value: {}", e.what()));
  }
}

PipelineConfig load_config_file(const fs::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("{}: malformed JSON: {}", path.string(), e.what()));
  }
  PipelineConfig c;
  apply_config_json(c, j);
  return c;
}

std::string to_string(ExtremeDirection direction) {
  return direction == ExtremeDirection::kLowestPpl ? "lowest" : "highest";
}

ExtremeDirection parse_direction(const std::string& text) {
  if (text == "lowest" || text == "low") return ExtremeDirection::kLowestPpl;
  if (text == "highest" || text == "high") return ExtremeDirection::kHighestPpl;
  throw ValidationError(fmt::format("unknown direction '{}' (expected lowest|highest)", text));
}

std::string format_cap(std::size_t cap) {
  return cap == kUnlimited ? std::string("inf") : std::to_string(cap);
}

std::size_t parse_cap(const std::string& text) {
  if (text == "inf" || text == "unlimited") return kUnlimited;
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != text.size() || v == 0 || text.front() == '-') {
    throw ValidationError(fmt::format("invalid per-query cap '{}'", text));
  }
  return static_cast<std::size_t>(v);
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw InvariantError("SHA-256 computation failed");
  }
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string file_sha256(const fs::path& path) { return sha256_hex(read_file(path)); }

ordered_json run_pipeline(const PipelineConfig& config) {
  config.validate();
  const PreparedCorpus main = prepare(config.input);
  std::optional<PreparedCorpus> extra;
  if (config.rollouts) {
    extra = prepare(*config.rollouts);
    for (const auto& r : extra->corpus) {
      if (main.corpus.find(r.id)) {
        throw ValidationError(fmt::format(
            "stage split: record id '{}' appears in both the corpus and the rollouts", r.id));
      }
    }
  }

  Corpus correct;
  Corpus incorrect;
  try {
    correct = filter_verified(main.corpus, true);
    incorrect = filter_verified(extra ? extra->corpus : main.corpus, false);
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("stage split: {}", e.what()));
  }

  PromotionResult promoted;
  try {
    promoted = select_promotion(correct, config.target, config.promotion);
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("stage select-promote: {}", e.what()));
  }
  Corpus suppressed;
  if (!incorrect.empty()) {
    try {
      suppressed = select_extreme(incorrect, config.suppress_count, config.suppress_direction,
                                  config.suppress_max_per_query);
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("stage select-suppress: {}", e.what()));
    }
  }

  std::set<std::string> promote_queries;
  std::set<std::pair<std::string, std::string>> promote_pairs;
  for (const auto& r : promoted.selected) {
    promote_queries.insert(r.query);
    promote_pairs.emplace(r.query, r.response);
  }
  std::size_t query_overlap = 0;
  std::set<std::string> counted;
  for (const auto& r : suppressed) {
    if (promoted.selected.find(r.id) || promote_pairs.count({r.query, r.response})) {
      throw InvariantError(fmt::format(
          "promotion and suppression sets overlap on record '{}'", r.id));
    }
    if (promote_queries.count(r.query) && counted.insert(r.query).second) ++query_overlap;
  }

  const std::string promote_text = serialize_corpus(promoted.selected);
  const std::string suppress_text = serialize_corpus(suppressed);
  const std::string report_text = allocation_report_csv(promoted.allocation);

  std::size_t target_total = 0;
  std::size_t in_range = 0;
  for (std::size_t t : promoted.allocation.targets) target_total += t;
  in_range = correct.size() - promoted.discarded;

  ordered_json manifest;
  manifest["config"] = config.to_json();
  manifest["inputs"]["corpus"] = input_entry(config.input, main);
  manifest["inputs"]["rollouts"] =
      extra ? input_entry(*config.rollouts, *extra) : ordered_json(nullptr);
  ordered_json counts;
  counts["input_records"] = main.corpus.size() + (extra ? extra->corpus.size() : 0);
  counts["promotion_candidates"] = correct.size();
  counts["promotion_in_range"] = in_range;
  counts["promotion_out_of_range"] = promoted.discarded;
  counts["promotion_bins"] = promoted.allocation.bin_count;
  counts["promotion_target_total"] = target_total;
  counts["promoted"] = promoted.selected.size();
  counts["suppression_candidates"] = incorrect.size();
  counts["suppressed"] = suppressed.size();
  counts["query_overlap"] = query_overlap;
  manifest["counts"] = counts;
  ordered_json notes = ordered_json::array();
  if (incorrect.empty()) notes.push_back("zero suppression supply: no record failed verification");
  if (promoted.selected.size() < config.target.total) {
    notes.push_back(fmt::format("promotion under-filled: {} of {} selected",
                                promoted.selected.size(), config.target.total));
  }
  manifest["notes"] = notes;
  ordered_json outputs;
  outputs["promote.jsonl"] = sha256_hex(promote_text);
  outputs["suppress.jsonl"] = sha256_hex(suppress_text);
  outputs["report.csv"] = sha256_hex(report_text);
  manifest["outputs"] = outputs;

  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) {
    throw IoError(fmt::format("cannot create output directory '{}': {}",
                              config.output_dir.string(), ec.message()));
  }
  write_all({{config.output_dir / "promote.jsonl", promote_text},
             {config.output_dir / "suppress.jsonl", suppress_text},
             {config.output_dir / "report.csv", report_text},
             {config.output_dir / "manifest.json", manifest.dump(2) + "\n"}});
  return manifest;
}

std::vector<SweepRow> sweep_ppl_intervals(const PipelineConfig& config,
                                          const std::vector<std::pair<double, double>>& intervals) {
  config.validate();
  for (const auto& [lo, hi] : intervals) {
    if (!(lo >= 1.0) || !(hi >= lo)) {
      throw ValidationError(fmt::format("invalid PPL interval [{}, {})", lo, hi));
    }
  }
  const PreparedCorpus main = prepare(config.input);
  const Corpus correct = filter_verified(main.corpus, true);

  std::vector<SweepRow> rows;
  std::vector<std::pair<fs::path, std::string>> files;
  for (const auto& [lo, hi] : intervals) {
    SweepRow row;
    row.low = lo;
    row.high = hi;
    for (const auto& r : correct) {
      if (*r.ppl >= lo && *r.ppl < hi) ++row.candidates;
    }
    const Corpus picked =
        select_interval(correct, lo, hi, config.target.total, config.target.max_per_query);
    row.selected = picked.size();
    for (const auto& r : picked) {
      row.mean_ppl += *r.ppl;
      row.mean_length += static_cast<double>(*r.length);
    }
    if (row.selected > 0) {
      row.mean_ppl /= static_cast<double>(row.selected);
      row.mean_length /= static_cast<double>(row.selected);
    }
    row.file = fmt::format("interval_{:.3f}_{:.3f}.jsonl", lo, hi);
    files.emplace_back(config.output_dir / row.file, serialize_corpus(picked));
    rows.push_back(std::move(row));
  }
  files.emplace_back(config.output_dir / "sweep_summary.csv", sweep_summary_csv(rows));

  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) throw IoError(fmt::format("cannot create '{}': {}", config.output_dir.string(), ec.message()));
  write_all(files);
  return rows;
}

std::string sweep_summary_csv(const std::vector<SweepRow>& rows) {
  std::string out = "low,high,candidates,selected,mean_ppl,mean_length,file,note\n";
  for (const auto& r : rows) {
    out += fmt::format("{:.6g},{:.6g},{},{},{:.6f},{:.3f},{},{}\n", r.low, r.high, r.candidates,
                       r.selected, r.mean_ppl, r.mean_length, r.file,
                       r.selected == 0 ? "empty selection" : "");
  }
  return out;
}

}  // namespace oxa
