#include "oxa/record.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "oxa/errors.hpp"

namespace oxa {
namespace {

using nlohmann::json;

constexpr std::array<std::string_view, 8> kKnownKeys = {
    "id", "query", "response", "gold_answer", "token_logprobs", "length", "ppl", "verified"};

bool is_known_key(std::string_view key) {
  return std::find(kKnownKeys.begin(), kKnownKeys.end(), key) != kKnownKeys.end();
}

std::string required_string(const json& object, const char* key) {
  auto it = object.find(key);
  if (it == object.end() || it->is_null()) {
    throw ValidationError(fmt::format("missing required field '{}'", key));
  }
  if (!it->is_string()) {
    throw ValidationError(fmt::format("field '{}' must be a string", key));
  }
  return it->get<std::string>();
}

template <typename T, typename Check>
std::optional<T> optional_field(const json& object, const char* key, Check&& check,
                                const char* expected) {
  auto it = object.find(key);
  if (it == object.end() || it->is_null()) return std::nullopt;
  if (!check(*it)) {
    throw ValidationError(fmt::format("field '{}' must be {}", key, expected));
  }
  return it->get<T>();
}

}  // namespace

void validate_record(const TrajectoryRecord& r) {
  if (r.id.empty()) throw ValidationError("record id must be non-empty");
  if (r.token_logprobs) {
    const auto& lp = *r.token_logprobs;
    for (std::size_t i = 0; i < lp.size(); ++i) {
      if (!std::isfinite(lp[i]) || lp[i] > 0.0) {
        throw ValidationError(fmt::format(
            "record '{}': token_logprobs[{}] = {} is not a finite value <= 0", r.id, i, lp[i]));
      }
    }
    if (r.length && *r.length != lp.size()) {
      throw ValidationError(fmt::format("record '{}': length {} != token_logprobs size {}", r.id,
                                        *r.length, lp.size()));
    }
  }
  if (r.ppl) {
    if (!std::isfinite(*r.ppl) || *r.ppl < 1.0) {
      throw ValidationError(fmt::format("record '{}': ppl {} must be finite and >= 1", r.id, *r.ppl));
    }
    if (r.token_logprobs && !r.token_logprobs->empty()) {
      double sum = 0.0;
      for (double v : *r.token_logprobs) sum += v;
      const double expected = std::exp(-sum / static_cast<double>(r.token_logprobs->size()));
      if (std::abs(*r.ppl - expected) > 1e-9 * expected) {
        throw ValidationError(fmt::format(
            "record '{}': ppl {} disagrees with token_logprobs (expected {})", r.id, *r.ppl,
            expected));
      }
    }
  }
}

TrajectoryRecord record_from_json(const json& object) {
  if (!object.is_object()) throw ValidationError("record must be a JSON object");
  TrajectoryRecord r;
  r.id = required_string(object, "id");
  r.query = required_string(object, "query");
  r.response = required_string(object, "response");
  r.gold_answer = optional_field<std::string>(
      object, "gold_answer", [](const json& v) { return v.is_string(); }, "a string");
  r.token_logprobs = optional_field<std::vector<double>>(
      object, "token_logprobs",
      [](const json& v) {
        return v.is_array() &&
               std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); });
      },
      "an array of numbers");
  r.length = optional_field<std::size_t>(
      object, "length", [](const json& v) { return v.is_number_unsigned(); },
      "a nonnegative integer");
  r.ppl = optional_field<double>(
      object, "ppl", [](const json& v) { return v.is_number(); }, "a number");
  r.verified = optional_field<bool>(
      object, "verified", [](const json& v) { return v.is_boolean(); }, "a boolean");
  for (auto it = object.begin(); it != object.end(); ++it) {
    if (!is_known_key(it.key())) r.extra[it.key()] = it.value();
  }
  validate_record(r);
  return r;
}

nlohmann::ordered_json record_to_json(const TrajectoryRecord& r) {
  nlohmann::ordered_json out;
  out["id"] = r.id;
  out["query"] = r.query;
  out["response"] = r.response;
  if (r.gold_answer) out["gold_answer"] = *r.gold_answer;
  if (r.token_logprobs) out["token_logprobs"] = *r.token_logprobs;
  if (r.length) out["length"] = *r.length;
  if (r.ppl) out["ppl"] = *r.ppl;
  if (r.verified) out["verified"] = *r.verified;
  for (auto it = r.extra.begin(); it != r.extra.end(); ++it) out[it.key()] = it.value();
  return out;
}

Corpus::Corpus(std::vector<TrajectoryRecord> records) : records_(std::move(records)) {
  std::sort(records_.begin(), records_.end(),
            [](const TrajectoryRecord& a, const TrajectoryRecord& b) { return a.id < b.id; });
  auto dup = std::adjacent_find(
      records_.begin(), records_.end(),
      [](const TrajectoryRecord& a, const TrajectoryRecord& b) { return a.id == b.id; });
  if (dup != records_.end()) {
    throw ValidationError(fmt::format("duplicate record id '{}'", dup->id));
  }
}

const TrajectoryRecord* Corpus::find(std::string_view id) const {
  auto it = std::lower_bound(records_.begin(), records_.end(), id,
                             [](const TrajectoryRecord& r, std::string_view key) { return r.id < key; });
  if (it == records_.end() || it->id != id) return nullptr;
  return &*it;
}

Corpus parse_corpus(std::string_view jsonl, std::string_view source_name) {
  std::vector<TrajectoryRecord> records;
  std::vector<std::size_t> line_of;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    std::size_t end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    std::string_view line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    json object;
    try {
      object = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError(
          fmt::format("{}:{}: malformed JSON: {}", source_name, line_no, e.what()));
    }
    try {
      records.push_back(record_from_json(object));
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("{}:{}: {}", source_name, line_no, e.what()));
    }
    line_of.push_back(line_no);
  }

  // Report duplicates with both line numbers before canonicalizing.
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].id < records[b].id; });
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (records[order[k]].id == records[order[k - 1]].id) {
      throw ValidationError(fmt::format("{}: duplicate record id '{}' on lines {} and {}",
                                        source_name, records[order[k]].id,
                                        line_of[order[k - 1]], line_of[order[k]]));
    }
  }
  return Corpus(std::move(records));
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError(fmt::format("error reading '{}'", path.string()));
  return parse_corpus(buf.str(), path.string());
}

std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& r : corpus) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  const std::string text = serialize_corpus(corpus);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw IoError(fmt::format("error writing '{}'", path.string()));
}

}  // namespace oxa
