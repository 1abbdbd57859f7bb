#pragma once

// Trajectory records and their JSONL corpus format.
//
// One JSON object per line. Known keys, in the order they are written:
//   id, query, response, gold_answer, token_logprobs, length, ppl, verified
// Optional keys are omitted when absent (null is accepted on input). Any other
// key is carried through untouched and written after the known keys, sorted.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace oxa {

struct TrajectoryRecord {
  std::string id;
  std::string query;
  std::string response;
  std::optional<std::string> gold_answer;
  std::optional<std::vector<double>> token_logprobs;
  std::optional<std::size_t> length;
  std::optional<double> ppl;
  std::optional<bool> verified;
  // Unknown fields, preserved verbatim for round-tripping.
  nlohmann::json extra = nlohmann::json::object();

  bool operator==(const TrajectoryRecord&) const = default;
};

// Throws ValidationError describing the first violated invariant.
void validate_record(const TrajectoryRecord& record);

TrajectoryRecord record_from_json(const nlohmann::json& object);
nlohmann::ordered_json record_to_json(const TrajectoryRecord& record);

// Records sorted ascending by id; ids are unique.
class Corpus {
 public:
  Corpus() = default;
  // Sorts and checks uniqueness; throws ValidationError on a duplicate id.
  explicit Corpus(std::vector<TrajectoryRecord> records);

  const std::vector<TrajectoryRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  auto begin() const noexcept { return records_.begin(); }
  auto end() const noexcept { return records_.end(); }
  const TrajectoryRecord& operator[](std::size_t i) const { return records_[i]; }

  const TrajectoryRecord* find(std::string_view id) const;

  bool operator==(const Corpus&) const = default;

 private:
  std::vector<TrajectoryRecord> records_;
};

Corpus load_corpus(const std::filesystem::path& path);
Corpus parse_corpus(std::string_view jsonl, std::string_view source_name = "<memory>");

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
std::string serialize_corpus(const Corpus& corpus);

}  // namespace oxa
