#pragma once

// Rule-based answer verification for chain-of-thought responses.
//
// The final answer is the content of the last balanced \boxed{...} group.
// Equivalence is a deliberately small subset of symbolic checking:
//   * `$`, `\left`, `\right`, `\,`, `\;`, `\ ` are removed, surrounding
//     whitespace and one pair of enclosing braces are stripped;
//   * integers, finite decimals, `a/b` and `\frac{a}{b}` (also \dfrac, \tfrac)
//     are parsed to exact rationals and compared exactly;
//   * anything else is compared as the normalized string.

#include <optional>
#include <string>
#include <string_view>

#include "oxa/record.hpp"

namespace oxa {

enum class VerificationStatus { kCorrect, kIncorrect, kUnparseable };

std::string_view to_string(VerificationStatus status);

struct VerificationResult {
  std::optional<std::string> extracted;  // normalized; absent iff kUnparseable
  VerificationStatus status = VerificationStatus::kUnparseable;

  bool operator==(const VerificationResult&) const = default;
};

std::optional<std::string> extract_boxed(std::string_view response);

std::string normalize_answer(std::string_view answer);

// Exact rational value of a normalized answer, as "num/den" in lowest terms
// with positive denominator, or nullopt if the answer is not numeric.
std::optional<std::string> canonical_rational(std::string_view normalized);

bool answers_equivalent(std::string_view candidate, std::string_view gold);

// Throws PreconditionError when the record has no gold_answer.
VerificationResult verify(const TrajectoryRecord& record);

}  // namespace oxa
