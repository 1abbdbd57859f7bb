#include "oxa/verifier.hpp"

#include <array>
#include <cctype>

#include <boost/multiprecision/cpp_int.hpp>
#include <fmt/format.h>

#include "oxa/errors.hpp"

namespace oxa {
namespace {

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Index of the brace closing the '{' at `open`, or npos.
std::size_t matching_brace(std::string_view s, std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < s.size(); ++i) {
    if (s[i] == '{') {
      ++depth;
    } else if (s[i] == '}') {
      if (--depth == 0) return i;
    }
  }
  return std::string_view::npos;
}

// Decimal literal: [+-]? (digits [. digits?] | . digits)
std::optional<Rational> parse_decimal(std::string_view s) {
  bool negative = false;
  if (!s.empty() && (s.front() == '+' || s.front() == '-')) {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  if (s.empty()) return std::nullopt;
  BigInt digits = 0;
  BigInt scale = 1;
  bool seen_point = false;
  bool seen_digit = false;
  for (char c : s) {
    if (is_digit(c)) {
      digits = digits * 10 + (c - '0');
      if (seen_point) scale *= 10;
      seen_digit = true;
    } else if (c == '.' && !seen_point) {
      seen_point = true;
    } else {
      return std::nullopt;
    }
  }
  if (!seen_digit) return std::nullopt;
  Rational value(digits, scale);
  return negative ? Rational(-value) : value;
}

std::optional<Rational> parse_quotient(std::string_view num, std::string_view den) {
  auto n = parse_decimal(num);
  auto d = parse_decimal(den);
  if (!n || !d || *d == 0) return std::nullopt;
  return *n / *d;
}

std::optional<Rational> parse_numeric(std::string_view s) {
  if (s.empty()) return std::nullopt;
  bool negative = false;
  std::string_view body = s;
  if (body.front() == '-' || body.front() == '+') {
    // A sign directly in front of \frac applies to the whole fraction.
    if (body.size() > 1 && body[1] == '\\') {
      negative = body.front() == '-';
      body.remove_prefix(1);
    }
  }
  for (std::string_view cmd : {std::string_view("\\frac"), std::string_view("\\dfrac"),
                               std::string_view("\\tfrac")}) {
    if (!body.starts_with(cmd)) continue;
    std::size_t open1 = cmd.size();
    if (open1 >= body.size() || body[open1] != '{') return std::nullopt;
    std::size_t close1 = matching_brace(body, open1);
    if (close1 == std::string_view::npos) return std::nullopt;
    std::size_t open2 = close1 + 1;
    if (open2 >= body.size() || body[open2] != '{') return std::nullopt;
    std::size_t close2 = matching_brace(body, open2);
    if (close2 != body.size() - 1) return std::nullopt;
    auto value = parse_quotient(body.substr(open1 + 1, close1 - open1 - 1),
                                body.substr(open2 + 1, close2 - open2 - 1));
    if (value && negative) *value = -*value;
    return value;
  }
  if (body.data() != s.data()) return std::nullopt;  // stray sign before a command
  if (auto slash = s.find('/'); slash != std::string_view::npos) {
    return parse_quotient(s.substr(0, slash), s.substr(slash + 1));
  }
  return parse_decimal(s);
}

std::optional<Rational> numeric_value(std::string_view normalized) {
  std::string compact;
  compact.reserve(normalized.size());
  for (char c : normalized) {
    if (!is_space(c)) compact.push_back(c);
  }
  return parse_numeric(compact);
}

}  // namespace

std::string_view to_string(VerificationStatus status) {
  switch (status) {
    case VerificationStatus::kCorrect:
      return "correct";
    case VerificationStatus::kIncorrect:
      return "incorrect";
    case VerificationStatus::kUnparseable:
      return "unparseable";
  }
  return "unknown";
}

std::optional<std::string> extract_boxed(std::string_view response) {
  static constexpr std::string_view kTag = "\\boxed{";
  std::optional<std::string> last;
  std::size_t pos = response.find(kTag);
  while (pos != std::string_view::npos) {
    const std::size_t open = pos + kTag.size() - 1;
    const std::size_t close = matching_brace(response, open);
    if (close != std::string_view::npos) {
      last = std::string(response.substr(open + 1, close - open - 1));
    }
    pos = response.find(kTag, pos + 1);
  }
  return last;
}

std::string normalize_answer(std::string_view answer) {
  std::string out;
  out.reserve(answer.size());
  for (std::size_t i = 0; i < answer.size();) {
    const char c = answer[i];
    if (c == '$') {
      ++i;
      continue;
    }
    if (c == '\\' && i + 1 < answer.size()) {
      const char next = answer[i + 1];
      if (next == ',' || next == ';' || next == ' ') {
        i += 2;
        continue;
      }
      bool stripped = false;
      for (std::string_view cmd : {std::string_view("\\left"), std::string_view("\\right")}) {
        const std::size_t end = i + cmd.size();
        if (answer.substr(i, cmd.size()) == cmd && (end >= answer.size() || !is_alpha(answer[end]))) {
          i = end;
          stripped = true;
          break;
        }
      }
      if (stripped) continue;
    }
    out.push_back(c);
    ++i;
  }
  std::string_view view = trim(out);
  if (!view.empty() && view.front() == '{' && matching_brace(view, 0) == view.size() - 1) {
    view = trim(view.substr(1, view.size() - 2));
  }
  return std::string(view);
}

std::optional<std::string> canonical_rational(std::string_view normalized) {
  auto value = numeric_value(normalized);
  if (!value) return std::nullopt;
  return boost::multiprecision::numerator(*value).str() + "/" +
         boost::multiprecision::denominator(*value).str();
}

bool answers_equivalent(std::string_view candidate, std::string_view gold) {
  const std::string a = normalize_answer(candidate);
  const std::string b = normalize_answer(gold);
  auto va = numeric_value(a);
  auto vb = numeric_value(b);
  if (va && vb) return *va == *vb;
  return a == b;
}

VerificationResult verify(const TrajectoryRecord& record) {
  if (!record.gold_answer) {
    throw PreconditionError(fmt::format("record '{}': verify requires gold_answer", record.id));
  }
  VerificationResult result;
  auto boxed = extract_boxed(record.response);
  if (!boxed) {
    result.status = VerificationStatus::kUnparseable;
    return result;
  }
  result.extracted = normalize_answer(*boxed);
  result.status = answers_equivalent(*boxed, *record.gold_answer) ? VerificationStatus::kCorrect
                                                                  : VerificationStatus::kIncorrect;
  return result;
}

}  // namespace oxa
