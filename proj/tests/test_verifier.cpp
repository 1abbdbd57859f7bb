#include <doctest.h>

#include <random>
#include <string>
#include <vector>

#include "oxa/errors.hpp"
#include "oxa/verifier.hpp"
#include "support/verifier_table.hpp"

using namespace oxa;

namespace {

VerificationResult verify_text(std::string response, std::string gold) {
  TrajectoryRecord r;
  r.id = "x";
  r.query = "q";
  r.response = std::move(response);
  r.gold_answer = std::move(gold);
  return verify(r);
}

}  // namespace

TEST_CASE("extract_boxed examples") {
  CHECK(extract_boxed(R"(... so \boxed{42}.)") == "42");
  CHECK(extract_boxed(R"(\boxed{1} ... \boxed{\frac{1}{2}})") == R"(\frac{1}{2})");
  CHECK_FALSE(extract_boxed(R"(\boxed{unclosed)").has_value());
  CHECK_FALSE(extract_boxed("no answer").has_value());
  CHECK(extract_boxed(R"(\boxed{\{1,2\}})") == R"(\{1,2\})");
}

TEST_CASE("extract_boxed output is a balanced substring of the input") {
  std::mt19937_64 rng(5);
  const std::vector<std::string> pieces{"\\boxed{", "{", "}", "x", "1", " ", "\\frac", "\\boxed"};
  for (int trial = 0; trial < 2000; ++trial) {
    std::string s;
    const int n = static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) s += pieces[rng() % pieces.size()];
    const auto got = extract_boxed(s);
    if (!got) continue;
    CHECK(s.find("\\boxed{" + *got + "}") != std::string::npos);
    int depth = 0;
    bool ok = true;
    for (char c : *got) {
      depth += c == '{' ? 1 : c == '}' ? -1 : 0;
      ok = ok && depth >= 0;
    }
    CHECK(ok);
    CHECK(depth == 0);
  }
}

TEST_CASE("answers_equivalent examples") {
  CHECK(answers_equivalent("42", "42"));
  CHECK(answers_equivalent(R"(\frac{1}{2})", "0.5"));
  CHECK_FALSE(answers_equivalent("0.3333", "1/3"));
  CHECK(answers_equivalent("0.1", "1/10"));
}

TEST_CASE("normalization") {
  CHECK(normalize_answer(" $\\left( 1 \\right)$ ") == "( 1 )");
  CHECK(normalize_answer("{5}") == "5");
  CHECK(normalize_answer("{{5}}") == "{5}");
  CHECK(normalize_answer("{a}{b}") == "{a}{b}");
  CHECK(normalize_answer("\\leftarrow") == "\\leftarrow");
  CHECK(normalize_answer(R"(1\;000\ 000)") == "1000000");
}

TEST_CASE("canonical_rational") {
  CHECK(canonical_rational("0.50") == "1/2");
  CHECK(canonical_rational("-\\frac{6}{4}") == "-3/2");
  CHECK(canonical_rational("10/-4") == "-5/2");
  CHECK(canonical_rational("7") == "7/1");
  CHECK_FALSE(canonical_rational("1/0").has_value());
  CHECK_FALSE(canonical_rational("x").has_value());
  CHECK_FALSE(canonical_rational(".").has_value());
}

TEST_CASE("verify examples") {
  CHECK(verify_text(R"(\boxed{7})", "7").status == VerificationStatus::kCorrect);
  CHECK(verify_text(R"(\boxed{8})", "7").status == VerificationStatus::kIncorrect);
  const auto u = verify_text("the answer is seven", "7");
  CHECK(u.status == VerificationStatus::kUnparseable);
  CHECK_FALSE(u.extracted.has_value());
  TrajectoryRecord r;
  r.id = "x";
  r.response = R"(\boxed{1})";
  CHECK_THROWS_AS(verify(r), PreconditionError);
}

TEST_CASE("golden table") {
  for (const auto& row : oxa::testing::kGoldenTable) {
    CAPTURE(row.response);
    CAPTURE(row.gold);
    const auto res = verify_text(std::string(row.response), std::string(row.gold));
    CHECK(res.status == row.expected);
    CHECK(res.extracted.has_value() == (row.expected != VerificationStatus::kUnparseable));
  }
}

TEST_CASE("golden numeric rows agree with an independent rational reader") {
  int checked = 0;
  for (const auto& row : oxa::testing::kGoldenTable) {
    const auto boxed = extract_boxed(row.response);
    if (!boxed) continue;
    const auto a = oxa::testing::read_rational(normalize_answer(*boxed));
    const auto b = oxa::testing::read_rational(row.gold);
    if (!a || !b) continue;
    CAPTURE(row.response);
    CHECK(oxa::testing::same_rational(*a, *b) == (row.expected == VerificationStatus::kCorrect));
    ++checked;
  }
  CHECK(checked >= 15);
}

TEST_CASE("equivalence is reflexive, symmetric, and transitive on numbers") {
  const std::vector<std::string> pool{
      "1/2",  "0.5",   "\\frac{1}{2}", "\\dfrac{2}{4}", "0.50", "-0.5", "-\\frac{1}{2}", "-1/2",
      "1/3",  "0.3333", "2",          "2.0",           "4/2",  "x",    "x+1",           "{x}",
      "\\sqrt{2}", "$2$", " 2 ",      "0",             "-0",   "0.0",  "abc",           ""};
  for (const auto& a : pool) {
    CHECK(answers_equivalent(a, a));
    for (const auto& b : pool) {
      CHECK(answers_equivalent(a, b) == answers_equivalent(b, a));
      if (!canonical_rational(normalize_answer(a)) || !canonical_rational(normalize_answer(b))) continue;
      for (const auto& c : pool) {
        if (!canonical_rational(normalize_answer(c))) continue;
        if (answers_equivalent(a, b) && answers_equivalent(b, c)) CHECK(answers_equivalent(a, c));
      }
    }
  }
}
