#include <doctest.h>

#include <random>

#include "revkit/corpus.hpp"
#include "revkit/error.hpp"
#include "fixtures.hpp"

using namespace revkit;
using namespace revkit::corpus;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::Io;
}

// Prefix-table LCS length, independent of the suffix walk in diff_words.
std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
  return t[a.size()][b.size()];
}

}  // namespace

TEST_CASE("single heading parses to one provision") {
  const auto c = parse_contract("1. Term\nThis Agreement lasts one year.\n", DocumentFormat::PlainText);
  REQUIRE(c.provisions.size() == 1);
  CHECK(c.provisions[0].number == "1");
  CHECK(c.provisions[0].title == "Term");
}

TEST_CASE("fixture contract segments into twelve provisions") {
  const std::string raw = testing::read_fixture("service_agreement.txt");
  const auto c = parse_contract(raw, DocumentFormat::PlainText, "sa");
  std::vector<std::string> numbers;
  for (const auto& p : c.provisions) numbers.push_back(p.number);
  CHECK(numbers == std::vector<std::string>{"1", "2", "3", "4", "5", "6", "7", "7.1", "7.2", "8", "9", "10"});
  CHECK(c.find("8")->title == "Indemnification");
  CHECK(c.preamble.find("STANDARD TERMS") != std::string::npos);
  CHECK(render_plain_text(c) == raw);
}

TEST_CASE("malformed documents") {
  CHECK(code_of([] { parse_contract("no heading at all\njust prose\n", DocumentFormat::PlainText); }) ==
        ErrorCode::MalformedDocument);
  CHECK(code_of([] { parse_contract("1. A\nx\n1. B\ny\n", DocumentFormat::PlainText); }) ==
        ErrorCode::MalformedDocument);
  CHECK(code_of([] { parse_contract("not json", DocumentFormat::Structured); }) == ErrorCode::MalformedDocument);
}

TEST_CASE("structured round trip") {
  const auto c = parse_contract(testing::read_fixture("negotiated_weak_label.json"), DocumentFormat::Structured);
  CHECK(c.id == "neg-001");
  CHECK(c.kind == ContractKind::Service);
  REQUIRE(c.provisions.size() == 9);
  CHECK(c.provisions[0].template_text.value() == "This Agreement continues for two years.");
  nlohmann::json j = c;
  CHECK(j.get<Contract>().provisions.size() == 9);
}

TEST_CASE("tracked edits") {
  const auto e = detect_tracked_edits("pay within {--30--}{++60++} days");
  CHECK(e.has_edits);
  CHECK(e.accepted_text == "pay within 60 days");
  CHECK(e.original_text == "pay within 30 days");

  const auto none = detect_tracked_edits("plain text");
  CHECK_FALSE(none.has_edits);
  CHECK(none.accepted_text == "plain text");
  CHECK(none.original_text == "plain text");

  CHECK(code_of([] { detect_tracked_edits("{++x"); }) == ErrorCode::UnbalancedMarkers);
  CHECK(code_of([] { detect_tracked_edits("x++}"); }) == ErrorCode::UnbalancedMarkers);
}

TEST_CASE("weak labeling of the negotiated fixture") {
  const auto c = parse_contract(testing::read_fixture("negotiated_weak_label.json"), DocumentFormat::Structured);
  const auto result = weak_label(c, "2025-01-01T00:00:00Z");
  std::size_t unacc = 0, acc = 0;
  for (const auto& r : result.revisions) (r.label == Label::Unacceptable ? unacc : acc)++;
  CHECK(unacc == 4);
  CHECK(acc == 3);
  CHECK(result.revisions.size() == 7);
  CHECK(result.revisions[0].text == "This Agreement continues for three years.");
  CHECK(result.revisions[3].text == "Supplier shall indemnify Buyer against claims.");
  CHECK(result.revisions[0].id == "neg-001:1");
  CHECK(result.skipped.empty());
}

TEST_CASE("weak labeling against a separate template") {
  Contract templ;
  templ.id = "t";
  templ.provisions = {{"1", "A", std::nullopt, "Alpha clause.", ""}, {"2", "B", std::nullopt, "Beta clause.", ""}};
  Contract neg;
  neg.id = "n";
  neg.provisions = {{"1", "A", std::nullopt, "Alpha {--clause--}{++term++}.", ""},
                    {"2", "B", std::nullopt, "Beta clause, amended.", ""},
                    {"3", "C", std::nullopt, "Gamma.", ""}};
  const auto r = weak_label(neg, templ, "t0");
  REQUIRE(r.revisions.size() == 2);
  CHECK(r.revisions[0].label == Label::Unacceptable);
  CHECK(r.revisions[1].label == Label::Acceptable);
  CHECK(r.skipped == std::vector<std::string>{"3"});
}

TEST_CASE("diff_words small cases") {
  const auto same = diff_words("a b c", "a b c");
  REQUIRE(same.operations.size() == 1);
  CHECK(same.operations[0].op == EditOp::Keep);

  const auto sub = diff_words("a b c", "a x c");
  REQUIRE(sub.operations.size() == 4);
  CHECK(sub.operations[0].op == EditOp::Keep);
  CHECK(sub.operations[1].op == EditOp::Delete);
  CHECK(sub.operations[1].tokens == std::vector<std::string>{"b"});
  CHECK(sub.operations[2].op == EditOp::Insert);
  CHECK(sub.operations[2].tokens == std::vector<std::string>{"x"});
  CHECK(sub.operations[3].op == EditOp::Keep);
}

TEST_CASE("diff_words round trips and is minimal against an LCS oracle") {
  std::mt19937_64 rng(7);
  const std::vector<std::string> vocab = {"the", "party", "shall", "pay", "within", "days", "notice", "fees"};
  std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> a, b;
    std::string sa, sb;
    for (int i = 0; i < 50; ++i) {
      a.push_back(vocab[pick(rng)]);
      b.push_back(vocab[pick(rng)]);
      sa += a.back() + " ";
      sb += b.back() + " ";
    }
    const auto script = diff_words(sa, sb);
    CHECK(script.source_tokens() == a);
    CHECK(script.target_tokens() == b);
    std::size_t kept = 0;
    for (const auto& run : script.operations)
      if (run.op == EditOp::Keep) kept += run.tokens.size();
    CHECK(kept == lcs_length(a, b));
    for (std::size_t i = 1; i < script.operations.size(); ++i)
      CHECK(script.operations[i].op != script.operations[i - 1].op);
  }
}

TEST_CASE("normalize_whitespace") {
  CHECK(normalize_whitespace("  a \n\t b  ") == "a b");
  CHECK(normalize_whitespace("") == "");
}
