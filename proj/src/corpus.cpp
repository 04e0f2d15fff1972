#include "revkit/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <regex>
#include <set>

#include "revkit/error.hpp"

namespace revkit::corpus {
namespace {

const std::regex& heading_pattern() {
  // "7." / "7)" / "7.1" / "7.1." ; a bare top-level number needs its punctuation.
  static const std::regex re(R"(^[ \t]*(?:(\d+(?:\.\d+)+)[.)]?|(\d+)[.)]) +([A-Za-z].*?)[ \t]*$)");
  return re;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

Contract parse_plain(std::string_view raw, std::string_view contract_id) {
  Contract contract;
  contract.id = std::string(contract_id);

  std::size_t pos = 0;
  while (pos < raw.size()) {
    std::size_t end = raw.find('\n', pos);
    end = (end == std::string_view::npos) ? raw.size() : end + 1;
    const std::string_view line = raw.substr(pos, end - pos);

    std::string content(line);
    while (!content.empty() && (content.back() == '\n' || content.back() == '\r'))
      content.pop_back();

    std::smatch m;
    if (std::regex_match(content, m, heading_pattern())) {
      Provision p;
      p.number = m[1].matched ? m[1].str() : m[2].str();
      p.title = m[3].str();
      p.heading = std::string(line);
      contract.provisions.push_back(std::move(p));
    } else if (!contract.provisions.empty()) {
      contract.provisions.back().text.append(line);
    } else {
      contract.preamble.append(line);
    }
    pos = end;
  }

  if (contract.provisions.empty())
    throw Error(ErrorCode::MalformedDocument, "no provision headings found");
  return contract;
}

Contract parse_structured(std::string_view raw) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, std::string("invalid JSON: ") + e.what());
  }
  try {
    return doc.get<Contract>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, std::string("invalid contract: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedDocument, e.what());
  }
}

void check_provisions(const Contract& contract) {
  static const std::regex number_re(R"(\d+(\.\d+)*)");
  if (contract.provisions.empty())
    throw Error(ErrorCode::MalformedDocument, "contract has no provisions");
  std::set<std::string> seen;
  for (const auto& p : contract.provisions) {
    if (!std::regex_match(p.number, number_re))
      throw Error(ErrorCode::MalformedDocument, "bad provision number '" + p.number + "'");
    if (!seen.insert(p.number).second)
      throw Error(ErrorCode::MalformedDocument, "duplicate provision number " + p.number);
    if (is_blank(p.text))
      throw Error(ErrorCode::MalformedDocument, "provision " + p.number + " has no text");
  }
}

}  // namespace

Contract parse_contract(std::string_view raw, DocumentFormat format,
                        std::string_view contract_id) {
  if (raw.empty()) throw Error(ErrorCode::MalformedDocument, "empty document");
  Contract contract =
      format == DocumentFormat::PlainText ? parse_plain(raw, contract_id) : parse_structured(raw);
  check_provisions(contract);
  return contract;
}

std::string render_plain_text(const Contract& contract) {
  std::string out = contract.preamble;
  for (const auto& p : contract.provisions) {
    if (p.heading.empty())
      out += p.number + ". " + p.title + "\n";
    else
      out += p.heading;
    out += p.text;
  }
  return out;
}

TrackedEdits detect_tracked_edits(std::string_view text) {
  static constexpr std::string_view kInsOpen = "{++", kInsClose = "++}";
  static constexpr std::string_view kDelOpen = "{--", kDelClose = "--}";

  TrackedEdits out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t ins = text.find(kInsOpen, pos);
    const std::size_t del = text.find(kDelOpen, pos);
    const std::size_t open = std::min(ins, del);

    const std::string_view plain = text.substr(pos, open == std::string_view::npos ? open : open - pos);
    if (plain.find(kInsClose) != std::string_view::npos ||
        plain.find(kDelClose) != std::string_view::npos)
      throw Error(ErrorCode::UnbalancedMarkers, "closing marker without opening marker");
    out.accepted_text.append(plain);
    out.original_text.append(plain);
    if (open == std::string_view::npos) break;

    const bool insertion = open == ins;
    const std::string_view close = insertion ? kInsClose : kDelClose;
    const std::size_t body_start = open + 3;
    const std::size_t close_at = text.find(close, body_start);
    if (close_at == std::string_view::npos)
      throw Error(ErrorCode::UnbalancedMarkers, "unterminated marker at offset " + std::to_string(open));
    const std::string_view body = text.substr(body_start, close_at - body_start);
    if (body.find(kInsOpen) != std::string_view::npos || body.find(kDelOpen) != std::string_view::npos)
      throw Error(ErrorCode::UnbalancedMarkers, "nested marker at offset " + std::to_string(open));

    (insertion ? out.accepted_text : out.original_text).append(body);
    out.has_edits = true;
    pos = close_at + 3;
  }
  return out;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

namespace {

std::optional<Revision> label_provision(const Contract& contract, const Provision& p,
                                        std::string_view reference, std::string_view created_at) {
  const TrackedEdits edits = detect_tracked_edits(p.text);
  Revision r;
  r.id = contract.id + ":" + p.number;
  r.provision_number = p.number;
  r.contract_id = contract.id;
  r.source = Source::Negotiated;
  r.created_at = std::string(created_at);
  if (edits.has_edits) {
    r.label = Label::Unacceptable;
    r.text = normalize_whitespace(edits.accepted_text);
  } else {
    std::string normalized = normalize_whitespace(p.text);
    if (normalized == normalize_whitespace(reference)) return std::nullopt;
    r.label = Label::Acceptable;
    r.text = std::move(normalized);
  }
  if (r.text.empty()) return std::nullopt;
  return r;
}

}  // namespace

WeakLabelResult weak_label(const Contract& contract, const Contract& templ,
                           std::string_view created_at) {
  WeakLabelResult result;
  for (const auto& p : contract.provisions) {
    const Provision* t = templ.find(p.number);
    if (!t) {
      result.skipped.push_back(p.number);
      continue;
    }
    const std::string& reference = t->template_text ? *t->template_text : t->text;
    if (auto r = label_provision(contract, p, reference, created_at))
      result.revisions.push_back(std::move(*r));
  }
  return result;
}

WeakLabelResult weak_label(const Contract& contract, std::string_view created_at) {
  WeakLabelResult result;
  for (const auto& p : contract.provisions) {
    if (!p.template_text) {
      result.skipped.push_back(p.number);
      continue;
    }
    if (auto r = label_provision(contract, p, *p.template_text, created_at))
      result.revisions.push_back(std::move(*r));
  }
  return result;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) words.emplace_back(text.substr(start, i - start));
  }
  return words;
}

EditScript diff_words(std::string_view a, std::string_view b) {
  const auto src = split_words(a);
  const auto dst = split_words(b);
  const std::size_t n = src.size(), m = dst.size();

  // suffix[i][j] = LCS length of src[i..] and dst[j..]
  std::vector<std::vector<std::uint32_t>> suffix(n + 1, std::vector<std::uint32_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;)
    for (std::size_t j = m; j-- > 0;)
      suffix[i][j] = src[i] == dst[j] ? suffix[i + 1][j + 1] + 1
                                      : std::max(suffix[i + 1][j], suffix[i][j + 1]);

  EditScript script;
  auto emit = [&](EditOp op, const std::string& token) {
    if (script.operations.empty() || script.operations.back().op != op)
      script.operations.push_back({op, {}});
    script.operations.back().tokens.push_back(token);
  };

  std::size_t i = 0, j = 0;
  while (i < n || j < m) {
    if (i < n && j < m && src[i] == dst[j]) {
      emit(EditOp::Keep, src[i]);
      ++i, ++j;
    } else if (i < n && (j == m || suffix[i + 1][j] >= suffix[i][j + 1])) {
      emit(EditOp::Delete, src[i++]);
    } else {
      emit(EditOp::Insert, dst[j++]);
    }
  }
  return script;
}

std::vector<std::string> EditScript::source_tokens() const {
  std::vector<std::string> out;
  for (const auto& run : operations)
    if (run.op != EditOp::Insert) out.insert(out.end(), run.tokens.begin(), run.tokens.end());
  return out;
}

std::vector<std::string> EditScript::target_tokens() const {
  std::vector<std::string> out;
  for (const auto& run : operations)
    if (run.op != EditOp::Delete) out.insert(out.end(), run.tokens.begin(), run.tokens.end());
  return out;
}

std::string_view to_string(EditOp op) {
  switch (op) {
    case EditOp::Keep: return "keep";
    case EditOp::Insert: return "insert";
    case EditOp::Delete: return "delete";
  }
  return "keep";
}

void to_json(nlohmann::json& j, const EditScript& script) {
  j = nlohmann::json::array();
  for (const auto& run : script.operations)
    j.push_back({{"op", to_string(run.op)}, {"tokens", run.tokens}});
}

}  // namespace revkit::corpus
