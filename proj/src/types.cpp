#include "revkit/types.hpp"

#include <cctype>
#include <chrono>
#include <ctime>

#include "revkit/error.hpp"

namespace revkit {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedDocument: return "MalformedDocument";
    case ErrorCode::UnbalancedMarkers: return "UnbalancedMarkers";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::ProviderError: return "ProviderError";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::EmptyStore: return "EmptyStore";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::ScorerUnavailable: return "ScorerUnavailable";
    case ErrorCode::MalformedLLMOutput: return "MalformedLLMOutput";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::EmptyTestSet: return "EmptyTestSet";
    case ErrorCode::TooFewVectors: return "TooFewVectors";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::InsufficientDemonstrations: return "InsufficientDemonstrations";
    case ErrorCode::AllCandidatesMalformed: return "AllCandidatesMalformed";
    case ErrorCode::UnknownGoldId: return "UnknownGoldId";
    case ErrorCode::PreconditionViolation: return "PreconditionViolation";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::Conflict: return "Conflict";
    case ErrorCode::Validation: return "Validation";
    case ErrorCode::Io: return "IO";
  }
  return "Unknown";
}

std::string_view to_string(Label label) {
  switch (label) {
    case Label::Acceptable: return "acceptable";
    case Label::Unacceptable: return "unacceptable";
    case Label::Unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

std::string_view to_string(Source source) {
  switch (source) {
    case Source::Fallback: return "fallback";
    case Source::Negotiated: return "negotiated";
    case Source::Synthetic: return "synthetic";
    case Source::Paraphrase: return "paraphrase";
  }
  return "negotiated";
}

std::string_view to_string(ContractKind kind) {
  switch (kind) {
    case ContractKind::Service: return "service";
    case ContractKind::Purchase: return "purchase";
    case ContractKind::Other: return "other";
  }
  return "other";
}

namespace {

std::string lower(std::string_view text) {
  std::string out(text);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

Label parse_label(std::string_view raw) {
  const std::string text = lower(raw);
  if (text == "acceptable") return Label::Acceptable;
  if (text == "unacceptable") return Label::Unacceptable;
  if (text == "unlabeled") return Label::Unlabeled;
  throw Error(ErrorCode::Validation, "unknown label: " + std::string(raw));
}

Source parse_source(std::string_view raw) {
  const std::string text = lower(raw);
  if (text == "fallback") return Source::Fallback;
  if (text == "negotiated") return Source::Negotiated;
  if (text == "synthetic") return Source::Synthetic;
  if (text == "paraphrase") return Source::Paraphrase;
  throw Error(ErrorCode::Validation, "unknown source: " + std::string(raw));
}

ContractKind parse_contract_kind(std::string_view raw) {
  const std::string text = lower(raw);
  if (text == "service") return ContractKind::Service;
  if (text == "purchase") return ContractKind::Purchase;
  if (text == "other") return ContractKind::Other;
  throw Error(ErrorCode::Validation, "unknown contract kind: " + std::string(raw));
}

const Provision* Contract::find(std::string_view number) const {
  for (const auto& p : provisions)
    if (p.number == number) return &p;
  return nullptr;
}

RevisionTable::RevisionTable(std::vector<Revision> revisions) {
  for (auto& r : revisions) add(std::move(r));
}

void RevisionTable::add(Revision revision) {
  if (index_.count(revision.id))
    throw Error(ErrorCode::Validation, "duplicate revision id " + revision.id);
  index_.emplace(revision.id, rows_.size());
  rows_.push_back(std::move(revision));
}

const Revision* RevisionTable::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &rows_[it->second];
}

const Revision& RevisionTable::at(const std::string& id) const {
  if (const Revision* r = find(id)) return *r;
  throw Error(ErrorCode::NotFound, "unknown revision " + id);
}

void validate(const Revision& r) {
  if (r.text.empty())
    throw Error(ErrorCode::PreconditionViolation, "revision " + r.id + " has empty text");
  if ((r.source == Source::Synthetic || r.source == Source::Paraphrase) &&
      r.label == Label::Unlabeled)
    throw Error(ErrorCode::PreconditionViolation,
                "generated revision " + r.id + " must carry a label");
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void to_json(nlohmann::json& j, const Provision& p) {
  j = {{"number", p.number}, {"title", p.title}, {"text", p.text}};
  if (p.template_text) j["template_text"] = *p.template_text;
}

void from_json(const nlohmann::json& j, Provision& p) {
  p.number = j.at("number").get<std::string>();
  p.title = j.value("title", std::string{});
  p.text = j.at("text").get<std::string>();
  if (auto it = j.find("template_text"); it != j.end() && !it->is_null())
    p.template_text = it->get<std::string>();
  else
    p.template_text.reset();
  p.heading.clear();
}

void to_json(nlohmann::json& j, const Contract& c) {
  j = {{"id", c.id}, {"kind", to_string(c.kind)}, {"provisions", c.provisions}};
}

void from_json(const nlohmann::json& j, Contract& c) {
  c.id = j.at("id").get<std::string>();
  c.kind = parse_contract_kind(j.value("kind", std::string{"other"}));
  c.provisions = j.at("provisions").get<std::vector<Provision>>();
  c.preamble.clear();
}

void to_json(nlohmann::json& j, const Revision& r) {
  j = {{"id", r.id},
       {"provision_number", r.provision_number},
       {"contract_id", r.contract_id},
       {"text", r.text},
       {"label", to_string(r.label)},
       {"source", to_string(r.source)},
       {"created_at", r.created_at}};
  if (r.pair_id) j["pair_id"] = *r.pair_id;
}

void from_json(const nlohmann::json& j, Revision& r) {
  r.id = j.at("id").get<std::string>();
  r.provision_number = j.at("provision_number").get<std::string>();
  r.contract_id = j.value("contract_id", std::string{});
  r.text = j.at("text").get<std::string>();
  r.label = parse_label(j.value("label", std::string{"unlabeled"}));
  r.source = parse_source(j.value("source", std::string{"negotiated"}));
  r.created_at = j.value("created_at", std::string{});
  if (auto it = j.find("pair_id"); it != j.end() && !it->is_null())
    r.pair_id = it->get<std::string>();
  else
    r.pair_id.reset();
}

}  // namespace revkit
