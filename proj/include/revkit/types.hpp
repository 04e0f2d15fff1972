#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace revkit {

enum class Label { Acceptable, Unacceptable, Unlabeled };
enum class Source { Fallback, Negotiated, Synthetic, Paraphrase };
enum class ContractKind { Service, Purchase, Other };

std::string_view to_string(Label label);
std::string_view to_string(Source source);
std::string_view to_string(ContractKind kind);
Label parse_label(std::string_view text);
Source parse_source(std::string_view text);
ContractKind parse_contract_kind(std::string_view text);

struct Provision {
  std::string number;
  std::string title;
  std::optional<std::string> template_text;
  std::string text;
  // Raw heading line as it appeared in a plain-text source, including its
  // line terminator. Empty for provisions read from structured documents.
  std::string heading;
};

struct Contract {
  std::string id;
  ContractKind kind = ContractKind::Other;
  // Text before the first heading in a plain-text source.
  std::string preamble;
  std::vector<Provision> provisions;

  const Provision* find(std::string_view number) const;
};

struct Revision {
  std::string id;
  std::string provision_number;
  std::string contract_id;
  std::string text;
  Label label = Label::Unlabeled;
  Source source = Source::Negotiated;
  std::string created_at;
  // Links the two sides of one generated acceptable/unacceptable pair.
  std::optional<std::string> pair_id;
};

/// Revisions keyed by id, in insertion order.
class RevisionTable {
 public:
  RevisionTable() = default;
  explicit RevisionTable(std::vector<Revision> revisions);

  /// Throws Validation on a duplicate id.
  void add(Revision revision);
  const Revision* find(const std::string& id) const;
  const Revision& at(const std::string& id) const;  // throws NotFound
  const std::vector<Revision>& all() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

 private:
  std::vector<Revision> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Throws PreconditionViolation when a Revision breaks its invariants.
void validate(const Revision& revision);

/// Current UTC time as ISO-8601 with second precision.
std::string utc_now();

void to_json(nlohmann::json& j, const Provision& p);
void from_json(const nlohmann::json& j, Provision& p);
void to_json(nlohmann::json& j, const Contract& c);
void from_json(const nlohmann::json& j, Contract& c);
void to_json(nlohmann::json& j, const Revision& r);
void from_json(const nlohmann::json& j, Revision& r);

}  // namespace revkit
