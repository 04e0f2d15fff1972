#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "revkit/types.hpp"

namespace revkit::corpus {

enum class DocumentFormat { PlainText, Structured };

/// Parses a contract.
///
/// PlainText input is split on heading lines of the form
/// `[indent]<number>[.)] <title>` where number is dotted decimal ("7", "7.1").
/// Everything between two headings belongs to the earlier provision verbatim,
/// so render_plain_text() of the result reproduces the input exactly.
/// Structured input is a JSON document {id, kind, provisions:[...]}.
///
/// Throws Error(MalformedDocument) when no heading is found, a provision
/// number repeats, or a provision body is empty.
Contract parse_contract(std::string_view raw, DocumentFormat format,
                        std::string_view contract_id = "contract");

/// Inverse of plain-text parsing. Provisions without a recorded heading get a
/// synthesized "<number>. <title>" line.
std::string render_plain_text(const Contract& contract);

struct TrackedEdits {
  bool has_edits = false;
  std::string accepted_text;
  std::string original_text;
};

/// Resolves inline `{++inserted++}` and `{--deleted--}` markers.
TrackedEdits detect_tracked_edits(std::string_view text);

/// Collapses whitespace runs to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

struct WeakLabelResult {
  std::vector<Revision> revisions;
  // Provision numbers with no counterpart in the template.
  std::vector<std::string> skipped;
};

/// Edited provisions become Unacceptable revisions carrying the accepted
/// text; unedited provisions that still differ from the template become
/// Acceptable; provisions matching the template emit nothing.
WeakLabelResult weak_label(const Contract& contract, const Contract& templ,
                           std::string_view created_at);

/// Same as above with each provision's own template_text as reference.
WeakLabelResult weak_label(const Contract& contract, std::string_view created_at);

enum class EditOp { Keep, Insert, Delete };

struct EditRun {
  EditOp op;
  std::vector<std::string> tokens;
};

struct EditScript {
  std::vector<EditRun> operations;

  std::vector<std::string> source_tokens() const;
  std::vector<std::string> target_tokens() const;
};

std::vector<std::string> split_words(std::string_view text);

/// Word-level LCS diff. Adjacent runs of the same operation are merged and a
/// substitution is emitted as Delete before Insert.
EditScript diff_words(std::string_view a, std::string_view b);

std::string_view to_string(EditOp op);
void to_json(nlohmann::json& j, const EditScript& script);

}  // namespace revkit::corpus
