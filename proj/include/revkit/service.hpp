#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "revkit/classifier.hpp"
#include "revkit/embedding.hpp"
#include "revkit/llm.hpp"
#include "revkit/optimizer.hpp"
#include "revkit/retrieval.hpp"
#include "revkit/synthgen.hpp"
#include "revkit/types.hpp"

namespace revkit::service {

// ---------------------------------------------------------------------------
// Configuration

struct ServiceConfig {
  // Embeddings: an empty URL selects the built-in hashing embedder.
  std::string embedding_url;
  std::string embedding_model = "text-embedding";
  std::string embedding_token;
  int hashing_dim = 256;

  std::string llm_url;
  std::string llm_model = "llm";
  std::string llm_token;

  // Pair scorer: an empty URL scores by embedding cosine.
  std::string scorer_url;
  std::string scorer_token;

  std::string api_token;
  std::string host = "127.0.0.1";
  int port = 8080;

  double ambiguity_band = classifier::kDefaultAmbiguityBand;
  std::size_t retrain_min_decisions = 5;
  classifier::TrainConfig train;
  optimizer::OptimizationConfig optimization;
  synthgen::GenerationConfig generation;
};

void to_json(nlohmann::json& j, const ServiceConfig& c);
void from_json(const nlohmann::json& j, ServiceConfig& c);

using EnvLookup = std::function<std::optional<std::string>(const std::string& name)>;

/// Reads REVKIT_* variables. Malformed numbers raise Validation.
void apply_env_overrides(ServiceConfig& config, const EnvLookup& env);
std::optional<std::string> process_env(const std::string& name);

/// config.json when present (defaults otherwise), then environment overrides.
ServiceConfig load_config(const std::filesystem::path& path, const EnvLookup& env = process_env);

// ---------------------------------------------------------------------------
// Review records

enum class FlagStatus { Open, Optimized, Decided };
std::string_view to_string(FlagStatus s);
FlagStatus parse_flag_status(std::string_view text);

struct FlagRecord {
  std::string revision_id;
  std::string contract_id;
  std::string provision_number;
  double probability_acceptable = 0.0;
  classifier::ConfidenceBand confidence_band = classifier::ConfidenceBand::Confident;
  FlagStatus status = FlagStatus::Open;
  std::uint64_t model_version = 0;
};

/// Ambiguous first, then ascending probability, then id.
void sort_flags(std::vector<FlagRecord>& flags);

enum class Verdict { Accept, Reject, Edit };
std::string_view to_string(Verdict v);
Verdict parse_verdict(std::string_view text);

struct ReviewDecision {
  std::string revision_id;
  Verdict verdict = Verdict::Accept;
  std::string final_text;
  std::optional<int> candidate_index;
  std::string reviewer;
  std::string decided_at;
  // Labeled revision appended by Accept or Edit.
  std::optional<std::string> derived_revision_id;
};

/// Edit requires non-empty final_text; reviewer must be set.
void validate(const ReviewDecision& decision);

void to_json(nlohmann::json& j, const FlagRecord& f);
void from_json(const nlohmann::json& j, FlagRecord& f);
void to_json(nlohmann::json& j, const ReviewDecision& d);
void from_json(const nlohmann::json& j, ReviewDecision& d);

/// Revisions under review for an ingested contract: one Unlabeled revision
/// per provision whose (edit-resolved) text differs from its template text,
/// or every provision when no template text is given.
std::vector<Revision> review_revisions(const Contract& contract, const std::string& created_at);

struct Classified {
  Revision revision;
  classifier::Prediction prediction;
  classifier::ConfidenceBand band = classifier::ConfidenceBand::Confident;
  bool flagged = false;
};

/// Flags a revision when its label is Unacceptable or its band Ambiguous.
std::vector<Classified> classify_revisions(const classifier::EnsembleModel& model,
                                           std::span<const Revision> revisions,
                                           std::span<const embedding::EmbeddingVector> vectors, double band);

std::vector<FlagRecord> flags_from(std::span<const Classified> classified, std::uint64_t model_version);

// ---------------------------------------------------------------------------
// Workspace

struct Providers {
  std::shared_ptr<embedding::EmbeddingProvider> embedder;
  std::shared_ptr<llm::LlmClient> llm;
  std::shared_ptr<retrieval::PairScorer> scorer;
};

/// Builds providers from the config; set members of `overrides` win.
Providers make_providers(const ServiceConfig& config, Providers overrides = {});

struct IngestResult {
  std::string contract_id;
  std::size_t revisions = 0;
  std::vector<FlagRecord> flags;
};

struct RetrainResult {
  bool trained = false;
  std::string status;
  std::uint64_t version = 0;
  std::size_t new_decisions = 0;
  std::optional<classifier::TrainingSummary> summary;
};

struct DecisionOptions {
  bool force = false;
};

/// One directory holding contracts/, revisions.jsonl, embeddings.bin/.idx,
/// models/, decisions.jsonl, flags.json, optimizations.jsonl and config.json.
/// Reads share a lock; writes are serialized. Every append is fsynced
/// before the call returns.
class Workspace {
 public:
  static std::unique_ptr<Workspace> open(const std::filesystem::path& root, ServiceConfig config,
                                         Providers overrides = {});

  const std::filesystem::path& root() const { return root_; }
  const ServiceConfig& config() const { return config_; }
  const Providers& providers() const { return providers_; }

  /// Adds labeled revisions (e.g. weak-labeled or synthetic) and their
  /// embeddings. Existing ids raise Validation.
  void add_labeled(std::span<const Revision> revisions);

  /// Stores the contract, embeds its revisions under review and flags them
  /// with the serving model. Throws Conflict on a duplicate contract id and
  /// PreconditionViolation when no model is serving.
  IngestResult ingest(Contract contract);

  /// Stores a reference contract (e.g. a weak-labeled negotiated one)
  /// without classifying it. Throws Conflict on a duplicate id.
  void store_contract(const Contract& contract);

  std::optional<Contract> contract(const std::string& id) const;
  std::vector<std::string> contract_ids() const;
  std::optional<Revision> revision(const std::string& id) const;
  std::vector<Revision> revisions() const;
  std::vector<Revision> labeled_revisions() const;
  std::size_t labeled_count() const;

  /// Flags of one contract in queue order. Throws NotFound.
  std::vector<FlagRecord> flags(const std::string& contract_id) const;
  std::optional<FlagRecord> flag(const std::string& revision_id) const;

  /// Runs best-of-N optimization and marks the flag Optimized. Throws
  /// NotFound for an unknown revision.
  optimizer::OptimizationResult optimize(const std::string& revision_id,
                                         std::optional<optimizer::OptimizationConfig> config = std::nullopt);
  std::optional<optimizer::OptimizationResult> last_optimization(const std::string& revision_id) const;

  /// Records a decision durably. Accept (with an optional candidate index)
  /// and Edit append an Acceptable Negotiated revision. Throws NotFound,
  /// Conflict (already Decided without force) or Validation.
  ReviewDecision decide(ReviewDecision decision, const DecisionOptions& options = {});
  std::vector<ReviewDecision> decisions() const;

  /// Trains a new model version on the labeled store when at least
  /// retrain_min_decisions decisions arrived since the serving version
  /// (or when forced), then swaps it in.
  RetrainResult retrain_snapshot(bool force = false);

  std::shared_ptr<const classifier::EnsembleModel> model() const;
  std::uint64_t model_version() const;
  std::vector<std::uint64_t> model_versions() const;

  embedding::EmbeddingVector embed(const std::string& text) const;
  classifier::Prediction classify_text(const std::string& text) const;

  /// Embedding store snapshot for read-only tools.
  const embedding::VectorStore& store() const { return store_; }

 private:
  Workspace(std::filesystem::path root, ServiceConfig config, Providers providers);
  void load();
  void persist_revision(const Revision& r, const embedding::EmbeddingVector& v);
  void write_flags() const;
  void install_model(std::shared_ptr<const classifier::EnsembleModel> model, std::size_t decision_mark);
  std::filesystem::path path(const std::string& name) const { return root_ / name; }

  std::filesystem::path root_;
  ServiceConfig config_;
  Providers providers_;

  mutable std::shared_mutex mu_;
  std::map<std::string, Contract> contracts_;
  RevisionTable revisions_;
  embedding::VectorStore store_;
  std::map<std::string, FlagRecord> flags_;
  std::map<std::string, optimizer::OptimizationResult> optimizations_;
  std::vector<ReviewDecision> decisions_;

  mutable std::mutex model_mu_;
  std::shared_ptr<const classifier::EnsembleModel> model_;
  std::size_t decision_mark_ = 0;  // decisions seen when the serving model was trained
  std::mutex retrain_mu_;
};

// ---------------------------------------------------------------------------
// Durable file helpers

/// Appends one line and fsyncs before returning.
void append_line_durable(const std::filesystem::path& path, const std::string& line);
/// Writes to a temporary sibling, fsyncs and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
/// Parses each complete JSON line; a torn final line is ignored.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

}  // namespace revkit::service
