#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "revkit/classifier.hpp"
#include "revkit/embedding.hpp"
#include "revkit/llm.hpp"
#include "revkit/retrieval.hpp"
#include "revkit/types.hpp"

namespace revkit::optimizer {

struct OptimizationConfig {
  int n_demonstrations = 5;
  int best_of_n = 4;
  llm::SamplingConfig sampling;
  bool include_related_clauses = true;
  double related_threshold = retrieval::kDefaultDependencyThreshold;
  std::uint64_t seed = 0;
  std::size_t in_flight = 1;
};

void validate(const OptimizationConfig& config);

/// A provision with an unacceptable revision and its acceptable counterpart.
/// The unacceptable member is the similarity key.
struct Triple {
  std::string key_id;       // id of the unacceptable revision
  std::string partner_id;   // id of the acceptable revision
  std::string provision_number;
  std::string provision_text;
  std::string unacceptable;
  std::string acceptable;
  embedding::EmbeddingVector key_vector;
};

/// Provision text shown in a demonstration block for a revision.
using ProvisionTextFn = std::function<std::string(const Revision&)>;

/// Synthetic revisions pair by pair_id. Every other unacceptable revision is
/// paired with the most cosine-similar acceptable revision of the same
/// provision (ties: lowest id). Revisions without a stored vector are skipped.
std::vector<Triple> build_triples(const RevisionTable& revisions, const embedding::VectorStore& store,
                                  const ProvisionTextFn& provision_text = {});

/// Top-n triples by cosine between the query and each key (ties: key id),
/// skipping triples that contain `exclude_id`. Throws
/// InsufficientDemonstrations when fewer than n remain.
std::vector<Triple> select_demonstrations(std::span<const Triple> triples,
                                          const embedding::EmbeddingVector& query_vec, std::size_t n,
                                          const std::string& exclude_id = {});

std::string build_optimization_prompt(std::span<const Triple> demos, std::span<const std::string> related_clauses,
                                      std::string_view query_text);

/// Strips an echoed "Optimized Unacceptable Version:" cue. Throws
/// MalformedLLMOutput on an empty reply.
std::string parse_candidate(std::string_view reply);

struct ScoredCandidate {
  std::string text;
  double reward = 0.0;
};

struct OptimizationResult {
  std::string source_revision_id;
  double source_reward = 0.0;
  std::vector<ScoredCandidate> candidates;
  int chosen_index = 0;
  std::string prompt_fingerprint;
  std::size_t malformed = 0;

  const ScoredCandidate& chosen() const { return candidates.at(static_cast<std::size_t>(chosen_index)); }
};

/// Index of the highest reward, lowest index on ties.
int argmax_reward(std::span<const ScoredCandidate> candidates);

struct Context {
  llm::LlmClient& llm;
  const classifier::EnsembleModel& model;
  embedding::EmbeddingProvider& embedder;
  std::span<const Triple> triples;
  const Contract* contract = nullptr;
  retrieval::PairScorer* related_scorer = nullptr;
};

/// Renders one prompt, samples best_of_n replies with sub-seeds
/// mix_seed(seed, i), drops malformed ones and scores the rest by
/// P(acceptable). Throws AllCandidatesMalformed when nothing parses.
OptimizationResult optimize(const Context& ctx, const Revision& revision, const OptimizationConfig& config);

/// Context block for a revision: texts of provisions related to its own.
std::vector<std::string> related_clause_texts(const Context& ctx, const Revision& revision,
                                              const OptimizationConfig& config);

struct BatchError {
  std::string revision_id;
  std::string code;
  std::string message;
};

struct BatchReport {
  std::string contract_id;
  std::vector<OptimizationResult> results;
  std::vector<BatchError> errors;
  // Share of flagged revisions labeled Acceptable before and after; a
  // revision whose optimization failed keeps its original label.
  std::optional<double> success_rate_before;
  std::optional<double> success_rate_after;
};

/// Optimizes every revision independently in id order. Per-revision failures
/// other than ProviderUnavailable are collected in `errors`.
BatchReport batch_optimize(const Context& ctx, std::string contract_id, std::span<const Revision> flagged,
                           const OptimizationConfig& config);

void to_json(nlohmann::json& j, const OptimizationConfig& c);
void from_json(const nlohmann::json& j, OptimizationConfig& c);
void to_json(nlohmann::json& j, const ScoredCandidate& c);
void to_json(nlohmann::json& j, const OptimizationResult& r);
void to_json(nlohmann::json& j, const BatchReport& r);

}  // namespace revkit::optimizer
