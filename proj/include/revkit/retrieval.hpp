#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "revkit/embedding.hpp"
#include "revkit/llm.hpp"
#include "revkit/types.hpp"

namespace revkit::retrieval {

inline constexpr std::size_t kDefaultRetrievalDepth = 10;
inline constexpr std::size_t kDefaultRerankKeep = 5;
inline constexpr double kDefaultDependencyThreshold = 0.5;

struct Candidate {
  std::string revision_id;
  std::string text;
  std::string provision_number;
  Label label = Label::Unlabeled;
  double retrieval_score = 0.0;
  std::optional<double> rerank_score;
};

// ---------------------------------------------------------------------------
// Pair scorers (cross-encoder stand-ins)

class PairScorer {
 public:
  virtual ~PairScorer() = default;
  /// One relevance score in [0, 1] per text, in order.
  virtual std::vector<double> score(std::string_view query, std::span<const std::string> texts) = 0;
};

/// Cosine of provider embeddings, clamped to [0, 1].
class EmbeddingScorer final : public PairScorer {
 public:
  explicit EmbeddingScorer(embedding::EmbeddingProvider& provider) : provider_(provider) {}
  std::vector<double> score(std::string_view query, std::span<const std::string> texts) override;

 private:
  embedding::EmbeddingProvider& provider_;
};

/// Remote scorer: POST {query, texts:[...]} and read {scores:[...]}.
class HttpScorer final : public PairScorer {
 public:
  explicit HttpScorer(Endpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::vector<double> score(std::string_view query, std::span<const std::string> texts) override;

 private:
  Endpoint endpoint_;
};

class FunctionScorer final : public PairScorer {
 public:
  using Fn = std::function<double(std::string_view query, std::string_view text)>;
  explicit FunctionScorer(Fn fn) : fn_(std::move(fn)) {}
  std::vector<double> score(std::string_view query, std::span<const std::string> texts) override;

 private:
  Fn fn_;
};

// ---------------------------------------------------------------------------
// Precedent retrieval and reranking

/// Cosine top-k over the store, never returning the query's own id.
std::vector<Candidate> retrieve_precedents(const embedding::VectorStore& store,
                                           const RevisionTable& revisions, const Revision& query,
                                           const embedding::EmbeddingVector& query_vec,
                                           std::size_t top_k = kDefaultRetrievalDepth);

/// Reorders by descending scorer output (ties: ascending id) and keeps the
/// first `keep`. Scorer failures propagate; there is no silent fallback.
std::vector<Candidate> rerank(PairScorer& scorer, std::string_view query,
                              std::vector<Candidate> candidates, std::size_t keep);

// ---------------------------------------------------------------------------
// Graded training pairs

struct ScoredPair {
  std::string text_a;
  std::string text_b;
  double label = 0.0;
};

inline constexpr double kParaphraseLabel = 1.0;
inline constexpr double kSameProvisionAcceptableLabel = 0.5;
inline constexpr double kSameProvisionMixedLabel = 0.3;
inline constexpr double kUnrelatedLabel = 0.0;

/// Soft label for two distinct, non-paraphrase revisions; nullopt when the
/// pair falls in none of the graded classes (e.g. two unacceptable ones).
std::optional<double> graded_label(const Revision& a, const Revision& b);

struct GradedPairConfig {
  // Pairs drawn per class; 0 means "as many as the smallest class holds".
  std::size_t per_class = 0;
  std::uint64_t seed = 0;
};

/// Builds a class-balanced set of graded pairs. `paraphrases` maps a
/// revision id to a paraphrase of its text. Throws InsufficientData when a
/// class has no candidate pair.
std::vector<ScoredPair> build_graded_pairs(std::span<const Revision> revisions,
                                           const std::unordered_map<std::string, std::string>& paraphrases,
                                           const GradedPairConfig& config = {});

void write_graded_pairs_jsonl(std::span<const ScoredPair> pairs, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Intra-contract clause dependencies

struct DependencyEvidence {
  std::vector<std::string> keywords;
  std::vector<std::string> key_phrases;
  std::vector<std::string> references;
};

struct ClauseDependency {
  std::string source_number;
  std::string target_number;
  double score = 0.0;
  bool explicit_reference = false;
  DependencyEvidence evidence;
};

std::string build_dependency_prompt(const Contract& contract, const Provision& target);

/// Parses the first JSON object in the reply. Throws MalformedLLMOutput.
DependencyEvidence parse_dependency_evidence(std::string_view reply);

/// Prompts once and retries once on an unparseable reply.
DependencyEvidence extract_clause_dependencies(llm::LlmClient& llm, const Contract& contract,
                                               const Provision& target,
                                               const llm::SamplingConfig& sampling = {});

/// Provision numbers (other than the target) named by the evidence references.
std::vector<std::string> referenced_provisions(const DependencyEvidence& evidence,
                                               const Contract& contract, const Provision& target);

/// Scores the target against every other provision and keeps those at or
/// above `threshold`, plus any provision the evidence explicitly references.
/// Sorted by descending score, then provision number.
std::vector<ClauseDependency> related_clauses(PairScorer& scorer, const Contract& contract,
                                              const Provision& target,
                                              double threshold = kDefaultDependencyThreshold,
                                              const DependencyEvidence* evidence = nullptr);

/// Orders dotted provision numbers numerically ("2" < "10", "7" < "7.1").
bool provision_number_less(std::string_view a, std::string_view b);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalQuery {
  std::string query_text;
  embedding::EmbeddingVector vector;
  std::string gold_id;
  // Excluded from the ranking, e.g. the query's own stored record.
  std::string exclude_id;
};

struct RerankStage {
  PairScorer* scorer = nullptr;
  const RevisionTable* texts = nullptr;
  std::size_t depth = kDefaultRetrievalDepth;
};

struct RetrievalMetrics {
  std::size_t queries = 0;
  double provision_accuracy = 0.0;
  std::map<int, double> top_k_accuracy;
};

/// Top-k accuracy: fraction of queries whose gold id appears in the first k
/// results. Provision accuracy: fraction whose rank-1 hit shares the gold's
/// provision number. Throws UnknownGoldId when a gold id is not stored.
RetrievalMetrics evaluate_retrieval(const embedding::VectorStore& store,
                                    std::span<const EvalQuery> queries, std::span<const int> ks,
                                    const std::optional<RerankStage>& rerank_stage = std::nullopt);

void to_json(nlohmann::json& j, const Candidate& c);
void to_json(nlohmann::json& j, const DependencyEvidence& e);
void to_json(nlohmann::json& j, const ClauseDependency& d);
void to_json(nlohmann::json& j, const RetrievalMetrics& m);

}  // namespace revkit::retrieval
