#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "revkit/embedding.hpp"
#include "revkit/llm.hpp"
#include "revkit/types.hpp"

namespace revkit::synthgen {

struct GenerationConfig {
  int n_demonstrations = 3;
  llm::SamplingConfig sampling;  // temperature 0.8, top-p 0.9, top-k 50, 8192 new tokens
  std::uint64_t seed = 0;
  std::size_t attempts_per_provision = 1;
  std::size_t knn_k = 20;
  std::size_t in_flight = 1;
};

/// A provision with one acceptable and one unacceptable revision of it.
struct DemoTriple {
  std::string provision_number;
  std::string provision_text;
  std::string acceptable;
  std::string unacceptable;
};

struct SyntheticPair {
  std::string provision_number;
  std::string acceptable_text;
  std::string unacceptable_text;
  std::string prompt_fingerprint;
};

std::string build_synthetic_prompt(std::span<const DemoTriple> demos, const Provision& query);

/// Extracts the "Acceptable revision:" and "Unacceptable revision:" sections
/// in either order. Throws MalformedLLMOutput if one is missing, empty, or
/// both are identical.
SyntheticPair parse_pair(std::string_view reply);

std::string build_rephrase_prompt(const Revision& revision);

/// Strips an echoed "Rephrased Revision:" cue. Throws MalformedLLMOutput on
/// an empty reply.
std::string parse_rephrase(std::string_view reply);

enum class FilterDecision { Keep, Discard };
std::string_view to_string(FilterDecision d);

/// Keeps a candidate only when a strict majority of its k nearest labeled
/// records (L2, ties by id) share its label. Throws EmptyStore.
FilterDecision knn_filter(const embedding::EmbeddingVector& candidate, Label label,
                          const embedding::VectorStore& real_store, std::size_t k = 20);

/// Draws `n` demonstrations without replacement, including one from the
/// query's provision family (same leading number) when one exists.
std::vector<DemoTriple> sample_demonstrations(std::span<const DemoTriple> pool, const Provision& query,
                                              std::size_t n, std::uint64_t seed);

struct GenerationReport {
  std::vector<Revision> kept;
  std::size_t attempted = 0;
  std::size_t discarded_count = 0;  // revisions rejected by the kNN filter
  std::size_t malformed_count = 0;  // replies that did not parse
  std::size_t provider_errors = 0;  // non-transport provider failures
  nlohmann::json manifest;
};

struct GenerationOptions {
  // Fixed creation timestamp for reproducible output; empty means now.
  std::string created_at;
  std::string id_prefix = "syn";
};

/// Runs attempts_per_provision prompts per query provision. Each parsed pair
/// yields two revisions, filtered independently against `real_store`
/// (nullptr disables filtering). Only ProviderUnavailable aborts the run.
GenerationReport generate_dataset(llm::LlmClient& llm, embedding::EmbeddingProvider& embedder,
                                  std::span<const Provision> provisions, std::span<const DemoTriple> demos_source,
                                  const GenerationConfig& config, const embedding::VectorStore* real_store,
                                  const GenerationOptions& options = {});

void write_dataset(const GenerationReport& report, const std::filesystem::path& jsonl,
                   const std::filesystem::path& manifest);

/// Paraphrases each revision. The result carries source Paraphrase, the
/// original label and id "<id>-para".
std::vector<Revision> generate_paraphrases(llm::LlmClient& llm, std::span<const Revision> revisions,
                                           const llm::SamplingConfig& sampling, std::uint64_t seed,
                                           std::size_t* malformed = nullptr);

void to_json(nlohmann::json& j, const GenerationConfig& c);
void from_json(const nlohmann::json& j, GenerationConfig& c);
void to_json(nlohmann::json& j, const DemoTriple& d);
void from_json(const nlohmann::json& j, DemoTriple& d);

}  // namespace revkit::synthgen
