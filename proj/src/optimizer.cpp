#include "revkit/optimizer.hpp"

#include <algorithm>
#include <cctype>
#include <future>
#include <map>

#include "revkit/codec.hpp"
#include "revkit/corpus.hpp"
#include "revkit/error.hpp"

namespace revkit::optimizer {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

double safe_cosine(const embedding::EmbeddingVector& a, const embedding::EmbeddingVector& b) {
  try {
    return embedding::cosine(a, b);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ZeroVector) throw;
    return 0.0;
  }
}

double reward_of(const classifier::EnsembleModel& model, const embedding::EmbeddingVector& v) {
  return classifier::predict(model, v).probability_acceptable;
}

}  // namespace

void validate(const OptimizationConfig& config) {
  if (config.best_of_n < 1) throw Error(ErrorCode::Validation, "best_of_n must be at least 1");
  if (config.n_demonstrations < 1) throw Error(ErrorCode::Validation, "n_demonstrations must be at least 1");
  if (config.related_threshold < 0.0 || config.related_threshold > 1.0)
    throw Error(ErrorCode::Validation, "related_threshold must lie in [0, 1]");
}

std::vector<Triple> build_triples(const RevisionTable& revisions, const embedding::VectorStore& store,
                                  const ProvisionTextFn& provision_text) {
  auto text_for = [&](const Revision& r) {
    return provision_text ? provision_text(r) : "Provision " + r.provision_number;
  };
  std::map<std::string, const Revision*> synthetic_acceptable;
  std::map<std::string, std::vector<const Revision*>> real_acceptable;
  for (const Revision& r : revisions.all()) {
    if (r.label != Label::Acceptable) continue;
    if (r.source == Source::Synthetic && r.pair_id) synthetic_acceptable.emplace(*r.pair_id, &r);
    else if (r.source != Source::Synthetic) real_acceptable[r.provision_number].push_back(&r);
  }

  std::vector<Triple> out;
  for (const Revision& r : revisions.all()) {
    if (r.label != Label::Unacceptable) continue;
    const auto key = store.find(r.id);
    if (!key) continue;
    const Revision* partner = nullptr;
    if (r.source == Source::Synthetic) {
      if (!r.pair_id) continue;
      const auto it = synthetic_acceptable.find(*r.pair_id);
      if (it != synthetic_acceptable.end()) partner = it->second;
    } else if (const auto it = real_acceptable.find(r.provision_number); it != real_acceptable.end()) {
      double best = -2.0;
      for (const Revision* cand : it->second) {
        const auto v = store.find(cand->id);
        if (!v) continue;
        const double s = safe_cosine(key->vector, v->vector);
        if (s > best || (s == best && partner && cand->id < partner->id)) {
          best = s;
          partner = cand;
        }
      }
    }
    if (!partner) continue;
    out.push_back(Triple{r.id, partner->id, r.provision_number, text_for(r), r.text, partner->text, key->vector});
  }
  return out;
}

std::vector<Triple> select_demonstrations(std::span<const Triple> triples,
                                          const embedding::EmbeddingVector& query_vec, std::size_t n,
                                          const std::string& exclude_id) {
  std::vector<std::pair<double, const Triple*>> ranked;
  for (const Triple& t : triples) {
    if (!exclude_id.empty() && (t.key_id == exclude_id || t.partner_id == exclude_id)) continue;
    ranked.emplace_back(safe_cosine(query_vec, t.key_vector), &t);
  }
  if (ranked.size() < n)
    throw Error(ErrorCode::InsufficientDemonstrations, "need " + std::to_string(n) + " demonstration triples, have " +
                                                           std::to_string(ranked.size()));
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second->key_id < b.second->key_id;
  });
  std::vector<Triple> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(*ranked[i].second);
  return out;
}

std::string build_optimization_prompt(std::span<const Triple> demos, std::span<const std::string> related_clauses,
                                      std::string_view query_text) {
  if (demos.empty()) throw Error(ErrorCode::PreconditionViolation, "at least one demonstration is required");
  std::string prompt =
      "Use the following examples of provisions and their revisions to learn how to transform unacceptable "
      "revisions into acceptable ones. Then, provide revised versions for the given query unacceptable revision. "
      "You are also provided with clauses from the same contract that may be contextually relevant to the query. "
      "Incorporate their meaning and constraints when rewriting.\n";
  for (std::size_t i = 0; i < demos.size(); ++i) {
    prompt += "\nDemonstration " + std::to_string(i + 1) + "\n";
    prompt += "Provision: " + demos[i].provision_text + "\n";
    prompt += "Unacceptable revision: " + demos[i].unacceptable + "\n";
    prompt += "Acceptable revision: " + demos[i].acceptable + "\n";
  }
  if (!related_clauses.empty()) {
    prompt += "\nRelated Clauses (from current contract):\n";
    for (const auto& clause : related_clauses) prompt += "Related clause: " + clause + "\n";
  }
  prompt += "\nQuery Unacceptable Revision: " + std::string(query_text) + "\n";
  prompt += "Optimized Unacceptable Version:";
  return prompt;
}

std::string parse_candidate(std::string_view reply) {
  static constexpr std::string_view kCue = "optimized unacceptable version:";
  std::string text = trim(reply);
  std::string low(text);
  std::transform(low.begin(), low.end(), low.begin(), [](unsigned char c) { return std::tolower(c); });
  if (const auto pos = low.find(kCue); pos != std::string::npos) text = trim(std::string_view(text).substr(pos + kCue.size()));
  while (text.rfind("**", 0) == 0) text = trim(std::string_view(text).substr(2));
  if (text.empty()) throw Error(ErrorCode::MalformedLLMOutput, "empty candidate");
  return text;
}

int argmax_reward(std::span<const ScoredCandidate> candidates) {
  if (candidates.empty()) throw Error(ErrorCode::PreconditionViolation, "no candidates");
  int best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i)
    if (candidates[i].reward > candidates[static_cast<std::size_t>(best)].reward) best = static_cast<int>(i);
  return best;
}

std::vector<std::string> related_clause_texts(const Context& ctx, const Revision& revision,
                                              const OptimizationConfig& config) {
  std::vector<std::string> out;
  if (!config.include_related_clauses || !ctx.contract || !ctx.related_scorer) return out;
  const Provision* target = ctx.contract->find(revision.provision_number);
  if (!target) return out;
  for (const auto& dep : retrieval::related_clauses(*ctx.related_scorer, *ctx.contract, *target, config.related_threshold)) {
    const Provision* p = ctx.contract->find(dep.target_number);
    if (p) out.push_back(corpus::normalize_whitespace(p->text));
  }
  return out;
}

OptimizationResult optimize(const Context& ctx, const Revision& revision, const OptimizationConfig& config) {
  validate(config);
  const auto query_vec = embedding::embed_text(ctx.embedder, revision.text);
  const auto demos = select_demonstrations(ctx.triples, query_vec, static_cast<std::size_t>(config.n_demonstrations),
                                           revision.id);
  const auto related = related_clause_texts(ctx, revision, config);
  const std::string prompt = build_optimization_prompt(demos, related, revision.text);

  OptimizationResult result;
  result.source_revision_id = revision.id;
  result.source_reward = reward_of(ctx.model, query_vec);
  result.prompt_fingerprint = sha256_hex(prompt);

  const auto n = static_cast<std::size_t>(config.best_of_n);
  std::vector<std::optional<std::string>> replies(n);
  auto sample = [&](std::size_t i) {
    const std::string reply = ctx.llm.complete(llm::user_prompt(prompt, config.sampling, mix_seed(config.seed, i)));
    try {
      replies[i] = parse_candidate(reply);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MalformedLLMOutput) throw;
    }
  };
  const std::size_t width = std::max<std::size_t>(1, config.in_flight);
  for (std::size_t start = 0; start < n; start += width) {
    const std::size_t end = std::min(n, start + width);
    if (width == 1) {
      sample(start);
      continue;
    }
    std::vector<std::future<void>> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(std::async(std::launch::async, sample, i));
    for (auto& f : batch) f.get();
  }

  std::vector<std::string> texts;
  for (const auto& r : replies) {
    if (r) texts.push_back(*r);
    else ++result.malformed;
  }
  if (texts.empty())
    throw Error(ErrorCode::AllCandidatesMalformed, "all " + std::to_string(n) + " candidates were malformed");
  const auto vecs = embedding::embed_texts(ctx.embedder, texts);
  for (std::size_t i = 0; i < texts.size(); ++i) result.candidates.push_back({texts[i], reward_of(ctx.model, vecs[i])});
  result.chosen_index = argmax_reward(result.candidates);
  return result;
}

BatchReport batch_optimize(const Context& ctx, std::string contract_id, std::span<const Revision> flagged,
                           const OptimizationConfig& config) {
  BatchReport report;
  report.contract_id = std::move(contract_id);
  std::vector<const Revision*> ordered;
  for (const auto& r : flagged) ordered.push_back(&r);
  std::sort(ordered.begin(), ordered.end(), [](const Revision* a, const Revision* b) { return a->id < b->id; });

  std::size_t before = 0, after = 0;
  for (const Revision* r : ordered) {
    const bool was_ok = classifier::predict(ctx.model, embedding::embed_text(ctx.embedder, r->text)).label == Label::Acceptable;
    if (was_ok) ++before;
    try {
      OptimizationResult res = optimize(ctx, *r, config);
      if (res.chosen().reward >= classifier::kDecisionThreshold) ++after;
      report.results.push_back(std::move(res));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ProviderUnavailable) throw;
      report.errors.push_back({r->id, std::string(to_string(e.code())), e.what()});
      if (was_ok) ++after;
    }
  }
  if (!ordered.empty()) {
    report.success_rate_before = static_cast<double>(before) / static_cast<double>(ordered.size());
    report.success_rate_after = static_cast<double>(after) / static_cast<double>(ordered.size());
  }
  return report;
}

void to_json(nlohmann::json& j, const OptimizationConfig& c) {
  j = {{"n_demonstrations", c.n_demonstrations},
       {"best_of_n", c.best_of_n},
       {"temperature", c.sampling.temperature},
       {"top_p", c.sampling.top_p},
       {"top_k_sampling", c.sampling.top_k},
       {"max_new_tokens", c.sampling.max_new_tokens},
       {"include_related_clauses", c.include_related_clauses},
       {"related_threshold", c.related_threshold},
       {"seed", c.seed},
       {"in_flight", c.in_flight}};
}

void from_json(const nlohmann::json& j, OptimizationConfig& c) {
  const OptimizationConfig d;
  c.n_demonstrations = j.value("n_demonstrations", d.n_demonstrations);
  c.best_of_n = j.value("best_of_n", d.best_of_n);
  c.sampling.temperature = j.value("temperature", d.sampling.temperature);
  c.sampling.top_p = j.value("top_p", d.sampling.top_p);
  c.sampling.top_k = j.value("top_k_sampling", d.sampling.top_k);
  c.sampling.max_new_tokens = j.value("max_new_tokens", d.sampling.max_new_tokens);
  c.include_related_clauses = j.value("include_related_clauses", d.include_related_clauses);
  c.related_threshold = j.value("related_threshold", d.related_threshold);
  c.seed = j.value("seed", d.seed);
  c.in_flight = j.value("in_flight", d.in_flight);
}

void to_json(nlohmann::json& j, const ScoredCandidate& c) { j = {{"text", c.text}, {"reward", c.reward}}; }

void to_json(nlohmann::json& j, const OptimizationResult& r) {
  j = {{"source_revision_id", r.source_revision_id},
       {"source_reward", r.source_reward},
       {"candidates", r.candidates},
       {"chosen_index", r.chosen_index},
       {"prompt_fingerprint", r.prompt_fingerprint},
       {"malformed", r.malformed}};
}

void to_json(nlohmann::json& j, const BatchReport& r) {
  nlohmann::json errors = nlohmann::json::array();
  for (const auto& e : r.errors) errors.push_back({{"revision_id", e.revision_id}, {"code", e.code}, {"message", e.message}});
  j = {{"contract_id", r.contract_id},
       {"results", r.results},
       {"errors", errors},
       {"success_rate_before", r.success_rate_before ? nlohmann::json(*r.success_rate_before) : nlohmann::json(nullptr)},
       {"success_rate_after", r.success_rate_after ? nlohmann::json(*r.success_rate_after) : nlohmann::json(nullptr)}};
}

}  // namespace revkit::optimizer
