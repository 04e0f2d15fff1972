#include "revkit/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <regex>
#include <set>

#include "revkit/corpus.hpp"
#include "revkit/error.hpp"

namespace revkit::retrieval {

using embedding::EmbeddingVector;
using embedding::Metric;
using embedding::VectorStore;

// --- scorers ------------------------------------------------------------------

std::vector<double> EmbeddingScorer::score(std::string_view query, std::span<const std::string> texts) {
  std::vector<std::string> batch;
  batch.reserve(texts.size() + 1);
  batch.emplace_back(query);
  batch.insert(batch.end(), texts.begin(), texts.end());
  const auto vecs = embedding::embed_texts(provider_, batch);

  std::vector<double> out;
  out.reserve(texts.size());
  for (std::size_t i = 1; i < vecs.size(); ++i) {
    const double qn = vecs[0].values.norm(), tn = vecs[i].values.norm();
    out.push_back(qn == 0 || tn == 0 ? 0.0 : std::clamp(embedding::cosine(vecs[0], vecs[i]), 0.0, 1.0));
  }
  return out;
}

std::vector<double> HttpScorer::score(std::string_view query, std::span<const std::string> texts) {
  const nlohmann::json body = {{"query", query},
                               {"texts", std::vector<std::string>(texts.begin(), texts.end())}};
  const nlohmann::json reply =
      post_json(endpoint_, body, ErrorCode::ScorerUnavailable, ErrorCode::ScorerUnavailable);
  std::vector<double> scores;
  try {
    scores = reply.at("scores").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ScorerUnavailable, std::string("malformed scorer reply: ") + e.what());
  }
  if (scores.size() != texts.size())
    throw Error(ErrorCode::ScorerUnavailable, "scorer returned " + std::to_string(scores.size()) +
                                                  " scores for " + std::to_string(texts.size()) + " texts");
  for (double s : scores)
    if (!(s >= 0.0 && s <= 1.0))
      throw Error(ErrorCode::ScorerUnavailable, "scorer returned a score outside [0, 1]");
  return scores;
}

std::vector<double> FunctionScorer::score(std::string_view query, std::span<const std::string> texts) {
  std::vector<double> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(fn_(query, t));
  return out;
}

// --- retrieval ----------------------------------------------------------------

std::vector<Candidate> retrieve_precedents(const VectorStore& store, const RevisionTable& revisions,
                                           const Revision& query, const EmbeddingVector& query_vec,
                                           std::size_t top_k) {
  if (!store.empty() && query_vec.model_id != store.model_id())
    throw Error(ErrorCode::Validation, "query embedded with " + query_vec.model_id +
                                           ", store uses " + store.model_id());
  const auto hits = store.query(query_vec, Metric::Cosine, top_k,
                                [&](const embedding::EmbeddingRecord& r) { return r.revision_id != query.id; });
  std::vector<Candidate> out;
  out.reserve(hits.size());
  for (const auto& h : hits) {
    const Revision* rev = revisions.find(h.record.revision_id);
    out.push_back({h.record.revision_id, rev ? rev->text : std::string{}, h.record.provision_number,
                   h.record.label, h.score, std::nullopt});
  }
  return out;
}

std::vector<Candidate> rerank(PairScorer& scorer, std::string_view query,
                              std::vector<Candidate> candidates, std::size_t keep) {
  if (candidates.empty()) throw Error(ErrorCode::PreconditionViolation, "nothing to rerank");
  if (keep == 0 || keep > candidates.size())
    throw Error(ErrorCode::PreconditionViolation, "keep must be in [1, " +
                                                      std::to_string(candidates.size()) + "]");
  std::vector<std::string> texts;
  texts.reserve(candidates.size());
  for (const auto& c : candidates) texts.push_back(c.text);
  const auto scores = scorer.score(query, texts);
  if (scores.size() != candidates.size())
    throw Error(ErrorCode::ScorerUnavailable, "scorer returned the wrong number of scores");
  for (std::size_t i = 0; i < candidates.size(); ++i) candidates[i].rerank_score = scores[i];

  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (*a.rerank_score != *b.rerank_score) return *a.rerank_score > *b.rerank_score;
    return a.revision_id < b.revision_id;
  });
  candidates.resize(keep);
  return candidates;
}

// --- graded pairs -------------------------------------------------------------

std::optional<double> graded_label(const Revision& a, const Revision& b) {
  if (a.provision_number != b.provision_number) return kUnrelatedLabel;
  const bool a_ok = a.label == Label::Acceptable, b_ok = b.label == Label::Acceptable;
  const bool a_bad = a.label == Label::Unacceptable, b_bad = b.label == Label::Unacceptable;
  if (a_ok && b_ok) return kSameProvisionAcceptableLabel;
  if ((a_ok && b_bad) || (a_bad && b_ok)) return kSameProvisionMixedLabel;
  return std::nullopt;
}

namespace {

using IndexPair = std::pair<std::uint32_t, std::uint32_t>;

// First `count` elements of a seeded Fisher-Yates shuffle.
template <typename T>
void take_sample(std::vector<T>& items, std::size_t count, std::mt19937_64& rng) {
  count = std::min(count, items.size());
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (items.size() - i));
    std::swap(items[i], items[j]);
  }
  items.resize(count);
}

}  // namespace

std::vector<ScoredPair> build_graded_pairs(std::span<const Revision> revisions,
                                           const std::unordered_map<std::string, std::string>& paraphrases,
                                           const GradedPairConfig& config) {
  std::mt19937_64 rng(config.seed);

  std::vector<ScoredPair> paraphrase_pairs;
  for (const auto& r : revisions)
    if (auto it = paraphrases.find(r.id); it != paraphrases.end())
      paraphrase_pairs.push_back({r.text, it->second, kParaphraseLabel});

  std::vector<IndexPair> same_ok, same_mixed;
  std::size_t unrelated_available = 0;
  std::map<std::string, std::vector<std::uint32_t>> by_provision;
  for (std::uint32_t i = 0; i < revisions.size(); ++i)
    by_provision[revisions[i].provision_number].push_back(i);
  for (const auto& [number, members] : by_provision) {
    unrelated_available += members.size() * (revisions.size() - members.size());
    for (std::size_t x = 0; x < members.size(); ++x)
      for (std::size_t y = x + 1; y < members.size(); ++y) {
        const auto label = graded_label(revisions[members[x]], revisions[members[y]]);
        if (!label) continue;
        (*label == kSameProvisionAcceptableLabel ? same_ok : same_mixed).push_back({members[x], members[y]});
      }
  }
  unrelated_available /= 2;

  auto require = [](std::size_t n, const char* what) {
    if (n == 0) throw Error(ErrorCode::InsufficientData, std::string("no candidate pairs for class ") + what);
  };
  require(paraphrase_pairs.size(), "1.0 (paraphrase)");
  require(same_ok.size(), "0.5 (same provision, both acceptable)");
  require(same_mixed.size(), "0.3 (same provision, mixed labels)");
  require(unrelated_available, "0.0 (different provisions)");

  std::size_t per_class = std::min({paraphrase_pairs.size(), same_ok.size(), same_mixed.size(), unrelated_available});
  if (config.per_class > 0) per_class = std::min(per_class, config.per_class);

  take_sample(paraphrase_pairs, per_class, rng);
  take_sample(same_ok, per_class, rng);
  take_sample(same_mixed, per_class, rng);

  // Cross-provision pairs are sampled by rejection rather than enumerated.
  std::vector<IndexPair> unrelated;
  std::set<IndexPair> seen;
  while (unrelated.size() < per_class) {
    auto a = static_cast<std::uint32_t>(rng() % revisions.size());
    auto b = static_cast<std::uint32_t>(rng() % revisions.size());
    if (a == b || revisions[a].provision_number == revisions[b].provision_number) continue;
    if (a > b) std::swap(a, b);
    if (seen.insert({a, b}).second) unrelated.push_back({a, b});
  }

  std::vector<ScoredPair> out = std::move(paraphrase_pairs);
  auto append = [&](const std::vector<IndexPair>& pairs, double label) {
    for (auto [a, b] : pairs) out.push_back({revisions[a].text, revisions[b].text, label});
  };
  append(same_ok, kSameProvisionAcceptableLabel);
  append(same_mixed, kSameProvisionMixedLabel);
  append(unrelated, kUnrelatedLabel);
  return out;
}

void write_graded_pairs_jsonl(std::span<const ScoredPair> pairs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  for (const auto& p : pairs)
    out << nlohmann::json{{"text_a", p.text_a}, {"text_b", p.text_b}, {"label", p.label}}.dump() << '\n';
  if (!out.flush()) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

// --- clause dependencies ------------------------------------------------------

std::string build_dependency_prompt(const Contract& contract, const Provision& target) {
  std::string prompt =
      "Given the contract text below, analyze the specified clause to extract:\n"
      "(1) The key terms and phrases that summarize its content.\n"
      "(2) Any explicit or implicit references to other clauses within the same contract "
      "(e.g. \"as described in Section 5\", \"subject to Clause 10\").\n"
      "Return the output in JSON format with the keys \"keywords\", \"key_phrases\", and "
      "\"references\". Do not modify the text of the clause.\n\n";
  prompt += "Full Contract:\n";
  prompt += corpus::render_plain_text(contract);
  if (prompt.back() != '\n') prompt += '\n';
  prompt += "\nTarget Clause:\n";
  prompt += target.number + ". " + target.title + "\n" + corpus::normalize_whitespace(target.text) + "\n";
  prompt +=
      "\nOutput:\n"
      "{\n"
      "  \"keywords\": [...],\n"
      "  \"key_phrases\": [...],\n"
      "  \"references\": [...]\n"
      "}\n";
  return prompt;
}

namespace {

std::vector<std::string> string_list(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return {};
  if (it->is_string()) return {it->get<std::string>()};
  if (!it->is_array()) throw Error(ErrorCode::MalformedLLMOutput, std::string("\"") + key + "\" is not a list");
  std::vector<std::string> out;
  for (const auto& v : *it) {
    if (v.is_string()) out.push_back(v.get<std::string>());
    else if (v.is_number()) out.push_back(v.dump());
    else throw Error(ErrorCode::MalformedLLMOutput, std::string("\"") + key + "\" holds a non-string");
  }
  return out;
}

}  // namespace

DependencyEvidence parse_dependency_evidence(std::string_view reply) {
  const auto obj = llm::extract_json_object(reply);
  if (!obj) throw Error(ErrorCode::MalformedLLMOutput, "reply contains no JSON object");
  if (!obj->contains("keywords") && !obj->contains("key_phrases") && !obj->contains("references"))
    throw Error(ErrorCode::MalformedLLMOutput, "JSON object lacks keywords/key_phrases/references");
  return {string_list(*obj, "keywords"), string_list(*obj, "key_phrases"), string_list(*obj, "references")};
}

DependencyEvidence extract_clause_dependencies(llm::LlmClient& llm, const Contract& contract,
                                               const Provision& target,
                                               const llm::SamplingConfig& sampling) {
  const auto request = llm::user_prompt(build_dependency_prompt(contract, target), sampling);
  try {
    return parse_dependency_evidence(llm.complete(request));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::MalformedLLMOutput) throw;
  }
  return parse_dependency_evidence(llm.complete(request));
}

std::vector<std::string> referenced_provisions(const DependencyEvidence& evidence,
                                               const Contract& contract, const Provision& target) {
  static const std::regex number_re(R"(\d+(?:\.\d+)*)");
  std::vector<std::string> out;
  for (const auto& ref : evidence.references) {
    for (std::sregex_iterator it(ref.begin(), ref.end(), number_re), end; it != end; ++it) {
      const std::string number = it->str();
      if (number == target.number || !contract.find(number)) continue;
      if (std::find(out.begin(), out.end(), number) == out.end()) out.push_back(number);
    }
  }
  return out;
}

bool provision_number_less(std::string_view a, std::string_view b) {
  auto parts = [](std::string_view s) {
    std::vector<long> v;
    std::size_t i = 0;
    while (i < s.size()) {
      std::size_t j = s.find('.', i);
      if (j == std::string_view::npos) j = s.size();
      long x = 0;
      for (std::size_t k = i; k < j; ++k)
        if (std::isdigit(static_cast<unsigned char>(s[k]))) x = x * 10 + (s[k] - '0');
      v.push_back(x);
      i = j + 1;
    }
    return v;
  };
  const auto pa = parts(a), pb = parts(b);
  if (pa != pb) return pa < pb;
  return a < b;
}

std::vector<ClauseDependency> related_clauses(PairScorer& scorer, const Contract& contract,
                                              const Provision& target, double threshold,
                                              const DependencyEvidence* evidence) {
  std::vector<const Provision*> others;
  for (const auto& p : contract.provisions)
    if (p.number != target.number) others.push_back(&p);
  if (others.empty()) return {};

  std::vector<std::string> texts;
  texts.reserve(others.size());
  for (const auto* p : others) texts.push_back(corpus::normalize_whitespace(p->text));
  const auto scores = scorer.score(corpus::normalize_whitespace(target.text), texts);
  if (scores.size() != others.size())
    throw Error(ErrorCode::ScorerUnavailable, "scorer returned the wrong number of scores");

  const std::vector<std::string> refs =
      evidence ? referenced_provisions(*evidence, contract, target) : std::vector<std::string>{};

  std::vector<ClauseDependency> out;
  for (std::size_t i = 0; i < others.size(); ++i) {
    const bool referenced = std::find(refs.begin(), refs.end(), others[i]->number) != refs.end();
    if (scores[i] < threshold && !referenced) continue;
    ClauseDependency d;
    d.source_number = target.number;
    d.target_number = others[i]->number;
    d.score = scores[i];
    d.explicit_reference = referenced;
    if (evidence) d.evidence = *evidence;
    out.push_back(std::move(d));
  }
  std::sort(out.begin(), out.end(), [](const ClauseDependency& a, const ClauseDependency& b) {
    if (a.score != b.score) return a.score > b.score;
    return provision_number_less(a.target_number, b.target_number);
  });
  return out;
}

// --- evaluation ---------------------------------------------------------------

RetrievalMetrics evaluate_retrieval(const VectorStore& store, std::span<const EvalQuery> queries,
                                    std::span<const int> ks, const std::optional<RerankStage>& stage) {
  if (store.empty()) throw Error(ErrorCode::EmptyStore, "vector store is empty");
  if (queries.empty()) throw Error(ErrorCode::PreconditionViolation, "no evaluation queries");
  if (ks.empty()) throw Error(ErrorCode::PreconditionViolation, "no cut-offs requested");
  for (int k : ks)
    if (k <= 0) throw Error(ErrorCode::PreconditionViolation, "cut-offs must be positive");
  if (stage && (!stage->scorer || !stage->texts || stage->depth == 0))
    throw Error(ErrorCode::PreconditionViolation, "incomplete rerank stage");

  const std::size_t max_k = static_cast<std::size_t>(*std::max_element(ks.begin(), ks.end()));
  const std::size_t depth = stage ? stage->depth : max_k;

  std::map<int, std::size_t> hits_at;
  std::size_t provision_hits = 0;
  for (const auto& q : queries) {
    const auto gold = store.find(q.gold_id);
    if (!gold) throw Error(ErrorCode::UnknownGoldId, "gold id " + q.gold_id + " is not in the store");

    const auto hits = store.query(q.vector, Metric::Cosine, depth, [&](const embedding::EmbeddingRecord& r) {
      return q.exclude_id.empty() || r.revision_id != q.exclude_id;
    });
    std::vector<std::string> ranked_ids;
    std::vector<std::string> ranked_provisions;
    if (stage) {
      std::vector<Candidate> candidates;
      for (const auto& h : hits)
        candidates.push_back({h.record.revision_id, stage->texts->at(h.record.revision_id).text,
                              h.record.provision_number, h.record.label, h.score, std::nullopt});
      const std::size_t keep = candidates.size();
      for (const auto& c : rerank(*stage->scorer, q.query_text, std::move(candidates), keep)) {
        ranked_ids.push_back(c.revision_id);
        ranked_provisions.push_back(c.provision_number);
      }
    } else {
      for (const auto& h : hits) {
        ranked_ids.push_back(h.record.revision_id);
        ranked_provisions.push_back(h.record.provision_number);
      }
    }

    if (!ranked_provisions.empty() && ranked_provisions.front() == gold->provision_number) ++provision_hits;
    const auto pos = std::find(ranked_ids.begin(), ranked_ids.end(), q.gold_id);
    const auto rank = static_cast<std::size_t>(pos - ranked_ids.begin());
    for (int k : ks)
      if (pos != ranked_ids.end() && rank < static_cast<std::size_t>(k)) ++hits_at[k];
  }

  RetrievalMetrics m;
  m.queries = queries.size();
  const double n = static_cast<double>(queries.size());
  m.provision_accuracy = static_cast<double>(provision_hits) / n;
  for (int k : ks) m.top_k_accuracy[k] = static_cast<double>(hits_at[k]) / n;
  return m;
}

void to_json(nlohmann::json& j, const Candidate& c) {
  j = {{"revision_id", c.revision_id},       {"text", c.text},
       {"provision_number", c.provision_number}, {"label", to_string(c.label)},
       {"retrieval_score", c.retrieval_score}};
  if (c.rerank_score) j["rerank_score"] = *c.rerank_score;
}

void to_json(nlohmann::json& j, const DependencyEvidence& e) {
  j = {{"keywords", e.keywords}, {"key_phrases", e.key_phrases}, {"references", e.references}};
}

void to_json(nlohmann::json& j, const ClauseDependency& d) {
  j = {{"source_number", d.source_number},
       {"target_number", d.target_number},
       {"score", d.score},
       {"explicit_reference", d.explicit_reference},
       {"evidence", d.evidence}};
}

void to_json(nlohmann::json& j, const RetrievalMetrics& m) {
  nlohmann::json topk = nlohmann::json::object();
  for (const auto& [k, v] : m.top_k_accuracy) topk[std::to_string(k)] = v;
  j = {{"queries", m.queries}, {"provision_accuracy", m.provision_accuracy}, {"top_k_accuracy", topk}};
}

}  // namespace revkit::retrieval
