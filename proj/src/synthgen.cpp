#include "revkit/synthgen.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <future>
#include <optional>
#include <random>

#include "revkit/codec.hpp"
#include "revkit/corpus.hpp"
#include "revkit/error.hpp"

namespace revkit::synthgen {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

// Drops markdown emphasis and surrounding whitespace from a section body.
std::string clean_section(std::string_view s) {
  std::string t = trim(s);
  while (t.size() >= 2 && t.rfind("**", 0) == 0) t = trim(std::string_view(t).substr(2));
  while (t.size() >= 2 && t.compare(t.size() - 2, 2, "**") == 0) t = trim(std::string_view(t).substr(0, t.size() - 2));
  return t;
}

std::string family_of(std::string_view number) { return std::string(number.substr(0, number.find('.'))); }

}  // namespace

std::string build_synthetic_prompt(std::span<const DemoTriple> demos, const Provision& query) {
  if (demos.empty()) throw Error(ErrorCode::PreconditionViolation, "at least one demonstration is required");
  std::string prompt =
      "Use the following pairs of provisions and fallback revisions to understand what constitutes an "
      "acceptable and unacceptable revision. Then provide revisions for the given query provision.\n";
  for (std::size_t i = 0; i < demos.size(); ++i) {
    prompt += "\nDemonstration " + std::to_string(i + 1) + "\n";
    prompt += "Provision: " + demos[i].provision_text + "\n";
    prompt += "Acceptable revision: " + demos[i].acceptable + "\n";
    prompt += "Unacceptable revision: " + demos[i].unacceptable + "\n";
  }
  const std::string& query_text = query.template_text ? *query.template_text : query.text;
  prompt += "\nQuery Provision: " + corpus::normalize_whitespace(query_text) + "\n";
  return prompt;
}

SyntheticPair parse_pair(std::string_view reply) {
  static constexpr std::string_view kOk = "acceptable revision:";
  static constexpr std::string_view kBad = "unacceptable revision:";
  const std::string low = lower(reply);

  std::optional<std::size_t> bad_at, ok_at;
  for (std::size_t pos = low.find(kOk); pos != std::string::npos; pos = low.find(kOk, pos + 1)) {
    const bool negated = pos >= 2 && low.compare(pos - 2, 2, "un") == 0;
    if (negated && !bad_at) bad_at = pos - 2;
    if (!negated && !ok_at) ok_at = pos;
  }
  if (!ok_at || !bad_at)
    throw Error(ErrorCode::MalformedLLMOutput, "reply lacks an acceptable or unacceptable revision section");

  auto section = [&](std::size_t start, std::size_t marker_len, std::size_t other) {
    const std::size_t body = start + marker_len;
    const std::size_t end = other > start ? other : reply.size();
    return clean_section(reply.substr(body, end - body));
  };
  SyntheticPair pair;
  pair.acceptable_text = section(*ok_at, kOk.size(), *bad_at);
  pair.unacceptable_text = section(*bad_at, kBad.size(), *ok_at);
  if (pair.acceptable_text.empty() || pair.unacceptable_text.empty())
    throw Error(ErrorCode::MalformedLLMOutput, "empty revision section");
  if (pair.acceptable_text == pair.unacceptable_text)
    throw Error(ErrorCode::MalformedLLMOutput, "acceptable and unacceptable revisions are identical");
  return pair;
}

std::string build_rephrase_prompt(const Revision& revision) {
  return "Rephrase the following contract clause revision so that it is semantically identical but expressed "
         "using different wording. Do not change the meaning, intent, or legal interpretation of the revision. "
         "Ensure the rephrasing retains the same level of formality and contractual tone.\n\n"
         "Original Revision: " +
         revision.text + "\n\nRephrased Revision:";
}

std::string parse_rephrase(std::string_view reply) {
  static constexpr std::string_view kCue = "rephrased revision:";
  std::string text = trim(reply);
  const std::string low = lower(text);
  if (const auto pos = low.find(kCue); pos != std::string::npos) text = trim(std::string_view(text).substr(pos + kCue.size()));
  text = clean_section(text);
  if (text.empty()) throw Error(ErrorCode::MalformedLLMOutput, "empty paraphrase");
  return text;
}

std::string_view to_string(FilterDecision d) { return d == FilterDecision::Keep ? "keep" : "discard"; }

FilterDecision knn_filter(const embedding::EmbeddingVector& candidate, Label label,
                          const embedding::VectorStore& real_store, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::PreconditionViolation, "k must be positive");
  const auto hits = real_store.query(candidate, embedding::Metric::L2, k,
                                     [](const embedding::EmbeddingRecord& r) { return r.label != Label::Unlabeled; });
  const auto agree = static_cast<std::size_t>(
      std::count_if(hits.begin(), hits.end(), [&](const embedding::Hit& h) { return h.record.label == label; }));
  return 2 * agree > hits.size() ? FilterDecision::Keep : FilterDecision::Discard;
}

std::vector<DemoTriple> sample_demonstrations(std::span<const DemoTriple> pool, const Provision& query,
                                              std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error(ErrorCode::PreconditionViolation, "at least one demonstration is required");
  if (pool.size() < n)
    throw Error(ErrorCode::PreconditionViolation, "demonstration pool holds " + std::to_string(pool.size()) +
                                                      " triples, " + std::to_string(n) + " requested");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> remaining(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) remaining[i] = i;

  std::vector<DemoTriple> out;
  const std::string family = family_of(query.number);
  std::vector<std::size_t> same;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (family_of(pool[i].provision_number) == family) same.push_back(i);
  if (!same.empty()) {
    const std::size_t chosen = same[rng() % same.size()];
    out.push_back(pool[chosen]);
    remaining.erase(std::find(remaining.begin(), remaining.end(), chosen));
  }
  while (out.size() < n) {
    const std::size_t j = static_cast<std::size_t>(rng() % remaining.size());
    out.push_back(pool[remaining[j]]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(j));
  }
  return out;
}

namespace {

struct Attempt {
  std::size_t provision_index = 0;
  std::string prompt;
  std::string fingerprint;
  std::uint64_t seed = 0;
  std::optional<std::string> reply;
  bool provider_error = false;
};

std::string padded(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

}  // namespace

GenerationReport generate_dataset(llm::LlmClient& llm, embedding::EmbeddingProvider& embedder,
                                  std::span<const Provision> provisions, std::span<const DemoTriple> demos_source,
                                  const GenerationConfig& config, const embedding::VectorStore* real_store,
                                  const GenerationOptions& options) {
  if (config.n_demonstrations < 1) throw Error(ErrorCode::Validation, "n_demonstrations must be at least 1");
  const std::string created_at = options.created_at.empty() ? utc_now() : options.created_at;

  std::vector<Attempt> attempts;
  for (std::size_t p = 0; p < provisions.size(); ++p)
    for (std::size_t a = 0; a < config.attempts_per_provision; ++a) {
      Attempt at;
      at.provision_index = p;
      at.seed = mix_seed(config.seed, attempts.size());
      const auto demos = sample_demonstrations(demos_source, provisions[p],
                                               static_cast<std::size_t>(config.n_demonstrations), at.seed);
      at.prompt = build_synthetic_prompt(demos, provisions[p]);
      at.fingerprint = sha256_hex(at.prompt);
      attempts.push_back(std::move(at));
    }

  auto run = [&](Attempt& at) {
    try {
      at.reply = llm.complete(llm::user_prompt(at.prompt, config.sampling, at.seed));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ProviderUnavailable) throw;
      at.provider_error = true;
    }
  };
  const std::size_t width = std::max<std::size_t>(1, config.in_flight);
  for (std::size_t start = 0; start < attempts.size(); start += width) {
    const std::size_t end = std::min(attempts.size(), start + width);
    if (width == 1) {
      run(attempts[start]);
      continue;
    }
    std::vector<std::future<void>> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(std::async(std::launch::async, run, std::ref(attempts[i])));
    for (auto& f : batch) f.get();
  }

  GenerationReport report;
  report.attempted = attempts.size();
  nlohmann::json fingerprints = nlohmann::json::array();
  for (std::size_t i = 0; i < attempts.size(); ++i) {
    const Attempt& at = attempts[i];
    fingerprints.push_back(at.fingerprint);
    if (at.provider_error) {
      ++report.provider_errors;
      continue;
    }
    SyntheticPair pair;
    try {
      pair = parse_pair(*at.reply);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MalformedLLMOutput) throw;
      ++report.malformed_count;
      continue;
    }
    const Provision& provision = provisions[at.provision_index];
    pair.provision_number = provision.number;
    pair.prompt_fingerprint = at.fingerprint;

    const std::vector<std::string> texts = {pair.acceptable_text, pair.unacceptable_text};
    const auto vecs = embedding::embed_texts(embedder, texts);
    const std::string pair_id = options.id_prefix + "-" + padded(i);
    for (int side = 0; side < 2; ++side) {
      const Label label = side == 0 ? Label::Acceptable : Label::Unacceptable;
      if (real_store && knn_filter(vecs[static_cast<std::size_t>(side)], label, *real_store, config.knn_k) ==
                            FilterDecision::Discard) {
        ++report.discarded_count;
        continue;
      }
      Revision r;
      r.id = pair_id + (side == 0 ? "-acc" : "-unacc");
      r.provision_number = provision.number;
      r.text = texts[static_cast<std::size_t>(side)];
      r.label = label;
      r.source = Source::Synthetic;
      r.created_at = created_at;
      r.pair_id = pair_id;
      report.kept.push_back(std::move(r));
    }
  }

  report.manifest = {{"config", config},
                     {"created_at", created_at},
                     {"attempted", report.attempted},
                     {"kept", report.kept.size()},
                     {"discarded", report.discarded_count},
                     {"malformed", report.malformed_count},
                     {"provider_errors", report.provider_errors},
                     {"filtered", real_store != nullptr},
                     {"prompt_fingerprints", fingerprints}};
  return report;
}

void write_dataset(const GenerationReport& report, const std::filesystem::path& jsonl,
                   const std::filesystem::path& manifest) {
  {
    std::ofstream out(jsonl, std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + jsonl.string());
    for (const auto& r : report.kept) out << nlohmann::json(r).dump() << '\n';
    if (!out.flush()) throw Error(ErrorCode::Io, "write failed for " + jsonl.string());
  }
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + manifest.string());
  out << report.manifest.dump(2) << '\n';
  if (!out.flush()) throw Error(ErrorCode::Io, "write failed for " + manifest.string());
}

std::vector<Revision> generate_paraphrases(llm::LlmClient& llm, std::span<const Revision> revisions,
                                           const llm::SamplingConfig& sampling, std::uint64_t seed,
                                           std::size_t* malformed) {
  std::vector<Revision> out;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < revisions.size(); ++i) {
    const Revision& src = revisions[i];
    std::string text;
    try {
      text = parse_rephrase(llm.complete(llm::user_prompt(build_rephrase_prompt(src), sampling, mix_seed(seed, i))));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MalformedLLMOutput) throw;
      ++bad;
      continue;
    }
    Revision r = src;
    r.id = src.id + "-para";
    r.text = std::move(text);
    r.source = Source::Paraphrase;
    r.pair_id.reset();
    out.push_back(std::move(r));
  }
  if (malformed) *malformed = bad;
  return out;
}

void to_json(nlohmann::json& j, const GenerationConfig& c) {
  j = {{"n_demonstrations", c.n_demonstrations},
       {"temperature", c.sampling.temperature},
       {"top_p", c.sampling.top_p},
       {"top_k_sampling", c.sampling.top_k},
       {"max_new_tokens", c.sampling.max_new_tokens},
       {"seed", c.seed},
       {"attempts_per_provision", c.attempts_per_provision},
       {"knn_k", c.knn_k},
       {"in_flight", c.in_flight}};
}

void from_json(const nlohmann::json& j, GenerationConfig& c) {
  const GenerationConfig d;
  c.n_demonstrations = j.value("n_demonstrations", d.n_demonstrations);
  c.sampling.temperature = j.value("temperature", d.sampling.temperature);
  c.sampling.top_p = j.value("top_p", d.sampling.top_p);
  c.sampling.top_k = j.value("top_k_sampling", d.sampling.top_k);
  c.sampling.max_new_tokens = j.value("max_new_tokens", d.sampling.max_new_tokens);
  c.seed = j.value("seed", d.seed);
  c.attempts_per_provision = j.value("attempts_per_provision", d.attempts_per_provision);
  c.knn_k = j.value("knn_k", d.knn_k);
  c.in_flight = j.value("in_flight", d.in_flight);
}

void to_json(nlohmann::json& j, const DemoTriple& d) {
  j = {{"provision_number", d.provision_number},
       {"provision_text", d.provision_text},
       {"acceptable", d.acceptable},
       {"unacceptable", d.unacceptable}};
}

void from_json(const nlohmann::json& j, DemoTriple& d) {
  d.provision_number = j.at("provision_number").get<std::string>();
  d.provision_text = j.at("provision_text").get<std::string>();
  d.acceptable = j.at("acceptable").get<std::string>();
  d.unacceptable = j.at("unacceptable").get<std::string>();
}

}  // namespace revkit::synthgen
