#include "revkit/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "revkit/corpus.hpp"
#include "revkit/error.hpp"

namespace revkit::service {
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Durable file helpers

namespace {

void write_all(int fd, const std::string& data, const fs::path& path) {
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw Error(ErrorCode::Io, "write failed for " + path.string() + ": " + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

void sync_dir(const fs::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void append_line_durable(const fs::path& path, const std::string& line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
  if (fd < 0) throw Error(ErrorCode::Io, "cannot open " + path.string() + ": " + std::strerror(errno));
  write_all(fd, line + "\n", path);
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw Error(ErrorCode::Io, "fsync failed for " + path.string());
  }
  ::close(fd);
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  const fs::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error(ErrorCode::Io, "cannot open " + tmp.string() + ": " + std::strerror(errno));
  write_all(fd, contents, tmp);
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw Error(ErrorCode::Io, "fsync failed for " + tmp.string());
  }
  ::close(fd);
  fs::rename(tmp, path);
  sync_dir(path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::vector<nlohmann::json> out;
  if (!fs::exists(path)) return out;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception&) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw Error(ErrorCode::Io, "corrupt line in " + path.string());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

void to_json(nlohmann::json& j, const ServiceConfig& c) {
  j = {{"embedding_url", c.embedding_url},
       {"embedding_model", c.embedding_model},
       {"hashing_dim", c.hashing_dim},
       {"llm_url", c.llm_url},
       {"llm_model", c.llm_model},
       {"scorer_url", c.scorer_url},
       {"host", c.host},
       {"port", c.port},
       {"ambiguity_band", c.ambiguity_band},
       {"retrain_min_decisions", c.retrain_min_decisions},
       {"train", c.train},
       {"optimization", c.optimization},
       {"generation", c.generation}};
}

void from_json(const nlohmann::json& j, ServiceConfig& c) {
  const ServiceConfig d;
  c.embedding_url = j.value("embedding_url", d.embedding_url);
  c.embedding_model = j.value("embedding_model", d.embedding_model);
  c.embedding_token = j.value("embedding_token", d.embedding_token);
  c.hashing_dim = j.value("hashing_dim", d.hashing_dim);
  c.llm_url = j.value("llm_url", d.llm_url);
  c.llm_model = j.value("llm_model", d.llm_model);
  c.llm_token = j.value("llm_token", d.llm_token);
  c.scorer_url = j.value("scorer_url", d.scorer_url);
  c.scorer_token = j.value("scorer_token", d.scorer_token);
  c.api_token = j.value("api_token", d.api_token);
  c.host = j.value("host", d.host);
  c.port = j.value("port", d.port);
  c.ambiguity_band = j.value("ambiguity_band", d.ambiguity_band);
  c.retrain_min_decisions = j.value("retrain_min_decisions", d.retrain_min_decisions);
  if (j.contains("train")) c.train = j.at("train").get<classifier::TrainConfig>();
  if (j.contains("optimization")) c.optimization = j.at("optimization").get<optimizer::OptimizationConfig>();
  if (j.contains("generation")) c.generation = j.at("generation").get<synthgen::GenerationConfig>();
}

std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v) return std::nullopt;
  return std::string(v);
}

namespace {

template <typename T>
T parse_number(const std::string& name, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw Error(ErrorCode::Validation, name + " is not a valid number: '" + text + "'");
  return value;
}

}  // namespace

void apply_env_overrides(ServiceConfig& c, const EnvLookup& env) {
  auto str = [&](const char* name, std::string& field) {
    if (auto v = env(name)) field = *v;
  };
  auto num = [&]<typename T>(const char* name, T& field) {
    if (auto v = env(name)) field = parse_number<T>(name, *v);
  };
  str("REVKIT_EMBEDDING_URL", c.embedding_url);
  str("REVKIT_EMBEDDING_MODEL", c.embedding_model);
  str("REVKIT_EMBEDDING_TOKEN", c.embedding_token);
  num("REVKIT_HASHING_DIM", c.hashing_dim);
  str("REVKIT_LLM_URL", c.llm_url);
  str("REVKIT_LLM_MODEL", c.llm_model);
  str("REVKIT_LLM_TOKEN", c.llm_token);
  str("REVKIT_SCORER_URL", c.scorer_url);
  str("REVKIT_SCORER_TOKEN", c.scorer_token);
  str("REVKIT_API_TOKEN", c.api_token);
  str("REVKIT_HOST", c.host);
  num("REVKIT_PORT", c.port);
  num("REVKIT_AMBIGUITY_BAND", c.ambiguity_band);
  num("REVKIT_RETRAIN_MIN_DECISIONS", c.retrain_min_decisions);
  num("REVKIT_CLUSTERS", c.train.k);
  if (auto v = env("REVKIT_SEED")) {
    const auto seed = parse_number<std::uint64_t>("REVKIT_SEED", *v);
    c.train.seed = c.optimization.seed = c.generation.seed = seed;
  }
  if (c.ambiguity_band < 0.0 || c.ambiguity_band > 0.5)
    throw Error(ErrorCode::Validation, "ambiguity_band must lie in [0, 0.5]");
  if (c.hashing_dim < 1) throw Error(ErrorCode::Validation, "hashing_dim must be positive");
}

ServiceConfig load_config(const fs::path& path, const EnvLookup& env) {
  ServiceConfig config;
  if (fs::exists(path)) {
    try {
      config = nlohmann::json::parse(read_file(path)).get<ServiceConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Validation, "invalid config " + path.string() + ": " + e.what());
    }
  }
  apply_env_overrides(config, env);
  classifier::validate(config.train);
  optimizer::validate(config.optimization);
  return config;
}

// ---------------------------------------------------------------------------
// Review records

std::string_view to_string(FlagStatus s) {
  switch (s) {
    case FlagStatus::Open: return "open";
    case FlagStatus::Optimized: return "optimized";
    case FlagStatus::Decided: return "decided";
  }
  return "open";
}

FlagStatus parse_flag_status(std::string_view text) {
  if (text == "open") return FlagStatus::Open;
  if (text == "optimized") return FlagStatus::Optimized;
  if (text == "decided") return FlagStatus::Decided;
  throw Error(ErrorCode::Validation, "unknown flag status '" + std::string(text) + "'");
}

void sort_flags(std::vector<FlagRecord>& flags) {
  std::sort(flags.begin(), flags.end(), [](const FlagRecord& a, const FlagRecord& b) {
    const bool aa = a.confidence_band == classifier::ConfidenceBand::Ambiguous;
    const bool ba = b.confidence_band == classifier::ConfidenceBand::Ambiguous;
    if (aa != ba) return aa;
    if (a.probability_acceptable != b.probability_acceptable) return a.probability_acceptable < b.probability_acceptable;
    return a.revision_id < b.revision_id;
  });
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Accept: return "accept";
    case Verdict::Reject: return "reject";
    case Verdict::Edit: return "edit";
  }
  return "accept";
}

Verdict parse_verdict(std::string_view text) {
  std::string low(text);
  std::transform(low.begin(), low.end(), low.begin(), [](unsigned char c) { return std::tolower(c); });
  if (low == "accept") return Verdict::Accept;
  if (low == "reject") return Verdict::Reject;
  if (low == "edit") return Verdict::Edit;
  throw Error(ErrorCode::Validation, "verdict must be accept, reject or edit");
}

void validate(const ReviewDecision& d) {
  if (d.revision_id.empty()) throw Error(ErrorCode::Validation, "revision_id is required");
  if (d.reviewer.empty()) throw Error(ErrorCode::Validation, "reviewer is required");
  if (d.verdict == Verdict::Edit && corpus::normalize_whitespace(d.final_text).empty())
    throw Error(ErrorCode::Validation, "edit requires non-empty final_text");
  if (d.candidate_index && d.verdict != Verdict::Accept)
    throw Error(ErrorCode::Validation, "candidate_index only applies to accept");
  if (d.candidate_index && *d.candidate_index < 0) throw Error(ErrorCode::Validation, "candidate_index must be >= 0");
}

void to_json(nlohmann::json& j, const FlagRecord& f) {
  j = {{"revision_id", f.revision_id},
       {"contract_id", f.contract_id},
       {"provision_number", f.provision_number},
       {"probability_acceptable", f.probability_acceptable},
       {"confidence_band", classifier::to_string(f.confidence_band)},
       {"status", to_string(f.status)},
       {"model_version", f.model_version}};
}

void from_json(const nlohmann::json& j, FlagRecord& f) {
  f.revision_id = j.at("revision_id").get<std::string>();
  f.contract_id = j.at("contract_id").get<std::string>();
  f.provision_number = j.at("provision_number").get<std::string>();
  f.probability_acceptable = j.at("probability_acceptable").get<double>();
  f.confidence_band = j.at("confidence_band").get<std::string>() == "ambiguous" ? classifier::ConfidenceBand::Ambiguous
                                                                                 : classifier::ConfidenceBand::Confident;
  f.status = parse_flag_status(j.at("status").get<std::string>());
  f.model_version = j.value("model_version", std::uint64_t{0});
}

void to_json(nlohmann::json& j, const ReviewDecision& d) {
  j = {{"revision_id", d.revision_id},
       {"verdict", to_string(d.verdict)},
       {"final_text", d.final_text},
       {"reviewer", d.reviewer},
       {"decided_at", d.decided_at}};
  j["candidate_index"] = d.candidate_index ? nlohmann::json(*d.candidate_index) : nlohmann::json(nullptr);
  j["derived_revision_id"] = d.derived_revision_id ? nlohmann::json(*d.derived_revision_id) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, ReviewDecision& d) {
  d.revision_id = j.value("revision_id", std::string{});
  d.verdict = parse_verdict(j.at("verdict").get<std::string>());
  d.final_text = j.value("final_text", std::string{});
  d.reviewer = j.value("reviewer", std::string{});
  d.decided_at = j.value("decided_at", std::string{});
  if (j.contains("candidate_index") && !j.at("candidate_index").is_null())
    d.candidate_index = j.at("candidate_index").get<int>();
  if (j.contains("derived_revision_id") && !j.at("derived_revision_id").is_null())
    d.derived_revision_id = j.at("derived_revision_id").get<std::string>();
}

std::vector<Revision> review_revisions(const Contract& contract, const std::string& created_at) {
  std::vector<Revision> out;
  for (const auto& p : contract.provisions) {
    const auto edits = corpus::detect_tracked_edits(p.text);
    const std::string text = corpus::normalize_whitespace(edits.has_edits ? edits.accepted_text : p.text);
    if (text.empty()) continue;
    if (p.template_text && corpus::normalize_whitespace(*p.template_text) == text) continue;
    Revision r;
    r.id = contract.id + ":" + p.number;
    r.provision_number = p.number;
    r.contract_id = contract.id;
    r.text = text;
    r.label = Label::Unlabeled;
    r.source = Source::Negotiated;
    r.created_at = created_at;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Classified> classify_revisions(const classifier::EnsembleModel& model,
                                           std::span<const Revision> revisions,
                                           std::span<const embedding::EmbeddingVector> vectors, double band) {
  if (revisions.size() != vectors.size()) throw Error(ErrorCode::DimMismatch, "revision and vector counts differ");
  std::vector<Classified> out;
  for (std::size_t i = 0; i < revisions.size(); ++i) {
    Classified c;
    c.revision = revisions[i];
    c.prediction = classifier::predict(model, vectors[i]);
    c.band = classifier::confidence_band(c.prediction.probability_acceptable, band);
    c.flagged = c.prediction.label == Label::Unacceptable || c.band == classifier::ConfidenceBand::Ambiguous;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<FlagRecord> flags_from(std::span<const Classified> classified, std::uint64_t model_version) {
  std::vector<FlagRecord> out;
  for (const auto& c : classified) {
    if (!c.flagged) continue;
    out.push_back({c.revision.id, c.revision.contract_id, c.revision.provision_number,
                   c.prediction.probability_acceptable, c.band, FlagStatus::Open, model_version});
  }
  sort_flags(out);
  return out;
}

// ---------------------------------------------------------------------------
// Providers

Providers make_providers(const ServiceConfig& config, Providers overrides) {
  Providers p = std::move(overrides);
  if (!p.embedder) {
    if (config.embedding_url.empty())
      p.embedder = std::make_shared<embedding::HashingEmbedder>(config.hashing_dim);
    else
      p.embedder = std::make_shared<embedding::HttpEmbeddingProvider>(
          Endpoint{config.embedding_url, config.embedding_token}, config.embedding_model);
  }
  if (!p.llm && !config.llm_url.empty())
    p.llm = std::make_shared<llm::HttpLlmClient>(Endpoint{config.llm_url, config.llm_token}, config.llm_model);
  if (!p.scorer) {
    if (config.scorer_url.empty())
      p.scorer = std::make_shared<retrieval::EmbeddingScorer>(*p.embedder);
    else
      p.scorer = std::make_shared<retrieval::HttpScorer>(Endpoint{config.scorer_url, config.scorer_token});
  }
  return p;
}

// ---------------------------------------------------------------------------
// Workspace

namespace {

void check_contract_id(const std::string& id) {
  if (id.empty()) throw Error(ErrorCode::Validation, "contract id is required");
  if (id.find_first_of("/\\") != std::string::npos || id.front() == '.')
    throw Error(ErrorCode::Validation, "contract id contains path characters");
}

std::string version_name(std::uint64_t v) {
  std::string s = std::to_string(v);
  return "v" + std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

}  // namespace

Workspace::Workspace(fs::path root, ServiceConfig config, Providers providers)
    : root_(std::move(root)), config_(std::move(config)), providers_(std::move(providers)) {}

std::unique_ptr<Workspace> Workspace::open(const fs::path& root, ServiceConfig config, Providers overrides) {
  fs::create_directories(root / "contracts");
  fs::create_directories(root / "models");
  Providers providers = make_providers(config, std::move(overrides));
  std::unique_ptr<Workspace> ws(new Workspace(root, std::move(config), std::move(providers)));
  ws->load();
  return ws;
}

void Workspace::load() {
  for (const auto& entry : fs::directory_iterator(path("contracts"))) {
    if (entry.path().extension() != ".json") continue;
    Contract c = nlohmann::json::parse(read_file(entry.path())).get<Contract>();
    contracts_.emplace(c.id, std::move(c));
  }
  for (const auto& j : read_jsonl(path("revisions.jsonl"))) revisions_.add(j.get<Revision>());
  store_ = embedding::VectorStore::load(path("embeddings.bin"), path("embeddings.idx"));
  if (fs::exists(path("flags.json")))
    for (const auto& j : nlohmann::json::parse(read_file(path("flags.json")))) {
      FlagRecord f = j.get<FlagRecord>();
      flags_.emplace(f.revision_id, std::move(f));
    }
  for (const auto& j : read_jsonl(path("optimizations.jsonl"))) {
    optimizer::OptimizationResult r;
    r.source_revision_id = j.at("source_revision_id").get<std::string>();
    r.source_reward = j.value("source_reward", 0.0);
    for (const auto& c : j.at("candidates")) r.candidates.push_back({c.at("text").get<std::string>(), c.at("reward").get<double>()});
    r.chosen_index = j.at("chosen_index").get<int>();
    r.prompt_fingerprint = j.at("prompt_fingerprint").get<std::string>();
    r.malformed = j.value("malformed", std::size_t{0});
    optimizations_[r.source_revision_id] = std::move(r);
  }
  for (const auto& j : read_jsonl(path("decisions.jsonl"))) decisions_.push_back(j.get<ReviewDecision>());

  // Recovery: a decision is written before its derived revision, so replay
  // any revision lost to a crash between the two appends.
  for (const auto& d : decisions_) {
    if (!d.derived_revision_id || revisions_.find(*d.derived_revision_id)) continue;
    const Revision* src = revisions_.find(d.revision_id);
    if (!src) continue;
    Revision r;
    r.id = *d.derived_revision_id;
    r.provision_number = src->provision_number;
    r.contract_id = src->contract_id;
    r.text = d.final_text;
    r.label = Label::Acceptable;
    r.source = Source::Negotiated;
    r.created_at = d.decided_at;
    append_line_durable(path("revisions.jsonl"), nlohmann::json(r).dump());
    revisions_.add(r);
  }
  // Recovery: embed revisions whose vector never reached the store.
  for (const auto& r : revisions_.all()) {
    if (store_.contains(r.id)) continue;
    store_.append_persisted({r.id, embedding::embed_text(*providers_.embedder, r.text), r.label, r.provision_number},
                            path("embeddings.bin"), path("embeddings.idx"));
  }
  for (auto& [id, f] : flags_)
    if (f.status != FlagStatus::Decided)
      for (const auto& d : decisions_)
        if (d.revision_id == id) f.status = FlagStatus::Decided;

  if (fs::exists(path("models/CURRENT"))) {
    const std::string name = corpus::normalize_whitespace(read_file(path("models/CURRENT")));
    auto model = std::make_shared<classifier::EnsembleModel>(classifier::load_model(path("models/" + name + ".json")));
    const auto meta = nlohmann::json::parse(read_file(path("models/" + name + ".meta.json")));
    decision_mark_ = meta.at("decision_mark").get<std::size_t>();
    model_ = std::move(model);
  }
}

void Workspace::persist_revision(const Revision& r, const embedding::EmbeddingVector& v) {
  append_line_durable(path("revisions.jsonl"), nlohmann::json(r).dump());
  revisions_.add(r);
  store_.append_persisted({r.id, v, r.label, r.provision_number}, path("embeddings.bin"), path("embeddings.idx"));
}

void Workspace::write_flags() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [id, f] : flags_) arr.push_back(f);
  write_file_atomic(path("flags.json"), arr.dump(2) + "\n");
}

embedding::EmbeddingVector Workspace::embed(const std::string& text) const {
  return embedding::embed_text(*providers_.embedder, text);
}

classifier::Prediction Workspace::classify_text(const std::string& text) const {
  const auto m = model();
  if (!m) throw Error(ErrorCode::PreconditionViolation, "no classifier model is serving");
  return classifier::predict(*m, embed(text));
}

void Workspace::add_labeled(std::span<const Revision> revisions) {
  for (const auto& r : revisions) {
    validate(r);
    if (r.label == Label::Unlabeled) throw Error(ErrorCode::Validation, "revision " + r.id + " is unlabeled");
  }
  std::vector<std::string> texts;
  for (const auto& r : revisions) texts.push_back(r.text);
  if (texts.empty()) return;
  const auto vecs = embedding::embed_texts(*providers_.embedder, texts);
  std::unique_lock lock(mu_);
  for (const auto& r : revisions)
    if (revisions_.find(r.id)) throw Error(ErrorCode::Validation, "duplicate revision id " + r.id);
  for (std::size_t i = 0; i < revisions.size(); ++i) persist_revision(revisions[i], vecs[i]);
}

IngestResult Workspace::ingest(Contract contract) {
  const auto m = model();
  if (!m) throw Error(ErrorCode::PreconditionViolation, "no classifier model is serving");
  check_contract_id(contract.id);
  const auto pending = review_revisions(contract, utc_now());
  std::vector<std::string> texts;
  for (const auto& r : pending) texts.push_back(r.text);
  const auto vecs = texts.empty() ? std::vector<embedding::EmbeddingVector>{}
                                  : embedding::embed_texts(*providers_.embedder, texts);
  const auto classified = classify_revisions(*m, pending, vecs, config_.ambiguity_band);
  auto new_flags = flags_from(classified, m->version);

  std::unique_lock lock(mu_);
  if (contracts_.contains(contract.id)) throw Error(ErrorCode::Conflict, "contract " + contract.id + " already exists");
  for (const auto& r : pending)
    if (revisions_.find(r.id)) throw Error(ErrorCode::Conflict, "revision " + r.id + " already exists");
  write_file_atomic(path("contracts/" + contract.id + ".json"), nlohmann::json(contract).dump(2) + "\n");
  for (std::size_t i = 0; i < pending.size(); ++i) persist_revision(pending[i], vecs[i]);
  for (const auto& f : new_flags) flags_[f.revision_id] = f;
  write_flags();
  IngestResult result{contract.id, pending.size(), new_flags};
  contracts_.emplace(contract.id, std::move(contract));
  return result;
}

void Workspace::store_contract(const Contract& contract) {
  check_contract_id(contract.id);
  std::unique_lock lock(mu_);
  if (contracts_.contains(contract.id)) throw Error(ErrorCode::Conflict, "contract " + contract.id + " already exists");
  write_file_atomic(path("contracts/" + contract.id + ".json"), nlohmann::json(contract).dump(2) + "\n");
  contracts_.emplace(contract.id, contract);
}

std::vector<std::string> Workspace::contract_ids() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, c] : contracts_) out.push_back(id);
  return out;
}

std::optional<Contract> Workspace::contract(const std::string& id) const {
  std::shared_lock lock(mu_);
  const auto it = contracts_.find(id);
  if (it == contracts_.end()) return std::nullopt;
  return it->second;
}

std::optional<Revision> Workspace::revision(const std::string& id) const {
  std::shared_lock lock(mu_);
  const Revision* r = revisions_.find(id);
  if (!r) return std::nullopt;
  return *r;
}

std::vector<Revision> Workspace::revisions() const {
  std::shared_lock lock(mu_);
  return revisions_.all();
}

std::vector<Revision> Workspace::labeled_revisions() const {
  std::shared_lock lock(mu_);
  std::vector<Revision> out;
  for (const auto& r : revisions_.all())
    if (r.label != Label::Unlabeled) out.push_back(r);
  return out;
}

std::size_t Workspace::labeled_count() const { return labeled_revisions().size(); }

std::vector<FlagRecord> Workspace::flags(const std::string& contract_id) const {
  std::shared_lock lock(mu_);
  if (!contracts_.contains(contract_id)) throw Error(ErrorCode::NotFound, "unknown contract " + contract_id);
  std::vector<FlagRecord> out;
  for (const auto& [id, f] : flags_)
    if (f.contract_id == contract_id) out.push_back(f);
  sort_flags(out);
  return out;
}

std::optional<FlagRecord> Workspace::flag(const std::string& revision_id) const {
  std::shared_lock lock(mu_);
  const auto it = flags_.find(revision_id);
  if (it == flags_.end()) return std::nullopt;
  return it->second;
}

optimizer::OptimizationResult Workspace::optimize(const std::string& revision_id,
                                                  std::optional<optimizer::OptimizationConfig> config) {
  const auto m = model();
  if (!m) throw Error(ErrorCode::PreconditionViolation, "no classifier model is serving");
  if (!providers_.llm) throw Error(ErrorCode::ProviderUnavailable, "no LLM endpoint is configured");
  const optimizer::OptimizationConfig cfg = config.value_or(config_.optimization);

  Revision target;
  std::optional<Contract> contract;
  std::vector<optimizer::Triple> triples;
  {
    std::shared_lock lock(mu_);
    const Revision* r = revisions_.find(revision_id);
    if (!r) throw Error(ErrorCode::NotFound, "unknown revision " + revision_id);
    target = *r;
    if (const auto it = contracts_.find(target.contract_id); it != contracts_.end()) contract = it->second;
    auto provision_text = [this](const Revision& rev) {
      if (const auto it = contracts_.find(rev.contract_id); it != contracts_.end())
        if (const Provision* p = it->second.find(rev.provision_number))
          return corpus::normalize_whitespace(p->template_text ? *p->template_text : p->text);
      return "Provision " + rev.provision_number;
    };
    triples = optimizer::build_triples(revisions_, store_, provision_text);
  }

  optimizer::Context ctx{*providers_.llm, *m, *providers_.embedder, triples, contract ? &*contract : nullptr,
                         providers_.scorer.get()};
  auto result = optimizer::optimize(ctx, target, cfg);

  std::unique_lock lock(mu_);
  append_line_durable(path("optimizations.jsonl"), nlohmann::json(result).dump());
  optimizations_[revision_id] = result;
  if (auto it = flags_.find(revision_id); it != flags_.end() && it->second.status == FlagStatus::Open) {
    it->second.status = FlagStatus::Optimized;
    write_flags();
  }
  return result;
}

std::optional<optimizer::OptimizationResult> Workspace::last_optimization(const std::string& revision_id) const {
  std::shared_lock lock(mu_);
  const auto it = optimizations_.find(revision_id);
  if (it == optimizations_.end()) return std::nullopt;
  return it->second;
}

ReviewDecision Workspace::decide(ReviewDecision decision, const DecisionOptions& options) {
  validate(decision);
  std::unique_lock lock(mu_);
  const Revision* src = revisions_.find(decision.revision_id);
  if (!src) throw Error(ErrorCode::NotFound, "unknown revision " + decision.revision_id);
  auto flag_it = flags_.find(decision.revision_id);
  if (flag_it != flags_.end() && flag_it->second.status == FlagStatus::Decided && !options.force)
    throw Error(ErrorCode::Conflict, "revision " + decision.revision_id + " is already decided");

  if (decision.verdict == Verdict::Accept) {
    if (decision.candidate_index) {
      const auto it = optimizations_.find(decision.revision_id);
      if (it == optimizations_.end()) throw Error(ErrorCode::Validation, "no optimization candidates for this revision");
      const auto idx = static_cast<std::size_t>(*decision.candidate_index);
      if (idx >= it->second.candidates.size()) throw Error(ErrorCode::Validation, "candidate_index out of range");
      decision.final_text = it->second.candidates[idx].text;
    } else if (decision.final_text.empty()) {
      decision.final_text = src->text;
    }
  }
  decision.final_text = corpus::normalize_whitespace(decision.final_text);
  if (decision.decided_at.empty()) decision.decided_at = utc_now();

  std::optional<Revision> derived;
  if (decision.verdict != Verdict::Reject) {
    Revision r;
    r.id = decision.revision_id + ":decision:" + std::to_string(decisions_.size() + 1);
    r.provision_number = src->provision_number;
    r.contract_id = src->contract_id;
    r.text = decision.final_text;
    r.label = Label::Acceptable;
    r.source = Source::Negotiated;
    r.created_at = decision.decided_at;
    decision.derived_revision_id = r.id;
    derived = std::move(r);
  }
  const auto vec = derived ? std::optional(embed(derived->text)) : std::nullopt;

  append_line_durable(path("decisions.jsonl"), nlohmann::json(decision).dump());
  decisions_.push_back(decision);
  if (derived) persist_revision(*derived, *vec);
  if (flag_it != flags_.end()) {
    flag_it->second.status = FlagStatus::Decided;
    write_flags();
  }
  return decision;
}

std::vector<ReviewDecision> Workspace::decisions() const {
  std::shared_lock lock(mu_);
  return decisions_;
}

std::shared_ptr<const classifier::EnsembleModel> Workspace::model() const {
  std::lock_guard lock(model_mu_);
  return model_;
}

std::uint64_t Workspace::model_version() const {
  const auto m = model();
  return m ? m->version : 0;
}

std::vector<std::uint64_t> Workspace::model_versions() const {
  std::vector<std::uint64_t> out;
  for (const auto& entry : fs::directory_iterator(path("models"))) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 6 && name[0] == 'v' && name.ends_with(".json") && !name.ends_with(".meta.json"))
      out.push_back(std::stoull(name.substr(1, name.size() - 6)));
  }
  std::sort(out.begin(), out.end());
  return out;
}

void Workspace::install_model(std::shared_ptr<const classifier::EnsembleModel> model, std::size_t decision_mark) {
  const std::string name = version_name(model->version);
  classifier::save_model(*model, path("models/" + name + ".json"));
  write_file_atomic(path("models/" + name + ".meta.json"),
                    nlohmann::json{{"version", model->version}, {"decision_mark", decision_mark}, {"trained_at", utc_now()}}
                            .dump(2) +
                        "\n");
  write_file_atomic(path("models/CURRENT"), name + "\n");
  std::lock_guard lock(model_mu_);
  model_ = std::move(model);
  decision_mark_ = decision_mark;
}

RetrainResult Workspace::retrain_snapshot(bool force) {
  std::lock_guard retrain_lock(retrain_mu_);
  RetrainResult result;
  classifier::Matrix features;
  std::vector<Label> labels;
  std::size_t mark = 0;
  {
    std::shared_lock lock(mu_);
    mark = decisions_.size();
    std::size_t since = 0;
    {
      std::lock_guard mlock(model_mu_);
      since = model_ ? mark - std::min(mark, decision_mark_) : mark;
    }
    result.new_decisions = since;
    if (!force && since < config_.retrain_min_decisions) {
      result.status = "skipped: " + std::to_string(since) + " new decisions, " +
                      std::to_string(config_.retrain_min_decisions) + " required";
      result.version = model_version();
      return result;
    }
    for (const auto& r : revisions_.all()) {
      if (r.label == Label::Unlabeled) continue;
      const auto rec = store_.find(r.id);
      if (!rec) continue;
      if (features.rows() == 0) features.resize(0, rec->vector.dim());
      features.conservativeResize(features.rows() + 1, rec->vector.dim());
      features.row(features.rows() - 1) = rec->vector.values.cast<double>().transpose();
      labels.push_back(r.label);
    }
  }
  auto model = std::make_shared<classifier::EnsembleModel>(
      classifier::train_ensemble(features, labels, config_.train, providers_.embedder->model_id()));
  const std::uint64_t prior = [&] {
    const auto versions = model_versions();
    return versions.empty() ? std::uint64_t{0} : versions.back();
  }();
  model->version = prior + 1;
  model->model_id = "revkit-ensemble-" + version_name(model->version);
  result.summary = model->metrics;
  install_model(model, mark);
  result.trained = true;
  result.status = "trained";
  result.version = model->version;
  return result;
}

}  // namespace revkit::service
