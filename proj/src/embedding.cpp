#include "revkit/embedding.hpp"

#include <bit>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <numeric>

namespace revkit::embedding {
namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void write_le_floats(std::ostream& out, const Vector<float>& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(v[i]);
    const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                           static_cast<char>((bits >> 16) & 0xff),
                           static_cast<char>((bits >> 24) & 0xff)};
    out.write(bytes, 4);
  }
}

Vector<float> read_le_floats(std::istream& in, Eigen::Index dim) {
  Vector<float> v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
      throw Error(ErrorCode::Io, "truncated embedding file");
    const std::uint32_t bits = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                               (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
    v[i] = std::bit_cast<float>(bits);
  }
  return v;
}

nlohmann::json index_line(const EmbeddingRecord& r, std::uint64_t offset) {
  return {{"revision_id", r.revision_id},
          {"label", to_string(r.label)},
          {"provision_number", r.provision_number},
          {"model_id", r.vector.model_id},
          {"dim", r.vector.dim()},
          {"offset", offset}};
}

}  // namespace

// --- providers --------------------------------------------------------------

HashingEmbedder::HashingEmbedder(int dim) : dim_(dim) {
  if (dim <= 0) throw Error(ErrorCode::Validation, "embedding dim must be positive");
}

std::string HashingEmbedder::model_id() const {
  return "hashing-unigram-" + std::to_string(dim_);
}

EmbeddingVector HashingEmbedder::embed_one(std::string_view text) const {
  Vector<double> acc = Vector<double>::Zero(dim_);
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    acc[static_cast<Eigen::Index>(fnv1a(token) % static_cast<std::uint64_t>(dim_))] += 1.0;
    token.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c))
      token.push_back(static_cast<char>(std::tolower(c)));
    else
      flush();
  }
  flush();
  const double norm = acc.norm();
  if (norm > 0) acc /= norm;
  return {acc.cast<float>(), model_id()};
}

std::vector<std::vector<float>> HashingEmbedder::embed_raw(std::span<const std::string> texts) {
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    const auto v = embed_one(t);
    out.emplace_back(v.values.data(), v.values.data() + v.values.size());
  }
  return out;
}

HttpEmbeddingProvider::HttpEmbeddingProvider(Endpoint endpoint, std::string model)
    : endpoint_(std::move(endpoint)), model_(std::move(model)) {}

std::vector<std::vector<float>> HttpEmbeddingProvider::embed_raw(std::span<const std::string> texts) {
  const nlohmann::json body = {{"model", model_},
                               {"input", std::vector<std::string>(texts.begin(), texts.end())}};
  const nlohmann::json reply = post_json(endpoint_, body);
  try {
    const auto& data = reply.at("data");
    std::vector<std::pair<std::size_t, std::vector<float>>> indexed;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& item = data[i];
      indexed.emplace_back(item.value("index", i), item.at("embedding").get<std::vector<float>>());
    }
    std::stable_sort(indexed.begin(), indexed.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::vector<float>> out;
    for (auto& [index, values] : indexed) out.push_back(std::move(values));
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ProviderError, std::string("malformed embeddings reply: ") + e.what());
  }
}

std::vector<EmbeddingVector> embed_texts(EmbeddingProvider& provider,
                                         std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::PreconditionViolation, "no texts to embed");
  auto raw = provider.embed_raw(texts);
  if (raw.size() != texts.size())
    throw Error(ErrorCode::ProviderError, "provider returned " + std::to_string(raw.size()) +
                                              " vectors for " + std::to_string(texts.size()) +
                                              " inputs");
  const std::string model = provider.model_id();
  std::vector<EmbeddingVector> out;
  out.reserve(raw.size());
  for (const auto& values : raw) {
    if (values.empty()) throw Error(ErrorCode::ProviderError, "provider returned an empty vector");
    if (values.size() != raw.front().size())
      throw Error(ErrorCode::DimMismatch, "provider returned vectors of differing dimension");
    for (float x : values)
      if (!std::isfinite(x)) throw Error(ErrorCode::ProviderError, "provider returned non-finite value");
    out.push_back({Eigen::Map<const Vector<float>>(values.data(), static_cast<Eigen::Index>(values.size())),
                   model});
  }
  return out;
}

EmbeddingVector embed_text(EmbeddingProvider& provider, const std::string& text) {
  return embed_texts(provider, std::span<const std::string>(&text, 1)).front();
}

// --- store ------------------------------------------------------------------

VectorStore::VectorStore() : mu_(std::make_unique<std::shared_mutex>()) {}

VectorStore::VectorStore(VectorStore&& other) noexcept
    : mu_(std::move(other.mu_)),
      records_(std::move(other.records_)),
      norms_(std::move(other.norms_)),
      index_(std::move(other.index_)),
      dim_(other.dim_),
      model_id_(std::move(other.model_id_)) {
  other.mu_ = std::make_unique<std::shared_mutex>();
  other.dim_ = 0;
}

VectorStore& VectorStore::operator=(VectorStore&& other) noexcept {
  if (this != &other) {
    mu_ = std::move(other.mu_);
    records_ = std::move(other.records_);
    norms_ = std::move(other.norms_);
    index_ = std::move(other.index_);
    dim_ = other.dim_;
    model_id_ = std::move(other.model_id_);
    other.mu_ = std::make_unique<std::shared_mutex>();
    other.dim_ = 0;
  }
  return *this;
}

void VectorStore::check_compatible(const EmbeddingRecord& record) const {
  if (record.vector.dim() == 0) throw Error(ErrorCode::Validation, "empty embedding");
  if (!record.vector.values.allFinite())
    throw Error(ErrorCode::Validation, "non-finite embedding for " + record.revision_id);
  if (!records_.empty()) {
    if (record.vector.dim() != dim_)
      throw Error(ErrorCode::DimMismatch, "record " + record.revision_id + " has dim " +
                                              std::to_string(record.vector.dim()) +
                                              ", store has " + std::to_string(dim_));
    if (record.vector.model_id != model_id_)
      throw Error(ErrorCode::Validation, "record " + record.revision_id + " embedded with " +
                                             record.vector.model_id + ", store uses " + model_id_);
  }
  if (index_.count(record.revision_id))
    throw Error(ErrorCode::Validation, "duplicate revision id " + record.revision_id);
}

void VectorStore::add(EmbeddingRecord record) {
  std::unique_lock lock(*mu_);
  check_compatible(record);
  if (records_.empty()) {
    dim_ = record.vector.dim();
    model_id_ = record.vector.model_id;
  }
  index_.emplace(record.revision_id, records_.size());
  norms_.push_back(record.vector.values.cast<double>().norm());
  records_.push_back(std::move(record));
}

std::vector<Hit> VectorStore::query(const EmbeddingVector& query_vec, Metric metric,
                                    std::size_t top_k, const RecordFilter& filter) const {
  std::shared_lock lock(*mu_);
  if (top_k == 0) throw Error(ErrorCode::PreconditionViolation, "top_k must be positive");
  if (records_.empty()) throw Error(ErrorCode::EmptyStore, "vector store is empty");
  if (query_vec.dim() != dim_)
    throw Error(ErrorCode::DimMismatch, "query has dim " + std::to_string(query_vec.dim()) +
                                            ", store has " + std::to_string(dim_));

  const Vector<double> q = query_vec.values.cast<double>();
  const double qnorm = q.norm();
  if (metric == Metric::Cosine && qnorm == 0.0)
    throw Error(ErrorCode::ZeroVector, "cosine query with a zero vector");

  struct Scored {
    std::size_t index;
    double score;
  };
  std::vector<Scored> scored;
  scored.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (filter && !filter(r)) continue;
    double s;
    if (metric == Metric::Cosine) {
      s = norms_[i] == 0.0 ? 0.0
                           : std::clamp(q.dot(r.vector.values.cast<double>()) / (qnorm * norms_[i]),
                                        -1.0, 1.0);
    } else {
      s = (q - r.vector.values.cast<double>()).norm();
    }
    scored.push_back({i, s});
  }
  if (scored.empty()) throw Error(ErrorCode::EmptyStore, "no records match the filter");

  auto better = [&](const Scored& a, const Scored& b) {
    if (a.score != b.score) return metric == Metric::Cosine ? a.score > b.score : a.score < b.score;
    return records_[a.index].revision_id < records_[b.index].revision_id;
  };
  const std::size_t k = std::min(top_k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), better);

  std::vector<Hit> hits;
  hits.reserve(k);
  for (std::size_t i = 0; i < k; ++i) hits.push_back({records_[scored[i].index], scored[i].score});
  return hits;
}

std::size_t VectorStore::size() const {
  std::shared_lock lock(*mu_);
  return records_.size();
}

Eigen::Index VectorStore::dim() const {
  std::shared_lock lock(*mu_);
  return dim_;
}

std::string VectorStore::model_id() const {
  std::shared_lock lock(*mu_);
  return model_id_;
}

bool VectorStore::contains(const std::string& revision_id) const {
  std::shared_lock lock(*mu_);
  return index_.count(revision_id) > 0;
}

std::optional<EmbeddingRecord> VectorStore::find(const std::string& revision_id) const {
  std::shared_lock lock(*mu_);
  auto it = index_.find(revision_id);
  if (it == index_.end()) return std::nullopt;
  return records_[it->second];
}

std::vector<EmbeddingRecord> VectorStore::records() const {
  std::shared_lock lock(*mu_);
  return records_;
}

void VectorStore::save(const std::filesystem::path& bin, const std::filesystem::path& idx) const {
  std::shared_lock lock(*mu_);
  std::ofstream bout(bin, std::ios::binary | std::ios::trunc);
  std::ofstream iout(idx, std::ios::trunc);
  if (!bout || !iout) throw Error(ErrorCode::Io, "cannot write " + bin.string());
  std::uint64_t offset = 0;
  for (const auto& r : records_) {
    write_le_floats(bout, r.vector.values);
    iout << index_line(r, offset).dump() << '\n';
    offset += static_cast<std::uint64_t>(r.vector.dim()) * 4;
  }
  if (!bout.flush() || !iout.flush()) throw Error(ErrorCode::Io, "write failed for " + bin.string());
}

VectorStore VectorStore::load(const std::filesystem::path& bin, const std::filesystem::path& idx) {
  VectorStore store;
  if (!std::filesystem::exists(idx)) return store;
  std::ifstream iin(idx);
  std::ifstream bin_in(bin, std::ios::binary);
  if (!iin || !bin_in) throw Error(ErrorCode::Io, "cannot read " + idx.string());
  std::string line;
  while (std::getline(iin, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      // A torn trailing line from an interrupted append is ignored.
      if (iin.peek() == std::char_traits<char>::eof()) break;
      throw Error(ErrorCode::Io, "corrupt index line in " + idx.string());
    }
    EmbeddingRecord r;
    r.revision_id = j.at("revision_id").get<std::string>();
    r.label = parse_label(j.at("label").get<std::string>());
    r.provision_number = j.at("provision_number").get<std::string>();
    r.vector.model_id = j.at("model_id").get<std::string>();
    bin_in.clear();
    bin_in.seekg(static_cast<std::streamoff>(j.at("offset").get<std::uint64_t>()));
    r.vector.values = read_le_floats(bin_in, j.at("dim").get<Eigen::Index>());
    store.add(std::move(r));
  }
  return store;
}

void VectorStore::append_persisted(EmbeddingRecord record, const std::filesystem::path& bin,
                                   const std::filesystem::path& idx) {
  std::unique_lock lock(*mu_);
  check_compatible(record);
  const std::uint64_t offset =
      std::filesystem::exists(bin) ? std::filesystem::file_size(bin) : 0;
  {
    std::ofstream bout(bin, std::ios::binary | std::ios::app);
    write_le_floats(bout, record.vector.values);
    if (!bout.flush()) throw Error(ErrorCode::Io, "write failed for " + bin.string());
  }
  {
    std::ofstream iout(idx, std::ios::app);
    iout << index_line(record, offset).dump() << '\n';
    if (!iout.flush()) throw Error(ErrorCode::Io, "write failed for " + idx.string());
  }
  if (records_.empty()) {
    dim_ = record.vector.dim();
    model_id_ = record.vector.model_id;
  }
  index_.emplace(record.revision_id, records_.size());
  norms_.push_back(record.vector.values.cast<double>().norm());
  records_.push_back(std::move(record));
}

}  // namespace revkit::embedding
