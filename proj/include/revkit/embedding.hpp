#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "revkit/error.hpp"
#include "revkit/http_client.hpp"
#include "revkit/types.hpp"

namespace revkit::embedding {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// A text embedding. Values are kept in single precision, matching the
/// on-disk format, so a save/load cycle is bit-exact.
template <typename Scalar>
struct BasicEmbedding {
  Vector<Scalar> values;
  std::string model_id;

  Eigen::Index dim() const { return values.size(); }
};

using EmbeddingVector = BasicEmbedding<float>;

template <typename A, typename B>
void check_same_dim(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::DimMismatch, "dimension mismatch: " + std::to_string(a.size()) +
                                            " vs " + std::to_string(b.size()));
}

/// Cosine similarity, accumulated in double precision.
template <typename A, typename B>
double cosine(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  check_same_dim(a, b);
  const auto ad = a.template cast<double>();
  const auto bd = b.template cast<double>();
  const double na = ad.norm(), nb = bd.norm();
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
  return std::clamp(ad.dot(bd) / (na * nb), -1.0, 1.0);
}

template <typename A, typename B>
double l2(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  check_same_dim(a, b);
  return (a.template cast<double>() - b.template cast<double>()).norm();
}

template <typename S>
double cosine(const BasicEmbedding<S>& a, const BasicEmbedding<S>& b) {
  return cosine(a.values, b.values);
}

template <typename S>
double l2(const BasicEmbedding<S>& a, const BasicEmbedding<S>& b) {
  return l2(a.values, b.values);
}

// ---------------------------------------------------------------------------
// Providers

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string model_id() const = 0;
  /// Raw provider output; embed_texts() validates it.
  virtual std::vector<std::vector<float>> embed_raw(std::span<const std::string> texts) = 0;
};

/// Offline provider: word unigrams feature-hashed into a fixed number of
/// buckets, then L2-normalized. Deterministic across runs and platforms.
class HashingEmbedder final : public EmbeddingProvider {
 public:
  explicit HashingEmbedder(int dim = 256);
  std::string model_id() const override;
  std::vector<std::vector<float>> embed_raw(std::span<const std::string> texts) override;
  EmbeddingVector embed_one(std::string_view text) const;

 private:
  int dim_;
};

/// OpenAI-compatible embeddings endpoint: POST {model, input:[...]} and read
/// {data:[{index, embedding:[...]}]}.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(Endpoint endpoint, std::string model);
  std::string model_id() const override { return model_; }
  std::vector<std::vector<float>> embed_raw(std::span<const std::string> texts) override;

 private:
  Endpoint endpoint_;
  std::string model_;
};

/// One vector per input, in input order, all the same dimension.
std::vector<EmbeddingVector> embed_texts(EmbeddingProvider& provider,
                                         std::span<const std::string> texts);

EmbeddingVector embed_text(EmbeddingProvider& provider, const std::string& text);

// ---------------------------------------------------------------------------
// Vector store

struct EmbeddingRecord {
  std::string revision_id;
  EmbeddingVector vector;
  Label label = Label::Unlabeled;
  std::string provision_number;
};

enum class Metric { Cosine, L2 };

struct Hit {
  EmbeddingRecord record;
  double score;
};

using RecordFilter = std::function<bool(const EmbeddingRecord&)>;

/// Exhaustive in-memory store. Readers share a lock; add() takes it
/// exclusively, so a query never sees a half-inserted record.
class VectorStore {
 public:
  VectorStore();
  VectorStore(VectorStore&& other) noexcept;
  VectorStore& operator=(VectorStore&& other) noexcept;
  VectorStore(const VectorStore&) = delete;
  VectorStore& operator=(const VectorStore&) = delete;

  /// Throws DimMismatch/Validation when the record disagrees with the
  /// store's dim or model, or its id is already present.
  void add(EmbeddingRecord record);

  /// Best-first hits: Cosine descending, L2 ascending, ties by ascending id.
  /// Zero stored vectors score 0 under Cosine.
  std::vector<Hit> query(const EmbeddingVector& query_vec, Metric metric, std::size_t top_k,
                         const RecordFilter& filter = {}) const;

  std::size_t size() const;
  bool empty() const { return size() == 0; }
  Eigen::Index dim() const;
  std::string model_id() const;
  bool contains(const std::string& revision_id) const;
  std::optional<EmbeddingRecord> find(const std::string& revision_id) const;
  std::vector<EmbeddingRecord> records() const;

  /// Vectors go to `bin` as little-endian float32; `idx` is JSONL metadata
  /// carrying each record's byte offset into `bin`.
  void save(const std::filesystem::path& bin, const std::filesystem::path& idx) const;
  static VectorStore load(const std::filesystem::path& bin, const std::filesystem::path& idx);

  /// Adds the record and appends it to an existing bin/idx pair. The vector
  /// is flushed before its index line so a concurrent loader never indexes
  /// bytes that are not yet written.
  void append_persisted(EmbeddingRecord record, const std::filesystem::path& bin,
                        const std::filesystem::path& idx);

 private:
  void check_compatible(const EmbeddingRecord& record) const;

  std::unique_ptr<std::shared_mutex> mu_;
  std::vector<EmbeddingRecord> records_;
  std::vector<double> norms_;
  std::unordered_map<std::string, std::size_t> index_;
  Eigen::Index dim_ = 0;
  std::string model_id_;
};

}  // namespace revkit::embedding
