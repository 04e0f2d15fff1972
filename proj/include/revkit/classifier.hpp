#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "revkit/embedding.hpp"
#include "revkit/llm.hpp"
#include "revkit/types.hpp"

namespace revkit::classifier {

using Matrix = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kDecisionThreshold = 0.5;
inline constexpr double kDefaultAmbiguityBand = 0.15;
inline constexpr double kConstantHeadFloor = 0.01;
inline constexpr double kConstantHeadCeiling = 0.99;

struct TrainConfig {
  int k = 8;
  double learning_rate = 0.1;
  int epochs = 500;
  double l2_lambda = 1e-3;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
};

/// Rejects settings outside their domain. K outside {3, 5, 8, 11} is allowed.
void validate(const TrainConfig& config);

/// x / |x| with a fixed summation order, so equal inputs normalize to equal
/// bits whether they come from a matrix row or a standalone vector.
Vec unit(const Eigen::Ref<const Vec>& x);
Matrix normalize_rows(const Matrix& points);

// ---------------------------------------------------------------------------
// k-means

struct KMeansResult {
  Matrix centroids;  // K x dim
  std::vector<int> assignments;
  double inertia = 0.0;
  int iterations = 0;
};

inline constexpr int kKMeansMaxIterations = 100;
inline constexpr double kKMeansTolerance = 1e-6;

/// k-means++ seeding followed by Lloyd iterations until the largest
/// centroid shift drops below 1e-6 or 100 iterations pass. An emptied
/// cluster takes the point farthest from its own centroid. Points are rows.
/// Throws TooFewPoints when rows < k.
KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Logistic heads

struct LogisticHead {
  Vec weights;
  double bias = 0.0;
  // Set for heads trained on a single class: the clipped class prior.
  std::optional<double> constant_probability;

  /// P(acceptable | x) for an already unit-length x.
  double probability(const Eigen::Ref<const Vec>& x) const;
};

struct LogisticFit {
  LogisticHead head;
  double final_loss = 0.0;
  std::vector<double> loss_history;  // loss before each update, then the final loss
};

double sigmoid(double z);

/// Mean cross-entropy plus (lambda/2)|w|^2; the bias is not regularized.
double logistic_loss(const Matrix& x, const Vec& y, const Vec& weights, double bias, double l2_lambda);

struct Gradient {
  Vec weights;
  double bias = 0.0;
};

Gradient logistic_gradient(const Matrix& x, const Vec& y, const Vec& weights, double bias, double l2_lambda);

/// Full-batch gradient descent from zero weights. Rows of `x` must be unit
/// length and `y` holds 1 for acceptable, 0 for unacceptable. A single-class
/// `y` yields a constant head.
LogisticFit train_logistic(const Matrix& x, const Vec& y, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Ensemble

struct ClusterSummary {
  int cluster_id = 0;
  std::size_t train_count = 0;
  std::size_t acceptable = 0;
  std::size_t unacceptable = 0;
  bool constant_head = false;
  double final_loss = 0.0;
  std::size_t val_count = 0;
  std::optional<double> val_accuracy;
};

struct TrainingSummary {
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  double train_accuracy = 0.0;
  std::optional<double> val_accuracy;
  std::vector<ClusterSummary> clusters;
};

struct EnsembleModel {
  std::string model_id;
  std::uint64_t version = 0;
  std::string embedding_model;
  Eigen::Index dim = 0;
  Matrix centroids;  // K x dim
  std::vector<LogisticHead> heads;
  TrainConfig train_config;
  TrainingSummary metrics;

  int k() const { return static_cast<int>(heads.size()); }
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded shuffle; the validation share is round(n * val_fraction), at least
/// one row when n >= 2. Both index lists come back in ascending order.
Split split_train_val(std::size_t n, double val_fraction, std::uint64_t seed);

Vec label_targets(std::span<const Label> labels);

/// Normalizes rows, splits, clusters the training rows and fits one head per
/// cluster. Throws TooFewPoints when rows < 2K.
EnsembleModel train_ensemble(const Matrix& features, std::span<const Label> labels, const TrainConfig& config,
                             std::string embedding_model = {});

struct Prediction {
  Label label = Label::Unacceptable;
  double probability_acceptable = 0.0;
  int cluster_id = 0;
  double routing_similarity = 0.0;
};

/// Routes to the centroid with the highest cosine (ties: lowest id) and
/// applies that cluster's head to the unit-normalized input.
Prediction predict(const EnsembleModel& model, const Eigen::Ref<const Vec>& x);
Prediction predict(const EnsembleModel& model, const embedding::EmbeddingVector& x);

enum class ConfidenceBand { Confident, Ambiguous };
ConfidenceBand confidence_band(double probability_acceptable, double band = kDefaultAmbiguityBand);
std::string_view to_string(ConfidenceBand band);

// ---------------------------------------------------------------------------
// Zero-shot LLM classifier

struct ZeroShotDemo {
  std::string text;
  Label label = Label::Acceptable;
};

struct ZeroShotResult {
  Label label = Label::Unacceptable;
  std::string justification;
};

std::string build_zero_shot_prompt(std::span<const ZeroShotDemo> demos, std::string_view query_text);

/// Finds the "Label:" line (ACCEPTABLE/UNACCEPTABLE, any case, ':' or a dash
/// as separator) and the justification. Throws MalformedLLMOutput.
ZeroShotResult parse_zero_shot_reply(std::string_view reply);

/// The k most similar acceptable and k most similar unacceptable stored
/// revisions, interleaved acceptable-first. Throws InsufficientData.
std::vector<ZeroShotDemo> select_zero_shot_demos(const embedding::VectorStore& store,
                                                 const RevisionTable& revisions,
                                                 const embedding::EmbeddingVector& query_vec,
                                                 std::size_t k_demos, const std::string& exclude_id = {});

ZeroShotResult zero_shot_classify(llm::LlmClient& llm, const embedding::VectorStore& store,
                                  const RevisionTable& revisions, const Revision& revision,
                                  const embedding::EmbeddingVector& revision_vec, std::size_t k_demos,
                                  const llm::SamplingConfig& sampling = {});

// ---------------------------------------------------------------------------
// Evaluation

/// Acceptable is the positive class.
struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct ClassifierMetrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double f1_acceptable = 0.0;
  double f1_unacceptable = 0.0;
  double macro_f1 = 0.0;
  ConfusionMatrix confusion;
};

ClassifierMetrics metrics_from_confusion(const ConfusionMatrix& confusion);
ClassifierMetrics metrics_from_labels(std::span<const Label> truth, std::span<const Label> predicted);
ClassifierMetrics evaluate_classifier(const EnsembleModel& model, const Matrix& features,
                                      std::span<const Label> truth);

// ---------------------------------------------------------------------------
// Persistence

inline constexpr int kModelFormatVersion = 1;

nlohmann::json model_to_json(const EnsembleModel& model);
EnsembleModel model_from_json(const nlohmann::json& doc);
void save_model(const EnsembleModel& model, const std::filesystem::path& path);
EnsembleModel load_model(const std::filesystem::path& path);

nlohmann::json summary_json(const TrainingSummary& s);
TrainingSummary summary_from_json(const nlohmann::json& j);

void to_json(nlohmann::json& j, const Prediction& p);
void to_json(nlohmann::json& j, const ClassifierMetrics& m);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace revkit::classifier
