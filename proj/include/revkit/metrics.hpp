#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "revkit/classifier.hpp"
#include "revkit/embedding.hpp"

namespace revkit::metrics {

using Matrix = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kCovarianceRegularizer = 1e-6;

struct MomentSummary {
  Vec mean;
  Matrix covariance;
  std::size_t count = 0;
};

/// Sample mean and unbiased covariance plus 1e-6 * I. Rows are samples.
/// Throws TooFewVectors below two rows.
MomentSummary moments(const Matrix& samples);

/// Principal square root of a symmetric PSD matrix; negative eigenvalues
/// from round-off are clamped to zero.
Matrix sqrtm_psd(const Matrix& m);

/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), floored at 0.
double frechet_distance(const MomentSummary& a, const MomentSummary& b);

struct FidResult {
  double value = 0.0;
  // Set when either set holds fewer than dim/4 samples.
  bool low_sample_count = false;
};

/// Fréchet distance between the Gaussian moments of two embedding sets.
/// With `normalize`, rows are scaled to unit length first.
FidResult fid_datasets(const Matrix& real, const Matrix& synthetic, bool normalize = false);

/// Stacks embedding vectors as rows.
Matrix stack(std::span<const embedding::EmbeddingVector> vectors);

/// Fraction of vectors the model labels Acceptable. Throws EmptySet.
double success_rate(const classifier::EnsembleModel& model, std::span<const embedding::EmbeddingVector> vectors);

/// One JSON line per record: {revision_id, label, provision_number, vector}.
void export_embeddings(const embedding::VectorStore& store, const std::filesystem::path& path);
std::vector<embedding::EmbeddingRecord> import_embeddings(const std::filesystem::path& path,
                                                          const std::string& model_id);

}  // namespace revkit::metrics
