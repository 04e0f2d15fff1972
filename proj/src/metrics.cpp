#include "revkit/metrics.hpp"

#include <fstream>

#include <Eigen/Eigenvalues>

#include "revkit/error.hpp"

namespace revkit::metrics {

MomentSummary moments(const Matrix& samples) {
  if (samples.rows() < 2)
    throw Error(ErrorCode::TooFewVectors, "moments need at least two vectors, got " + std::to_string(samples.rows()));
  MomentSummary m;
  m.count = static_cast<std::size_t>(samples.rows());
  m.mean = samples.colwise().mean().transpose();
  const Matrix centered = samples.rowwise() - m.mean.transpose();
  m.covariance = (centered.transpose() * centered) / static_cast<double>(samples.rows() - 1);
  m.covariance = 0.5 * (m.covariance + m.covariance.transpose());
  m.covariance.diagonal().array() += kCovarianceRegularizer;
  return m;
}

Matrix sqrtm_psd(const Matrix& m) {
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw Error(ErrorCode::Validation, "eigendecomposition failed");
  const Vec roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

double frechet_distance(const MomentSummary& a, const MomentSummary& b) {
  if (a.mean.size() != b.mean.size() || a.covariance.rows() != b.covariance.rows())
    throw Error(ErrorCode::DimMismatch, "moment summaries have different dimensions");
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const Matrix root_a = sqrtm_psd(a.covariance);
  const Matrix cross = sqrtm_psd(root_a * b.covariance * root_a);
  const double trace_term = a.covariance.trace() + b.covariance.trace() - 2.0 * cross.trace();
  return std::max(0.0, mean_term + trace_term);
}

FidResult fid_datasets(const Matrix& real, const Matrix& synthetic, bool normalize) {
  if (real.cols() != synthetic.cols()) throw Error(ErrorCode::DimMismatch, "embedding sets have different dimensions");
  FidResult r;
  const double quarter_dim = static_cast<double>(real.cols()) / 4.0;
  r.low_sample_count = static_cast<double>(real.rows()) < quarter_dim || static_cast<double>(synthetic.rows()) < quarter_dim;
  if (normalize)
    r.value = frechet_distance(moments(classifier::normalize_rows(real)), moments(classifier::normalize_rows(synthetic)));
  else
    r.value = frechet_distance(moments(real), moments(synthetic));
  return r;
}

Matrix stack(std::span<const embedding::EmbeddingVector> vectors) {
  if (vectors.empty()) return Matrix(0, 0);
  Matrix out(static_cast<Eigen::Index>(vectors.size()), vectors.front().dim());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].dim() != out.cols()) throw Error(ErrorCode::DimMismatch, "vectors have different dimensions");
    out.row(static_cast<Eigen::Index>(i)) = vectors[i].values.cast<double>().transpose();
  }
  return out;
}

double success_rate(const classifier::EnsembleModel& model, std::span<const embedding::EmbeddingVector> vectors) {
  if (vectors.empty()) throw Error(ErrorCode::EmptySet, "no revisions to score");
  std::size_t acceptable = 0;
  for (const auto& v : vectors)
    if (classifier::predict(model, v).label == Label::Acceptable) ++acceptable;
  return static_cast<double>(acceptable) / static_cast<double>(vectors.size());
}

void export_embeddings(const embedding::VectorStore& store, const std::filesystem::path& path) {
  if (store.empty()) throw Error(ErrorCode::EmptyStore, "nothing to export");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  for (const auto& r : store.records()) {
    std::vector<float> values(r.vector.values.data(), r.vector.values.data() + r.vector.values.size());
    out << nlohmann::json{{"revision_id", r.revision_id},
                          {"label", to_string(r.label)},
                          {"provision_number", r.provision_number},
                          {"vector", values}}
               .dump()
        << '\n';
  }
  if (!out.flush()) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

std::vector<embedding::EmbeddingRecord> import_embeddings(const std::filesystem::path& path,
                                                          const std::string& model_id) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::vector<embedding::EmbeddingRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    embedding::EmbeddingRecord r;
    r.revision_id = j.at("revision_id").get<std::string>();
    r.label = parse_label(j.at("label").get<std::string>());
    r.provision_number = j.at("provision_number").get<std::string>();
    const auto values = j.at("vector").get<std::vector<float>>();
    r.vector.values = Eigen::Map<const embedding::Vector<float>>(values.data(), static_cast<Eigen::Index>(values.size()));
    r.vector.model_id = model_id;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace revkit::metrics
