#include "revkit/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <regex>

#include "revkit/codec.hpp"
#include "revkit/error.hpp"

namespace revkit::classifier {
namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double squared_distance(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b) {
  return (a - b).squaredNorm();
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

int nearest_centroid(const Matrix& centroids, const Eigen::Ref<const Vec>& point, double* dist = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = squared_distance(centroids.row(c).transpose(), point);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist) *dist = best_d;
  return best;
}

}  // namespace

void validate(const TrainConfig& c) {
  if (c.k < 1) throw Error(ErrorCode::Validation, "K must be at least 1");
  if (!(c.learning_rate > 0)) throw Error(ErrorCode::Validation, "learning rate must be positive");
  if (c.epochs < 1) throw Error(ErrorCode::Validation, "epochs must be at least 1");
  if (c.l2_lambda < 0) throw Error(ErrorCode::Validation, "l2 lambda must be non-negative");
  if (!(c.val_fraction > 0 && c.val_fraction < 1))
    throw Error(ErrorCode::Validation, "val_fraction must lie in (0, 1)");
}

Vec unit(const Eigen::Ref<const Vec>& x) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) sum += x[i] * x[i];
  if (sum == 0.0) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
  const double norm = std::sqrt(sum);
  Vec out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = x[i] / norm;
  return out;
}

Matrix normalize_rows(const Matrix& points) {
  Matrix out(points.rows(), points.cols());
  for (Eigen::Index r = 0; r < points.rows(); ++r) out.row(r) = unit(points.row(r).transpose()).transpose();
  return out;
}

// --- k-means ------------------------------------------------------------------

KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed) {
  const Eigen::Index n = points.rows();
  if (k < 1) throw Error(ErrorCode::Validation, "K must be at least 1");
  if (n < k)
    throw Error(ErrorCode::TooFewPoints, std::to_string(n) + " points cannot form " + std::to_string(k) + " clusters");

  std::mt19937_64 rng(seed);
  KMeansResult res;
  res.centroids.resize(k, points.cols());

  // k-means++ seeding
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  Eigen::Index pick = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
  for (int c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (double d : d2) total += d;
      if (total > 0.0) {
        const double target = uniform01(rng) * total;
        double acc = 0.0;
        pick = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
          acc += d2[static_cast<std::size_t>(i)];
          if (acc > target && d2[static_cast<std::size_t>(i)] > 0.0) {
            pick = i;
            break;
          }
        }
      } else {
        // Every point coincides with a chosen centroid.
        pick = 0;
        while (chosen[static_cast<std::size_t>(pick)]) ++pick;
      }
    }
    chosen[static_cast<std::size_t>(pick)] = true;
    res.centroids.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)],
                                                 squared_distance(points.row(i).transpose(), points.row(pick).transpose()));
  }

  res.assignments.assign(static_cast<std::size_t>(n), 0);
  std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
  auto assign = [&] {
    for (Eigen::Index i = 0; i < n; ++i)
      res.assignments[static_cast<std::size_t>(i)] =
          nearest_centroid(res.centroids, points.row(i).transpose(), &dist[static_cast<std::size_t>(i)]);
  };

  for (int iter = 1; iter <= kKMeansMaxIterations; ++iter) {
    res.iterations = iter;
    assign();

    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (int a : res.assignments) ++counts[static_cast<std::size_t>(a)];
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      // Steal the point farthest from its centroid among clusters that can spare one.
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto from = static_cast<std::size_t>(res.assignments[static_cast<std::size_t>(i)]);
        if (counts[from] < 2) continue;
        if (far < 0 || dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)]) far = i;
      }
      if (far < 0) break;
      --counts[static_cast<std::size_t>(res.assignments[static_cast<std::size_t>(far)])];
      res.assignments[static_cast<std::size_t>(far)] = c;
      dist[static_cast<std::size_t>(far)] = 0.0;
      counts[static_cast<std::size_t>(c)] = 1;
    }

    Matrix updated = Matrix::Zero(k, points.cols());
    for (Eigen::Index i = 0; i < n; ++i) updated.row(res.assignments[static_cast<std::size_t>(i)]) += points.row(i);
    for (int c = 0; c < k; ++c) updated.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);

    double shift = 0.0;
    for (int c = 0; c < k; ++c) shift = std::max(shift, (updated.row(c) - res.centroids.row(c)).norm());
    res.centroids = std::move(updated);
    if (shift < kKMeansTolerance) break;
  }

  assign();
  res.inertia = 0.0;
  for (double d : dist) res.inertia += d;
  return res;
}

// --- logistic -----------------------------------------------------------------

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double LogisticHead::probability(const Eigen::Ref<const Vec>& x) const {
  if (constant_probability) return *constant_probability;
  return sigmoid(weights.dot(x) + bias);
}

double logistic_loss(const Matrix& x, const Vec& y, const Vec& weights, double bias, double l2_lambda) {
  const Vec z = (x * weights).array() + bias;
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) total += softplus(z[i]) - y[i] * z[i];
  return total / static_cast<double>(z.size()) + 0.5 * l2_lambda * weights.squaredNorm();
}

Gradient logistic_gradient(const Matrix& x, const Vec& y, const Vec& weights, double bias, double l2_lambda) {
  const double n = static_cast<double>(x.rows());
  Vec residual = (x * weights).array() + bias;
  for (Eigen::Index i = 0; i < residual.size(); ++i) residual[i] = sigmoid(residual[i]) - y[i];
  return {x.transpose() * residual / n + l2_lambda * weights, residual.sum() / n};
}

LogisticFit train_logistic(const Matrix& x, const Vec& y, const TrainConfig& config) {
  if (x.rows() == 0) throw Error(ErrorCode::TooFewPoints, "no training rows");
  if (x.rows() != y.size()) throw Error(ErrorCode::DimMismatch, "feature and label counts differ");

  LogisticFit fit;
  fit.head.weights = Vec::Zero(x.cols());
  const double positives = y.sum();
  if (positives == 0.0 || positives == static_cast<double>(y.size())) {
    const double prior = positives / static_cast<double>(y.size());
    const double p = std::clamp(prior, kConstantHeadFloor, kConstantHeadCeiling);
    fit.head.constant_probability = p;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) loss -= y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p);
    fit.final_loss = loss / static_cast<double>(y.size());
    fit.loss_history = {fit.final_loss};
    return fit;
  }

  fit.loss_history.reserve(static_cast<std::size_t>(config.epochs) + 1);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    fit.loss_history.push_back(logistic_loss(x, y, fit.head.weights, fit.head.bias, config.l2_lambda));
    const Gradient g = logistic_gradient(x, y, fit.head.weights, fit.head.bias, config.l2_lambda);
    fit.head.weights -= config.learning_rate * g.weights;
    fit.head.bias -= config.learning_rate * g.bias;
  }
  fit.final_loss = logistic_loss(x, y, fit.head.weights, fit.head.bias, config.l2_lambda);
  fit.loss_history.push_back(fit.final_loss);
  return fit;
}

// --- ensemble -----------------------------------------------------------------

Split split_train_val(std::size_t n, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i + 1 < n; ++i) std::swap(order[i], order[i + static_cast<std::size_t>(rng() % (n - i))]);

  std::size_t n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
  if (n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  else n_val = 0;

  Split s;
  s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

Vec label_targets(std::span<const Label> labels) {
  Vec y(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == Label::Unlabeled) throw Error(ErrorCode::Validation, "training data contains unlabeled rows");
    y[static_cast<Eigen::Index>(i)] = labels[i] == Label::Acceptable ? 1.0 : 0.0;
  }
  return y;
}

namespace {

Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

Vec take_entries(const Vec& v, const std::vector<std::size_t>& rows) {
  Vec out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[static_cast<Eigen::Index>(rows[i])];
  return out;
}

}  // namespace

EnsembleModel train_ensemble(const Matrix& features, std::span<const Label> labels, const TrainConfig& config,
                             std::string embedding_model) {
  validate(config);
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw Error(ErrorCode::DimMismatch, "feature and label counts differ");
  if (features.rows() < 2 * config.k)
    throw Error(ErrorCode::TooFewPoints, "need at least " + std::to_string(2 * config.k) + " records for K=" +
                                             std::to_string(config.k));

  const Matrix x = normalize_rows(features);
  const Vec y = label_targets(labels);
  const Split split = split_train_val(static_cast<std::size_t>(x.rows()), config.val_fraction, config.seed);
  const Matrix x_train = take_rows(x, split.train);
  const Vec y_train = take_entries(y, split.train);

  const KMeansResult clusters = kmeans(x_train, config.k, config.seed);

  EnsembleModel model;
  model.embedding_model = std::move(embedding_model);
  model.dim = features.cols();
  model.centroids = clusters.centroids;
  model.train_config = config;
  model.metrics.train_size = split.train.size();
  model.metrics.val_size = split.val.size();

  for (int c = 0; c < config.k; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < clusters.assignments.size(); ++i)
      if (clusters.assignments[i] == c) members.push_back(i);
    const Vec yc = take_entries(y_train, members);
    const LogisticFit fit = train_logistic(take_rows(x_train, members), yc, config);
    model.heads.push_back(fit.head);

    ClusterSummary s;
    s.cluster_id = c;
    s.train_count = members.size();
    s.acceptable = static_cast<std::size_t>(yc.sum());
    s.unacceptable = members.size() - s.acceptable;
    s.constant_head = fit.head.constant_probability.has_value();
    s.final_loss = fit.final_loss;
    model.metrics.clusters.push_back(s);
  }

  std::size_t train_correct = 0;
  for (Eigen::Index i = 0; i < x_train.rows(); ++i)
    if ((predict(model, x_train.row(i).transpose()).label == Label::Acceptable) == (y_train[i] == 1.0)) ++train_correct;
  model.metrics.train_accuracy = static_cast<double>(train_correct) / static_cast<double>(x_train.rows());

  if (!split.val.empty()) {
    std::vector<std::size_t> val_correct(static_cast<std::size_t>(config.k), 0);
    std::size_t correct = 0;
    for (std::size_t idx : split.val) {
      const Prediction p = predict(model, x.row(static_cast<Eigen::Index>(idx)).transpose());
      auto& s = model.metrics.clusters[static_cast<std::size_t>(p.cluster_id)];
      ++s.val_count;
      if ((p.label == Label::Acceptable) == (y[static_cast<Eigen::Index>(idx)] == 1.0)) {
        ++correct;
        ++val_correct[static_cast<std::size_t>(p.cluster_id)];
      }
    }
    model.metrics.val_accuracy = static_cast<double>(correct) / static_cast<double>(split.val.size());
    for (auto& s : model.metrics.clusters)
      if (s.val_count > 0)
        s.val_accuracy = static_cast<double>(val_correct[static_cast<std::size_t>(s.cluster_id)]) /
                         static_cast<double>(s.val_count);
  }
  return model;
}

Prediction predict(const EnsembleModel& model, const Eigen::Ref<const Vec>& x) {
  if (x.size() != model.dim)
    throw Error(ErrorCode::DimMismatch, "model expects dim " + std::to_string(model.dim) + ", got " +
                                            std::to_string(x.size()));
  if (model.heads.empty()) throw Error(ErrorCode::Validation, "model has no heads");
  const Vec xn = unit(x);

  Prediction p;
  p.routing_similarity = -std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < model.centroids.rows(); ++c) {
    const double cn = model.centroids.row(c).norm();
    const double sim = cn == 0.0 ? -std::numeric_limits<double>::infinity()
                                 : model.centroids.row(c).dot(xn.transpose()) / cn;
    if (sim > p.routing_similarity) {
      p.routing_similarity = sim;
      p.cluster_id = static_cast<int>(c);
    }
  }
  p.probability_acceptable = model.heads[static_cast<std::size_t>(p.cluster_id)].probability(xn);
  p.label = p.probability_acceptable >= kDecisionThreshold ? Label::Acceptable : Label::Unacceptable;
  return p;
}

Prediction predict(const EnsembleModel& model, const embedding::EmbeddingVector& x) {
  return predict(model, x.values.cast<double>());
}

ConfidenceBand confidence_band(double probability_acceptable, double band) {
  return std::abs(probability_acceptable - 0.5) < band ? ConfidenceBand::Ambiguous : ConfidenceBand::Confident;
}

std::string_view to_string(ConfidenceBand band) {
  return band == ConfidenceBand::Ambiguous ? "ambiguous" : "confident";
}

// --- zero-shot ----------------------------------------------------------------

std::string build_zero_shot_prompt(std::span<const ZeroShotDemo> demos, std::string_view query_text) {
  std::string prompt =
      "Below are examples of contract clause revisions labeled as either acceptable or unacceptable. "
      "Analyze the patterns in these examples and determine whether the given query revision should be "
      "classified as ACCEPTABLE or UNACCEPTABLE. Provide a brief justification for your classification.\n";
  for (std::size_t i = 0; i < demos.size(); ++i) {
    prompt += "\nDemonstration " + std::to_string(i + 1) + "\n";
    prompt += "Revision: " + demos[i].text + "\n";
    prompt += std::string("Label: ") + (demos[i].label == Label::Acceptable ? "ACCEPTABLE" : "UNACCEPTABLE") + "\n";
  }
  prompt += "\nQuery Revision: ";
  prompt += query_text;
  prompt +=
      "\n\nOutput:\n"
      "Label: ACCEPTABLE\n"
      "Justification: [Explain the decision]\n";
  return prompt;
}

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string strip_leading_separators(std::string s) {
  static const std::vector<std::string> seps = {"\xE2\x80\x94", "\xE2\x80\x93", "-", ":", " ", "\t"};
  bool changed = true;
  while (changed && !s.empty()) {
    changed = false;
    for (const auto& sep : seps)
      if (s.rfind(sep, 0) == 0) {
        s.erase(0, sep.size());
        changed = true;
      }
  }
  return s;
}

}  // namespace

ZeroShotResult parse_zero_shot_reply(std::string_view reply) {
  static const std::regex label_re(
      R"(^[\s*#]*label[\s*]*(?::|-|\xE2\x80\x94|\xE2\x80\x93)[\s*]*(unacceptable|acceptable)\b(.*)$)",
      std::regex::icase);
  static const std::regex justification_re(R"(^[\s*#]*justification[\s*]*:[\s*]*(.*)$)", std::regex::icase);

  std::vector<std::string> lines;
  {
    std::size_t pos = 0;
    while (pos <= reply.size()) {
      std::size_t end = reply.find('\n', pos);
      if (end == std::string_view::npos) end = reply.size();
      lines.emplace_back(reply.substr(pos, end - pos));
      pos = end + 1;
    }
  }

  std::optional<ZeroShotResult> result;
  std::string inline_justification;
  std::optional<std::string> block_justification;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::smatch m;
    if (!result && std::regex_match(lines[i], m, label_re)) {
      std::string word = m[1].str();
      std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) { return std::tolower(c); });
      result = ZeroShotResult{word == "acceptable" ? Label::Acceptable : Label::Unacceptable, {}};
      inline_justification = trim(strip_leading_separators(m[2].str()));
    } else if (result && !block_justification && std::regex_match(lines[i], m, justification_re)) {
      std::string text = m[1].str();
      for (std::size_t j = i + 1; j < lines.size(); ++j) text += "\n" + lines[j];
      block_justification = trim(text);
    }
  }
  if (!result) throw Error(ErrorCode::MalformedLLMOutput, "reply has no Label line");
  result->justification = block_justification ? *block_justification : inline_justification;
  return *result;
}

std::vector<ZeroShotDemo> select_zero_shot_demos(const embedding::VectorStore& store, const RevisionTable& revisions,
                                                 const embedding::EmbeddingVector& query_vec, std::size_t k_demos,
                                                 const std::string& exclude_id) {
  if (k_demos == 0) throw Error(ErrorCode::PreconditionViolation, "k_demos must be positive");
  auto top = [&](Label label) {
    std::vector<embedding::Hit> hits;
    try {
      hits = store.query(query_vec, embedding::Metric::Cosine, k_demos, [&](const embedding::EmbeddingRecord& r) {
        return r.label == label && r.revision_id != exclude_id;
      });
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyStore) throw;
    }
    if (hits.size() < k_demos)
      throw Error(ErrorCode::InsufficientData, "store holds fewer than " + std::to_string(k_demos) + " " +
                                                   std::string(to_string(label)) + " revisions");
    return hits;
  };
  const auto ok = top(Label::Acceptable);
  const auto bad = top(Label::Unacceptable);
  std::vector<ZeroShotDemo> demos;
  for (std::size_t i = 0; i < k_demos; ++i) {
    demos.push_back({revisions.at(ok[i].record.revision_id).text, Label::Acceptable});
    demos.push_back({revisions.at(bad[i].record.revision_id).text, Label::Unacceptable});
  }
  return demos;
}

ZeroShotResult zero_shot_classify(llm::LlmClient& llm, const embedding::VectorStore& store,
                                  const RevisionTable& revisions, const Revision& revision,
                                  const embedding::EmbeddingVector& revision_vec, std::size_t k_demos,
                                  const llm::SamplingConfig& sampling) {
  const auto demos = select_zero_shot_demos(store, revisions, revision_vec, k_demos, revision.id);
  return parse_zero_shot_reply(llm.complete(llm::user_prompt(build_zero_shot_prompt(demos, revision.text), sampling)));
}

// --- evaluation ---------------------------------------------------------------

ClassifierMetrics metrics_from_confusion(const ConfusionMatrix& cm) {
  ClassifierMetrics m;
  m.confusion = cm;
  m.count = cm.tp + cm.fp + cm.fn + cm.tn;
  if (m.count == 0) throw Error(ErrorCode::EmptyTestSet, "no test records");
  auto f1 = [](std::size_t tp, std::size_t fp, std::size_t fn) {
    const std::size_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  };
  m.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(m.count);
  m.f1_acceptable = f1(cm.tp, cm.fp, cm.fn);
  m.f1_unacceptable = f1(cm.tn, cm.fn, cm.fp);
  m.macro_f1 = 0.5 * (m.f1_acceptable + m.f1_unacceptable);
  return m;
}

ClassifierMetrics metrics_from_labels(std::span<const Label> truth, std::span<const Label> predicted) {
  if (truth.size() != predicted.size()) throw Error(ErrorCode::DimMismatch, "label counts differ");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool t = truth[i] == Label::Acceptable, p = predicted[i] == Label::Acceptable;
    if (truth[i] == Label::Unlabeled) throw Error(ErrorCode::Validation, "test set contains unlabeled rows");
    if (t && p) ++cm.tp;
    else if (!t && p) ++cm.fp;
    else if (t && !p) ++cm.fn;
    else ++cm.tn;
  }
  return metrics_from_confusion(cm);
}

ClassifierMetrics evaluate_classifier(const EnsembleModel& model, const Matrix& features, std::span<const Label> truth) {
  if (truth.empty() || features.rows() == 0) throw Error(ErrorCode::EmptyTestSet, "no test records");
  if (static_cast<std::size_t>(features.rows()) != truth.size())
    throw Error(ErrorCode::DimMismatch, "feature and label counts differ");
  std::vector<Label> predicted;
  predicted.reserve(truth.size());
  for (Eigen::Index i = 0; i < features.rows(); ++i) predicted.push_back(predict(model, features.row(i).transpose()).label);
  return metrics_from_labels(truth, predicted);
}

// --- persistence --------------------------------------------------------------

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"k", c.k},
       {"learning_rate", c.learning_rate},
       {"epochs", c.epochs},
       {"l2_lambda", c.l2_lambda},
       {"seed", c.seed},
       {"val_fraction", c.val_fraction}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.k = j.value("k", d.k);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.epochs = j.value("epochs", d.epochs);
  c.l2_lambda = j.value("l2_lambda", d.l2_lambda);
  c.seed = j.value("seed", d.seed);
  c.val_fraction = j.value("val_fraction", d.val_fraction);
}

nlohmann::json summary_json(const TrainingSummary& s) {
  nlohmann::json clusters = nlohmann::json::array();
  for (const auto& c : s.clusters) {
    nlohmann::json cj = {{"cluster_id", c.cluster_id},     {"train_count", c.train_count},
                         {"acceptable", c.acceptable},     {"unacceptable", c.unacceptable},
                         {"constant_head", c.constant_head}, {"final_loss", c.final_loss},
                         {"val_count", c.val_count}};
    cj["val_accuracy"] = c.val_accuracy ? nlohmann::json(*c.val_accuracy) : nlohmann::json(nullptr);
    clusters.push_back(cj);
  }
  nlohmann::json j = {{"train_size", s.train_size},
                      {"val_size", s.val_size},
                      {"train_accuracy", s.train_accuracy},
                      {"clusters", clusters}};
  j["val_accuracy"] = s.val_accuracy ? nlohmann::json(*s.val_accuracy) : nlohmann::json(nullptr);
  return j;
}

TrainingSummary summary_from_json(const nlohmann::json& j) {
  TrainingSummary s;
  s.train_size = j.value("train_size", std::size_t{0});
  s.val_size = j.value("val_size", std::size_t{0});
  s.train_accuracy = j.value("train_accuracy", 0.0);
  if (j.contains("val_accuracy") && !j["val_accuracy"].is_null()) s.val_accuracy = j["val_accuracy"].get<double>();
  for (const auto& cj : j.value("clusters", nlohmann::json::array())) {
    ClusterSummary c;
    c.cluster_id = cj.value("cluster_id", 0);
    c.train_count = cj.value("train_count", std::size_t{0});
    c.acceptable = cj.value("acceptable", std::size_t{0});
    c.unacceptable = cj.value("unacceptable", std::size_t{0});
    c.constant_head = cj.value("constant_head", false);
    c.final_loss = cj.value("final_loss", 0.0);
    c.val_count = cj.value("val_count", std::size_t{0});
    if (cj.contains("val_accuracy") && !cj["val_accuracy"].is_null()) c.val_accuracy = cj["val_accuracy"].get<double>();
    s.clusters.push_back(c);
  }
  return s;
}

nlohmann::json model_to_json(const EnsembleModel& model) {
  // Row-major centroid payload.
  std::vector<double> centroids;
  centroids.reserve(static_cast<std::size_t>(model.centroids.size()));
  for (Eigen::Index r = 0; r < model.centroids.rows(); ++r)
    for (Eigen::Index c = 0; c < model.centroids.cols(); ++c) centroids.push_back(model.centroids(r, c));

  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : model.heads) {
    nlohmann::json hj = {{"weights", encode_doubles(std::span<const double>(h.weights.data(), static_cast<std::size_t>(h.weights.size())))},
                         {"bias", encode_doubles(std::span<const double>(&h.bias, 1))}};
    hj["constant_probability"] = h.constant_probability
                                     ? nlohmann::json(encode_doubles(std::span<const double>(&*h.constant_probability, 1)))
                                     : nlohmann::json(nullptr);
    heads.push_back(hj);
  }
  return {{"format_version", kModelFormatVersion},
          {"model_id", model.model_id},
          {"version", model.version},
          {"embedding_model", model.embedding_model},
          {"dim", model.dim},
          {"k", model.k()},
          {"centroids", encode_doubles(centroids)},
          {"heads", heads},
          {"train_config", model.train_config},
          {"metrics", summary_json(model.metrics)}};
}

EnsembleModel model_from_json(const nlohmann::json& doc) {
  try {
    if (!doc.contains("format_version")) throw Error(ErrorCode::Validation, "model file lacks format_version");
    if (doc.at("format_version").get<int>() != kModelFormatVersion)
      throw Error(ErrorCode::Validation, "unsupported model format_version");
    EnsembleModel m;
    m.model_id = doc.value("model_id", std::string{});
    m.version = doc.value("version", std::uint64_t{0});
    m.embedding_model = doc.value("embedding_model", std::string{});
    m.dim = doc.at("dim").get<Eigen::Index>();
    const int k = doc.at("k").get<int>();
    const auto centroids = decode_doubles(doc.at("centroids").get<std::string>());
    if (k < 1 || centroids.size() != static_cast<std::size_t>(k) * static_cast<std::size_t>(m.dim))
      throw Error(ErrorCode::Validation, "centroid payload does not match k x dim");
    m.centroids.resize(k, m.dim);
    for (Eigen::Index r = 0; r < k; ++r)
      for (Eigen::Index c = 0; c < m.dim; ++c) m.centroids(r, c) = centroids[static_cast<std::size_t>(r * m.dim + c)];
    for (const auto& hj : doc.at("heads")) {
      LogisticHead h;
      const auto w = decode_doubles(hj.at("weights").get<std::string>());
      if (w.size() != static_cast<std::size_t>(m.dim)) throw Error(ErrorCode::Validation, "head weight dim mismatch");
      h.weights = Eigen::Map<const Vec>(w.data(), m.dim);
      const auto b = decode_doubles(hj.at("bias").get<std::string>());
      if (b.size() != 1) throw Error(ErrorCode::Validation, "bad bias payload");
      h.bias = b[0];
      if (hj.contains("constant_probability") && !hj["constant_probability"].is_null()) {
        const auto p = decode_doubles(hj["constant_probability"].get<std::string>());
        if (p.size() != 1) throw Error(ErrorCode::Validation, "bad constant payload");
        h.constant_probability = p[0];
      }
      m.heads.push_back(std::move(h));
    }
    if (m.k() != k) throw Error(ErrorCode::Validation, "head count does not match k");
    m.train_config = doc.value("train_config", nlohmann::json::object()).get<TrainConfig>();
    m.metrics = summary_from_json(doc.value("metrics", nlohmann::json::object()));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Validation, std::string("malformed model file: ") + e.what());
  }
}

void save_model(const EnsembleModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << model_to_json(model).dump(2) << '\n';
  if (!out.flush()) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

EnsembleModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Validation, "model file " + path.string() + " is not JSON: " + e.what());
  }
  return model_from_json(doc);
}

void to_json(nlohmann::json& j, const Prediction& p) {
  j = {{"label", to_string(p.label)},
       {"probability_acceptable", p.probability_acceptable},
       {"cluster_id", p.cluster_id},
       {"routing_similarity", p.routing_similarity}};
}

void to_json(nlohmann::json& j, const ClassifierMetrics& m) {
  j = {{"count", m.count},
       {"accuracy", m.accuracy},
       {"f1_acceptable", m.f1_acceptable},
       {"f1_unacceptable", m.f1_unacceptable},
       {"macro_f1", m.macro_f1},
       {"f1", m.f1_acceptable},
       {"confusion", {{"tp", m.confusion.tp}, {"fp", m.confusion.fp}, {"fn", m.confusion.fn}, {"tn", m.confusion.tn}}}};
}

}  // namespace revkit::classifier
