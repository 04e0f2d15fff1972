#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "revkit/types.hpp"

#ifndef REVKIT_FIXTURE_DIR
#error "REVKIT_FIXTURE_DIR must be defined"
#endif

namespace revkit::testing {

inline std::filesystem::path fixture_path(const std::string& name) {
  return std::filesystem::path(REVKIT_FIXTURE_DIR) / name;
}

inline std::string read_fixture(const std::string& name) {
  std::ifstream in(fixture_path(name), std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::mt19937_64 rng(std::random_device{}());
  auto dir = std::filesystem::temp_directory_path() / ("revkit-" + tag + "-" + std::to_string(rng()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

struct ProvisionTopic {
  const char* number;
  const char* base;
};

// Base clause per provision of the review fixtures.
inline constexpr std::array<ProvisionTopic, 6> kTopics = {{
    {"1", "Supplier shall invoice Buyer monthly and Buyer shall pay each invoice"},
    {"2", "Each party is liable for damages caused by its breach of this Agreement"},
    {"3", "Either party may terminate this Agreement for material breach"},
    {"4", "Supplier warrants that deliverables conform to the agreed specification"},
    {"5", "Supplier shall indemnify Buyer against claims arising from the Services"},
    {"6", "Each party shall protect the confidential information of the other party"},
}};

inline const std::vector<std::string>& acceptable_phrases() {
  static const std::vector<std::string> v = {
      "within sixty days of receipt", "capped at the fees paid", "on thirty days written notice",
      "subject to mutual agreement", "acting reasonably and in good faith", "with a reasonable cure period",
      "as required by applicable law", "for a period of twelve months"};
  return v;
}

inline const std::vector<std::string>& unacceptable_phrases() {
  static const std::vector<std::string> v = {
      "at its sole discretion", "without any notice whatsoever", "with unlimited exposure",
      "irrevocably waiving all remedies", "regardless of fault", "immediately upon demand",
      "including all consequential losses", "forever and without limitation"};
  return v;
}

/// Deterministic labeled corpus: `per_class` acceptable and unacceptable
/// revisions for each topic, built from class-specific phrase pools.
inline std::vector<Revision> labeled_corpus(std::size_t per_class, std::uint64_t seed,
                                            const std::string& id_prefix = "real") {
  std::mt19937_64 rng(seed);
  std::vector<Revision> out;
  for (const auto& topic : kTopics) {
    for (int cls = 0; cls < 2; ++cls) {
      const auto& pool = cls == 0 ? acceptable_phrases() : unacceptable_phrases();
      for (std::size_t i = 0; i < per_class; ++i) {
        std::vector<std::size_t> idx(pool.size());
        for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
        std::shuffle(idx.begin(), idx.end(), rng);
        std::string text = topic.base;
        text += " " + pool[idx[0]] + " and " + pool[idx[1]] + ".";
        Revision r;
        r.id = id_prefix + "-" + topic.number + "-" + (cls == 0 ? "a" : "u") + "-" + std::to_string(i);
        r.provision_number = topic.number;
        r.contract_id = "history";
        r.text = text;
        r.label = cls == 0 ? Label::Acceptable : Label::Unacceptable;
        r.source = Source::Negotiated;
        r.created_at = "2025-01-01T00:00:00Z";
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

/// Two-cluster mixture in `dim` dimensions with opposite decision
/// boundaries: cluster A is labeled by the sign of x1, cluster B by the
/// opposite sign, so no single linear boundary fits both.
struct Mixture {
  Eigen::MatrixXd x;
  std::vector<Label> y;
};

inline Mixture opposing_mixture(std::size_t per_cluster, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.15);
  std::uniform_real_distribution<double> side(-1.0, 1.0);
  Mixture m;
  m.x.resize(static_cast<Eigen::Index>(2 * per_cluster), 3);
  for (std::size_t i = 0; i < 2 * per_cluster; ++i) {
    const bool cluster_a = i % 2 == 0;
    double s = side(rng);
    while (std::abs(s) < 0.1) s = side(rng);
    // Cluster A sits around +e0, cluster B around -e0; x1 carries the label signal.
    const double center = cluster_a ? 3.0 : -3.0;
    const auto r = static_cast<Eigen::Index>(i);
    m.x(r, 0) = center + noise(rng);
    m.x(r, 1) = s;
    m.x(r, 2) = noise(rng);
    const bool positive = cluster_a ? s > 0 : s < 0;
    m.y.push_back(positive ? Label::Acceptable : Label::Unacceptable);
  }
  return m;
}

}  // namespace revkit::testing
