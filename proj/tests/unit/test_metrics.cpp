#include <doctest.h>

#include <fstream>
#include <random>

#include "revkit/metrics.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace revkit;
using namespace revkit::metrics;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::Io;
}

MomentSummary summary(Vec mean, Matrix cov) {
  MomentSummary s;
  s.mean = std::move(mean);
  s.covariance = std::move(cov);
  s.count = 100;
  return s;
}

embedding::EmbeddingVector ev(float x, float y) {
  embedding::Vector<float> v(2);
  v << x, y;
  return {v, "m"};
}

}  // namespace

TEST_CASE("moments") {
  Matrix two(2, 2);
  two << 0, 0, 2, 0;
  const auto m = moments(two);
  CHECK(m.mean.isApprox(Vec{{1.0, 0.0}}));
  CHECK(m.covariance(0, 0) == doctest::Approx(2.0 + 1e-6).epsilon(1e-12));
  CHECK(m.covariance(1, 1) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(m.covariance(0, 1) == 0.0);

  const Matrix same = Matrix::Constant(5, 3, 0.7);
  CHECK(moments(same).covariance.isApprox(1e-6 * Matrix::Identity(3, 3)));
  CHECK(code_of([] { moments(Matrix::Ones(1, 3)); }) == ErrorCode::TooFewVectors);
}

TEST_CASE("matrix square root") {
  Matrix a(2, 2);
  a << 4, 1, 1, 3;
  const Matrix r = sqrtm_psd(a);
  CHECK((r * r).isApprox(a, 1e-12));
  CHECK(r.isApprox(r.transpose()));
}

TEST_CASE("frechet distance closed forms") {
  Matrix cov(3, 3);
  cov << 2, 0.3, 0, 0.3, 1, 0.2, 0, 0.2, 0.5;
  const auto a = summary(Vec{{0.1, -0.4, 2.0}}, cov);
  CHECK(std::abs(frechet_distance(a, a)) < 1e-6);

  const auto shifted = summary(a.mean + Vec{{1.0, 0.0, 0.0}}, cov);
  CHECK(frechet_distance(a, shifted) == doctest::Approx(1.0).epsilon(1e-6));

  const auto one = summary(Vec{{0.0}}, Matrix::Constant(1, 1, 1.0));
  const auto four = summary(Vec{{0.0}}, Matrix::Constant(1, 1, 4.0));
  CHECK(frechet_distance(one, four) == doctest::Approx(1.0).epsilon(1e-6));

  // 1-D closed form with a mean offset: (dmu)^2 + (s1 - s2)^2.
  const auto moved = summary(Vec{{3.0}}, Matrix::Constant(1, 1, 9.0));
  CHECK(frechet_distance(one, moved) == doctest::Approx(9.0 + 4.0).epsilon(1e-9));
  CHECK(code_of([&] { frechet_distance(one, a); }) == ErrorCode::DimMismatch);
}

TEST_CASE("fid on sampled datasets") {
  std::mt19937_64 rng(21);
  const Eigen::Index d = 8;
  const Matrix sample = testing::gaussian_sample(rng, 2000, Vec::Zero(d), Matrix::Identity(d, d));
  const Matrix first = sample.topRows(1000), second = sample.bottomRows(1000);
  const auto halves = fid_datasets(first, second);
  CHECK(halves.value < 0.1);
  CHECK_FALSE(halves.low_sample_count);
  CHECK(std::abs(fid_datasets(sample, sample).value) < 1e-6);

  Vec offset = Vec::Zero(d);
  offset[0] = 2.0;
  const Matrix far = second.rowwise() + offset.transpose();
  CHECK(fid_datasets(first, far).value >= halves.value + 3.5);

  const Matrix wide = testing::gaussian_sample(rng, 6, Vec::Zero(16), Matrix::Identity(16, 16));
  const auto small = fid_datasets(wide.topRows(3), wide.bottomRows(3));
  CHECK(small.low_sample_count);

  const auto normalized = fid_datasets(first, second, true);
  CHECK(normalized.value < halves.value);
  CHECK(code_of([&] { fid_datasets(first, Matrix::Zero(4, 3)); }) == ErrorCode::DimMismatch);
}

TEST_CASE("success rate") {
  classifier::EnsembleModel model;
  model.dim = 2;
  model.centroids = Matrix::Identity(1, 2);
  model.heads = {{Vec::Zero(2), 0.0, 0.9}};
  std::vector<embedding::EmbeddingVector> vs(5, ev(1, 2));
  CHECK(success_rate(model, vs) == 1.0);

  // Head keyed on the second coordinate: positive means acceptable.
  model.heads = {{Vec{{0.0, 10.0}}, 0.0, std::nullopt}};
  std::vector<embedding::EmbeddingVector> mixed;
  for (int i = 0; i < 8; ++i) mixed.push_back(ev(1, 1));
  for (int i = 0; i < 2; ++i) mixed.push_back(ev(1, -1));
  CHECK(success_rate(model, mixed) == doctest::Approx(0.8));
  CHECK(code_of([&] { success_rate(model, {}); }) == ErrorCode::EmptySet);
}

TEST_CASE("embedding export round trip") {
  embedding::VectorStore store;
  store.add({"a", ev(1, 2), Label::Acceptable, "1"});
  store.add({"b", ev(3, 4), Label::Unacceptable, "2"});
  store.add({"c", ev(-1, 0.5f), Label::Unlabeled, "3"});
  const auto dir = testing::temp_dir("export");
  export_embeddings(store, dir / "e.jsonl");
  std::ifstream in(dir / "e.jsonl");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 3);
  const auto back = import_embeddings(dir / "e.jsonl", "m");
  REQUIRE(back.size() == 3);
  CHECK(back[1].revision_id == "b");
  CHECK(back[1].vector.values == ev(3, 4).values);
  CHECK(back[2].label == Label::Unlabeled);
  CHECK(stack(std::vector{back[0].vector, back[1].vector}).rows() == 2);
  CHECK(code_of([&] { export_embeddings(embedding::VectorStore{}, dir / "x.jsonl"); }) == ErrorCode::EmptyStore);
  std::filesystem::remove_all(dir);
}
