#include <doctest.h>

#include <fstream>
#include <random>

#include "revkit/synthgen.hpp"
#include "fixtures.hpp"

using namespace revkit;
using namespace revkit::synthgen;
using embedding::EmbeddingVector;
using embedding::VectorStore;

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

EmbeddingVector point(float x, float y) {
  embedding::Vector<float> v(2);
  v << x, y;
  return {v, "axis"};
}

// Texts mentioning "fair" land on the x axis, everything else on y.
class AxisEmbedder final : public embedding::EmbeddingProvider {
 public:
  std::string model_id() const override { return "axis"; }
  std::vector<std::vector<float>> embed_raw(std::span<const std::string> texts) override {
    std::vector<std::vector<float>> out;
    for (const auto& t : texts) out.push_back(t.find("fair") != std::string::npos ? std::vector<float>{1, 0} : std::vector<float>{0, 1});
    return out;
  }
};

// 20 acceptable records around (1,0), 20 unacceptable around (0,1).
VectorStore axis_store() {
  VectorStore s;
  for (int i = 0; i < 20; ++i) {
    const float d = 0.01f * static_cast<float>(i);
    s.add({"a" + std::to_string(i), point(1 + d, d), Label::Acceptable, "1"});
    s.add({"u" + std::to_string(i), point(d, 1 + d), Label::Unacceptable, "1"});
  }
  return s;
}

std::vector<DemoTriple> demo_pool() {
  return {{"1", "Payment within 60 days.", "Payment within 45 days.", "Payment on demand."},
          {"2", "Liability capped at fees.", "Liability capped at twice the fees.", "Unlimited liability."},
          {"3", "Terminate on 90 days notice.", "Terminate on 60 days notice.", "Terminate without notice."},
          {"7.1", "Cap of 12 months fees.", "Cap of 18 months fees.", "No cap."}};
}

Provision provision(std::string number, std::string text) {
  Provision p;
  p.number = std::move(number);
  p.title = "T";
  p.text = std::move(text);
  return p;
}

std::string pair_reply(int i, bool fair_unacceptable = false) {
  return "Acceptable revision: fair version " + std::to_string(i) + "\nUnacceptable revision: " +
         (fair_unacceptable ? "fair but one-sided " : "harsh version ") + std::to_string(i) + "\n";
}

}  // namespace

TEST_CASE("synthetic prompt layout") {
  const auto pool = demo_pool();
  const Provision q = provision("4", "Fees are   due monthly.");
  const auto one = build_synthetic_prompt(std::span(pool).first(1), q);
  CHECK(one.rfind("Use the following pairs of provisions and fallback revisions", 0) == 0);
  CHECK(one.find("Demonstration 1\nProvision: Payment within 60 days.\nAcceptable revision: Payment within 45 days.\n"
                 "Unacceptable revision: Payment on demand.\n") != std::string::npos);
  CHECK(one.find("Query Provision: Fees are due monthly.") != std::string::npos);
  CHECK(one.find("Demonstration 2") == std::string::npos);

  const auto three = build_synthetic_prompt(std::span(pool).first(3), q);
  const auto d1 = three.find("Demonstration 1"), d2 = three.find("Demonstration 2"), d3 = three.find("Demonstration 3");
  CHECK(d1 < d2);
  CHECK(d2 < d3);
  CHECK(d3 < three.find("Query Provision:"));
  CHECK(three == build_synthetic_prompt(std::span(pool).first(3), q));

  CHECK(code_of([&] { build_synthetic_prompt({}, q); }) == ErrorCode::PreconditionViolation);
}

TEST_CASE("pair parsing") {
  const auto p = parse_pair("Acceptable revision: Pay in 45 days.\nUnacceptable revision: Pay on demand.");
  CHECK(p.acceptable_text == "Pay in 45 days.");
  CHECK(p.unacceptable_text == "Pay on demand.");

  const auto r = parse_pair("**Unacceptable Revision:** Pay on demand.\n\n**Acceptable Revision:** Pay in 45 days.");
  CHECK(r.acceptable_text == "Pay in 45 days.");
  CHECK(r.unacceptable_text == "Pay on demand.");

  CHECK(code_of([] { parse_pair("Acceptable revision: only this one"); }) == ErrorCode::MalformedLLMOutput);
  CHECK(code_of([] { parse_pair("Unacceptable revision: only this one"); }) == ErrorCode::MalformedLLMOutput);
  CHECK(code_of([] { parse_pair("Acceptable revision:\nUnacceptable revision: x"); }) == ErrorCode::MalformedLLMOutput);
  CHECK(code_of([] { parse_pair("Acceptable revision: x\nUnacceptable revision: x"); }) == ErrorCode::MalformedLLMOutput);
}

TEST_CASE("rephrase prompt") {
  Revision rv;
  rv.id = "r";
  rv.text = "Buyer pays within 30 days.";
  const auto prompt = build_rephrase_prompt(rv);
  const auto at = prompt.find("Original Revision: Buyer pays within 30 days.");
  CHECK(at != std::string::npos);
  CHECK(prompt.find("Rephrased Revision:") > at);
  CHECK(prompt == build_rephrase_prompt(rv));
  CHECK(parse_rephrase("Rephrased Revision: Payment is due in 30 days.") == "Payment is due in 30 days.");
  CHECK(parse_rephrase("  plain reply ") == "plain reply");
  CHECK(code_of([] { parse_rephrase("  "); }) == ErrorCode::MalformedLLMOutput);
}

TEST_CASE("knn filter majority rule") {
  // 20 records at increasing distance from the origin-ish candidate.
  auto store_with = [](int acceptable) {
    VectorStore s;
    for (int i = 0; i < 20; ++i)
      s.add({"n" + std::to_string(100 + i), point(1.0f + 0.01f * static_cast<float>(i), 0),
             i < acceptable ? Label::Acceptable : Label::Unacceptable, "1"});
    s.add({"far", point(50, 50), Label::Acceptable, "1"});
    return s;
  };
  const auto c = point(1, 0);
  CHECK(knn_filter(c, Label::Acceptable, store_with(15)) == FilterDecision::Keep);
  CHECK(knn_filter(c, Label::Acceptable, store_with(10)) == FilterDecision::Discard);
  CHECK(knn_filter(c, Label::Unacceptable, store_with(10)) == FilterDecision::Discard);
  CHECK(knn_filter(c, Label::Unacceptable, store_with(9)) == FilterDecision::Keep);

  VectorStore with_unlabeled = store_with(15);
  for (int i = 0; i < 30; ++i)
    with_unlabeled.add({"z" + std::to_string(i), point(1, 0), Label::Unlabeled, "1"});
  CHECK(knn_filter(c, Label::Acceptable, with_unlabeled) == FilterDecision::Keep);

  CHECK(code_of([&] { knn_filter(c, Label::Acceptable, VectorStore{}); }) == ErrorCode::EmptyStore);
}

TEST_CASE("demonstration sampling") {
  const auto pool = demo_pool();
  const auto a = sample_demonstrations(pool, provision("7.2", "x"), 2, 3);
  REQUIRE(a.size() == 2);
  CHECK(a[0].provision_number == "7.1");
  CHECK(a[0].provision_number != a[1].provision_number);
  const auto b = sample_demonstrations(pool, provision("7.2", "x"), 2, 3);
  CHECK(b[1].provision_number == a[1].provision_number);
  CHECK(sample_demonstrations(pool, provision("99", "x"), 4, 1).size() == 4);
  CHECK(code_of([&] { sample_demonstrations(pool, provision("1", "x"), 5, 1); }) == ErrorCode::PreconditionViolation);
}

TEST_CASE("dataset generation arithmetic") {
  const auto pool = demo_pool();
  std::vector<Provision> provs;
  for (int i = 0; i < 10; ++i) provs.push_back(provision(std::to_string(i + 1), "Clause " + std::to_string(i)));
  AxisEmbedder embedder;
  GenerationConfig cfg;
  cfg.n_demonstrations = 2;
  cfg.seed = 4;

  SUBCASE("ten well-formed replies, no filter") {
    llm::ScriptedLlm llm([](const llm::ChatRequest&, std::size_t i) { return pair_reply(static_cast<int>(i)); });
    const auto rep = generate_dataset(llm, embedder, provs, pool, cfg, nullptr, {"2025-01-01T00:00:00Z", "syn"});
    CHECK(rep.kept.size() == 20);
    CHECK(rep.attempted == 10);
    CHECK(rep.malformed_count == 0);
    CHECK(rep.kept[0].id == "syn-000000-acc");
    CHECK(rep.kept[1].id == "syn-000000-unacc");
    CHECK(rep.kept[1].pair_id == "syn-000000");
    CHECK(rep.kept[0].source == Source::Synthetic);
    CHECK(rep.manifest["prompt_fingerprints"].size() == 10);
    // Sub-seeds differ per attempt.
    const auto reqs = llm.requests();
    CHECK(reqs[0].seed != reqs[1].seed);
    CHECK(reqs[0].sampling.temperature == 0.8);
  }

  SUBCASE("two malformed replies") {
    llm::ScriptedLlm llm([](const llm::ChatRequest&, std::size_t i) {
      return i == 3 || i == 7 ? std::string("I cannot help with that.") : pair_reply(static_cast<int>(i));
    });
    const auto rep = generate_dataset(llm, embedder, provs, pool, cfg, nullptr);
    CHECK(rep.malformed_count == 2);
    CHECK(rep.kept.size() == 16);
  }

  SUBCASE("filter rejects half the unacceptable sides") {
    const VectorStore real = axis_store();
    llm::ScriptedLlm llm([](const llm::ChatRequest&, std::size_t i) { return pair_reply(static_cast<int>(i), i % 2 == 0); });
    const auto rep = generate_dataset(llm, embedder, provs, pool, cfg, &real);
    CHECK(rep.discarded_count == 5);
    CHECK(rep.kept.size() == 15);
    std::size_t unacc = 0;
    for (const auto& r : rep.kept) unacc += r.label == Label::Unacceptable;
    CHECK(unacc == 5);
  }

  SUBCASE("provider errors are counted, unavailability aborts") {
    llm::ScriptedLlm flaky([](const llm::ChatRequest&, std::size_t i) -> std::string {
      if (i == 0) throw Error(ErrorCode::ProviderError, "bad gateway");
      return pair_reply(static_cast<int>(i));
    });
    CHECK(generate_dataset(flaky, embedder, provs, pool, cfg, nullptr).provider_errors == 1);
    llm::ScriptedLlm down([](const llm::ChatRequest&, std::size_t) -> std::string {
      throw Error(ErrorCode::ProviderUnavailable, "down");
    });
    CHECK(code_of([&] { generate_dataset(down, embedder, provs, pool, cfg, nullptr); }) == ErrorCode::ProviderUnavailable);
  }

  SUBCASE("parallel attempts give the same dataset") {
    auto responder = [](const llm::ChatRequest& r, std::size_t) {
      return pair_reply(static_cast<int>(*r.seed % 1000));
    };
    llm::ScriptedLlm serial(responder), parallel(responder);
    const auto a = generate_dataset(serial, embedder, provs, pool, cfg, nullptr, {"t", "syn"});
    cfg.in_flight = 4;
    const auto b = generate_dataset(parallel, embedder, provs, pool, cfg, nullptr, {"t", "syn"});
    CHECK(nlohmann::json(a.kept) == nlohmann::json(b.kept));
  }
}

TEST_CASE("dataset files and paraphrases") {
  const auto pool = demo_pool();
  std::vector<Provision> provs = {provision("1", "Clause")};
  AxisEmbedder embedder;
  llm::ScriptedLlm llm({pair_reply(0)});
  const auto rep = generate_dataset(llm, embedder, provs, pool, {}, nullptr, {"t", "syn"});
  const auto dir = testing::temp_dir("synth");
  write_dataset(rep, dir / "d.jsonl", dir / "m.json");
  std::ifstream in(dir / "d.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += !nlohmann::json::parse(line).get<Revision>().id.empty();
  CHECK(n == 2);
  std::ifstream min(dir / "m.json");
  const auto manifest = nlohmann::json::parse(min);
  CHECK(manifest["config"]["top_k_sampling"] == 50);
  CHECK(manifest["kept"] == 2);
  std::filesystem::remove_all(dir);

  llm::ScriptedLlm para({"Rephrased Revision: reworded acceptable", ""});
  std::size_t malformed = 0;
  const auto out = generate_paraphrases(para, rep.kept, {}, 1, &malformed);
  REQUIRE(out.size() == 1);
  CHECK(malformed == 1);
  CHECK(out[0].id == "syn-000000-acc-para");
  CHECK(out[0].source == Source::Paraphrase);
  CHECK(out[0].label == Label::Acceptable);
  CHECK(out[0].text == "reworded acceptable");
  CHECK_FALSE(out[0].pair_id);
}
