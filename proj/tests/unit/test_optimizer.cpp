#include <doctest.h>

#include "revkit/codec.hpp"
#include "revkit/optimizer.hpp"
#include "fixtures.hpp"
#include "reward_fixture.hpp"

using namespace revkit;
using namespace revkit::optimizer;

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

Revision rev(std::string id, std::string number, std::string text, Label label, Source source = Source::Negotiated) {
  Revision r;
  r.id = std::move(id);
  r.provision_number = std::move(number);
  r.contract_id = "c";
  r.text = std::move(text);
  r.label = label;
  r.source = source;
  r.created_at = "t0";
  return r;
}

std::vector<Triple> make_triples(testing::RewardEmbedder& e, int n) {
  std::vector<Triple> out;
  for (int i = 0; i < n; ++i) {
    const std::string bad = "demo unacceptable reward 0.0" + std::to_string(i + 1);
    out.push_back({"k" + std::to_string(i), "p" + std::to_string(i), "1", "Provision 1", bad,
                   "demo acceptable " + std::to_string(i), embedding::embed_text(e, bad)});
  }
  return out;
}

std::string replies_for(const std::vector<std::string>& rewards, std::size_t i) {
  return "Optimized Unacceptable Version: candidate " + std::to_string(i) + " reward " + rewards[i];
}

}  // namespace

TEST_CASE("demonstration selection") {
  testing::RewardEmbedder e;
  const auto triples = make_triples(e, 4);
  const auto all = select_demonstrations(triples, embedding::embed_text(e, "x reward 0.5"), 4);
  CHECK(all.size() == 4);

  const auto self = select_demonstrations(triples, triples[2].key_vector, 2);
  CHECK(self[0].key_id == "k2");
  const auto skip = select_demonstrations(triples, triples[2].key_vector, 2, "k2");
  CHECK(skip[0].key_id != "k2");
  CHECK(code_of([&] { select_demonstrations(triples, triples[0].key_vector, 5); }) ==
        ErrorCode::InsufficientDemonstrations);
}

TEST_CASE("triple construction") {
  embedding::HashingEmbedder h(64);
  RevisionTable table;
  embedding::VectorStore store;
  auto add = [&](Revision r) {
    store.add({r.id, h.embed_one(r.text), r.label, r.provision_number});
    table.add(std::move(r));
  };
  auto s_acc = rev("syn-1-acc", "2", "fair payment in thirty days", Label::Acceptable, Source::Synthetic);
  s_acc.pair_id = "syn-1";
  auto s_bad = rev("syn-1-unacc", "2", "payment on demand", Label::Unacceptable, Source::Synthetic);
  s_bad.pair_id = "syn-1";
  add(s_acc);
  add(s_bad);
  add(rev("a-near", "3", "liability capped at fees paid", Label::Acceptable));
  add(rev("a-far", "3", "each party keeps records", Label::Acceptable));
  add(rev("u", "3", "liability uncapped regardless of fees paid", Label::Unacceptable));
  add(rev("lonely", "9", "no acceptable partner here", Label::Unacceptable));

  const auto t = build_triples(table, store, [](const Revision& r) { return "P" + r.provision_number; });
  REQUIRE(t.size() == 2);
  CHECK(t[0].key_id == "syn-1-unacc");
  CHECK(t[0].partner_id == "syn-1-acc");
  CHECK(t[1].key_id == "u");
  CHECK(t[1].partner_id == "a-near");
  CHECK(t[1].provision_text == "P3");
  CHECK(build_triples(table, store)[1].provision_text == "Provision 3");
}

TEST_CASE("optimization prompt layout") {
  testing::RewardEmbedder e;
  const auto triples = make_triples(e, 2);
  const std::vector<std::string> related = {"Liability is capped under Section 7."};
  const auto p = build_optimization_prompt(triples, related, "Pay on demand.");
  const auto d1 = p.find("Demonstration 1\nProvision: Provision 1\nUnacceptable revision: ");
  const auto d2 = p.find("Demonstration 2\n");
  const auto rel = p.find("Related Clauses (from current contract):\nRelated clause: Liability is capped under Section 7.\n");
  const auto q = p.find("Query Unacceptable Revision: Pay on demand.\n");
  CHECK(d1 != std::string::npos);
  CHECK(d1 < d2);
  CHECK(d2 < rel);
  CHECK(rel < q);
  CHECK(p.substr(p.size() - std::string("Optimized Unacceptable Version:").size()) == "Optimized Unacceptable Version:");
  CHECK(p == build_optimization_prompt(triples, related, "Pay on demand."));

  const auto bare = build_optimization_prompt(triples, {}, "Pay on demand.");
  CHECK(bare.find("Related Clauses") == std::string::npos);
  CHECK(code_of([] { build_optimization_prompt({}, {}, "q"); }) == ErrorCode::PreconditionViolation);
}

TEST_CASE("candidate parsing") {
  CHECK(parse_candidate("Optimized Unacceptable Version: Pay in 45 days.") == "Pay in 45 days.");
  CHECK(parse_candidate("**Optimized unacceptable version:** Pay in 45 days.") == "Pay in 45 days.");
  CHECK(parse_candidate("Pay in 45 days.") == "Pay in 45 days.");
  CHECK(code_of([] { parse_candidate(" \n"); }) == ErrorCode::MalformedLLMOutput);
}

TEST_CASE("argmax") {
  std::vector<ScoredCandidate> c = {{"a", 0.2}, {"b", 0.9}, {"c", 0.6}, {"d", 0.6}};
  CHECK(argmax_reward(c) == 1);
  std::vector<ScoredCandidate> tie = {{"a", 0.7}, {"b", 0.7}};
  CHECK(argmax_reward(tie) == 0);
  CHECK(code_of([] { argmax_reward({}); }) == ErrorCode::PreconditionViolation);
}

TEST_CASE("best-of-n selection") {
  testing::RewardEmbedder e;
  const auto model = testing::reward_model();
  const auto triples = make_triples(e, 5);
  const Revision target = rev("r1", "1", "Buyer pays on demand reward 0.1", Label::Unlabeled);

  auto run = [&](std::vector<std::string> rewards, int n) {
    llm::ScriptedLlm llm([rewards](const llm::ChatRequest&, std::size_t i) { return replies_for(rewards, i); });
    Context ctx{llm, model, e, triples};
    OptimizationConfig cfg;
    cfg.best_of_n = n;
    cfg.n_demonstrations = 2;
    cfg.seed = 17;
    auto res = optimize(ctx, target, cfg);
    return std::make_pair(res, llm.requests());
  };

  const auto [res, reqs] = run({"0.2", "0.9", "0.6", "0.6"}, 4);
  REQUIRE(res.candidates.size() == 4);
  CHECK(res.chosen_index == 1);
  CHECK(res.candidates[1].reward == doctest::Approx(0.9).epsilon(1e-4));
  CHECK(res.source_reward == doctest::Approx(0.1).epsilon(1e-4));
  CHECK(res.chosen().text == "candidate 1 reward 0.9");
  CHECK(reqs.size() == 4);
  CHECK(reqs[0].seed == mix_seed(17, 0));
  CHECK(reqs[3].seed == mix_seed(17, 3));
  CHECK(reqs[0].messages[0].content == reqs[1].messages[0].content);

  CHECK(run({"0.1"}, 1).first.chosen_index == 0);
  CHECK(run({"0.7", "0.7"}, 2).first.chosen_index == 0);
}

TEST_CASE("malformed candidates") {
  testing::RewardEmbedder e;
  const auto model = testing::reward_model();
  const auto triples = make_triples(e, 3);
  const Revision target = rev("r1", "1", "text", Label::Unlabeled);
  OptimizationConfig cfg;
  cfg.n_demonstrations = 1;
  cfg.best_of_n = 3;

  llm::ScriptedLlm some({"", "Optimized Unacceptable Version: fine reward 0.8", "   "});
  const auto r = optimize({some, model, e, triples}, target, cfg);
  CHECK(r.malformed == 2);
  REQUIRE(r.candidates.size() == 1);
  CHECK(r.chosen_index == 0);

  llm::ScriptedLlm none({"", "", ""});
  CHECK(code_of([&] { optimize({none, model, e, triples}, target, cfg); }) == ErrorCode::AllCandidatesMalformed);

  cfg.best_of_n = 0;
  CHECK(code_of([&] { optimize({none, model, e, triples}, target, cfg); }) == ErrorCode::Validation);
}

TEST_CASE("related clauses enter the prompt") {
  testing::RewardEmbedder e;
  const auto model = testing::reward_model();
  const auto triples = make_triples(e, 2);
  Contract c;
  c.id = "c";
  c.provisions = {{"1", "Payment", std::nullopt, "Buyer pays.", ""}, {"2", "Liability", std::nullopt, "Cap   applies.", ""}};
  retrieval::FunctionScorer scorer([](std::string_view, std::string_view) { return 0.9; });
  const Revision target = rev("r1", "1", "Buyer pays on demand", Label::Unlabeled);
  OptimizationConfig cfg;
  cfg.n_demonstrations = 1;
  cfg.best_of_n = 1;

  llm::ScriptedLlm a({"x reward 0.5"});
  optimize({a, model, e, triples, &c, &scorer}, target, cfg);
  CHECK(a.requests()[0].messages[0].content.find("Related clause: Cap applies.\n") != std::string::npos);

  cfg.include_related_clauses = false;
  llm::ScriptedLlm b({"x reward 0.5"});
  optimize({b, model, e, triples, &c, &scorer}, target, cfg);
  CHECK(b.requests()[0].messages[0].content.find("Related Clauses") == std::string::npos);
}

TEST_CASE("batch optimization") {
  testing::RewardEmbedder e;
  const auto model = testing::reward_model();
  const auto triples = make_triples(e, 3);
  OptimizationConfig cfg;
  cfg.n_demonstrations = 1;
  cfg.best_of_n = 2;

  llm::ScriptedLlm idle(std::vector<std::string>{});
  const auto empty = batch_optimize({idle, model, e, triples}, "c", {}, cfg);
  CHECK(empty.results.empty());
  CHECK_FALSE(empty.success_rate_before);
  CHECK(nlohmann::json(empty)["success_rate_after"].is_null());

  std::vector<Revision> flagged;
  for (int i = 0; i < 5; ++i) flagged.push_back(rev("f" + std::to_string(i), "1", "flag reward 0.2", Label::Unlabeled));

  llm::ScriptedLlm high({"fixed reward 0.95"}, true);
  const auto all = batch_optimize({high, model, e, triples}, "c", flagged, cfg);
  CHECK(all.results.size() == 5);
  CHECK(*all.success_rate_before == 0.0);
  CHECK(*all.success_rate_after == 1.0);

  // Per revision (2 calls each): f0 high, f1 low, f2 both malformed, f3 high, f4 low.
  const std::vector<std::string> script = {"a reward 0.9", "b reward 0.3", "c reward 0.2", "d reward 0.4", "", "",
                                           "e reward 0.7", "f reward 0.1", "g reward 0.45", "h reward 0.3"};
  llm::ScriptedLlm mixed(script);
  const auto m = batch_optimize({mixed, model, e, triples}, "c", flagged, cfg);
  CHECK(m.results.size() == 4);
  REQUIRE(m.errors.size() == 1);
  CHECK(m.errors[0].revision_id == "f2");
  CHECK(m.errors[0].code == "AllCandidatesMalformed");
  CHECK(*m.success_rate_after == doctest::Approx(2.0 / 5.0));

  llm::ScriptedLlm down([](const llm::ChatRequest&, std::size_t) -> std::string {
    throw Error(ErrorCode::ProviderUnavailable, "down");
  });
  CHECK(code_of([&] { batch_optimize({down, model, e, triples}, "c", flagged, cfg); }) == ErrorCode::ProviderUnavailable);
}

TEST_CASE("reports are byte-identical across runs") {
  testing::RewardEmbedder e;
  const auto model = testing::reward_model();
  const auto triples = make_triples(e, 4);
  auto responder = [](const llm::ChatRequest& r, std::size_t) {
    return "v" + std::to_string(*r.seed % 97) + " reward 0." + std::to_string(*r.seed % 9 + 1);
  };
  std::vector<Revision> flagged = {rev("b", "1", "two reward 0.2", Label::Unlabeled),
                                   rev("a", "1", "one reward 0.3", Label::Unlabeled)};
  OptimizationConfig cfg;
  cfg.n_demonstrations = 2;
  cfg.seed = 5;
  llm::ScriptedLlm l1(responder), l2(responder);
  const auto d1 = nlohmann::json(batch_optimize({l1, model, e, triples}, "c", flagged, cfg)).dump();
  cfg.in_flight = 4;
  const auto d2 = nlohmann::json(batch_optimize({l2, model, e, triples}, "c", flagged, cfg)).dump();
  CHECK(d1 == d2);
}
