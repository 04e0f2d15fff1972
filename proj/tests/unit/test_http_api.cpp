#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "revkit/cli.hpp"
#include "revkit/http_api.hpp"
#include "fixtures.hpp"
#include "mock_http.hpp"
#include "workspace_fixture.hpp"

using namespace revkit;
using namespace revkit::service;
using nlohmann::json;

namespace {

const httplib::Headers kAuth = {{"Authorization", "Bearer secret"}};

struct Api {
  std::filesystem::path dir;
  std::unique_ptr<Workspace> ws;
  testing::MockHttpServer http;
  httplib::Client client;

  explicit Api(const std::string& tag, const std::string& token = "")
      : dir(testing::temp_dir(tag)), ws(testing::seeded_workspace(dir)), client(start(token)) {}
  ~Api() { std::filesystem::remove_all(dir); }

  httplib::Client start(const std::string& token) {
    register_routes(http.server(), *ws, token);
    http.start();
    return http.client();
  }

  std::pair<int, json> get(const std::string& path, const httplib::Headers& h = {}) {
    auto res = client.Get(path, h);
    REQUIRE(res);
    return {res->status, res->body.empty() ? json() : json::parse(res->body)};
  }

  std::pair<int, json> post(const std::string& path, const std::string& body, const httplib::Headers& h = {}) {
    auto res = client.Post(path, h, body, "application/json");
    REQUIRE(res);
    return {res->status, res->body.empty() ? json() : json::parse(res->body)};
  }
};

std::set<std::string> ids_of(const json& flags) {
  std::set<std::string> out;
  for (const auto& f : flags) out.insert(f.at("revision_id").get<std::string>());
  return out;
}

}  // namespace

TEST_CASE("health and models") {
  Api api("http-health");
  const auto [status, body] = api.get("/health");
  CHECK(status == 200);
  CHECK(body["status"] == "ok");
  CHECK(body["model_version"] == 1);
  CHECK(body["labeled_revisions"] == 96);
  CHECK(body["llm_configured"] == true);

  const auto [ms, models] = api.get("/models");
  CHECK(ms == 200);
  CHECK(models["current"] == 1);
  CHECK(models["versions"] == json::array({1}));
}

TEST_CASE("review flow over http") {
  Api api("http-flow");
  const std::string contract = testing::read_fixture("review_contract.json");
  auto [s, ingest] = api.post("/contracts", contract);
  REQUIRE(s == 200);
  CHECK(ingest["contract_id"] == "rev-001");
  CHECK(ingest["revisions"] == 5);
  CHECK(ids_of(ingest["flags"]).contains("rev-001:1"));
  CHECK(api.post("/contracts", contract).first == 409);

  const auto [fs, flags] = api.get("/contracts/rev-001/flags");
  CHECK(fs == 200);
  CHECK(flags["flags"].size() == ingest["flags"].size());
  CHECK(flags["flags"][0]["status"] == "open");
  CHECK(api.get("/contracts/nope/flags").first == 404);

  const auto [ds, detail] = api.get("/revisions/rev-001:1");
  CHECK(ds == 200);
  CHECK(detail["revision"]["label"] == "unlabeled");
  CHECK(detail["provision"]["title"] == "Payment");
  CHECK(detail["optimization"].is_null());
  CHECK(api.get("/revisions/ghost").first == 404);

  const auto [dfs, diff] = api.get("/revisions/rev-001:1/diff");
  CHECK(dfs == 200);
  CHECK(diff["base"].get<std::string>().find("sixty") != std::string::npos);
  CHECK_FALSE(diff["edits"].empty());
  CHECK(api.get("/revisions/rev-001:1/diff?against=candidate").first == 404);
  CHECK(api.get("/revisions/rev-001:1/diff?against=moon").first == 422);

  const auto [os, opt] = api.post("/revisions/rev-001:1/optimize", R"({"best_of_n": 3, "seed": 9})");
  REQUIRE(os == 200);
  CHECK(opt["candidates"].size() == 3);
  CHECK(opt["flag"]["status"] == "optimized");
  const int chosen = opt["chosen_index"];
  CHECK(api.post("/revisions/rev-001:1/optimize", R"({"best_of_n": 0})").first == 422);
  CHECK(api.post("/revisions/ghost/optimize", "").first == 404);

  const auto [cs, cdiff] = api.get("/revisions/rev-001:1/diff?against=candidate&index=" + std::to_string(chosen));
  CHECK(cs == 200);
  CHECK(cdiff["target"] == opt["candidates"][chosen]["text"]);
  CHECK(api.get("/revisions/rev-001:1/diff?against=candidate&index=99").first == 422);

  CHECK(api.post("/revisions/rev-001:1/decision", R"({"verdict": "accept"})").first == 422);
  CHECK(api.post("/revisions/rev-001:1/decision", R"({"verdict": "edit", "reviewer": "bo"})").first == 422);
  CHECK(api.post("/revisions/rev-001:1/decision", "not json").first == 422);
  CHECK(api.post("/revisions/rev-001:1/decision", R"({"verdict": "accept", "reviewer": "bo", "revision_id": "x"})").first == 422);

  const json accept = {{"verdict", "accept"}, {"reviewer", "bo"}, {"candidate_index", chosen}};
  const auto [as, dec] = api.post("/revisions/rev-001:1/decision", accept.dump());
  REQUIRE(as == 200);
  CHECK(dec["decision"]["final_text"] == opt["candidates"][chosen]["text"]);
  CHECK(dec["flag"]["status"] == "decided");
  CHECK(dec["labeled_revisions"] == 97);
  CHECK(api.post("/revisions/rev-001:1/decision", accept.dump()).first == 409);
  json forced = accept;
  forced["force"] = true;
  forced["verdict"] = "reject";
  forced.erase("candidate_index");
  CHECK(api.post("/revisions/rev-001:1/decision", forced.dump()).first == 200);
  CHECK(api.post("/revisions/ghost/decision", R"({"verdict": "reject", "reviewer": "bo"})").first == 404);

  const auto [rs, retrained] = api.post("/models/retrain", "");
  CHECK(rs == 200);
  CHECK(retrained["trained"] == true);
  CHECK(retrained["version"] == 2);
  const auto [rs2, again] = api.post("/models/retrain", "{}");
  CHECK(rs2 == 200);
  CHECK(again["trained"] == false);
  CHECK(api.post("/models/retrain", R"({"force": true})").second["version"] == 3);
  CHECK(api.get("/models").second["versions"] == json::array({1, 2, 3}));
}

TEST_CASE("plain text ingest") {
  Api api("http-plain");
  const json body = {{"id", "plain-1"}, {"kind", "service"}, {"text", testing::read_fixture("service_agreement.txt")}};
  const auto [s, r] = api.post("/contracts", body.dump());
  CHECK(s == 200);
  CHECK(r["contract_id"] == "plain-1");
  CHECK(r["revisions"].get<int>() > 0);
  CHECK(api.post("/contracts", json{{"text", "1. Title\nBody"}}.dump()).first == 422);
  CHECK(api.post("/contracts", "").first == 422);
}

TEST_CASE("bearer token") {
  Api api("http-auth", "secret");
  CHECK(api.get("/health").first == 200);
  const auto [s, err] = api.get("/models");
  CHECK(s == 401);
  CHECK(err["error"]["code"] == "Unauthorized");
  CHECK(api.get("/models", {{"Authorization", "Bearer wrong"}}).first == 401);
  CHECK(api.get("/models", kAuth).first == 200);

  auto pre = api.client.Options("/models");
  REQUIRE(pre);
  CHECK(pre->status == 204);
  CHECK(pre->get_header_value("Access-Control-Allow-Origin") == "*");
}

TEST_CASE("http flags agree with cli classify") {
  Api api("http-cli");
  const auto [s, ingest] = api.post("/contracts", testing::read_fixture("review_contract.json"));
  REQUIRE(s == 200);
  { std::ofstream(api.dir / "config.json") << json(testing::small_config()).dump(); }

  std::ostringstream out, err;
  const int rc = cli::run({"--workspace", api.dir.string(), "classify", "--contract",
                           testing::fixture_path("review_contract.json").string()},
                          out, err);
  REQUIRE(rc == 0);
  const json cli_result = json::parse(out.str());
  CHECK(ids_of(cli_result["flags"]) == ids_of(ingest["flags"]));
  for (std::size_t i = 0; i < ingest["flags"].size(); ++i)
    for (const auto& f : cli_result["flags"])
      if (f["revision_id"] == ingest["flags"][i]["revision_id"])
        CHECK(f["probability_acceptable"].get<double>() ==
              doctest::Approx(ingest["flags"][i]["probability_acceptable"].get<double>()).epsilon(1e-12));
}

TEST_CASE("status mapping") {
  CHECK(http_status(ErrorCode::NotFound) == 404);
  CHECK(http_status(ErrorCode::Conflict) == 409);
  CHECK(http_status(ErrorCode::Validation) == 422);
  CHECK(http_status(ErrorCode::ProviderUnavailable) == 503);
  CHECK(http_status(ErrorCode::AllCandidatesMalformed) == 502);
  CHECK(http_status(ErrorCode::Io) == 500);
}
