#include "revkit/http_api.hpp"

#include "revkit/corpus.hpp"

namespace revkit::service {
namespace {

using Handler = std::function<nlohmann::json(const httplib::Request&)>;

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  send_json(res, status, {{"error", {{"code", code}, {"message", message}}}});
}

nlohmann::json parse_body(const httplib::Request& req, bool allow_empty) {
  if (req.body.empty()) {
    if (allow_empty) return nlohmann::json::object();
    throw Error(ErrorCode::Validation, "request body is required");
  }
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Validation, std::string("body is not valid JSON: ") + e.what());
  }
  if (!body.is_object()) throw Error(ErrorCode::Validation, "body must be a JSON object");
  return body;
}

nlohmann::json optional_json(const auto& opt) { return opt ? nlohmann::json(*opt) : nlohmann::json(nullptr); }

nlohmann::json retrain_json(const RetrainResult& r) {
  return {{"trained", r.trained},
          {"status", r.status},
          {"version", r.version},
          {"new_decisions", r.new_decisions},
          {"metrics", r.summary ? classifier::summary_json(*r.summary) : nlohmann::json(nullptr)}};
}

class Routes : public std::enable_shared_from_this<Routes> {
 public:
  Routes(httplib::Server& server, Workspace& ws, std::string token)
      : server_(server), ws_(ws), token_(std::move(token)) {}

  void install() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                 {"Access-Control-Allow-Headers", "Authorization, Content-Type"},
                                 {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server_.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server_.Get("/health", [this, self = shared_from_this()](const httplib::Request&, httplib::Response& res) {
      const auto m = ws_.model();
      send_json(res, 200,
                {{"status", "ok"},
                 {"model_version", m ? nlohmann::json(m->version) : nlohmann::json(nullptr)},
                 {"embedding_model", ws_.providers().embedder->model_id()},
                 {"labeled_revisions", ws_.labeled_count()},
                 {"llm_configured", ws_.providers().llm != nullptr}});
    });

    route("POST", "/contracts", [this](const httplib::Request& req) { return ingest(req); });
    route("GET", R"(/contracts/([^/]+)/flags)", [this](const httplib::Request& req) {
      const std::string id = req.matches[1];
      return nlohmann::json{{"contract_id", id}, {"model_version", ws_.model_version()}, {"flags", ws_.flags(id)}};
    });
    route("GET", R"(/revisions/([^/]+))", [this](const httplib::Request& req) { return detail(req.matches[1]); });
    route("GET", R"(/revisions/([^/]+)/diff)", [this](const httplib::Request& req) { return diff(req); });
    route("POST", R"(/revisions/([^/]+)/optimize)", [this](const httplib::Request& req) { return optimize(req); });
    route("POST", R"(/revisions/([^/]+)/decision)", [this](const httplib::Request& req) { return decide(req); });
    route("GET", "/models", [this](const httplib::Request&) {
      return nlohmann::json{{"current", ws_.model_version()}, {"versions", ws_.model_versions()}};
    });
    route("POST", "/models/retrain", [this](const httplib::Request& req) {
      const auto body = parse_body(req, true);
      return retrain_json(ws_.retrain_snapshot(body.value("force", false)));
    });
  }

 private:
  void route(const std::string& method, const std::string& pattern, Handler handler) {
    auto wrapped = [this, self = shared_from_this(), handler = std::move(handler)](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req)) {
        send_error(res, 401, "Unauthorized", "missing or invalid bearer token");
        return;
      }
      try {
        send_json(res, 200, handler(req));
      } catch (const Error& e) {
        send_error(res, http_status(e.code()), to_string(e.code()), e.what());
      } catch (const nlohmann::json::exception& e) {
        send_error(res, 422, to_string(ErrorCode::Validation), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "Internal", e.what());
      }
    };
    if (method == "GET") server_.Get(pattern, wrapped);
    else server_.Post(pattern, wrapped);
  }

  bool authorized(const httplib::Request& req) const {
    if (token_.empty()) return true;
    return req.get_header_value("Authorization") == "Bearer " + token_;
  }

  nlohmann::json ingest(const httplib::Request& req) {
    const auto body = parse_body(req, false);
    Contract contract;
    if (body.contains("text")) {
      const std::string id = body.value("id", std::string{});
      if (id.empty()) throw Error(ErrorCode::Validation, "id is required");
      contract = corpus::parse_contract(body.at("text").get<std::string>(), corpus::DocumentFormat::PlainText, id);
      if (body.contains("kind")) contract.kind = parse_contract_kind(body.at("kind").get<std::string>());
    } else {
      contract = corpus::parse_contract(body.dump(), corpus::DocumentFormat::Structured);
    }
    const IngestResult r = ws_.ingest(std::move(contract));
    return {{"contract_id", r.contract_id}, {"revisions", r.revisions}, {"model_version", ws_.model_version()}, {"flags", r.flags}};
  }

  Revision require_revision(const std::string& id) const {
    auto r = ws_.revision(id);
    if (!r) throw Error(ErrorCode::NotFound, "unknown revision " + id);
    return *r;
  }

  nlohmann::json detail(const std::string& id) const {
    const Revision r = require_revision(id);
    nlohmann::json provision = nullptr;
    if (const auto c = ws_.contract(r.contract_id))
      if (const Provision* p = c->find(r.provision_number)) provision = *p;
    return {{"revision", r},
            {"provision", provision},
            {"flag", optional_json(ws_.flag(id))},
            {"optimization", optional_json(ws_.last_optimization(id))}};
  }

  nlohmann::json diff(const httplib::Request& req) const {
    const std::string id = req.matches[1];
    const Revision r = require_revision(id);
    const std::string against = req.has_param("against") ? req.get_param_value("against") : "template";
    std::string base, target;
    if (against == "template") {
      const auto c = ws_.contract(r.contract_id);
      const Provision* p = c ? c->find(r.provision_number) : nullptr;
      if (!p) throw Error(ErrorCode::NotFound, "no provision for revision " + id);
      base = corpus::normalize_whitespace(p->template_text ? *p->template_text : p->text);
      target = r.text;
    } else if (against == "candidate") {
      const auto opt = ws_.last_optimization(id);
      if (!opt) throw Error(ErrorCode::NotFound, "revision " + id + " has no candidates");
      std::size_t index = static_cast<std::size_t>(opt->chosen_index);
      if (req.has_param("index")) {
        try {
          index = std::stoul(req.get_param_value("index"));
        } catch (const std::exception&) {
          throw Error(ErrorCode::Validation, "index must be a non-negative integer");
        }
      }
      if (index >= opt->candidates.size()) throw Error(ErrorCode::Validation, "candidate index out of range");
      base = r.text;
      target = opt->candidates[index].text;
    } else {
      throw Error(ErrorCode::Validation, "against must be template or candidate");
    }
    return {{"revision_id", id}, {"base", base}, {"target", target}, {"edits", corpus::diff_words(base, target)}};
  }

  nlohmann::json optimize(const httplib::Request& req) {
    const std::string id = req.matches[1];
    const auto body = parse_body(req, true);
    optimizer::OptimizationConfig cfg = ws_.config().optimization;
    cfg.best_of_n = body.value("best_of_n", cfg.best_of_n);
    cfg.n_demonstrations = body.value("n_demonstrations", cfg.n_demonstrations);
    cfg.include_related_clauses = body.value("include_related_clauses", cfg.include_related_clauses);
    cfg.seed = body.value("seed", cfg.seed);
    optimizer::validate(cfg);
    const auto result = ws_.optimize(id, cfg);
    nlohmann::json j = result;
    j["flag"] = optional_json(ws_.flag(id));
    return j;
  }

  nlohmann::json decide(const httplib::Request& req) {
    const std::string id = req.matches[1];
    auto body = parse_body(req, false);
    if (body.contains("revision_id") && body.at("revision_id") != id)
      throw Error(ErrorCode::Validation, "revision_id in body does not match the path");
    if (!body.contains("verdict")) throw Error(ErrorCode::Validation, "verdict is required");
    body["revision_id"] = id;
    ReviewDecision d = body.get<ReviewDecision>();
    d.decided_at.clear();
    d.derived_revision_id.reset();
    const DecisionOptions options{body.value("force", false)};
    const ReviewDecision stored = ws_.decide(std::move(d), options);
    return {{"decision", stored}, {"flag", optional_json(ws_.flag(id))}, {"labeled_revisions", ws_.labeled_count()}};
  }

  httplib::Server& server_;
  Workspace& ws_;
  std::string token_;
};

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound:
    case ErrorCode::UnknownGoldId:
      return 404;
    case ErrorCode::Conflict:
    case ErrorCode::PreconditionViolation:
    case ErrorCode::InsufficientDemonstrations:
    case ErrorCode::InsufficientData:
    case ErrorCode::TooFewPoints:
    case ErrorCode::EmptyStore:
      return 409;
    case ErrorCode::Validation:
    case ErrorCode::MalformedDocument:
    case ErrorCode::UnbalancedMarkers:
      return 422;
    case ErrorCode::ProviderError:
    case ErrorCode::MalformedLLMOutput:
    case ErrorCode::AllCandidatesMalformed:
      return 502;
    case ErrorCode::ProviderUnavailable:
    case ErrorCode::ScorerUnavailable:
      return 503;
    default:
      return 500;
  }
}

void register_routes(httplib::Server& server, Workspace& workspace, const std::string& api_token) {
  // Each handler holds a reference to the route table.
  std::make_shared<Routes>(server, workspace, api_token)->install();
}

}  // namespace revkit::service
