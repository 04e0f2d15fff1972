#include "revkit/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <sstream>

#include "revkit/corpus.hpp"
#include "revkit/error.hpp"
#include "revkit/http_api.hpp"
#include "revkit/metrics.hpp"

namespace revkit::cli {
namespace fs = std::filesystem;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::Validation:
    case ErrorCode::MalformedDocument:
    case ErrorCode::UnbalancedMarkers:
      return kExitUsage;
    default:
      return kExitRuntime;
  }
}

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

corpus::DocumentFormat format_for(const std::string& format, const fs::path& path) {
  if (format == "plain") return corpus::DocumentFormat::PlainText;
  if (format == "structured") return corpus::DocumentFormat::Structured;
  if (format.empty() || format == "auto")
    return path.extension() == ".json" ? corpus::DocumentFormat::Structured : corpus::DocumentFormat::PlainText;
  throw Error(ErrorCode::Validation, "format must be plain, structured or auto");
}

Contract read_contract(const fs::path& path, const std::string& format, const std::string& id) {
  const std::string contract_id = id.empty() ? path.stem().string() : id;
  Contract c = corpus::parse_contract(read_text(path), format_for(format, path), contract_id);
  if (!id.empty()) c.id = id;
  return c;
}

std::vector<Revision> read_revisions(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::vector<Revision> out;
  try {
    for (const auto& j : service::read_jsonl(path)) out.push_back(j.get<Revision>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Validation, "bad revision record in " + path.string() + ": " + e.what());
  }
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out.flush()) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

// Labeled records from negotiated or fallback sources only.
embedding::VectorStore real_labeled_store(const service::Workspace& ws) {
  embedding::VectorStore out;
  for (const auto& r : ws.labeled_revisions()) {
    if (r.source == Source::Synthetic || r.source == Source::Paraphrase) continue;
    if (auto rec = ws.store().find(r.id)) out.add(std::move(*rec));
  }
  return out;
}

std::vector<optimizer::Triple> workspace_triples(const service::Workspace& ws) {
  RevisionTable labeled(ws.labeled_revisions());
  auto text_for = [&ws](const Revision& r) {
    if (const auto c = ws.contract(r.contract_id))
      if (const Provision* p = c->find(r.provision_number))
        return corpus::normalize_whitespace(p->template_text ? *p->template_text : p->text);
    return "Provision " + r.provision_number;
  };
  return optimizer::build_triples(labeled, ws.store(), text_for);
}

struct Globals {
  std::string workspace = "revkit-workspace";
  std::string config;
  std::string output;
};

class Runner {
 public:
  Runner(Globals& g, std::ostream& out, service::Providers overrides)
      : g_(g), out_(out), overrides_(std::move(overrides)) {}

  void override_config(service::ServiceConfig c) { config_ = std::move(c); }

  service::ServiceConfig config() const {
    if (config_) return *config_;
    const fs::path path = g_.config.empty() ? fs::path(g_.workspace) / "config.json" : fs::path(g_.config);
    if (!g_.config.empty() && !fs::exists(path)) throw Error(ErrorCode::Validation, "config file not found: " + path.string());
    return service::load_config(path);
  }

  service::Workspace& workspace() {
    if (!ws_) ws_ = service::Workspace::open(g_.workspace, config(), overrides_);
    return *ws_;
  }

  service::Providers providers() const { return service::make_providers(config(), overrides_); }

  void emit(const nlohmann::json& j) const {
    if (!g_.output.empty()) write_json(g_.output, j);
    out_ << j.dump(2) << '\n';
  }

 private:
  Globals& g_;
  std::ostream& out_;
  service::Providers overrides_;
  std::unique_ptr<service::Workspace> ws_;
  std::optional<service::ServiceConfig> config_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, service::Providers overrides) {
  CLI::App app{"Contract revision engine", "revkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--workspace,-w", g.workspace, "Workspace directory")->envname("REVKIT_WORKSPACE");
  app.add_option("--config", g.config, "Config file (default: <workspace>/config.json)");
  app.add_option("--output,-o", g.output, "Also write the JSON result to this file");

  Runner runner(g, out, std::move(overrides));
  std::function<void()> action;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Weak-label a negotiated contract or add labeled revisions");
  std::string ingest_contract, ingest_template, ingest_revisions, ingest_format = "auto", ingest_id;
  ingest->add_option("--contract", ingest_contract, "Negotiated contract with tracked edits");
  ingest->add_option("--template", ingest_template, "Template contract (default: inline template_text)");
  ingest->add_option("--revisions", ingest_revisions, "JSONL of labeled revisions to add");
  ingest->add_option("--format", ingest_format, "plain, structured or auto");
  ingest->add_option("--id", ingest_id, "Contract id (default: file stem)");
  ingest->callback([&] {
    action = [&] {
      if (ingest_contract.empty() == ingest_revisions.empty())
        throw Error(ErrorCode::Validation, "give exactly one of --contract or --revisions");
      auto& ws = runner.workspace();
      if (!ingest_revisions.empty()) {
        const auto revs = read_revisions(ingest_revisions);
        ws.add_labeled(revs);
        runner.emit({{"added", revs.size()}, {"labeled_revisions", ws.labeled_count()}});
        return;
      }
      const Contract contract = read_contract(ingest_contract, ingest_format, ingest_id);
      const std::string now = utc_now();
      const auto result = ingest_template.empty()
                              ? corpus::weak_label(contract, now)
                              : corpus::weak_label(contract, read_contract(ingest_template, ingest_format, ""), now);
      ws.store_contract(contract);
      ws.add_labeled(result.revisions);
      std::size_t acc = 0;
      for (const auto& r : result.revisions) acc += r.label == Label::Acceptable;
      runner.emit({{"contract_id", contract.id},
                   {"added", result.revisions.size()},
                   {"acceptable", acc},
                   {"unacceptable", result.revisions.size() - acc},
                   {"skipped", result.skipped},
                   {"labeled_revisions", ws.labeled_count()}});
    };
  });

  // embed
  auto* embed = app.add_subcommand("embed", "Embed revisions from a JSONL file");
  std::string embed_input;
  embed->add_option("--input", embed_input, "JSONL of revisions")->required();
  embed->callback([&] {
    action = [&] {
      const auto revs = read_revisions(embed_input);
      if (revs.empty()) throw Error(ErrorCode::Validation, "no revisions in " + embed_input);
      auto providers = runner.providers();
      std::vector<std::string> texts;
      for (const auto& r : revs) texts.push_back(r.text);
      const auto vecs = embedding::embed_texts(*providers.embedder, texts);
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t i = 0; i < revs.size(); ++i) {
        const auto& v = vecs[i].values;
        rows.push_back({{"revision_id", revs[i].id},
                        {"label", to_string(revs[i].label)},
                        {"provision_number", revs[i].provision_number},
                        {"vector", std::vector<float>(v.data(), v.data() + v.size())}});
      }
      runner.emit({{"model_id", providers.embedder->model_id()}, {"dim", vecs.front().dim()}, {"embeddings", rows}});
    };
  });

  // synth-generate
  auto* synth = app.add_subcommand("synth-generate", "Generate synthetic revision pairs");
  std::string synth_out = "synthetic.jsonl", synth_manifest = "synthetic.manifest.json", synth_contract, synth_format = "auto";
  std::optional<std::size_t> synth_attempts;
  std::optional<std::uint64_t> synth_seed;
  bool synth_no_filter = false;
  synth->add_option("--dataset", synth_out, "Output JSONL");
  synth->add_option("--manifest", synth_manifest, "Output manifest");
  synth->add_option("--contract", synth_contract, "Query provisions (default: all workspace contracts)");
  synth->add_option("--format", synth_format, "plain, structured or auto");
  synth->add_option("--attempts", synth_attempts, "Prompts per provision");
  synth->add_option("--seed", synth_seed, "Sampling seed");
  synth->add_flag("--no-filter", synth_no_filter, "Skip the kNN label filter");
  synth->callback([&] {
    action = [&] {
      auto& ws = runner.workspace();
      if (!ws.providers().llm) throw Error(ErrorCode::ProviderUnavailable, "no LLM endpoint is configured");
      auto cfg = ws.config().generation;
      if (synth_attempts) cfg.attempts_per_provision = *synth_attempts;
      if (synth_seed) cfg.seed = *synth_seed;
      std::vector<Provision> provisions;
      if (!synth_contract.empty()) {
        provisions = read_contract(synth_contract, synth_format, "").provisions;
      } else {
        for (const auto& id : ws.contract_ids())
          for (auto& p : ws.contract(id)->provisions) provisions.push_back(std::move(p));
      }
      if (provisions.empty()) throw Error(ErrorCode::Validation, "no query provisions; pass --contract");
      std::vector<synthgen::DemoTriple> demos;
      for (const auto& t : workspace_triples(ws))
        demos.push_back({t.provision_number, t.provision_text, t.acceptable, t.unacceptable});
      const auto real = real_labeled_store(ws);
      const auto report = synthgen::generate_dataset(*ws.providers().llm, *ws.providers().embedder, provisions, demos,
                                                     cfg, synth_no_filter ? nullptr : &real);
      synthgen::write_dataset(report, synth_out, synth_manifest);
      runner.emit(report.manifest);
    };
  });

  // synth-filter
  auto* filter = app.add_subcommand("synth-filter", "Filter synthetic revisions by kNN label agreement");
  std::string filter_in, filter_out = "filtered.jsonl";
  std::optional<std::size_t> filter_k;
  filter->add_option("--input", filter_in, "JSONL of synthetic revisions")->required();
  filter->add_option("--dataset", filter_out, "Output JSONL of kept revisions");
  filter->add_option("--k", filter_k, "Neighbors consulted");
  filter->callback([&] {
    action = [&] {
      auto& ws = runner.workspace();
      const auto real = real_labeled_store(ws);
      const std::size_t k = filter_k.value_or(ws.config().generation.knn_k);
      const auto revs = read_revisions(filter_in);
      std::vector<std::string> texts;
      for (const auto& r : revs) texts.push_back(r.text);
      const auto vecs = texts.empty() ? std::vector<embedding::EmbeddingVector>{}
                                      : embedding::embed_texts(*ws.providers().embedder, texts);
      std::ofstream o(filter_out, std::ios::trunc);
      if (!o) throw Error(ErrorCode::Io, "cannot write " + filter_out);
      std::size_t kept = 0;
      for (std::size_t i = 0; i < revs.size(); ++i) {
        if (revs[i].label == Label::Unlabeled) throw Error(ErrorCode::Validation, revs[i].id + " is unlabeled");
        if (synthgen::knn_filter(vecs[i], revs[i].label, real, k) == synthgen::FilterDecision::Keep) {
          o << nlohmann::json(revs[i]).dump() << '\n';
          ++kept;
        }
      }
      runner.emit({{"input", revs.size()}, {"kept", kept}, {"discarded", revs.size() - kept}, {"k", k}});
    };
  });

  // train-classifier
  auto* train = app.add_subcommand("train-classifier", "Train a new classifier version on the labeled store");
  std::optional<int> train_k;
  std::optional<std::uint64_t> train_seed;
  std::string train_model_out;
  train->add_option("--clusters,-k", train_k, "Number of clusters");
  train->add_option("--seed", train_seed, "Training seed");
  train->add_option("--model-out", train_model_out, "Also write the model file here");
  train->callback([&] {
    action = [&] {
      auto cfg = runner.config();
      if (train_k) cfg.train.k = *train_k;
      if (train_seed) cfg.train.seed = *train_seed;
      classifier::validate(cfg.train);
      runner.override_config(cfg);
      auto& ws = runner.workspace();
      const auto result = ws.retrain_snapshot(true);
      const auto model = ws.model();
      if (!train_model_out.empty()) classifier::save_model(*model, train_model_out);
      runner.emit({{"version", result.version},
                   {"k", model->k()},
                   {"embedding_model", model->embedding_model},
                   {"metrics", classifier::summary_json(model->metrics)}});
    };
  });

  // classify
  auto* classify = app.add_subcommand("classify", "Classify a contract's revisions and list flags");
  std::string classify_contract, classify_model, classify_format = "auto", classify_id;
  classify->add_option("--contract", classify_contract, "Contract under review")->required();
  classify->add_option("--model", classify_model, "Model file (default: serving workspace model)");
  classify->add_option("--format", classify_format, "plain, structured or auto");
  classify->add_option("--id", classify_id, "Contract id (default: file stem)");
  classify->callback([&] {
    action = [&] {
      const Contract contract = read_contract(classify_contract, classify_format, classify_id);
      std::shared_ptr<const classifier::EnsembleModel> model;
      service::Providers providers;
      double band = classifier::kDefaultAmbiguityBand;
      if (!classify_model.empty()) {
        model = std::make_shared<classifier::EnsembleModel>(classifier::load_model(classify_model));
        providers = runner.providers();
        band = runner.config().ambiguity_band;
      } else {
        auto& ws = runner.workspace();
        model = ws.model();
        providers = ws.providers();
        band = ws.config().ambiguity_band;
      }
      if (!model) throw Error(ErrorCode::PreconditionViolation, "no classifier model is serving");
      const auto pending = service::review_revisions(contract, utc_now());
      std::vector<std::string> texts;
      for (const auto& r : pending) texts.push_back(r.text);
      const auto vecs = texts.empty() ? std::vector<embedding::EmbeddingVector>{}
                                      : embedding::embed_texts(*providers.embedder, texts);
      const auto classified = service::classify_revisions(*model, pending, vecs, band);
      nlohmann::json predictions = nlohmann::json::array();
      for (const auto& c : classified)
        predictions.push_back({{"revision_id", c.revision.id},
                               {"provision_number", c.revision.provision_number},
                               {"prediction", c.prediction},
                               {"confidence_band", classifier::to_string(c.band)},
                               {"flagged", c.flagged}});
      runner.emit({{"contract_id", contract.id},
                   {"model_version", model->version},
                   {"predictions", predictions},
                   {"flags", service::flags_from(classified, model->version)}});
    };
  });

  // retrieve
  auto* retrieve = app.add_subcommand("retrieve", "Retrieve and rerank precedent revisions");
  std::string retrieve_text;
  std::size_t retrieve_depth = retrieval::kDefaultRetrievalDepth, retrieve_keep = retrieval::kDefaultRerankKeep;
  bool retrieve_rerank = false;
  retrieve->add_option("--text", retrieve_text, "Query revision text")->required();
  retrieve->add_option("--top-k", retrieve_depth, "Retrieval depth");
  retrieve->add_option("--keep", retrieve_keep, "Results kept after reranking");
  retrieve->add_flag("--rerank", retrieve_rerank, "Rerank with the pair scorer");
  retrieve->callback([&] {
    action = [&] {
      auto& ws = runner.workspace();
      Revision query;
      query.text = retrieve_text;
      const RevisionTable table(ws.revisions());
      auto candidates = retrieval::retrieve_precedents(ws.store(), table, query, ws.embed(retrieve_text), retrieve_depth);
      if (retrieve_rerank && !candidates.empty())
        candidates = retrieval::rerank(*ws.providers().scorer, retrieve_text, std::move(candidates), retrieve_keep);
      runner.emit({{"query", retrieve_text}, {"candidates", candidates}});
    };
  });

  // optimize
  auto* optimize = app.add_subcommand("optimize", "Optimize one revision or every flag of a contract");
  std::string optimize_revision, optimize_contract;
  std::optional<int> optimize_n;
  std::optional<std::uint64_t> optimize_seed;
  optimize->add_option("--revision", optimize_revision, "Revision id");
  optimize->add_option("--contract", optimize_contract, "Contract id (optimizes all its flags)");
  optimize->add_option("--best-of-n", optimize_n, "Candidates sampled per revision");
  optimize->add_option("--seed", optimize_seed, "Sampling seed");
  optimize->callback([&] {
    action = [&] {
      if (optimize_revision.empty() == optimize_contract.empty())
        throw Error(ErrorCode::Validation, "give exactly one of --revision or --contract");
      auto& ws = runner.workspace();
      auto cfg = ws.config().optimization;
      if (optimize_n) cfg.best_of_n = *optimize_n;
      if (optimize_seed) cfg.seed = *optimize_seed;
      optimizer::validate(cfg);
      if (!optimize_revision.empty()) {
        runner.emit(ws.optimize(optimize_revision, cfg));
        return;
      }
      const auto m = ws.model();
      if (!m) throw Error(ErrorCode::PreconditionViolation, "no classifier model is serving");
      if (!ws.providers().llm) throw Error(ErrorCode::ProviderUnavailable, "no LLM endpoint is configured");
      const auto contract = ws.contract(optimize_contract);
      if (!contract) throw Error(ErrorCode::NotFound, "unknown contract " + optimize_contract);
      std::vector<Revision> flagged;
      for (const auto& f : ws.flags(optimize_contract))
        if (f.status != service::FlagStatus::Decided) flagged.push_back(*ws.revision(f.revision_id));
      const auto triples = workspace_triples(ws);
      optimizer::Context ctx{*ws.providers().llm, *m, *ws.providers().embedder, triples, &*contract,
                             ws.providers().scorer.get()};
      runner.emit(optimizer::batch_optimize(ctx, optimize_contract, flagged, cfg));
    };
  });

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate the classifier, retrieval or synthetic data");
  std::string eval_what = "classifier", eval_test;
  bool eval_rerank = false, eval_normalize = false;
  evaluate->add_option("--what", eval_what, "classifier, retrieval or fid")
      ->check(CLI::IsMember({"classifier", "retrieval", "fid"}));
  evaluate->add_option("--test", eval_test, "JSONL test revisions (classifier)");
  evaluate->add_flag("--rerank", eval_rerank, "Rerank retrieval results with the pair scorer");
  evaluate->add_flag("--normalize", eval_normalize, "Unit-normalize embeddings before FID");
  evaluate->callback([&] {
    action = [&] {
      auto& ws = runner.workspace();
      if (ws.store().empty()) throw Error(ErrorCode::EmptyStore, "the workspace embedding store is empty");
      if (eval_what == "classifier") {
        const auto m = ws.model();
        if (!m) throw Error(ErrorCode::PreconditionViolation, "no classifier model is serving");
        const auto revs = eval_test.empty() ? ws.labeled_revisions() : read_revisions(eval_test);
        std::vector<Label> truth;
        std::vector<std::string> texts;
        for (const auto& r : revs)
          if (r.label != Label::Unlabeled) {
            truth.push_back(r.label);
            texts.push_back(r.text);
          }
        if (texts.empty()) throw Error(ErrorCode::EmptyTestSet, "no labeled test revisions");
        const auto features = metrics::stack(embedding::embed_texts(*ws.providers().embedder, texts));
        nlohmann::json j = classifier::evaluate_classifier(*m, features, truth);
        j["model_version"] = m->version;
        j["in_sample"] = eval_test.empty();
        runner.emit(j);
      } else if (eval_what == "retrieval") {
        const RevisionTable table(ws.revisions());
        std::vector<retrieval::EvalQuery> queries;
        for (const auto& r : table.all()) {
          if (r.source != Source::Paraphrase || !r.id.ends_with("-para")) continue;
          const std::string gold = r.id.substr(0, r.id.size() - 5);
          if (!ws.store().contains(gold)) continue;
          queries.push_back({r.text, ws.store().find(r.id)->vector, gold, r.id});
        }
        if (queries.empty()) throw Error(ErrorCode::EmptyTestSet, "no paraphrase queries in the workspace");
        const std::vector<int> ks = {1, 3, 5, 10};
        std::optional<retrieval::RerankStage> stage;
        if (eval_rerank) stage = retrieval::RerankStage{ws.providers().scorer.get(), &table};
        runner.emit(retrieval::evaluate_retrieval(ws.store(), queries, ks, stage));
      } else {
        std::vector<embedding::EmbeddingVector> real, synth;
        for (const auto& r : ws.labeled_revisions()) {
          const auto rec = ws.store().find(r.id);
          if (!rec) continue;
          (r.source == Source::Synthetic ? synth : real).push_back(rec->vector);
        }
        const auto fid = metrics::fid_datasets(metrics::stack(real), metrics::stack(synth), eval_normalize);
        runner.emit({{"fid", fid.value},
                     {"low_sample_count", fid.low_sample_count},
                     {"real", real.size()},
                     {"synthetic", synth.size()},
                     {"normalized", eval_normalize}});
      }
    };
  });

  // export-embeddings
  auto* exp = app.add_subcommand("export-embeddings", "Write stored embeddings as JSONL");
  std::string export_path = "embeddings.jsonl";
  exp->add_option("--dataset", export_path, "Output JSONL");
  exp->callback([&] {
    action = [&] {
      auto& ws = runner.workspace();
      metrics::export_embeddings(ws.store(), export_path);
      runner.emit({{"path", export_path}, {"records", ws.store().size()}, {"model_id", ws.store().model_id()}});
    };
  });

  // serve
  auto* serve = app.add_subcommand("serve", "Run the review HTTP API");
  std::optional<std::string> serve_host;
  std::optional<int> serve_port;
  serve->add_option("--host", serve_host, "Bind address");
  serve->add_option("--port", serve_port, "Port");
  serve->callback([&] {
    action = [&] {
      auto& ws = runner.workspace();
      httplib::Server server;
      service::register_routes(server, ws, ws.config().api_token);
      const std::string host = serve_host.value_or(ws.config().host);
      const int port = serve_port.value_or(ws.config().port);
      if (!server.bind_to_port(host, port)) throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
      out << nlohmann::json{{"listening", host + ":" + std::to_string(port)}}.dump() << std::endl;
      server.listen_after_bind();
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::Success&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << nlohmann::json{{"error", {{"code", "Usage"}, {"message", e.what()}}}}.dump() << '\n';
    err << app.help();
    return kExitUsage;
  }

  try {
    action();
    return kExitOk;
  } catch (const Error& e) {
    err << nlohmann::json{{"error", {{"code", to_string(e.code())}, {"message", e.what()}}}}.dump() << '\n';
    return exit_code(e.code());
  } catch (const nlohmann::json::exception& e) {
    err << nlohmann::json{{"error", {{"code", "Validation"}, {"message", e.what()}}}}.dump() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << nlohmann::json{{"error", {{"code", "Internal"}, {"message", e.what()}}}}.dump() << '\n';
    return kExitRuntime;
  }
}

}  // namespace revkit::cli
