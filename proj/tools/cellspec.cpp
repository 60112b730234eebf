// cellspec command-line tool: ingest, index, kg, query, eval, ablate, report.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cellspec/cellspec.hpp"

namespace fs = std::filesystem;
using namespace cellspec;

namespace {

struct GatewayOpts {
  std::string transport = "mock";
  std::string record_upstream = "live";
  std::string cache_dir = "cache";
  std::string model;
  int max_output = 1024;
  std::size_t max_in_flight = 4;
  std::string prompts_file;
};

struct RetrievalOpts {
  double alpha = 0.5;
  std::size_t k = 8;
  double k1 = 1.2;
  double b = 0.75;
  std::size_t svd_dim = 0;  // 0 = default
};

// Values from --config fill every option not given on the command line.
struct ConfigFile {
  nlohmann::json j = nlohmann::json::object();

  template <typename T>
  void apply(CLI::App& app, const std::string& flag, const char* key, T& target) const {
    if (!j.contains(key)) return;
    if (app.get_option(flag)->count() > 0) return;
    try {
      target = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::UsageError, std::string("config key '") + key + "' has the wrong type");
    }
  }
};

void add_gateway_options(CLI::App* app, GatewayOpts& o) {
  app->add_option("--transport", o.transport, "live, record, replay or mock")
      ->check(CLI::IsMember({"live", "record", "replay", "mock"}));
  app->add_option("--record-upstream", o.record_upstream, "upstream for record mode: live or mock")
      ->check(CLI::IsMember({"live", "mock"}));
  app->add_option("--cache-dir", o.cache_dir, "response cache directory");
  app->add_option("--model", o.model, "model name sent with every request");
  app->add_option("--max-output", o.max_output, "output token budget per request");
  app->add_option("--max-in-flight", o.max_in_flight, "concurrent model requests")->check(CLI::PositiveNumber);
  app->add_option("--prompts", o.prompts_file, "prompt template file");
}

void apply_gateway_config(CLI::App& app, const ConfigFile& c, GatewayOpts& o) {
  c.apply(app, "--transport", "transport", o.transport);
  c.apply(app, "--record-upstream", "record_upstream", o.record_upstream);
  c.apply(app, "--cache-dir", "cache_dir", o.cache_dir);
  c.apply(app, "--model", "model", o.model);
  c.apply(app, "--max-output", "max_output", o.max_output);
  c.apply(app, "--max-in-flight", "max_in_flight", o.max_in_flight);
  c.apply(app, "--prompts", "prompts", o.prompts_file);
}

void add_retrieval_options(CLI::App* app, RetrievalOpts& o, bool build_params) {
  app->add_option("--alpha", o.alpha, "sparse weight in the fused score");
  app->add_option("--k", o.k, "evidence items per query");
  if (build_params) {
    app->add_option("--bm25-k1", o.k1, "BM25 term saturation");
    app->add_option("--bm25-b", o.b, "BM25 length normalisation");
    app->add_option("--svd-dim", o.svd_dim, "latent dimension (default min(256, chunks, terms))");
  }
}

void apply_retrieval_config(CLI::App& app, const ConfigFile& c, RetrievalOpts& o, bool build_params) {
  c.apply(app, "--alpha", "alpha", o.alpha);
  c.apply(app, "--k", "k", o.k);
  if (build_params) {
    c.apply(app, "--bm25-k1", "bm25_k1", o.k1);
    c.apply(app, "--bm25-b", "bm25_b", o.b);
    c.apply(app, "--svd-dim", "svd_dim", o.svd_dim);
  }
}

RetrievalConfig to_retrieval_config(const RetrievalOpts& o) {
  RetrievalConfig r;
  r.alpha = o.alpha;
  r.k = o.k;
  r.bm25_k1 = o.k1;
  r.bm25_b = o.b;
  if (o.svd_dim > 0) r.svd_dim = o.svd_dim;
  r.validate();
  return r;
}

PromptSet load_prompts(const GatewayOpts& o) {
  return o.prompts_file.empty() ? PromptSet::defaults() : PromptSet::load(o.prompts_file);
}

std::unique_ptr<Gateway> make_gateway(const GatewayOpts& o) {
  GatewayConfig cfg = GatewayConfig::from_env();
  cfg.mode = parse_transport(o.transport);
  cfg.record_upstream = parse_transport(o.record_upstream);
  cfg.cache_dir = o.cache_dir;
  if (!o.model.empty()) cfg.model_name = o.model;
  cfg.max_output = o.max_output;
  cfg.max_in_flight = o.max_in_flight;
  if (cfg.mode == TransportMode::replay) {
    std::error_code ec;
    if (!fs::is_directory(cfg.cache_dir, ec)) {
      throw Error(ErrorCode::IoError, "replay cache directory not found: " + cfg.cache_dir.string());
    }
  }
  if (cfg.mode == TransportMode::record) fs::create_directories(cfg.cache_dir);
  auto gw = std::make_unique<Gateway>(cfg);
  if (cfg.mode == TransportMode::mock ||
      (cfg.mode == TransportMode::record && cfg.record_upstream == TransportMode::mock)) {
    mock::install(*gw);
  }
  return gw;
}

nlohmann::json gateway_snapshot(const GatewayOpts& o, const Gateway& gw) {
  nlohmann::json j = {{"transport", o.transport},
                      {"model", gw.config().model_name},
                      {"max_output", gw.config().max_output}};
  if (o.transport == "record") j["record_upstream"] = o.record_upstream;
  if (!o.prompts_file.empty()) j["prompts_sha256"] = file_sha256(o.prompts_file);
  return j;
}

void require_file(const std::string& p, const char* what) {
  std::error_code ec;
  if (!fs::is_regular_file(p, ec)) throw Error(ErrorCode::IoError, std::string(what) + " not found: " + p);
}

void require_dir(const std::string& p, const char* what) {
  std::error_code ec;
  if (!fs::is_directory(p, ec)) throw Error(ErrorCode::IoError, std::string(what) + " not found: " + p);
}

std::string fmt_rate(const nlohmann::json& v) {
  if (v.is_null()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v.get<double>());
  return buf;
}

void print_aggregates(std::ostream& os, const nlohmann::json& aggregates) {
  static const char* kCols[] = {"accuracy",  "score2_rate", "evidence_correct_rate", "binary_f1",
                                "micro_f1",  "macro_f1",    "evidence_explanation_correct_rate"};
  os << "family\ttasks\tunscored";
  for (auto c : kCols) os << "\t" << c;
  os << "\n";
  auto row = [&](const std::string& name, const nlohmann::json& g) {
    os << name << "\t" << g["tasks"].get<std::size_t>() << "\t" << g["unscored"].get<std::size_t>();
    for (auto c : kCols) os << "\t" << fmt_rate(g[c]);
    os << "\n";
  };
  for (const auto& [f, g] : aggregates["per_family"].items()) row(f, g);
  row("overall", aggregates["overall"]);
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string corpus, out;
  std::string granularity = "paragraph";
  bool lossy = false;
  GatewayOpts gw;
};

int cmd_ingest(CLI::App& app, const ConfigFile& cfgfile, IngestArgs& a) {
  apply_gateway_config(app, cfgfile, a.gw);
  NormalizeOptions nopts;
  nopts.lossy_utf8 = a.lossy;
  auto docs = load_corpus(a.corpus, nopts);
  auto prompts = load_prompts(a.gw);
  auto gw = make_gateway(a.gw);
  AssembleOptions aopts;
  aopts.granularity = a.granularity == "sentence" ? Granularity::sentence : Granularity::paragraph;
  aopts.max_in_flight = a.gw.max_in_flight;
  auto space = assemble_component_space(docs, *gw, aopts, prompts);

  fs::create_directories(a.out);
  const fs::path space_file = fs::path(a.out) / "space.jsonl";
  write_file(space_file, serialize_space(space));
  RunManifest m;
  m.command = "ingest";
  m.config = {{"granularity", a.granularity}, {"lossy_utf8", a.lossy}, {"gateway", gateway_snapshot(a.gw, *gw)}};
  m.add_input(a.corpus);
  m.add_output(space_file, a.out);
  m.counters = {{"components", space.components.size()}, {"model_calls", gw->completions()}};
  m.write(fs::path(a.out) / "manifest.ingest.json");
  std::cout << "wrote " << space_file.string() << " (" << space.components.size() << " components: "
            << space.stats.paragraphs << " paragraphs, " << space.stats.tables << " tables, " << space.stats.figures
            << " figures)\n";
  return 0;
}

struct IndexArgs {
  std::string space, out;
  RetrievalOpts r;
};

int cmd_index(CLI::App& app, const ConfigFile& cfgfile, IndexArgs& a) {
  apply_retrieval_config(app, cfgfile, a.r, true);
  require_file(a.space, "space file");
  auto cfg = to_retrieval_config(a.r);
  auto space = load_space(a.space);
  auto index = build_index(space, cfg);
  save_index(index, a.out);
  RunManifest m;
  m.command = "index";
  m.config = retrieval_config_to_json(cfg);
  m.add_input(a.space);
  for (const char* f : {"config.json", "chunks.jsonl", "sparse.bin", "dense.bin", "basis.bin"}) {
    m.add_output(fs::path(a.out) / f, a.out);
  }
  m.counters = {{"chunks", index.size()}, {"terms", index.vocabulary_size()}, {"svd_dim", index.svd_dim()}};
  m.write(fs::path(a.out) / "manifest.index.json");
  std::cout << "indexed " << index.size() << " chunks, " << index.vocabulary_size() << " terms, svd_dim "
            << index.svd_dim() << " -> " << a.out << "\n";
  return 0;
}

struct KgArgs {
  std::string space, store = "kg", index;
  RetrievalOpts r;
  GatewayOpts gw;
};

int cmd_kg(CLI::App& app, const ConfigFile& cfgfile, KgArgs& a) {
  apply_gateway_config(app, cfgfile, a.gw);
  apply_retrieval_config(app, cfgfile, a.r, true);
  require_file(a.space, "space file");
  auto cfg = to_retrieval_config(a.r);
  auto space = load_space(a.space);
  auto prompts = load_prompts(a.gw);
  auto gw = make_gateway(a.gw);
  const auto known = known_clause_citations(space);

  auto groups = components_by_clause(space);
  std::vector<std::optional<std::pair<SpecGraph, KgBlock>>> built(groups.size());
  bounded_parallel_for(groups.size(), a.gw.max_in_flight, [&](std::size_t i) {
    const auto& comps = groups[i];
    if (comps.front().clause_id == kPreambleClauseId) return;
    const std::string title = space.clause_titles.count(title_key(comps.front().spec_id, comps.front().clause_id))
                                  ? space.clause_titles.at(title_key(comps.front().spec_id, comps.front().clause_id))
                                  : "";
    SpecGraph g = extract_graph(comps, title, *gw, prompts);
    auto violations = validate_graph(g, &known);
    if (!violations.empty()) {
      throw Error(ErrorCode::InvalidGraph, g.graph_id + ": " + violations.front().message);
    }
    KgBlock b = render_kg_block(g, clause_text_of(comps));
    built[i].emplace(std::move(g), std::move(b));
  });
  std::vector<std::pair<SpecGraph, KgBlock>> blocks;
  for (auto& b : built)
    if (b) blocks.push_back(std::move(*b));
  if (blocks.empty()) throw Error(ErrorCode::EmptyCorpus, "no clause produced a graph");
  auto kg_index = build_kg_index(blocks, cfg);

  for (const auto& [g, b] : blocks) save_graph(a.store, g);
  RunManifest m;
  m.command = "kg";
  m.config = {{"retrieval", retrieval_config_to_json(cfg)}, {"gateway", gateway_snapshot(a.gw, *gw)}};
  m.add_input(a.space);
  m.add_output(a.store, a.store);
  if (!a.index.empty()) {
    save_index(kg_index, a.index);
    for (const char* f : {"config.json", "chunks.jsonl", "sparse.bin", "dense.bin", "basis.bin"}) {
      m.add_output(fs::path(a.index) / f, a.index);
    }
  }
  m.counters = {{"graphs", blocks.size()}, {"model_calls", gw->completions()}};
  m.write(fs::path(a.store) / "manifest.kg.json");
  std::cout << "wrote " << blocks.size() << " graphs to " << a.store;
  if (!a.index.empty()) std::cout << ", KG index to " << a.index;
  std::cout << "\n";
  return 0;
}

struct PipelineArgs {
  std::string pipeline = "ari";
  bool base = false;
  bool strict = false;
};

PipelineConfig to_pipeline(const PipelineArgs& p, const RetrievalConfig& r, std::size_t in_flight) {
  PipelineConfig c;
  const std::string name = p.base ? "base" : p.pipeline;
  if (name == "base") c = PipelineConfig::base();
  else if (name == "fusion") c = {true, false, false, {}, false, 4};
  else if (name == "rag") c = {false, true, false, {}, false, 4};
  else if (name == "fusion+rag") c = {true, true, false, {}, false, 4};
  else if (name == "rag+kg") c = {false, true, true, {}, false, 4};
  else c = PipelineConfig::full();
  c.retrieval = r;
  c.strict_evidence = p.strict;
  c.max_in_flight = in_flight;
  c.validate();
  return c;
}

struct QueryArgs {
  std::string index, kg_index, question;
  bool with_kg = false, no_fusion = false, show_context = false;
  RetrievalOpts r;
  GatewayOpts gw;
};

int cmd_query(CLI::App& app, const ConfigFile& cfgfile, QueryArgs& a) {
  apply_gateway_config(app, cfgfile, a.gw);
  apply_retrieval_config(app, cfgfile, a.r, false);
  if (text::trim(a.question).empty()) throw Error(ErrorCode::UsageError, "empty question");
  auto rc = to_retrieval_config(a.r);
  if (a.no_fusion) rc.kinds = {ComponentKind::text};
  require_dir(a.index, "index directory");
  if (a.with_kg) {
    if (a.kg_index.empty()) throw Error(ErrorCode::UsageError, "--with-kg needs --kg-index");
    require_dir(a.kg_index, "KG index directory");
  }
  auto index = load_index(a.index);
  std::optional<HybridIndex> kg;
  if (a.with_kg) kg = load_index(a.kg_index);
  auto prompts = load_prompts(a.gw);
  auto gw = make_gateway(a.gw);

  auto chunks = retrieve(index, a.question, rc);
  auto context = kg ? merge_context(chunks, kg_retrieve(*kg, a.question, rc), rc.k) : to_context(chunks);
  auto answer = answer_with_context(*gw, a.question, context, true, prompts);
  std::cout << answer.text << "\n";
  std::cout << "CITATIONS: " << text::join(answer.cited_labels, "; ") << "\n";
  if (a.show_context) {
    std::cout << "CONTEXT:\n";
    for (const auto& c : context) std::cout << "  " << c.label << "\t" << c.origin << "\t" << c.score << "\n";
  }
  return 0;
}

struct EvalArgs {
  std::string tasks, out, index, kg_index, space;
  int stage = 0;
  std::string count_check = "warn";
  std::string k_list;
  PipelineArgs p;
  RetrievalOpts r;
  GatewayOpts gw;
};

void add_eval_options(CLI::App* sub, EvalArgs& a) {
  sub->add_option("--tasks", a.tasks, "task JSONL file")->required();
  sub->add_option("--out", a.out, "output directory")->required();
  sub->add_option("--stage", a.stage, "only tasks of this stage (1-3)")->check(CLI::Range(1, 3));
  sub->add_option("--index", a.index, "chunk index directory");
  sub->add_option("--kg-index", a.kg_index, "KG index directory");
  sub->add_option("--space", a.space, "component space file (table and figure lookup)");
  sub->add_option("--pipeline", a.p.pipeline, "base, fusion, rag, fusion+rag, rag+kg or ari")
      ->check(CLI::IsMember({"base", "fusion", "rag", "fusion+rag", "rag+kg", "ari"}));
  sub->add_flag("--base", a.p.base, "shorthand for --pipeline base");
  sub->add_flag("--strict-evidence", a.p.strict, "require equal citation sets");
  sub->add_option("--count-check", a.count_check, "none, warn or error")
      ->check(CLI::IsMember({"none", "warn", "error"}));
  add_retrieval_options(sub, a.r, false);
  add_gateway_options(sub, a.gw);
}

struct EvalSetup {
  LoadedTasks tasks;
  PipelineConfig pipeline;
  PromptSet prompts;
  std::optional<ComponentSpace> space;
  std::optional<HybridIndex> index, kg;
  PipelineResources res;
  std::unique_ptr<Gateway> gw;
  RunManifest manifest;
};

std::unique_ptr<EvalSetup> prepare_eval(CLI::App& app, const ConfigFile& cfgfile, EvalArgs& a, const char* command) {
  apply_gateway_config(app, cfgfile, a.gw);
  apply_retrieval_config(app, cfgfile, a.r, false);
  cfgfile.apply(app, "--pipeline", "pipeline", a.p.pipeline);
  cfgfile.apply(app, "--count-check", "count_check", a.count_check);
  auto s = std::make_unique<EvalSetup>();
  s->pipeline = to_pipeline(a.p, to_retrieval_config(a.r), a.gw.max_in_flight);
  std::optional<int> stage;
  if (a.stage > 0) stage = a.stage;
  s->tasks = load_tasks(a.tasks, stage, parse_count_check(a.count_check));
  for (const auto& w : s->tasks.warnings) std::cerr << "warning: " << w << "\n";

  if (s->pipeline.use_rag) {
    if (a.index.empty()) throw Error(ErrorCode::UsageError, "pipeline " + s->pipeline.name() + " needs --index");
    require_dir(a.index, "index directory");
    s->index = load_index(a.index);
    s->res.chunk_index = &*s->index;
  }
  if (s->pipeline.use_kg) {
    if (a.kg_index.empty()) throw Error(ErrorCode::UsageError, "pipeline " + s->pipeline.name() + " needs --kg-index");
    require_dir(a.kg_index, "KG index directory");
    s->kg = load_index(a.kg_index);
    s->res.kg_index = &*s->kg;
  }
  if (s->pipeline.use_fusion && !s->pipeline.use_rag) {
    if (a.space.empty()) throw Error(ErrorCode::UsageError, "pipeline fusion needs --space");
    require_file(a.space, "space file");
    s->space = load_space(a.space);
    s->res.space = &*s->space;
  }
  s->prompts = load_prompts(a.gw);
  s->gw = make_gateway(a.gw);

  auto& m = s->manifest;
  m.command = command;
  m.config = {{"pipeline", pipeline_to_json(s->pipeline)},
              {"gateway", gateway_snapshot(a.gw, *s->gw)},
              {"stage", a.stage > 0 ? nlohmann::json(a.stage) : nlohmann::json(nullptr)}};
  m.add_input(a.tasks);
  if (s->index) m.add_input(a.index);
  if (s->kg) m.add_input(a.kg_index);
  if (s->space) m.add_input(a.space);
  if (a.gw.transport == "replay") m.add_input(a.gw.cache_dir);
  return s;
}

int systemic_exit(const EvalReport& r) {
  if (!r.rows.empty() && r.gateway_failures == r.rows.size()) {
    std::cerr << "error: every task failed at the model gateway; first error: " << r.rows.front().error << "\n";
    return static_cast<int>(ExitCode::Gateway);
  }
  return 0;
}

int cmd_eval(CLI::App& app, const ConfigFile& cfgfile, EvalArgs& a) {
  auto s = prepare_eval(app, cfgfile, a, "eval");
  auto report = run_eval(s->tasks.tasks, s->pipeline, s->res, *s->gw, s->prompts);
  fs::create_directories(a.out);
  auto files = emit_report(report, a.out);
  for (const auto& f : files) s->manifest.add_output(f, a.out);
  s->manifest.counters = {{"tasks", report.rows.size()},
                          {"retrieval_calls", report.retrieval_calls},
                          {"gateway_failures", report.gateway_failures},
                          {"model_calls", s->gw->completions()}};
  s->manifest.write(fs::path(a.out) / "manifest.eval.json");
  print_aggregates(std::cout, report.aggregates);
  std::cout << "retrieval calls: " << report.retrieval_calls << "\n";
  return systemic_exit(report);
}

std::vector<std::size_t> parse_k_list(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& part : text::split(s, ',')) {
    const auto t = std::string(text::trim(part));
    if (t.empty() || !std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; }) || std::stoul(t) == 0) {
      throw Error(ErrorCode::UsageError, "--k-list must be comma-separated positive integers");
    }
    out.push_back(std::stoul(t));
  }
  return out;
}

int cmd_ablate(CLI::App& app, const ConfigFile& cfgfile, EvalArgs& a) {
  const auto ks = parse_k_list(a.k_list);
  auto s = prepare_eval(app, cfgfile, a, "ablate");
  s->manifest.config["k_list"] = ks;
  auto ab = run_ablation(s->tasks.tasks, ks, s->pipeline, s->res, *s->gw, s->prompts);
  fs::create_directories(a.out);
  for (const auto& f : emit_ablation(ab, a.out)) s->manifest.add_output(f, a.out);
  std::size_t calls = 0;
  for (const auto& r : ab.reports) calls += r.retrieval_calls;
  s->manifest.counters = {{"tasks", s->tasks.tasks.size()}, {"retrieval_calls", calls}, {"model_calls", s->gw->completions()}};
  s->manifest.write(fs::path(a.out) / "manifest.ablate.json");
  for (std::size_t i = 0; i < ab.k_values.size(); ++i) {
    std::cout << "k=" << ab.k_values[i] << "\n";
    print_aggregates(std::cout, ab.reports[i].aggregates);
  }
  for (const auto& r : ab.reports)
    if (int rc = systemic_exit(r)) return rc;
  return 0;
}

struct ReportArgs {
  std::vector<std::string> files;
  bool json = false;
};

int cmd_report(ReportArgs& a) {
  std::vector<std::pair<std::string, EvalReport>> reports;
  for (const auto& f : a.files) {
    require_file(f, "report file");
    auto j = nlohmann::json::parse(read_file(f), nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::SchemaViolation, f + " is not JSON");
    auto r = report_from_json(j);
    if (compute_aggregates(r.rows) != r.aggregates) {
      throw Error(ErrorCode::SchemaViolation, f + ": stored aggregates differ from the rows");
    }
    reports.emplace_back(f, std::move(r));
  }
  if (a.json) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [f, r] : reports) out.push_back({{"file", f}, {"config", r.config}, {"aggregates", r.aggregates}});
    std::cout << out.dump(2) << "\n";
    return 0;
  }
  for (const auto& [f, r] : reports) {
    std::cout << "== " << f << " (" << r.config.value("name", "?") << ", " << r.rows.size() << " tasks, "
              << r.retrieval_calls << " retrieval calls)\n";
    print_aggregates(std::cout, r.aggregates);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cellspec: specification ingestion, hybrid retrieval, knowledge graphs and benchmark evaluation"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; command-line flags take precedence");

  IngestArgs ingest;
  auto* s_ingest = app.add_subcommand("ingest", "build a component space from a corpus directory");
  s_ingest->add_option("corpus", ingest.corpus, "corpus root")->required();
  s_ingest->add_option("--out", ingest.out, "output directory")->required();
  s_ingest->add_option("--granularity", ingest.granularity, "paragraph or sentence")
      ->check(CLI::IsMember({"paragraph", "sentence"}));
  s_ingest->add_flag("--lossy-utf8", ingest.lossy, "replace undecodable bytes instead of failing");
  add_gateway_options(s_ingest, ingest.gw);

  IndexArgs index;
  auto* s_index = app.add_subcommand("index", "build a hybrid retrieval index");
  s_index->add_option("--space", index.space, "component space file")->required();
  s_index->add_option("--out", index.out, "index directory")->required();
  add_retrieval_options(s_index, index.r, true);

  KgArgs kg;
  auto* s_kg = app.add_subcommand("kg", "extract per-clause knowledge graphs and index their text blocks");
  s_kg->add_option("--space", kg.space, "component space file")->required();
  s_kg->add_option("--store", kg.store, "graph store root");
  s_kg->add_option("--index", kg.index, "KG index directory");
  add_retrieval_options(s_kg, kg.r, true);
  add_gateway_options(s_kg, kg.gw);

  QueryArgs query;
  auto* s_query = app.add_subcommand("query", "answer one question with cited evidence");
  s_query->add_option("question", query.question, "question text")->required();
  s_query->add_option("--index", query.index, "chunk index directory")->required();
  s_query->add_option("--kg-index", query.kg_index, "KG index directory");
  s_query->add_flag("--with-kg", query.with_kg, "merge KG evidence into the context");
  s_query->add_flag("--no-fusion", query.no_fusion, "retrieve text chunks only");
  s_query->add_flag("--show-context", query.show_context, "list the context items after the answer");
  add_retrieval_options(s_query, query.r, false);
  add_gateway_options(s_query, query.gw);

  EvalArgs eval;
  auto* s_eval = app.add_subcommand("eval", "run and score a task file");
  add_eval_options(s_eval, eval);

  EvalArgs ablate;
  auto* s_ablate = app.add_subcommand("ablate", "run a task file once per evidence budget k");
  add_eval_options(s_ablate, ablate);
  s_ablate->add_option("--k-list", ablate.k_list, "comma-separated k values, e.g. 6,8")->required();

  ReportArgs report;
  auto* s_report = app.add_subcommand("report", "check and summarise report files");
  s_report->add_option("files", report.files, "report.json files")->required();
  s_report->add_flag("--json", report.json, "print aggregates as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::Usage);
  }

  try {
    ConfigFile cfg;
    if (!config_path.empty()) {
      require_file(config_path, "config file");
      cfg.j = nlohmann::json::parse(read_file(config_path), nullptr, false);
      if (cfg.j.is_discarded() || !cfg.j.is_object()) throw Error(ErrorCode::UsageError, "config file is not a JSON object");
    }
    if (s_ingest->parsed()) return cmd_ingest(*s_ingest, cfg, ingest);
    if (s_index->parsed()) return cmd_index(*s_index, cfg, index);
    if (s_kg->parsed()) return cmd_kg(*s_kg, cfg, kg);
    if (s_query->parsed()) return cmd_query(*s_query, cfg, query);
    if (s_eval->parsed()) return cmd_eval(*s_eval, cfg, eval);
    if (s_ablate->parsed()) return cmd_ablate(*s_ablate, cfg, ablate);
    if (s_report->parsed()) return cmd_report(report);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(exit_code_for(e.code()));
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON input: " << e.what() << "\n";
    return static_cast<int>(ExitCode::Data);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::Data);
  }
  return static_cast<int>(ExitCode::Usage);
}
