// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.
// Runs offline: mock transport, or replay against tests/fixtures/replay_cache.

#include <chrono>
#include <iostream>
#include <sstream>

#include "cellspec/bench.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cellspec;
using namespace testsupport;

namespace {

// Collects the first failed check of a criterion.
struct Check {
  std::string failure;
  std::size_t checks = 0;

  void require(bool ok, const std::string& what) {
    ++checks;
    if (!ok && failure.empty()) failure = what;
  }
  bool ok() const { return failure.empty(); }
};

int report(int n, const std::string& title, const Check& c, const std::string& detail = "") {
  std::cout << (c.ok() ? "PASS" : "FAIL") << " criterion " << n << ": " << title << " (" << c.checks << " checks"
            << (detail.empty() ? "" : ", " + detail) << ")";
  if (!c.ok()) std::cout << " -- " << c.failure;
  std::cout << std::endl;
  return c.ok() ? 0 : 1;
}

template <typename F>
int guarded(int n, const std::string& title, F body) {
  Check c;
  std::string detail;
  try {
    detail = body(c);
  } catch (const std::exception& e) {
    c.require(false, std::string("exception: ") + e.what());
  }
  return report(n, title, c, detail);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const std::vector<std::size_t> kCorpusSizes = {10, 60, 250, 600, 1000};

std::vector<HybridIndex> fixture_indexes() {
  std::mt19937 rng(2024);
  std::vector<HybridIndex> out;
  for (std::size_t n : kCorpusSizes) out.push_back(build_index(random_corpus(n, rng), RetrievalConfig{}));
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::fixed << v;
  return os.str();
}

// --- criterion 1 -----------------------------------------------------------

std::string retrieval_oracle(Check& c) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937 rng(1);
  for (const auto& idx : fixture_indexes()) {
    RetrievalConfig cfg;
    cfg.k = 8;
    for (int r = 0; r < 100; ++r) {
      cfg.alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      const auto q = random_query(rng);
      const auto ev = retrieve(idx, q, cfg);
      const auto want = brute_force(idx, q, cfg);
      bool same = ev.m() == want.size();
      for (std::size_t i = 0; same && i < want.size(); ++i) same = ev.items[i].component_id == want[i].first;
      c.require(same, "ranking differs for query '" + q + "' on " + std::to_string(idx.size()) + " chunks");
    }
  }
  const double secs = seconds_since(t0);
  c.require(secs < 60.0, "took " + fmt(secs) + " s");
  return fmt(secs) + " s";
}

// --- criterion 2 -----------------------------------------------------------

std::string bm25_and_dense(Check& c) {
  auto idx = build_index(three_docs(), RetrievalConfig{});
  const auto q = text::tokenize("nas integrity");
  const double idf_nas = std::log(1.0 + 2.5 / 1.5);
  const double idf_int = std::log(1.0 + 1.5 / 2.5);
  const double k_len3 = 1.2 * (0.25 + 0.75 * 3.0 / (8.0 / 3.0));
  const double a = (idf_nas + idf_int) * 2.2 / (1.0 + k_len3);
  const double b = idf_int * 2.0 * 2.2 / (2.0 + k_len3);
  c.require(std::abs(idx.sparse_score(q, "A") - a) <= 1e-9, "BM25 of A");
  c.require(std::abs(idx.sparse_score(q, "B") - b) <= 1e-9, "BM25 of B");
  c.require(idx.sparse_score(q, "C") == 0.0, "BM25 of C");

  double worst = 0.0;
  for (std::size_t dim : {1u, 2u, 3u}) {
    RetrievalConfig cfg;
    cfg.svd_dim = dim;
    auto d = build_index(three_docs(), cfg);
    for (const std::string query : {"nas integrity", "integrity check request", "registration nas protection"}) {
      const auto want = dense_oracle(d.chunks(), query, dim);
      const auto got = d.dense_scores(query);
      for (std::size_t i = 0; i < 3; ++i) {
        worst = std::max(worst, std::abs(got[i] - want[i]));
        c.require(std::abs(got[i] - want[i]) <= 1e-9, "dense cosine for '" + query + "'");
      }
    }
  }
  std::ostringstream os;
  os << "max dense error " << std::scientific << worst;
  return os.str();
}

// --- criterion 3 -----------------------------------------------------------

std::string fusion(Check& c) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double s = u(rng), d = u(rng), a = u(rng);
    c.require(std::abs(hybrid_score(s, d, a) - (a * s + (1 - a) * d)) <= 1e-12, "fused identity");
  }
  std::mt19937 qrng(17);
  for (const auto& idx : fixture_indexes()) {
    RetrievalConfig cfg;
    cfg.k = idx.size();
    for (int r = 0; r < 10; ++r) {
      const auto q = random_query(qrng);
      for (double alpha : {0.0, 1.0}) {
        cfg.alpha = alpha;
        const auto ev = retrieve(idx, q, cfg);
        std::vector<std::pair<double, std::string>> by_signal;
        for (const auto& it : ev.items)
          by_signal.emplace_back(alpha == 1.0 ? it.scores.sparse_norm : it.scores.dense_norm, it.component_id);
        std::sort(by_signal.begin(), by_signal.end(), [](const auto& x, const auto& y) {
          return x.first != y.first ? x.first > y.first : x.second < y.second;
        });
        bool same = by_signal.size() == ev.items.size();
        for (std::size_t i = 0; same && i < ev.items.size(); ++i) same = ev.items[i].component_id == by_signal[i].second;
        c.require(same, "alpha=" + fmt(alpha) + " order on " + std::to_string(idx.size()) + " chunks");
      }
    }
  }
  return "";
}

// --- criterion 4 -----------------------------------------------------------

std::string kg_schema(Check& c) {
  const std::set<std::string> known = {kDeregCite};
  c.require(validate_graph(dereg_graph(), &known).empty(), "reference graph has violations");
  std::size_t n = 0;
  for (const auto& m : mutation_cases()) {
    auto g = dereg_graph();
    m.mutate(g);
    std::vector<ViolationKind> got;
    for (const auto& v : validate_graph(g, &known)) got.push_back(v.kind);
    c.require(got == m.expected, std::string("mutation '") + m.name + "'");
    ++n;
  }
  c.require(n >= 20, "fewer than 20 mutations");

  const auto g = dereg_graph();
  const std::string original = "Line one.\n\nLine two.\n";
  const auto parsed = parse_kg_block(render_kg_block(g, original).rendered_text);
  std::map<std::string, std::string> name_of;
  std::multiset<std::pair<std::string, std::string>> nodes;
  for (const auto& x : g.nodes) {
    name_of[x.node_id] = x.name;
    nodes.insert({x.name, x.entity_type});
  }
  std::multiset<std::tuple<std::string, std::string, std::string>> edges;
  for (const auto& e : g.edges) edges.insert({name_of[e.source], e.relation_type, name_of[e.target]});
  c.require(parsed.citation == kDeregCite, "citation after round-trip");
  c.require(parsed.original_text == original, "text after round-trip");
  c.require(std::multiset(parsed.entities.begin(), parsed.entities.end()) == nodes, "entities after round-trip");
  c.require(std::multiset(parsed.relations.begin(), parsed.relations.end()) == edges, "relations after round-trip");
  return std::to_string(n) + " mutations";
}

// --- criterion 5 -----------------------------------------------------------

std::string metrics(Check& c) {
  std::mt19937 rng(123);
  const std::vector<std::string> cats = {"denial_of_service", "replay", "downgrade", "privacy_tracking",
                                         "spoofing", "authentication_bypass", "other"};
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 50)(rng);
    std::vector<bool> p(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = coin(rng);
      g[i] = coin(rng);
    }
    c.require(std::abs(binary_f1(p, g) - binary_oracle(p, g)) <= 1e-9, "binary F1 trial " + std::to_string(trial));
    std::vector<std::set<std::string>> mp(n), mg(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& k : cats) {
        if (coin(rng) && coin(rng)) mp[i].insert(k);
        if (coin(rng) && coin(rng)) mg[i].insert(k);
      }
    }
    if (std::all_of(mg.begin(), mg.end(), [](const auto& s) { return s.empty(); })) mg[0].insert("replay");
    const auto got = multilabel_f1(mp, mg);
    const auto want = multilabel_oracle(mp, mg);
    c.require(std::abs(got.micro - want.micro) <= 1e-9, "micro F1 trial " + std::to_string(trial));
    c.require(std::abs(got.macro - want.macro) <= 1e-9, "macro F1 trial " + std::to_string(trial));
  }
  const std::vector<std::string> gold = {"TS 24.501, Clause 5.5.1", "TS 24.501, Clause 5.4.2"};
  c.require(!score_evidence({"TS 24.501, Clause 5.5.1"}, gold), "subset counted as correct");
  c.require(score_evidence({"TS 24.501, Clause 5.4.2", "TS 24.501, Clause 5.5.1", "TS 24.501, Clause 9.11.3.20"}, gold),
            "superset counted as incorrect");
  c.require(score_evidence({" ts 24.501 , clause 5.4.2", "TS 24.501, CLAUSE 5.5.1 "}, gold),
            "normalized labels counted as incorrect");
  return "";
}

// --- end-to-end helpers ----------------------------------------------------

std::string replay_flags() {
  return "--transport replay --cache-dir " + quote((fixtures() / "replay_cache").string());
}

struct Built {
  fs::path dir;
  std::string indexes;
};

// ingest -> index -> kg into `dir` with the given transport flags.
Built build_workspace(const fs::path& dir, const std::string& transport, Check& c) {
  const auto corpus = fixtures() / "mini_corpus";
  auto r = run_cli("ingest " + quote(corpus.string()) + " --out " + quote(dir.string()) + " " + transport, dir);
  c.require(r.exit_code == 0, "ingest: " + r.err);
  r = run_cli("index --space " + quote((dir / "space.jsonl").string()) + " --out " + quote((dir / "index").string()),
              dir);
  c.require(r.exit_code == 0, "index: " + r.err);
  r = run_cli("kg --space " + quote((dir / "space.jsonl").string()) + " --store " + quote((dir / "kg").string()) +
                  " --index " + quote((dir / "kg_index").string()) + " " + transport,
              dir);
  c.require(r.exit_code == 0, "kg: " + r.err);
  return {dir, "--index " + quote((dir / "index").string()) + " --kg-index " + quote((dir / "kg_index").string())};
}

std::string eval_cmd(const fs::path& tasks, const fs::path& out, const std::string& extra) {
  return "eval --tasks " + quote(tasks.string()) + " --out " + quote(out.string()) + " --count-check none " + extra;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_file(p)); }

// --- criterion 6 -----------------------------------------------------------

std::string determinism(Check& c) {
  TempDir tmp;
  const fs::path tasks = fixtures() / "tasks.jsonl";
  std::vector<std::string> lines;
  {
    std::istringstream in(read_file(tasks));
    for (std::string l; std::getline(in, l);)
      if (!l.empty()) lines.push_back(l);
  }
  std::vector<std::string> reports;
  for (int run = 0; run < 3; ++run) {
    const auto dir = tmp / ("run" + std::to_string(run));
    fs::create_directories(dir);
    auto b = build_workspace(dir, "--transport mock", c);
    auto r = run_cli(eval_cmd(tasks, dir / "eval", b.indexes + " --transport mock"), dir);
    c.require(r.exit_code == 0, "eval run " + std::to_string(run) + ": " + r.err);
    reports.push_back(read_file(dir / "eval" / "report.json"));
  }
  c.require(reports[0] == reports[1] && reports[1] == reports[2], "report.json differs between runs");

  std::mt19937 rng(9);
  const auto dir = tmp / "run0";
  for (int s = 0; s < 3; ++s) {
    std::shuffle(lines.begin(), lines.end(), rng);
    std::string shuffled;
    for (const auto& l : lines) shuffled += l + "\n";
    const auto file = tmp / ("shuffled" + std::to_string(s) + ".jsonl");
    write_file(file, shuffled);
    const auto out = tmp / ("shuffled_eval" + std::to_string(s));
    auto r = run_cli(eval_cmd(file, out, "--index " + quote((dir / "index").string()) + " --kg-index " +
                                             quote((dir / "kg_index").string()) + " --transport mock"),
                     tmp.path());
    c.require(r.exit_code == 0, "shuffled eval: " + r.err);
    c.require(read_file(out / "report.json") == reports[0], "report.json differs after shuffling tasks");
  }
  return std::to_string(reports[0].size()) + " bytes";
}

// --- criterion 7 -----------------------------------------------------------

std::string pipeline_contract(Check& c) {
  TempDir tmp;
  const fs::path tasks = fixtures() / "tasks.jsonl";
  auto b = build_workspace(tmp.path(), replay_flags(), c);

  auto r = run_cli(eval_cmd(tasks, tmp / "base", "--base " + replay_flags()), tmp.path());
  c.require(r.exit_code == 0, "base eval: " + r.err);
  const auto base = read_json(tmp / "base" / "report.json");
  c.require(base["counters"]["retrieval_calls"] == 0, "base report counts retrieval calls");
  c.require(read_json(tmp / "base" / "manifest.eval.json")["counters"]["retrieval_calls"] == 0,
            "base manifest counts retrieval calls");
  for (const auto& row : base["rows"]) c.require(row["retrieval_calls"] == 0, "base row " + row["task_id"].get<std::string>());

  r = run_cli(eval_cmd(tasks, tmp / "ari", "--pipeline ari " + b.indexes + " " + replay_flags()), tmp.path());
  c.require(r.exit_code == 0, "ari eval: " + r.err);
  const auto ari = read_json(tmp / "ari" / "report.json");
  std::map<std::string, TaskInstance> by_id;
  for (const auto& t : load_tasks(tasks, std::nullopt, CountCheck::none).tasks) by_id[t.task_id] = t;
  std::size_t evidence_tasks = 0;
  for (const auto& row : ari["rows"]) {
    const auto& t = by_id.at(row["task_id"].get<std::string>());
    if (!requires_evidence(t.family) || t.gold_evidence.empty()) continue;
    ++evidence_tasks;
    c.require(row["retrieval_calls"].get<int>() >= 1, t.task_id + " made no retrieval call");
    c.require(!row["predicted_evidence"].empty(), t.task_id + " cites nothing");
  }
  c.require(evidence_tasks > 0, "no evidence-requiring fixture tasks");

  r = run_cli("query " + quote(kSampleQuestion) + " " + b.indexes + " --with-kg " + replay_flags(), tmp.path());
  c.require(r.exit_code == 0, "sample query: " + r.err);
  const auto cites = r.out.substr(r.out.find("CITATIONS:") == std::string::npos ? 0 : r.out.find("CITATIONS:"));
  c.require(cites.find("TS 24.501, Clause 5.5.1") != std::string::npos, "sample query misses Clause 5.5.1");
  c.require(cites.find("TS 24.501, Clause 5.4.2") != std::string::npos, "sample query misses Clause 5.4.2");
  return std::to_string(evidence_tasks) + " evidence tasks";
}

// --- criterion 8 -----------------------------------------------------------

std::string ablation(Check& c) {
  TempDir tmp;
  auto b = build_workspace(tmp.path(), replay_flags(), c);
  const fs::path tasks = fixtures() / "tasks.jsonl";
  auto r = run_cli("ablate --tasks " + quote(tasks.string()) + " --out " + quote((tmp / "ab").string()) +
                       " --k-list 6,8 --count-check none " + b.indexes + " " + replay_flags(),
                   tmp.path());
  c.require(r.exit_code == 0, "ablate: " + r.err);
  std::vector<EvalReport> reps;
  for (int k : {6, 8}) {
    const auto file = tmp / "ab" / ("ablation_k" + std::to_string(k) + ".json");
    c.require(fs::is_regular_file(file), file.filename().string() + " missing");
    auto rep = report_from_json(read_json(file));
    c.require(compute_aggregates(rep.rows) == rep.aggregates, file.filename().string() + " aggregates differ from rows");
    c.require(rep.config["retrieval"]["k"] == k, file.filename().string() + " has the wrong k");
    reps.push_back(std::move(rep));
  }
  if (reps.size() != 2) return "";
  c.require(reps[0].rows.size() == reps[1].rows.size(), "row counts differ");
  std::size_t differing = 0;
  for (std::size_t i = 0; i < std::min(reps[0].rows.size(), reps[1].rows.size()); ++i) {
    const auto a = row_to_json(reps[0].rows[i]), z = row_to_json(reps[1].rows[i]);
    c.require(a["task_id"] == z["task_id"], "row order differs");
    if (a["context"] == z["context"]) {
      c.require(a == z, a["task_id"].get<std::string>() + " differs with identical context");
    } else {
      ++differing;
    }
  }
  return std::to_string(differing) + " rows with different context";
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  int failed = 0;
  failed += guarded(1, "retrieval matches brute-force ranking", retrieval_oracle);
  failed += guarded(2, "BM25 hand value and dense cosine oracle", bm25_and_dense);
  failed += guarded(3, "fusion identity and alpha endpoints", fusion);
  failed += guarded(4, "KG schema validation, mutations and round-trip", kg_schema);
  failed += guarded(5, "F1 and evidence rule oracles", metrics);
  failed += guarded(6, "deterministic end-to-end report", determinism);
  failed += guarded(7, "pipeline configuration contract", pipeline_contract);
  failed += guarded(8, "ablation over k", ablation);
  const double secs = seconds_since(t0);
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << " in "
            << fmt(secs) << " s" << std::endl;
  return failed == 0 && secs < 300.0 ? 0 : 1;
}
