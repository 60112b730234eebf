#include <catch_amalgamated.hpp>

#include <nlohmann/json.hpp>

#include "support.hpp"

using testsupport::quote;
using testsupport::run_cli;
using testsupport::TempDir;
namespace fs = std::filesystem;

namespace {

std::string replay_flags() {
  return "--transport replay --cache-dir " + quote((testsupport::fixtures() / "replay_cache").string());
}

// One ingest/index/kg pass over the mini corpus, shared by every case.
struct Workspace {
  TempDir dir;
  fs::path space, index, kg_store, kg_index;

  Workspace() {
    space = dir / "space.jsonl";
    index = dir / "index";
    kg_store = dir / "kg";
    kg_index = dir / "kg_index";
    const auto corpus = testsupport::fixtures() / "mini_corpus";
    auto r = run_cli("ingest " + quote(corpus.string()) + " --out " + quote(dir.path().string()) + " " + replay_flags(),
                     dir.path());
    if (r.exit_code != 0) throw std::runtime_error("ingest failed: " + r.err);
    r = run_cli("index --space " + quote(space.string()) + " --out " + quote(index.string()), dir.path());
    if (r.exit_code != 0) throw std::runtime_error("index failed: " + r.err);
    r = run_cli("kg --space " + quote(space.string()) + " --store " + quote(kg_store.string()) + " --index " +
                    quote(kg_index.string()) + " " + replay_flags(),
                dir.path());
    if (r.exit_code != 0) throw std::runtime_error("kg failed: " + r.err);
  }

  std::string indexes() const { return "--index " + quote(index.string()) + " --kg-index " + quote(kg_index.string()); }
};

const Workspace& ws() {
  static const Workspace w;
  return w;
}

std::string tasks_file() { return quote((testsupport::fixtures() / "tasks.jsonl").string()); }

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(cellspec::read_file(p)); }

}  // namespace

TEST_CASE("ingest, index and kg write their artifacts") {
  const auto& w = ws();
  REQUIRE(fs::is_regular_file(w.space));
  for (const char* f : {"config.json", "chunks.jsonl", "sparse.bin", "dense.bin", "basis.bin", "manifest.index.json"})
    REQUIRE(fs::is_regular_file(w.index / f));
  REQUIRE(fs::is_regular_file(w.kg_store / "TS_24.501" / "5.5.1.json"));
  REQUIRE(fs::is_regular_file(w.kg_index / "chunks.jsonl"));
  auto m = read_json(w.dir / "manifest.ingest.json");
  REQUIRE(m["command"] == "ingest");
  REQUIRE(m["counters"]["components"].get<int>() > 0);
}

TEST_CASE("usage errors exit with 2") {
  TempDir tmp;
  REQUIRE(run_cli("", tmp.path()).exit_code == 2);
  REQUIRE(run_cli("frobnicate", tmp.path()).exit_code == 2);
  REQUIRE(run_cli("eval --out x", tmp.path()).exit_code == 2);
  REQUIRE(run_cli("eval --tasks " + tasks_file() + " --out x --pipeline magic", tmp.path()).exit_code == 2);
  REQUIRE(run_cli("query ' ' --index " + quote(ws().index.string()), tmp.path()).exit_code == 2);
  auto r = run_cli("ablate --tasks " + tasks_file() + " --out " + quote((tmp / "ab").string()) +
                       " --k-list 6,x " + ws().indexes(),
                   tmp.path());
  REQUIRE(r.exit_code == 2);
  r = run_cli("ablate --tasks " + tasks_file() + " --out " + quote((tmp / "ab").string()) + " --k-list 6 --base",
              tmp.path());
  REQUIRE(r.exit_code == 2);
  REQUIRE(run_cli("eval --tasks " + tasks_file() + " --out " + quote((tmp / "e").string()), tmp.path()).exit_code == 2);
  REQUIRE(run_cli("--help", tmp.path()).exit_code == 0);
}

TEST_CASE("data errors exit with 3 and leave no partial output") {
  TempDir tmp;
  const auto out = tmp / "out";
  auto r = run_cli("eval --tasks " + quote((tmp / "missing.jsonl").string()) + " --out " + quote(out.string()) +
                       " --base --transport mock",
                   tmp.path());
  REQUIRE(r.exit_code == 3);
  REQUIRE_FALSE(fs::exists(out));

  cellspec::write_file(tmp / "bad.jsonl", "{\"task_id\": \"x\", \"stage\": 9}\n");
  r = run_cli("eval --tasks " + quote((tmp / "bad.jsonl").string()) + " --out " + quote(out.string()) +
                  " --base --transport mock",
              tmp.path());
  REQUIRE(r.exit_code == 3);
  REQUIRE(r.err.find("bad.jsonl:1") != std::string::npos);
  REQUIRE_FALSE(fs::exists(out));

  r = run_cli("eval --tasks " + tasks_file() + " --out " + quote(out.string()) + " --stage 3 --count-check error " +
                  ws().indexes() + " " + replay_flags(),
              tmp.path());
  REQUIRE(r.exit_code == 3);
  REQUIRE_FALSE(fs::exists(out));

  r = run_cli("index --space " + quote((tmp / "nope.jsonl").string()) + " --out " + quote(out.string()), tmp.path());
  REQUIRE(r.exit_code == 3);
  REQUIRE_FALSE(fs::exists(out));

  r = run_cli("ingest " + quote((tmp / "empty").string()) + " --out " + quote(out.string()), tmp.path());
  REQUIRE(r.exit_code == 3);
  REQUIRE_FALSE(fs::exists(out));
}

TEST_CASE("gateway failures exit with 4") {
  TempDir tmp;
  fs::create_directories(tmp / "empty_cache");
  const std::string empty = "--transport replay --cache-dir " + quote((tmp / "empty_cache").string());
  auto r = run_cli("query 'What is T3510?' --index " + quote(ws().index.string()) + " " + empty, tmp.path());
  REQUIRE(r.exit_code == 4);
  REQUIRE(r.err.find("ReplayMiss") != std::string::npos);

  r = run_cli("eval --tasks " + tasks_file() + " --out " + quote((tmp / "e").string()) + " --base " + empty,
              tmp.path());
  REQUIRE(r.exit_code == 4);
  REQUIRE(fs::exists(tmp / "e" / "report.json"));
  auto rep = read_json(tmp / "e" / "report.json");
  for (const auto& row : rep["rows"]) REQUIRE(row["unscored"] == true);
}

TEST_CASE("three-task file gives a three-row report") {
  TempDir tmp;
  std::string three;
  std::istringstream in(cellspec::read_file(testsupport::fixtures() / "tasks.jsonl"));
  std::string line;
  for (int i = 0; i < 3 && std::getline(in, line);) {
    if (line.empty()) continue;
    three += line + "\n";
    ++i;
  }
  cellspec::write_file(tmp / "three.jsonl", three);
  auto r = run_cli("eval --tasks " + quote((tmp / "three.jsonl").string()) + " --out " + quote((tmp / "o").string()) +
                       " --base --count-check none " + replay_flags(),
                   tmp.path());
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  REQUIRE(read_json(tmp / "o" / "report.json")["rows"].size() == 3);
}

TEST_CASE("base pipeline records zero retrieval calls in its manifest") {
  TempDir tmp;
  auto r = run_cli("eval --tasks " + tasks_file() + " --out " + quote((tmp / "o").string()) +
                       " --base --count-check none " + replay_flags(),
                   tmp.path());
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  auto m = read_json(tmp / "o" / "manifest.eval.json");
  REQUIRE(m["counters"]["retrieval_calls"] == 0);
  REQUIRE(m["config"]["pipeline"]["name"] == "base");
  REQUIRE(r.out.find("retrieval calls: 0") != std::string::npos);
}

TEST_CASE("ablation writes one report per k and the report command checks them") {
  TempDir tmp;
  const auto out = tmp / "ab";
  auto r = run_cli("ablate --tasks " + tasks_file() + " --out " + quote(out.string()) + " --k-list 6,8 " +
                       ws().indexes() + " --count-check none " + replay_flags(),
                   tmp.path());
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  REQUIRE(fs::is_regular_file(out / "ablation_k6.json"));
  REQUIRE(fs::is_regular_file(out / "ablation_k8.json"));
  REQUIRE(fs::is_regular_file(out / "manifest.ablate.json"));

  r = run_cli("report --json " + quote((out / "ablation_k6.json").string()) + " " +
                  quote((out / "ablation_k8.json").string()),
              tmp.path());
  REQUIRE(r.exit_code == 0);
  auto j = nlohmann::json::parse(r.out);
  REQUIRE(j.size() == 2);
  REQUIRE(j[0]["config"]["retrieval"]["k"] == 6);

  r = run_cli("report " + quote((out / "ablation_k8.json").string()), tmp.path());
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.out.find("overall") != std::string::npos);

  auto tampered = read_json(out / "ablation_k8.json");
  tampered["aggregates"]["overall"]["tasks"] = 99;
  cellspec::write_file(tmp / "t.json", tampered.dump());
  REQUIRE(run_cli("report " + quote((tmp / "t.json").string()), tmp.path()).exit_code == 3);
  REQUIRE(run_cli("report " + quote((tmp / "none.json").string()), tmp.path()).exit_code == 3);
}

TEST_CASE("sample query over the replay cache cites both clauses") {
  TempDir tmp;
  auto r = run_cli("query " + quote(testsupport::kSampleQuestion) + " " + ws().indexes() + " --with-kg " +
                       replay_flags(),
                   tmp.path());
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.out.find("TS 24.501, Clause 5.5.1") != std::string::npos);
  REQUIRE(r.out.find("TS 24.501, Clause 5.4.2") != std::string::npos);
}

TEST_CASE("config file values apply unless overridden") {
  TempDir tmp;
  cellspec::write_file(tmp / "cfg.json", R"({"pipeline": "base", "count_check": "none"})");
  auto r = run_cli("--config " + quote((tmp / "cfg.json").string()) + " eval --tasks " + tasks_file() + " --out " +
                       quote((tmp / "o").string()) + " " + replay_flags(),
                   tmp.path());
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  REQUIRE(read_json(tmp / "o" / "report.json")["config"]["name"] == "base");

  cellspec::write_file(tmp / "bad.json", "[1]");
  REQUIRE(run_cli("--config " + quote((tmp / "bad.json").string()) + " report x", tmp.path()).exit_code == 2);
}
