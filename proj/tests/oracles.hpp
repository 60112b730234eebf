#pragma once

// Reference implementations shared by the unit tests and the acceptance runner.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>

#include "cellspec/metrics.hpp"
#include "cellspec/retrieval.hpp"
#include "cellspec/specgraph.hpp"

namespace testsupport {

using namespace cellspec;

inline Chunk chunk(std::string id, std::string text, ComponentKind kind = ComponentKind::text) {
  Chunk c;
  c.id = std::move(id);
  c.kind = kind;
  c.spec_id = "TS 24.501";
  c.clause_id = "5.5.1";
  if (kind != ComponentKind::text) c.label = std::string(kind == ComponentKind::table ? "Table " : "Figure ") + "1";
  c.content = text;
  c.index_text = std::move(text);
  return c;
}

inline std::vector<Chunk> three_docs() {
  return {chunk("A", "nas integrity protection"), chunk("B", "integrity check integrity"),
          chunk("C", "registration request")};
}

// Random corpus drawn from a small Zipf-like vocabulary so terms repeat.
inline std::vector<Chunk> random_corpus(std::size_t n, std::mt19937& rng) {
  std::vector<std::string> vocab;
  for (int i = 0; i < 150; ++i) vocab.push_back("w" + std::to_string(i));
  std::vector<double> weights;
  for (int i = 0; i < 150; ++i) weights.push_back(1.0 / (1.0 + i));
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  std::uniform_int_distribution<int> len(3, 30);
  std::vector<Chunk> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string t;
    const int l = len(rng);
    for (int j = 0; j < l; ++j) t += vocab[static_cast<std::size_t>(pick(rng))] + " ";
    char id[32];
    std::snprintf(id, sizeof id, "c%05zu", i);
    out.push_back(chunk(id, t));
  }
  return out;
}

inline std::string random_query(std::mt19937& rng) {
  std::uniform_int_distribution<int> term(0, 170);  // some terms fall outside the vocabulary
  std::uniform_int_distribution<int> len(1, 5);
  std::string q;
  for (int j = len(rng); j > 0; --j) q += "w" + std::to_string(term(rng)) + " ";
  return q;
}

// Plain BM25 straight from token lists.
inline std::vector<double> bm25_oracle(const std::vector<Chunk>& chunks, const std::vector<std::string>& query, double k1,
                                double b) {
  const double n = static_cast<double>(chunks.size());
  std::vector<std::vector<std::string>> docs;
  double total = 0.0;
  for (const auto& c : chunks) {
    docs.push_back(text::tokenize(c.index_text));
    total += static_cast<double>(docs.back().size());
  }
  const double avgdl = total / n;
  std::set<std::string> terms(query.begin(), query.end());
  std::vector<double> out(chunks.size(), 0.0);
  for (const auto& t : terms) {
    double df = 0.0;
    for (const auto& d : docs) df += std::count(d.begin(), d.end(), t) > 0 ? 1.0 : 0.0;
    if (df == 0.0) continue;
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    for (std::size_t i = 0; i < docs.size(); ++i) {
      const double f = static_cast<double>(std::count(docs[i].begin(), docs[i].end(), t));
      const double len = static_cast<double>(docs[i].size());
      out[i] += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * len / avgdl));
    }
  }
  return out;
}

// Dense scores recomputed with a full JacobiSVD of the TF-IDF matrix.
inline std::vector<double> dense_oracle(const std::vector<Chunk>& chunks, const std::string& query, std::size_t dim) {
  std::vector<std::vector<std::string>> docs;
  std::map<std::string, int> col;
  for (const auto& c : chunks) {
    docs.push_back(text::tokenize(c.index_text));
    for (const auto& t : docs.back()) col.emplace(t, 0);
  }
  int j = 0;
  for (auto& [t, c] : col) c = j++;
  const int n = static_cast<int>(chunks.size()), v = static_cast<int>(col.size());
  Eigen::VectorXd idf(v);
  for (const auto& [t, c] : col) {
    double df = 0;
    for (const auto& d : docs) df += std::count(d.begin(), d.end(), t) > 0;
    idf(c) = std::log((1.0 + n) / (1.0 + df)) + 1.0;
  }
  auto weigh = [&](const std::vector<std::string>& toks) {
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(v);
    std::map<std::string, int> tf;
    for (const auto& t : toks)
      if (col.count(t)) ++tf[t];
    for (const auto& [t, f] : tf) r(col[t]) = (1.0 + std::log(f)) * idf(col[t]);
    if (r.norm() > 0) r /= r.norm();
    return r;
  };
  Eigen::MatrixXd x(n, v);
  for (int i = 0; i < n; ++i) x.row(i) = weigh(docs[static_cast<std::size_t>(i)]);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  Eigen::MatrixXd basis = svd.matrixV().leftCols(static_cast<Eigen::Index>(dim));
  Eigen::MatrixXd proj = x * basis;
  Eigen::RowVectorXd q = weigh(text::tokenize(query)) * basis;
  std::vector<double> out(chunks.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    const double pn = proj.row(i).norm(), qn = q.norm();
    out[static_cast<std::size_t>(i)] = pn < 1e-12 || qn < 1e-12 ? 0.0 : proj.row(i).dot(q) / (pn * qn);
  }
  return out;
}

// Score every chunk through the single-chunk API, normalize, fully sort.
inline std::vector<std::pair<std::string, double>> brute_force(const HybridIndex& idx, const std::string& q,
                                                        const RetrievalConfig& cfg) {
  const auto toks = text::tokenize(q);
  std::vector<double> sp, de;
  for (const auto& c : idx.chunks()) {
    sp.push_back(idx.sparse_score(toks, c.id));
    de.push_back(idx.dense_score(q, c.id));
  }
  auto norm = [](std::vector<double> v) {
    const double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
    for (auto& x : v) x = hi > lo ? (x - lo) / (hi - lo) : 0.0;
    return v;
  };
  sp = norm(sp);
  de = norm(de);
  std::vector<std::pair<std::string, double>> all;
  for (std::size_t i = 0; i < sp.size(); ++i)
    all.emplace_back(idx.chunks()[i].id, cfg.alpha * sp[i] + (1 - cfg.alpha) * de[i]);
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  all.resize(std::min(all.size(), cfg.k));
  return all;
}

// Contingency counts tallied from (prediction, gold) pairs.
struct Counts {
  double tp = 0, fp = 0, fn = 0;
  double f1() const { return tp + fp + fn == 0 || tp == 0 ? 0.0 : tp / (tp + 0.5 * (fp + fn)); }
};

inline double binary_oracle(const std::vector<bool>& p, const std::vector<bool>& g) {
  std::map<std::pair<bool, bool>, int> table;
  for (std::size_t i = 0; i < p.size(); ++i) ++table[{p[i], g[i]}];
  Counts c{static_cast<double>(table[{true, true}]), static_cast<double>(table[{true, false}]),
           static_cast<double>(table[{false, true}])};
  return c.f1();
}

inline MultilabelF1 multilabel_oracle(const std::vector<std::set<std::string>>& p, const std::vector<std::set<std::string>>& g) {
  std::map<std::string, Counts> per;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i].empty()) continue;
    for (const auto& c : g[i]) per[c];
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i].empty()) continue;
    for (auto& [c, k] : per) {
      const bool in_p = p[i].count(c) > 0, in_g = g[i].count(c) > 0;
      k.tp += in_p && in_g;
      k.fp += in_p && !in_g;
      k.fn += !in_p && in_g;
    }
  }
  Counts pooled;
  double macro = 0;
  for (const auto& [c, k] : per) {
    pooled.tp += k.tp;
    pooled.fp += k.fp;
    pooled.fn += k.fn;
    macro += k.f1();
  }
  return {pooled.f1(), macro / static_cast<double>(per.size())};
}

inline const std::string kDeregCite = "TS 24.501, Clause 5.5.2.2";

// The UE-initiated de-registration graph, written out by hand.
inline SpecGraph dereg_graph() {
  SpecGraph g;
  g.graph_id = "kg/TS 24.501/5.5.2.2";
  g.source_clause = kDeregCite;
  g.nodes = {{"n0", kDeregCite, "Identifier", kDeregCite},
             {"n1", "UE-initiated De-registration", "Procedure", kDeregCite},
             {"n2", "DEREGISTRATION REQUEST", "Message", kDeregCite},
             {"n3", "De-registration Type", "InformationElement", kDeregCite},
             {"n4", "T3521", "Timer", kDeregCite},
             {"n5", "5GMM-DEREGISTERED-INITIATED", "State", kDeregCite},
             {"n6", "5GMM-DEREGISTERED", "State", kDeregCite},
             {"n7", "NAS integrity protection", "Property", kDeregCite}};
  g.edges = {{"e1", "n1", "n2", "has_step", kDeregCite},          {"e2", "n2", "n3", "contains_IE", kDeregCite},
             {"e3", "n1", "n4", "starts", kDeregCite},            {"e4", "n2", "n7", "may_be_unprotected", kDeregCite},
             {"e5", "n5", "n6", "state_transition", kDeregCite}};
  for (int i = 1; i <= 7; ++i) {
    g.edges.push_back({"e" + std::to_string(5 + i), "n" + std::to_string(i), "n0", "defined_in", kDeregCite});
  }
  return g;
}

struct MutationCase {
  const char* name;
  std::function<void(SpecGraph&)> mutate;
  std::vector<ViolationKind> expected;
};

// Single-fault edits of dereg_graph() and the violations each must raise.
inline const std::vector<MutationCase>& mutation_cases() {
  using VK = ViolationKind;
  static const std::vector<MutationCase> cases = {
      {"unknown relation", [](SpecGraph& g) { g.edges[0].relation_type = "causes"; }, {VK::VocabularyViolation}},
      {"relation wrong case", [](SpecGraph& g) { g.edges[2].relation_type = "Starts"; }, {VK::VocabularyViolation}},
      {"unknown entity type", [](SpecGraph& g) { g.nodes[4].entity_type = "Counter"; }, {VK::VocabularyViolation}},
      {"entity type wrong case", [](SpecGraph& g) { g.nodes[4].entity_type = "timer"; }, {VK::VocabularyViolation}},
      {"node without provenance", [](SpecGraph& g) { g.nodes[2].provenance = ""; }, {VK::MissingProvenance}},
      {"node with blank provenance", [](SpecGraph& g) { g.nodes[3].provenance = "  "; }, {VK::MissingProvenance}},
      {"edge without provenance", [](SpecGraph& g) { g.edges[1].provenance = ""; }, {VK::MissingProvenance}},
      {"node provenance not a citation", [](SpecGraph& g) { g.nodes[1].provenance = "somewhere"; },
       {VK::UnresolvedProvenance}},
      {"edge provenance without clause", [](SpecGraph& g) { g.edges[3].provenance = "TS 24.501"; },
       {VK::UnresolvedProvenance}},
      {"provenance outside corpus", [](SpecGraph& g) { g.nodes[5].provenance = "TS 24.501, Clause 9.9"; },
       {VK::UnresolvedProvenance}},
      {"dangling source", [](SpecGraph& g) { g.edges[0].source = "n99"; }, {VK::DanglingEndpoint}},
      {"dangling target", [](SpecGraph& g) { g.edges[0].target = "n99"; }, {VK::DanglingEndpoint}},
      {"both endpoints dangling", [](SpecGraph& g) { g.edges[0].source = g.edges[0].target = "x"; },
       {VK::DanglingEndpoint, VK::DanglingEndpoint}},
      {"duplicate node id", [](SpecGraph& g) { g.nodes.push_back({"n4", "T3510", "Timer", kDeregCite}); },
       {VK::DuplicateNodeId}},
      {"duplicate edge id", [](SpecGraph& g) { g.edges.push_back({"e1", "n1", "n6", "requires_state", kDeregCite}); },
       {VK::DuplicateEdgeId}},
      {"duplicate node name", [](SpecGraph& g) { g.nodes.push_back({"n8", "T3521", "Timer", kDeregCite}); },
       {VK::DuplicateNodeName}},
      {"empty name", [](SpecGraph& g) { g.nodes[4].name = ""; }, {VK::MalformedName}},
      {"padded name", [](SpecGraph& g) { g.nodes[4].name = " T3521"; }, {VK::MalformedName}},
      {"multi-line name", [](SpecGraph& g) { g.nodes[4].name = "T35\n21"; }, {VK::MalformedName}},
      {"name with arrow", [](SpecGraph& g) { g.nodes[4].name = "a -[b]-> c"; }, {VK::MalformedName}},
      {"state self-loop", [](SpecGraph& g) { g.edges[4].target = "n5"; }, {VK::SelfLoopStateTransition}},
  };
  return cases;
}

}  // namespace testsupport
