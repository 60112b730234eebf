#pragma once

// Clause-level knowledge graphs over a closed entity/relation taxonomy, their
// text-block rendering, and retrieval over the rendered blocks.

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "cellspec/citation.hpp"
#include "cellspec/corpus.hpp"
#include "cellspec/error.hpp"
#include "cellspec/gateway.hpp"
#include "cellspec/prompts.hpp"
#include "cellspec/retrieval.hpp"
#include "cellspec/text.hpp"

namespace cellspec {

enum class EntityType { Procedure, Message, InformationElement, Identifier, Timer, State, Condition, Property };

enum class RelationType {
  has_step,
  contains_IE,
  requires_state,
  starts,
  stops,
  resets,
  guards_by,
  establishes,
  defined_in,
  requires_protection,
  integrity_required,
  may_be_unprotected,
  action_triggered_by,
  state_transition,
};

inline constexpr std::array<std::string_view, 8> kEntityTypeNames = {
    "Procedure", "Message", "InformationElement", "Identifier", "Timer", "State", "Condition", "Property"};

inline constexpr std::array<std::string_view, 14> kRelationTypeNames = {
    "has_step",          "contains_IE",        "requires_state",     "starts",
    "stops",             "resets",             "guards_by",          "establishes",
    "defined_in",        "requires_protection", "integrity_required", "may_be_unprotected",
    "action_triggered_by", "state_transition"};

inline constexpr std::size_t kCoreRelationCount = 9;

inline std::string_view to_string(EntityType t) { return kEntityTypeNames[static_cast<std::size_t>(t)]; }
inline std::string_view to_string(RelationType r) { return kRelationTypeNames[static_cast<std::size_t>(r)]; }

inline std::optional<EntityType> parse_entity_type(std::string_view s) {
  for (std::size_t i = 0; i < kEntityTypeNames.size(); ++i)
    if (kEntityTypeNames[i] == s) return static_cast<EntityType>(i);
  return std::nullopt;
}

inline std::optional<RelationType> parse_relation_type(std::string_view s) {
  for (std::size_t i = 0; i < kRelationTypeNames.size(); ++i)
    if (kRelationTypeNames[i] == s) return static_cast<RelationType>(i);
  return std::nullopt;
}

inline bool is_security_relation(RelationType r) { return static_cast<std::size_t>(r) >= kCoreRelationCount; }

// Type and relation tags are kept as strings so that out-of-vocabulary
// values survive loading and can be reported by validate_graph.
struct GraphNode {
  std::string node_id;
  std::string name;
  std::string entity_type;
  std::string provenance;
  bool operator==(const GraphNode&) const = default;
};

struct GraphEdge {
  std::string edge_id;
  std::string source;  // node_id
  std::string target;  // node_id
  std::string relation_type;
  std::string provenance;
  bool operator==(const GraphEdge&) const = default;
};

struct SpecGraph {
  std::string graph_id;
  std::string source_clause;  // citation label
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;

  const GraphNode* find_node(std::string_view id) const {
    for (const auto& n : nodes)
      if (n.node_id == id) return &n;
    return nullptr;
  }
  bool operator==(const SpecGraph&) const = default;
};

inline std::string graph_id_for(std::string_view spec_id, std::string_view clause_id) {
  return "kg/" + std::string(spec_id) + "/" + std::string(clause_id);
}

// ---------------------------------------------------------------------------
// Validation

enum class ViolationKind {
  VocabularyViolation,
  MissingProvenance,
  UnresolvedProvenance,
  DanglingEndpoint,
  DuplicateNodeId,
  DuplicateEdgeId,
  DuplicateNodeName,
  MalformedName,
  SelfLoopStateTransition,
};

inline std::string_view to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::VocabularyViolation: return "VocabularyViolation";
    case ViolationKind::MissingProvenance: return "MissingProvenance";
    case ViolationKind::UnresolvedProvenance: return "UnresolvedProvenance";
    case ViolationKind::DanglingEndpoint: return "DanglingEndpoint";
    case ViolationKind::DuplicateNodeId: return "DuplicateNodeId";
    case ViolationKind::DuplicateEdgeId: return "DuplicateEdgeId";
    case ViolationKind::DuplicateNodeName: return "DuplicateNodeName";
    case ViolationKind::MalformedName: return "MalformedName";
    case ViolationKind::SelfLoopStateTransition: return "SelfLoopStateTransition";
  }
  return "?";
}

struct Violation {
  ViolationKind kind;
  std::string subject;  // node_id or edge_id
  std::string message;
  bool operator==(const Violation&) const = default;
};

namespace detail {

// Names must survive the block layout: one line, no section separators.
inline bool renderable_name(std::string_view name) {
  if (text::trim(name).empty() || text::trim(name) != name) return false;
  if (name.find('\n') != std::string_view::npos || name.find('\r') != std::string_view::npos) return false;
  return name.find(" -[") == std::string_view::npos && name.find("]-> ") == std::string_view::npos &&
         name.find(" [") == std::string_view::npos;
}

inline bool provenance_parses(std::string_view p) {
  auto c = parse_citation(p);
  return c && !c->clause_id.empty();
}

}  // namespace detail

/// Checks every graph invariant. When `known_clauses` is given, provenance
/// labels must also resolve to one of its canonical clause citations.
inline std::vector<Violation> validate_graph(const SpecGraph& g,
                                             const std::set<std::string>* known_clauses = nullptr) {
  std::vector<Violation> out;
  auto check_provenance = [&](const std::string& id, const std::string& p) {
    if (text::trim(p).empty()) {
      out.push_back({ViolationKind::MissingProvenance, id, "empty provenance"});
    } else if (!detail::provenance_parses(p)) {
      out.push_back({ViolationKind::UnresolvedProvenance, id, "provenance is not a clause citation: " + p});
    } else if (known_clauses && !known_clauses->count(canonicalize_label(p))) {
      out.push_back({ViolationKind::UnresolvedProvenance, id, "no such clause in corpus: " + p});
    }
  };

  std::set<std::string> ids, names;
  for (const auto& n : g.nodes) {
    if (!ids.insert(n.node_id).second) out.push_back({ViolationKind::DuplicateNodeId, n.node_id, "duplicate node id"});
    if (!parse_entity_type(n.entity_type)) {
      out.push_back({ViolationKind::VocabularyViolation, n.node_id, "unknown entity type '" + n.entity_type + "'"});
    }
    if (!detail::renderable_name(n.name)) {
      out.push_back({ViolationKind::MalformedName, n.node_id, "name is empty or not renderable"});
    } else if (!names.insert(n.name).second) {
      out.push_back({ViolationKind::DuplicateNodeName, n.node_id, "duplicate node name '" + n.name + "'"});
    }
    check_provenance(n.node_id, n.provenance);
  }

  std::set<std::string> edge_ids;
  for (const auto& e : g.edges) {
    if (!edge_ids.insert(e.edge_id).second) {
      out.push_back({ViolationKind::DuplicateEdgeId, e.edge_id, "duplicate edge id"});
    }
    if (!parse_relation_type(e.relation_type)) {
      out.push_back({ViolationKind::VocabularyViolation, e.edge_id, "unknown relation type '" + e.relation_type + "'"});
    }
    const bool src_ok = ids.count(e.source) > 0, tgt_ok = ids.count(e.target) > 0;
    if (!src_ok) out.push_back({ViolationKind::DanglingEndpoint, e.edge_id, "unknown source node " + e.source});
    if (!tgt_ok) out.push_back({ViolationKind::DanglingEndpoint, e.edge_id, "unknown target node " + e.target});
    if (e.relation_type == "state_transition" && e.source == e.target) {
      out.push_back({ViolationKind::SelfLoopStateTransition, e.edge_id, "state_transition to the same state"});
    }
    check_provenance(e.edge_id, e.provenance);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text blocks
//
//   <citation>
//   Entities:
//   <name> [<type>]            sorted by (name, type)
//   Relations:
//   <source> -[<relation>]-> <target>   sorted by (source, relation, target)
//   Text:
//   <original clause text>

struct KgBlock {
  std::string citation;
  std::string rendered_text;
  std::vector<std::pair<std::string, std::string>> entities;                     // (name, type)
  std::vector<std::tuple<std::string, std::string, std::string>> relations;      // (source, relation, target)
  std::string original_text;
};

inline KgBlock render_kg_block(const SpecGraph& g, const std::string& original_text) {
  if (auto v = validate_graph(g); !v.empty()) {
    throw Error(ErrorCode::InvalidGraph, std::string(to_string(v.front().kind)) + " at " + v.front().subject + ": " +
                                             v.front().message);
  }
  KgBlock b;
  b.citation = g.source_clause;
  b.original_text = original_text;
  std::map<std::string, std::string> name_of;
  for (const auto& n : g.nodes) {
    b.entities.emplace_back(n.name, n.entity_type);
    name_of[n.node_id] = n.name;
  }
  for (const auto& e : g.edges) b.relations.emplace_back(name_of[e.source], e.relation_type, name_of[e.target]);
  std::sort(b.entities.begin(), b.entities.end());
  std::sort(b.relations.begin(), b.relations.end());

  std::string& r = b.rendered_text;
  r = b.citation + "\nEntities:\n";
  for (const auto& [name, type] : b.entities) r += name + " [" + type + "]\n";
  r += "Relations:\n";
  for (const auto& [s, rel, t] : b.relations) r += s + " -[" + rel + "]-> " + t + "\n";
  r += "Text:\n" + original_text;
  return b;
}

inline KgBlock parse_kg_block(std::string_view rendered) {
  auto fail = [](const std::string& why) { return Error(ErrorCode::SchemaViolation, "malformed KG block: " + why); };
  KgBlock b;
  b.rendered_text = std::string(rendered);
  std::size_t pos = 0;
  auto next_line = [&]() -> std::optional<std::string_view> {
    if (pos > rendered.size()) return std::nullopt;
    std::size_t nl = rendered.find('\n', pos);
    std::string_view line = rendered.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? rendered.size() + 1 : nl + 1;
    return line;
  };
  auto cit = next_line();
  if (!cit) throw fail("missing citation");
  b.citation = std::string(*cit);
  if (next_line() != std::optional<std::string_view>("Entities:")) throw fail("missing Entities section");
  for (;;) {
    auto line = next_line();
    if (!line) throw fail("missing Relations section");
    if (*line == "Relations:") break;
    const std::size_t open = line->rfind(" [");
    if (open == std::string_view::npos || line->back() != ']') throw fail("bad entity line");
    b.entities.emplace_back(std::string(line->substr(0, open)),
                            std::string(line->substr(open + 2, line->size() - open - 3)));
  }
  for (;;) {
    auto line = next_line();
    if (!line) throw fail("missing Text section");
    if (*line == "Text:") break;
    const std::size_t a = line->find(" -[");
    const std::size_t z = line->find("]-> ", a == std::string_view::npos ? 0 : a);
    if (a == std::string_view::npos || z == std::string_view::npos) throw fail("bad relation line");
    b.relations.emplace_back(std::string(line->substr(0, a)), std::string(line->substr(a + 3, z - a - 3)),
                             std::string(line->substr(z + 4)));
  }
  b.original_text = pos <= rendered.size() ? std::string(rendered.substr(pos)) : std::string();
  return b;
}

// ---------------------------------------------------------------------------
// Extraction

/// Message names are upper-cased; all other names keep their spelling with
/// whitespace collapsed.
inline std::string canonical_entity_name(std::string_view name, std::string_view type) {
  std::string s = text::collapse_ws(name);
  if (type == "Message") s = text::upper_ascii(s);
  return s;
}

namespace detail {

inline std::string vocabulary_list(const auto& names) {
  std::vector<std::string> v(names.begin(), names.end());
  return text::join(v, ", ");
}

// Converts a model reply into a graph. Returns an error message (empty on
// success); `vocabulary` is set when the failure is an out-of-vocabulary tag.
inline std::string graph_from_model_json(const nlohmann::json& j, const std::string& graph_id,
                                         const std::string& citation, SpecGraph& g, bool& vocabulary) {
  vocabulary = false;
  g = SpecGraph{};
  g.graph_id = graph_id;
  g.source_clause = citation;
  if (!j.contains("entities") || !j["entities"].is_array()) return "missing array \"entities\"";
  if (!j.contains("relations") || !j["relations"].is_array()) return "missing array \"relations\"";

  g.nodes.push_back({"n0", citation, "Identifier", citation});
  std::map<std::string, std::string> id_by_key;  // case-folded name -> node_id
  id_by_key[text::lower_ascii(citation)] = "n0";
  for (const auto& e : j["entities"]) {
    if (!e.is_object() || !e.contains("name") || !e["name"].is_string() || !e.contains("type") ||
        !e["type"].is_string()) {
      return "entity entries need string fields \"name\" and \"type\"";
    }
    const std::string type = e["type"].get<std::string>();
    if (!parse_entity_type(type)) {
      vocabulary = true;
      return "entity type '" + type + "' is not one of: " + vocabulary_list(kEntityTypeNames);
    }
    const std::string name = canonical_entity_name(e["name"].get<std::string>(), type);
    if (!renderable_name(name)) return "entity name '" + name + "' is empty or malformed";
    const std::string key = text::lower_ascii(name);
    if (auto it = id_by_key.find(key); it != id_by_key.end()) {
      const GraphNode* prev = g.find_node(it->second);
      if (prev->entity_type != type) return "entity '" + name + "' given two types";
      continue;
    }
    const std::string id = "n" + std::to_string(g.nodes.size());
    id_by_key[key] = id;
    g.nodes.push_back({id, name, type, citation});
  }

  std::set<std::tuple<std::string, std::string, std::string>> seen;
  for (const auto& r : j["relations"]) {
    if (!r.is_object() || !r.contains("source") || !r["source"].is_string() || !r.contains("relation") ||
        !r["relation"].is_string() || !r.contains("target") || !r["target"].is_string()) {
      return "relation entries need string fields \"source\", \"relation\" and \"target\"";
    }
    const std::string rel = r["relation"].get<std::string>();
    if (!parse_relation_type(rel)) {
      vocabulary = true;
      return "relation type '" + rel + "' is not one of: " + vocabulary_list(kRelationTypeNames);
    }
    auto endpoint = [&](const std::string& field) -> std::optional<std::string> {
      auto it = id_by_key.find(text::lower_ascii(text::collapse_ws(r[field].get<std::string>())));
      if (it == id_by_key.end()) return std::nullopt;
      return it->second;
    };
    auto s = endpoint("source"), t = endpoint("target");
    if (!s || !t) return "relation endpoint is not a listed entity: " + r.dump();
    if (rel == "state_transition" && *s == *t) return "state_transition from a state to itself";
    if (!seen.insert({*s, rel, *t}).second) continue;
    g.edges.push_back({"e" + std::to_string(g.edges.size() + 1), *s, *t, rel, citation});
  }
  for (std::size_t i = 1; i < g.nodes.size(); ++i) {
    if (seen.insert({g.nodes[i].node_id, "defined_in", "n0"}).second) {
      g.edges.push_back({"e" + std::to_string(g.edges.size() + 1), g.nodes[i].node_id, "n0", "defined_in", citation});
    }
  }
  return {};
}

}  // namespace detail

/// Text handed to the model and shown in the KG block: the clause's text
/// components joined by blank lines.
inline std::string clause_text_of(const std::vector<SpecComponent>& components) {
  std::vector<std::string> parts;
  for (const auto& c : components)
    if (c.kind == ComponentKind::text) parts.push_back(c.content);
  return text::join(parts, "\n\n");
}

inline SpecGraph extract_graph(const std::vector<SpecComponent>& components, const std::string& clause_title,
                               Gateway& gw, const PromptSet& prompts = PromptSet::defaults()) {
  if (components.empty()) throw Error(ErrorCode::SchemaViolation, "extract_graph needs at least one component");
  const std::string& spec_id = components.front().spec_id;
  const std::string& clause_id = components.front().clause_id;
  for (const auto& c : components) {
    if (c.spec_id != spec_id || c.clause_id != clause_id) {
      throw Error(ErrorCode::SchemaViolation, "components span more than one clause");
    }
  }
  const std::string citation = render_citation({spec_id, clause_id, ""});
  std::string comps;
  for (const auto& c : components) {
    if (c.kind == ComponentKind::text) continue;
    comps += "<component kind=\"" + std::string(to_string(c.kind)) + "\" label=\"" + c.label.value_or("") + "\">\n" +
             component_text(c) + "\n</component>\n";
  }
  const auto& t = prompts.get("kg_extract");
  auto req = gw.make_request(
      fill_template(t.system, {{"entity_types", detail::vocabulary_list(kEntityTypeNames)},
                               {"relation_types", detail::vocabulary_list(kRelationTypeNames)}}),
      fill_template(t.user, {{"citation", citation},
                             {"title", clause_title},
                             {"clause_text", clause_text_of(components)},
                             {"components", comps}}));

  SpecGraph g;
  bool vocabulary = false;
  const std::string gid = graph_id_for(spec_id, clause_id);
  try {
    complete_json_with_repair(
        gw, req, [&](const nlohmann::json& j) { return detail::graph_from_model_json(j, gid, citation, g, vocabulary); },
        prompts, ErrorCode::ModelOutputSchemaViolation);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ModelOutputSchemaViolation && vocabulary) {
      throw Error(ErrorCode::VocabularyViolation, citation + ": " + std::string(e.what()));
    }
    throw;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Graph store: kg/<spec dir>/<clause_id>.json

inline nlohmann::json graph_to_json(const SpecGraph& g) {
  nlohmann::json nodes = nlohmann::json::array(), edges = nlohmann::json::array();
  for (const auto& n : g.nodes) {
    nodes.push_back({{"node_id", n.node_id}, {"name", n.name}, {"entity_type", n.entity_type}, {"provenance", n.provenance}});
  }
  for (const auto& e : g.edges) {
    edges.push_back({{"edge_id", e.edge_id},
                     {"source", e.source},
                     {"target", e.target},
                     {"relation_type", e.relation_type},
                     {"provenance", e.provenance}});
  }
  return {{"graph_id", g.graph_id}, {"source_clause", g.source_clause}, {"nodes", nodes}, {"edges", edges}};
}

inline SpecGraph graph_from_json(const nlohmann::json& j) {
  try {
    SpecGraph g;
    g.graph_id = j.at("graph_id").get<std::string>();
    g.source_clause = j.at("source_clause").get<std::string>();
    for (const auto& n : j.at("nodes")) {
      g.nodes.push_back({n.at("node_id").get<std::string>(), n.at("name").get<std::string>(),
                         n.at("entity_type").get<std::string>(), n.value("provenance", "")});
    }
    for (const auto& e : j.at("edges")) {
      g.edges.push_back({e.at("edge_id").get<std::string>(), e.at("source").get<std::string>(),
                         e.at("target").get<std::string>(), e.at("relation_type").get<std::string>(),
                         e.value("provenance", "")});
    }
    return g;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::SchemaViolation, std::string("graph file: ") + ex.what());
  }
}

inline std::filesystem::path graph_path(const std::filesystem::path& root, const SpecGraph& g) {
  auto c = parse_citation(g.source_clause);
  if (!c || c->clause_id.empty()) throw Error(ErrorCode::InvalidGraph, "graph source_clause is not a clause citation");
  return root / spec_dir_name(c->spec_id) / (c->clause_id + ".json");
}

inline void save_graph(const std::filesystem::path& root, const SpecGraph& g) {
  write_file(graph_path(root, g), graph_to_json(g).dump(2) + "\n");
}

/// All graphs under `root`, ordered by graph_id.
inline std::vector<SpecGraph> load_graph_store(const std::filesystem::path& root) {
  std::vector<SpecGraph> out;
  std::error_code ec;
  if (!std::filesystem::is_directory(root, ec)) throw Error(ErrorCode::IoError, "graph store not found: " + root.string());
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      auto j = nlohmann::json::parse(read_file(entry.path()), nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::SchemaViolation, "unparseable graph file " + entry.path().string());
      out.push_back(graph_from_json(j));
    }
  }
  std::sort(out.begin(), out.end(), [](const SpecGraph& a, const SpecGraph& b) { return a.graph_id < b.graph_id; });
  return out;
}

// ---------------------------------------------------------------------------
// KG retrieval

inline Chunk kg_chunk(const SpecGraph& g, const KgBlock& b) {
  auto c = parse_citation(g.source_clause);
  Chunk ch;
  ch.id = g.graph_id;
  ch.kind = ComponentKind::text;
  ch.spec_id = c ? c->spec_id : "";
  ch.clause_id = c ? c->clause_id : "";
  ch.content = b.rendered_text;
  ch.index_text = b.rendered_text;
  return ch;
}

inline HybridIndex build_kg_index(const std::vector<std::pair<SpecGraph, KgBlock>>& blocks, RetrievalConfig cfg) {
  std::vector<Chunk> chunks;
  for (const auto& [g, b] : blocks) chunks.push_back(kg_chunk(g, b));
  cfg.kinds = {ComponentKind::text};
  return build_index(std::move(chunks), cfg);
}

inline EvidenceSet kg_retrieve(const HybridIndex& kg_index, const std::string& query, RetrievalConfig cfg) {
  cfg.kinds = {ComponentKind::text};
  return retrieve(kg_index, query, cfg);
}

/// Merges chunk and KG evidence by fused score (ties by component id), keeping
/// the first item per source clause, up to `budget` items.
inline std::vector<ContextItem> merge_context(const EvidenceSet& chunk_ev, const EvidenceSet& kg_ev,
                                              std::size_t budget) {
  if (budget < 1) throw Error(ErrorCode::OutOfRangeInput, "merge budget must be at least 1");
  std::vector<std::pair<const EvidenceItem*, const char*>> all;
  for (const auto& it : chunk_ev.items) all.emplace_back(&it, "chunk");
  for (const auto& it : kg_ev.items) all.emplace_back(&it, "kg");
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.first->scores.fused != b.first->scores.fused) return a.first->scores.fused > b.first->scores.fused;
    return a.first->component_id < b.first->component_id;
  });
  std::vector<ContextItem> out;
  std::set<std::pair<std::string, std::string>> clauses;
  for (const auto& [it, origin] : all) {
    if (out.size() >= budget) break;
    if (!clauses.insert({it->spec_id, it->clause_id}).second) continue;
    out.push_back({it->label, it->content, it->scores.fused, it->component_id, origin});
  }
  return out;
}

inline std::vector<ContextItem> to_context(const EvidenceSet& ev) {
  std::vector<ContextItem> out;
  for (const auto& it : ev.items) out.push_back({it.label, it.content, it.scores.fused, it.component_id, "chunk"});
  return out;
}

/// Components of one space grouped by (spec_id, clause_id), in space order.
inline std::vector<std::vector<SpecComponent>> components_by_clause(const ComponentSpace& space) {
  std::vector<std::vector<SpecComponent>> out;
  std::map<std::pair<std::string, std::string>, std::size_t> pos;
  for (const auto& c : space.components) {
    auto key = std::make_pair(c.spec_id, c.clause_id);
    auto [it, inserted] = pos.emplace(key, out.size());
    if (inserted) out.emplace_back();
    out[it->second].push_back(c);
  }
  return out;
}

/// Canonical clause citations present in a space, for provenance checks.
inline std::set<std::string> known_clause_citations(const ComponentSpace& space) {
  std::set<std::string> out;
  for (const auto& c : space.components) out.insert(render_citation({c.spec_id, c.clause_id, ""}));
  return out;
}

}  // namespace cellspec
