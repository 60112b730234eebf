#pragma once

// Specification ingestion: normalization, clause segmentation, chunking and
// multimodal extraction into a single component space of text, table and
// figure components.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cellspec/citation.hpp"
#include "cellspec/digest.hpp"
#include "cellspec/error.hpp"
#include "cellspec/gateway.hpp"
#include "cellspec/parallel.hpp"
#include "cellspec/prompts.hpp"
#include "cellspec/text.hpp"

namespace cellspec {

inline constexpr std::string_view kSpaceSchemaVersion = "cellspec-space/1";
inline constexpr std::string_view kPreambleClauseId = "0";

enum class ComponentKind { text, table, figure };

inline std::string_view to_string(ComponentKind k) {
  switch (k) {
    case ComponentKind::text: return "text";
    case ComponentKind::table: return "table";
    case ComponentKind::figure: return "figure";
  }
  return "text";
}

inline ComponentKind parse_kind(std::string_view s) {
  if (s == "text") return ComponentKind::text;
  if (s == "table") return ComponentKind::table;
  if (s == "figure") return ComponentKind::figure;
  throw Error(ErrorCode::SchemaViolation, "unknown component kind '" + std::string(s) + "'");
}

enum class Granularity { sentence, paragraph };

struct Clause {
  std::string clause_id;
  std::string title;
  std::string body_text;
  std::string parent_id;  // empty for top-level clauses
  std::vector<std::string> table_regions;
  std::vector<std::string> figure_regions;

  bool operator==(const Clause&) const = default;
};

struct NormalizedDocument {
  std::string spec_id;
  std::string release;
  std::vector<Clause> clauses;  // document order

  const Clause* find(std::string_view id) const {
    for (const auto& c : clauses)
      if (c.clause_id == id) return &c;
    return nullptr;
  }
  Clause* find(std::string_view id) {
    for (auto& c : clauses)
      if (c.clause_id == id) return &c;
    return nullptr;
  }
  std::vector<const Clause*> children_of(std::string_view id) const {
    std::vector<const Clause*> out;
    for (const auto& c : clauses)
      if (c.parent_id == id && c.clause_id != id) out.push_back(&c);
    return out;
  }
};

struct SpecComponent {
  std::string component_id;
  ComponentKind kind = ComponentKind::text;
  std::string spec_id;
  std::string clause_id;
  std::optional<std::string> label;
  std::string content;
  text::Span source_char_span;

  bool operator==(const SpecComponent&) const = default;
};

struct SpaceStats {
  std::size_t paragraphs = 0;
  std::size_t sentences = 0;
  std::size_t figures = 0;
  std::size_t tables = 0;

  bool operator==(const SpaceStats&) const = default;
};

struct ComponentSpace {
  std::set<std::string> spec_ids;
  std::vector<SpecComponent> components;
  SpaceStats stats;
  // "<spec_id>/<clause_id>" -> clause title, used to enrich retrieval chunks
  std::map<std::string, std::string> clause_titles;
};

// ---------------------------------------------------------------------------
// Clause ids and component ids

/// digits ('.' digits)* with an optional single trailing letter.
inline bool is_valid_clause_id(std::string_view id) {
  static const std::regex kId(R"(^[0-9]+(\.[0-9]+)*[A-Za-z]?$)");
  return std::regex_match(id.begin(), id.end(), kId);
}

inline std::string parent_clause_id(std::string_view id) {
  auto dot = id.rfind('.');
  if (dot == std::string_view::npos) return {};
  return std::string(id.substr(0, dot));
}

inline std::string make_component_id(std::string_view spec_id, std::string_view clause_id, ComponentKind kind,
                                     std::size_t seq) {
  return std::string(spec_id) + "/" + std::string(clause_id) + "/" + std::string(to_string(kind)) + "/" +
         std::to_string(seq);
}

struct ComponentIdParts {
  std::string spec_id;
  std::string clause_id;
  ComponentKind kind;
  std::size_t seq;
  bool operator==(const ComponentIdParts&) const = default;
};

inline ComponentIdParts parse_component_id(std::string_view id) {
  auto parts = text::split(id, '/');
  if (parts.size() != 4 || parts[0].empty() || !is_valid_clause_id(parts[1]) || parts[3].empty() ||
      !std::all_of(parts[3].begin(), parts[3].end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw Error(ErrorCode::SchemaViolation, "malformed component id '" + std::string(id) + "'");
  }
  return {parts[0], parts[1], parse_kind(parts[2]), static_cast<std::size_t>(std::stoull(parts[3]))};
}

inline Citation citation_of(const SpecComponent& c) {
  return {c.spec_id, c.clause_id, c.kind == ComponentKind::text ? "" : c.label.value_or("")};
}

// ---------------------------------------------------------------------------
// Normalization and segmentation

struct NormalizeOptions {
  bool lossy_utf8 = false;
  std::string release;  // detected from the text when empty
  // Whole-line patterns removed before segmentation (page headers, footers,
  // page numbers, table-of-contents leaders).
  std::vector<std::string> strip_patterns = {
      R"(^3GPP\s+T[SR]\s+\d+\.\d+.*$)",
      R"(^ETSI\s+T[SR]\s+\d+.*$)",
      R"(^(Page\s+)?\d{1,4}$)",
      R"(^Release\s+\d+(\s+\d+)?$)",
      R"(^.*\.{5,}\s*\d+$)",
  };
};

namespace detail {

struct Heading {
  std::string id;
  std::string title;
};

inline std::optional<Heading> match_heading(std::string_view line) {
  static const std::regex kHeading(R"(^(?:#{1,6}\s+)?([0-9]{1,3}(?:\.[0-9]{1,3}){0,9}[A-Za-z]?)\s+((?:[A-Z]|[0-9]+[A-Z]).*)$)");
  std::string s(line);
  std::smatch m;
  if (!std::regex_match(s, m, kHeading)) return std::nullopt;
  return Heading{m[1].str(), text::collapse_ws(m[2].str())};
}

inline std::string strip_blank_edges(const std::vector<std::string>& lines) {
  std::size_t b = 0, e = lines.size();
  while (b < e && text::trim(lines[b]).empty()) ++b;
  while (e > b && text::trim(lines[e - 1]).empty()) --e;
  std::string out;
  for (std::size_t i = b; i < e; ++i) {
    if (i > b) out.push_back('\n');
    out += lines[i];
  }
  return out;
}

}  // namespace detail

/// Splits normalized text into clauses at heading lines ("<id> <Title>",
/// optionally Markdown-prefixed). Text before the first heading becomes the
/// synthetic clause "0". Parents are assigned by id prefix only: the parent
/// of "4.1.1" is "4.1" whenever that clause exists anywhere in the document.
/// A repeated heading id continues the earlier clause.
inline std::vector<Clause> segment_clauses(std::string_view document_text) {
  std::vector<Clause> clauses;
  std::vector<std::vector<std::string>> bodies;
  std::map<std::string, std::size_t> index;
  std::size_t current = static_cast<std::size_t>(-1);

  for (const std::string& line : text::split(document_text, '\n')) {
    if (auto h = detail::match_heading(line)) {
      if (auto it = index.find(h->id); it != index.end()) {
        current = it->second;
        continue;
      }
      index[h->id] = clauses.size();
      current = clauses.size();
      clauses.push_back(Clause{h->id, h->title, "", "", {}, {}});
      bodies.emplace_back();
      continue;
    }
    if (current == static_cast<std::size_t>(-1)) {
      if (text::trim(line).empty()) continue;
      index[std::string(kPreambleClauseId)] = 0;
      clauses.insert(clauses.begin(), Clause{std::string(kPreambleClauseId), "", "", "", {}, {}});
      bodies.insert(bodies.begin(), std::vector<std::string>{});
      current = 0;
    }
    bodies[current].push_back(line);
  }

  if (clauses.empty()) {
    clauses.push_back(Clause{std::string(kPreambleClauseId), "", "", "", {}, {}});
    bodies.emplace_back();
  }
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    clauses[i].body_text = detail::strip_blank_edges(bodies[i]);
    if (clauses[i].clause_id == kPreambleClauseId) continue;
    std::string parent = parent_clause_id(clauses[i].clause_id);
    if (!parent.empty() && index.count(parent)) clauses[i].parent_id = parent;
  }
  return clauses;
}

/// Renders a document back to normalized text. Feeding the result through
/// normalize_document reproduces the same clause tree.
inline std::string render_document(const NormalizedDocument& doc) {
  std::string out;
  for (const auto& c : doc.clauses) {
    if (c.clause_id != kPreambleClauseId) out += c.clause_id + " " + c.title + "\n";
    if (!c.body_text.empty()) out += c.body_text + "\n";
    out += "\n";
  }
  return out;
}

inline std::string normalize_text(std::string_view raw, const NormalizeOptions& opts) {
  std::string s = text::decode_utf8(raw, opts.lossy_utf8);
  if (s.rfind("\xEF\xBB\xBF", 0) == 0) s.erase(0, 3);

  std::string cleaned;
  cleaned.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c == '\r') {
      if (i + 1 < s.size() && s[i + 1] == '\n') continue;
      cleaned.push_back('\n');
    } else if (c == '\t' || c == '\f' || c == '\v') {
      cleaned.push_back(' ');
    } else if (c < 0x20 && c != '\n') {
      continue;
    } else if (c == 0x7F) {
      continue;
    } else if (c == 0xC2 && i + 1 < s.size() && static_cast<unsigned char>(s[i + 1]) >= 0x80 &&
               static_cast<unsigned char>(s[i + 1]) <= 0x9F) {
      ++i;  // C1 control
    } else if (c == 0xC2 && i + 1 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0xA0) {
      cleaned.push_back(' ');  // no-break space
      ++i;
    } else {
      cleaned.push_back(static_cast<char>(c));
    }
  }

  std::vector<std::regex> strip;
  strip.reserve(opts.strip_patterns.size());
  for (const auto& p : opts.strip_patterns) strip.emplace_back(p);

  std::vector<std::string> lines;
  for (const std::string& raw_line : text::split(cleaned, '\n')) {
    std::string line = text::collapse_ws(raw_line);
    if (!line.empty() && std::any_of(strip.begin(), strip.end(),
                                     [&](const std::regex& r) { return std::regex_match(line, r); })) {
      continue;
    }
    lines.push_back(std::move(line));
  }

  // Hyphenation across line breaks: "regis-" + "tration" -> "registration".
  std::vector<std::string> joined;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string line = lines[i];
    while (line.size() >= 2 && line.back() == '-' && std::islower(static_cast<unsigned char>(line[line.size() - 2])) &&
           i + 1 < lines.size() && !lines[i + 1].empty() && std::islower(static_cast<unsigned char>(lines[i + 1][0]))) {
      line.pop_back();
      line += lines[++i];
    }
    joined.push_back(std::move(line));
  }

  std::string out;
  bool blank_pending = false;
  for (const auto& line : joined) {
    if (line.empty()) {
      blank_pending = !out.empty();
      continue;
    }
    if (blank_pending) out += "\n";
    blank_pending = false;
    out += line;
    out += "\n";
  }
  return out;
}

inline NormalizedDocument normalize_document(std::string_view raw, const std::string& spec_id,
                                             const NormalizeOptions& opts = {}) {
  const std::string body = normalize_text(raw, opts);
  if (text::trim(body).empty()) throw Error(ErrorCode::EmptyDocument, "document " + spec_id + " has no text");
  NormalizedDocument doc;
  doc.spec_id = spec_id;
  doc.release = opts.release;
  if (doc.release.empty()) {
    static const std::regex kRelease(R"(Release\s+([0-9]{1,2})\b)");
    std::string decoded = text::decode_utf8(raw, true);
    std::smatch m;
    if (std::regex_search(decoded, m, kRelease)) doc.release = "Release " + m[1].str();
  }
  doc.clauses = segment_clauses(body);
  return doc;
}

// ---------------------------------------------------------------------------
// Chunking

/// Text components for one clause. Spans index into clause.body_text and
/// tile its non-whitespace content in order.
inline std::vector<SpecComponent> chunk_clause(const Clause& clause, Granularity granularity,
                                               const std::string& spec_id) {
  std::vector<SpecComponent> out;
  const auto spans = granularity == Granularity::paragraph ? text::paragraph_spans(clause.body_text)
                                                           : text::sentence_spans(clause.body_text);
  for (const auto& span : spans) {
    SpecComponent c;
    c.component_id = make_component_id(spec_id, clause.clause_id, ComponentKind::text, out.size());
    c.kind = ComponentKind::text;
    c.spec_id = spec_id;
    c.clause_id = clause.clause_id;
    c.content = clause.body_text.substr(span.begin, span.size());
    c.source_char_span = span;
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structured extraction of tables and figures

/// Table or figure identifier on the first non-empty line of a region, e.g.
/// "Table 9.11.3.20: De-registration type" -> "Table 9.11.3.20".
inline std::optional<std::string> detect_region_identifier(std::string_view region, ComponentKind kind) {
  static const std::regex kTable(R"(^\s*(Table\s+[0-9A-Z][0-9A-Za-z.\-]*[0-9A-Za-z]|Table\s+[0-9A-Z]))");
  static const std::regex kFigure(R"(^\s*(Figure\s+[0-9A-Z][0-9A-Za-z.\-]*[0-9A-Za-z]|Figure\s+[0-9A-Z]))");
  for (const auto& line : text::split(region, '\n')) {
    if (text::trim(line).empty()) continue;
    std::smatch m;
    if (std::regex_search(line, m, kind == ComponentKind::figure ? kFigure : kTable)) return m[1].str();
    return std::nullopt;
  }
  return std::nullopt;
}

/// Pulls the outermost JSON object out of a model reply, tolerating code
/// fences or prose around it.
inline std::optional<nlohmann::json> extract_json_object(std::string_view reply) {
  auto open = reply.find('{');
  auto close = reply.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) return std::nullopt;
  auto j = nlohmann::json::parse(reply.substr(open, close - open + 1), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

/// Empty string when `j` conforms to the extraction schema for `kind`.
inline std::string extraction_schema_error(const nlohmann::json& j, ComponentKind kind) {
  for (const char* key : {"identifier", "caption", "description"}) {
    if (!j.contains(key) || !j[key].is_string()) return std::string("missing string field '") + key + "'";
  }
  if (text::trim(j["description"].get<std::string>()).empty()) return "empty description";
  if (kind == ComponentKind::table) {
    if (!j.contains("rows") || !j["rows"].is_array()) return "missing array field 'rows'";
    for (const auto& row : j["rows"]) {
      if (!row.is_array()) return "rows must be arrays of strings";
      for (const auto& cell : row)
        if (!cell.is_string()) return "rows must be arrays of strings";
    }
  } else if (kind == ComponentKind::figure) {
    if (!j.contains("elements") || !j["elements"].is_array()) return "missing array field 'elements'";
    for (const auto& e : j["elements"])
      if (!e.is_string()) return "elements must be strings";
    if (!j.contains("flows") || !j["flows"].is_array()) return "missing array field 'flows'";
    for (const auto& f : j["flows"]) {
      if (!f.is_object() || !f.contains("from") || !f.contains("to") || !f["from"].is_string() ||
          !f["to"].is_string())
        return "flows must be objects with string 'from' and 'to'";
    }
  } else {
    return "text components are not extracted";
  }
  return {};
}

/// Sends a request whose reply must be a JSON object accepted by `check`
/// (which returns an error message or empty). One repair request follows a
/// rejected reply; a second rejection is a ModelOutputSchemaViolation.
template <typename Check>
nlohmann::json complete_json_with_repair(Gateway& gw, const ModelRequest& req, Check&& check,
                                         const PromptSet& prompts, ErrorCode final_error) {
  std::string reply = gw.complete(req);
  std::string error;
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto j = extract_json_object(reply);
    error = j ? check(*j) : std::string("reply contains no JSON object");
    if (error.empty()) return *j;
    if (attempt == 1) break;
    ModelRequest repair = req;
    repair.user_prompt = fill_template(prompts.get("repair").user,
                                       {{"original", req.user_prompt}, {"previous", reply}, {"error", error}});
    reply = gw.complete(repair);
  }
  throw Error(final_error, error);
}

struct RegionRef {
  std::string spec_id;
  std::string clause_id;
  std::size_t seq = 0;
};

inline SpecComponent extract_structured_description(const std::string& region, ComponentKind kind, Gateway& gw,
                                                    const RegionRef& where,
                                                    const PromptSet& prompts = PromptSet::defaults()) {
  if (kind == ComponentKind::text) throw Error(ErrorCode::SchemaViolation, "text regions are chunked, not extracted");
  if (text::trim(region).empty()) throw Error(ErrorCode::SchemaViolation, "empty region payload");
  const auto& t = prompts.get(kind == ComponentKind::table ? "table_extract" : "figure_extract");
  const std::string citation = render_citation({where.spec_id, where.clause_id, ""});
  auto req = gw.make_request(t.system, fill_template(t.user, {{"citation", citation}, {"region", region}}));
  auto j = complete_json_with_repair(
      gw, req, [kind](const nlohmann::json& o) { return extraction_schema_error(o, kind); }, prompts,
      ErrorCode::ModelOutputSchemaViolation);

  if (auto detected = detect_region_identifier(region, kind)) {
    j["identifier"] = *detected;
  } else {
    if (text::trim(j["identifier"].get<std::string>()).empty()) {
      throw Error(ErrorCode::ModelOutputSchemaViolation, "no identifier in region or model reply");
    }
    j["identifier_source"] = "model";
  }

  SpecComponent c;
  c.component_id = make_component_id(where.spec_id, where.clause_id, kind, where.seq);
  c.kind = kind;
  c.spec_id = where.spec_id;
  c.clause_id = where.clause_id;
  c.label = j["identifier"].get<std::string>();
  c.content = j.dump();
  c.source_char_span = {0, region.size()};
  return c;
}

/// Identification pass: asks the model which tables and figures a clause
/// holds and returns the identifiers in reply order.
inline std::vector<std::string> identify_regions(const Clause& clause, const std::string& spec_id, Gateway& gw,
                                                 const PromptSet& prompts = PromptSet::defaults()) {
  std::string regions;
  auto add = [&](const std::vector<std::string>& payloads, std::string_view kind) {
    for (const auto& p : payloads) {
      regions += "<region kind=\"" + std::string(kind) + "\">\n" + p + "\n</region>\n";
    }
  };
  add(clause.table_regions, "table");
  add(clause.figure_regions, "figure");
  const auto& t = prompts.get("identify");
  auto req = gw.make_request(
      t.system, fill_template(t.user, {{"citation", render_citation({spec_id, clause.clause_id, ""})},
                                       {"clause_text", clause.body_text},
                                       {"regions", regions}}));
  auto j = complete_json_with_repair(
      gw, req,
      [](const nlohmann::json& o) -> std::string {
        if (!o.contains("identifiers") || !o["identifiers"].is_array()) return "missing array 'identifiers'";
        for (const auto& e : o["identifiers"])
          if (!e.is_string()) return "identifiers must be strings";
        return {};
      },
      prompts, ErrorCode::ModelOutputSchemaViolation);
  std::vector<std::string> out;
  for (const auto& e : j["identifiers"]) {
    std::string id = text::collapse_ws(e.get<std::string>());
    if (!id.empty() && std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Component space

inline SpaceStats recount_stats(const std::vector<SpecComponent>& components) {
  SpaceStats s;
  for (const auto& c : components) {
    switch (c.kind) {
      case ComponentKind::text:
        s.paragraphs += text::paragraph_spans(c.content).size();
        s.sentences += text::count_sentences(c.content);
        break;
      case ComponentKind::table: ++s.tables; break;
      case ComponentKind::figure: ++s.figures; break;
    }
  }
  return s;
}

inline std::string title_key(std::string_view spec_id, std::string_view clause_id) {
  return std::string(spec_id) + "/" + std::string(clause_id);
}

struct AssembleOptions {
  Granularity granularity = Granularity::paragraph;
  std::size_t max_in_flight = 4;
};

inline ComponentSpace assemble_component_space(const std::vector<NormalizedDocument>& documents, Gateway& gw,
                                               const AssembleOptions& opts = {},
                                               const PromptSet& prompts = PromptSet::defaults()) {
  ComponentSpace space;
  for (const auto& d : documents) {
    if (!space.spec_ids.insert(d.spec_id).second) {
      throw Error(ErrorCode::DuplicateSpecId, "spec id " + d.spec_id + " appears twice");
    }
  }

  struct Job {
    const std::string* region;
    ComponentKind kind;
    RegionRef where;
    std::size_t slot;
  };
  std::vector<std::optional<SpecComponent>> slots;
  std::vector<Job> jobs;

  for (const auto& d : documents) {
    for (const auto& clause : d.clauses) {
      if (clause.clause_id != kPreambleClauseId) space.clause_titles[title_key(d.spec_id, clause.clause_id)] = clause.title;
      for (auto& c : chunk_clause(clause, opts.granularity, d.spec_id)) slots.emplace_back(std::move(c));
      for (std::size_t i = 0; i < clause.table_regions.size(); ++i) {
        jobs.push_back({&clause.table_regions[i], ComponentKind::table, {d.spec_id, clause.clause_id, i}, slots.size()});
        slots.emplace_back();
      }
      for (std::size_t i = 0; i < clause.figure_regions.size(); ++i) {
        jobs.push_back({&clause.figure_regions[i], ComponentKind::figure, {d.spec_id, clause.clause_id, i}, slots.size()});
        slots.emplace_back();
      }
    }
  }

  bounded_parallel_for(jobs.size(), opts.max_in_flight, [&](std::size_t i) {
    const Job& job = jobs[i];
    slots[job.slot] = extract_structured_description(*job.region, job.kind, gw, job.where, prompts);
  });

  space.components.reserve(slots.size());
  for (auto& s : slots) space.components.push_back(std::move(*s));
  space.stats = recount_stats(space.components);
  return space;
}

// ---------------------------------------------------------------------------
// Serialization: one JSON object per line, a "meta" line first.

inline nlohmann::json component_to_json(const SpecComponent& c) {
  return {{"component_id", c.component_id},
          {"kind", to_string(c.kind)},
          {"spec_id", c.spec_id},
          {"clause_id", c.clause_id},
          {"label", c.label ? nlohmann::json(*c.label) : nlohmann::json(nullptr)},
          {"content", c.content},
          {"source_char_span", {c.source_char_span.begin, c.source_char_span.end}}};
}

inline SpecComponent component_from_json(const nlohmann::json& j) {
  SpecComponent c;
  try {
    c.component_id = j.at("component_id").get<std::string>();
    c.kind = parse_kind(j.at("kind").get<std::string>());
    c.spec_id = j.at("spec_id").get<std::string>();
    c.clause_id = j.at("clause_id").get<std::string>();
    if (!j.at("label").is_null()) c.label = j.at("label").get<std::string>();
    c.content = j.at("content").get<std::string>();
    const auto& span = j.at("source_char_span");
    c.source_char_span = {span.at(0).get<std::size_t>(), span.at(1).get<std::size_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("bad component record: ") + e.what());
  }
  return c;
}

/// Checks the SpecComponent invariants; returns an empty string when valid.
inline std::string component_error(const SpecComponent& c) {
  if (c.content.empty()) return "empty content";
  if (c.kind == ComponentKind::text && c.label) return "text component with label";
  if (c.kind != ComponentKind::text) {
    if (!c.label || c.label->empty()) return "table/figure component without label";
    auto j = nlohmann::json::parse(c.content, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return "content is not a JSON object";
    if (auto e = extraction_schema_error(j, c.kind); !e.empty()) return e;
  }
  ComponentIdParts parts;
  try {
    parts = parse_component_id(c.component_id);
  } catch (const Error&) {
    return "malformed component id";
  }
  if (parts.spec_id != c.spec_id || parts.clause_id != c.clause_id || parts.kind != c.kind) {
    return "component id does not match fields";
  }
  return {};
}

inline std::string serialize_space(const ComponentSpace& space) {
  nlohmann::json meta = {
      {"meta",
       {{"schema_version", kSpaceSchemaVersion},
        {"prompt_version", kPromptSchemaVersion},
        {"spec_ids", space.spec_ids},
        {"clause_titles", space.clause_titles},
        {"stats",
         {{"paragraphs", space.stats.paragraphs},
          {"sentences", space.stats.sentences},
          {"figures", space.stats.figures},
          {"tables", space.stats.tables}}}}}};
  std::string out = meta.dump() + "\n";
  for (const auto& c : space.components) out += component_to_json(c).dump() + "\n";
  return out;
}

inline ComponentSpace parse_space(std::string_view jsonl) {
  ComponentSpace space;
  auto lines = text::split(jsonl, '\n');
  bool have_meta = false;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (text::trim(lines[i]).empty()) continue;
    auto j = nlohmann::json::parse(lines[i], nullptr, false);
    const std::string where = "line " + std::to_string(i + 1);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::SchemaViolation, where + ": not a JSON object");
    if (!have_meta) {
      if (!j.contains("meta")) throw Error(ErrorCode::SchemaViolation, where + ": missing meta line");
      const auto& m = j["meta"];
      if (m.value("schema_version", "") != kSpaceSchemaVersion) {
        throw Error(ErrorCode::SchemaViolation, "unsupported space schema version");
      }
      space.spec_ids = m.at("spec_ids").get<std::set<std::string>>();
      space.clause_titles = m.value("clause_titles", std::map<std::string, std::string>{});
      const auto& s = m.at("stats");
      space.stats = {s.at("paragraphs").get<std::size_t>(), s.at("sentences").get<std::size_t>(),
                     s.at("figures").get<std::size_t>(), s.at("tables").get<std::size_t>()};
      have_meta = true;
      continue;
    }
    auto c = component_from_json(j);
    if (auto e = component_error(c); !e.empty()) throw Error(ErrorCode::SchemaViolation, where + ": " + e);
    if (!ids.insert(c.component_id).second) {
      throw Error(ErrorCode::SchemaViolation, where + ": duplicate component id " + c.component_id);
    }
    space.components.push_back(std::move(c));
  }
  if (!have_meta) throw Error(ErrorCode::SchemaViolation, "empty component space file");
  if (recount_stats(space.components) != space.stats) {
    throw Error(ErrorCode::SchemaViolation, "stats in meta line do not match the components");
  }
  return space;
}

inline ComponentSpace load_space(const std::filesystem::path& p) { return parse_space(read_file(p)); }

// ---------------------------------------------------------------------------
// Corpus directory layout:
//   <root>/<spec dir>/document.txt
//   <root>/<spec dir>/tables/<n>.txt     first line "Clause: <id>", then payload
//   <root>/<spec dir>/figures/<n>.txt
// A spec directory name maps to the spec id with '_' read as a space and a "TS "
// prefix added to bare numbers ("TS_24.501" and "24.501" -> "TS 24.501").

inline std::string spec_id_from_dir(std::string name) {
  std::replace(name.begin(), name.end(), '_', ' ');
  name = text::collapse_ws(name);
  if (!name.empty() && std::isdigit(static_cast<unsigned char>(name[0]))) name = "TS " + name;
  return name;
}

inline std::string spec_dir_name(std::string spec_id) {
  std::replace(spec_id.begin(), spec_id.end(), ' ', '_');
  return spec_id;
}

namespace detail {

inline std::vector<std::filesystem::path> numbered_files(const std::filesystem::path& dir) {
  std::vector<std::pair<std::size_t, std::filesystem::path>> found;
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) return {};
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".txt") continue;
    const std::string stem = e.path().stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw Error(ErrorCode::LayoutError, "region file name must be <n>.txt: " + e.path().string());
    }
    found.emplace_back(std::stoull(stem), e.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<std::filesystem::path> out;
  for (auto& f : found) out.push_back(std::move(f.second));
  return out;
}

inline std::pair<std::string, std::string> read_region_file(const std::filesystem::path& p, bool lossy) {
  const std::string raw = text::decode_utf8(read_file(p), lossy);
  std::size_t pos = 0;
  while (pos < raw.size()) {
    std::size_t nl = raw.find('\n', pos);
    std::string_view line = std::string_view(raw).substr(pos, (nl == std::string::npos ? raw.size() : nl) - pos);
    pos = nl == std::string::npos ? raw.size() : nl + 1;
    std::string_view t = text::trim(line);
    if (t.empty()) continue;
    if (!text::starts_with_ci(t, "clause:")) break;
    std::string id(text::trim(t.substr(7)));
    std::string payload(text::trim(std::string_view(raw).substr(pos)));
    return {id, payload};
  }
  throw Error(ErrorCode::LayoutError, "region file must start with 'Clause: <id>': " + p.string());
}

}  // namespace detail

inline std::vector<NormalizedDocument> load_corpus(const std::filesystem::path& root,
                                                   const NormalizeOptions& opts = {}) {
  std::error_code ec;
  if (!std::filesystem::is_directory(root, ec)) {
    throw Error(ErrorCode::LayoutError, "corpus directory not found: " + root.string());
  }
  std::vector<std::filesystem::path> spec_dirs;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory()) spec_dirs.push_back(e.path());
  std::sort(spec_dirs.begin(), spec_dirs.end());
  if (spec_dirs.empty()) throw Error(ErrorCode::LayoutError, "no specification directories under " + root.string());

  std::vector<NormalizedDocument> docs;
  for (const auto& dir : spec_dirs) {
    const auto doc_path = dir / "document.txt";
    if (!std::filesystem::is_regular_file(doc_path, ec)) {
      throw Error(ErrorCode::LayoutError, "missing " + doc_path.string());
    }
    auto doc = normalize_document(read_file(doc_path), spec_id_from_dir(dir.filename().string()), opts);
    auto attach = [&](const std::filesystem::path& sub, bool table) {
      for (const auto& p : detail::numbered_files(sub)) {
        auto [clause_id, payload] = detail::read_region_file(p, opts.lossy_utf8);
        Clause* c = doc.find(clause_id);
        if (c == nullptr) {
          throw Error(ErrorCode::LayoutError, p.string() + " names unknown clause '" + clause_id + "'");
        }
        if (payload.empty()) throw Error(ErrorCode::LayoutError, p.string() + " has an empty payload");
        (table ? c->table_regions : c->figure_regions).push_back(std::move(payload));
      }
    };
    attach(dir / "tables", true);
    attach(dir / "figures", false);
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace cellspec
