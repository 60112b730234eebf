#pragma once

// Canonical evidence labels: "TS 24.501, Clause 5.5.1" with an optional
// ", Table <id>" / ", Figure <id>" suffix for non-text components.

#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "cellspec/text.hpp"

namespace cellspec {

struct Citation {
  std::string spec_id;    // "TS 24.501"; empty when the label names no spec
  std::string clause_id;  // "5.5.1"; empty for bare table/figure identifiers
  std::string artifact;   // "Table 9.11.3.20", "Figure 5.5.2.2.1" or empty

  bool operator==(const Citation&) const = default;
};

inline std::string render_citation(const Citation& c) {
  std::string out;
  auto add = [&out](std::string_view part) {
    if (part.empty()) return;
    if (!out.empty()) out += ", ";
    out += part;
  };
  add(c.spec_id);
  if (!c.clause_id.empty()) add("Clause " + c.clause_id);
  add(c.artifact);
  return out;
}

namespace detail {

inline std::string canonical_artifact(std::string_view raw) {
  std::string s = text::collapse_ws(raw);
  if (text::starts_with_ci(s, "table ")) return "Table " + s.substr(6);
  if (text::starts_with_ci(s, "figure ")) return "Figure " + s.substr(7);
  if (text::starts_with_ci(s, "fig. ")) return "Figure " + s.substr(5);
  return s;
}

inline std::string canonical_spec(std::string_view raw) {
  std::string s = text::collapse_ws(raw);
  if (text::starts_with_ci(s, "3gpp ")) s = s.substr(5);
  if (text::starts_with_ci(s, "ts ")) return "TS " + s.substr(3);
  if (text::starts_with_ci(s, "tr ")) return "TR " + s.substr(3);
  return s;
}

}  // namespace detail

/// Parses a single label. Accepts "[spec, ]Clause <id>[, Table|Figure <id>]"
/// and bare "Table <id>" / "Figure <id>", case-insensitively and with any
/// whitespace. Returns nullopt for anything else.
inline std::optional<Citation> parse_citation(std::string_view label) {
  static const std::regex kFull(
      R"(^(?:(.*?)\s*,\s*)?clause\s+([0-9]+(?:\.[0-9]+)*[A-Za-z]?)\s*(?:,\s*((?:table|figure|fig\.)\s+\S.*?))?\s*$)",
      std::regex::icase);
  static const std::regex kArtifact(R"(^(?:(.*?)\s*,\s*)?((?:table|figure|fig\.)\s+\S.*?)\s*$)",
                                    std::regex::icase);
  const std::string s = text::collapse_ws(label);
  std::smatch m;
  if (std::regex_match(s, m, kFull)) {
    Citation c;
    c.spec_id = detail::canonical_spec(m[1].str());
    c.clause_id = m[2].str();
    if (m[3].matched) c.artifact = detail::canonical_artifact(m[3].str());
    return c;
  }
  if (std::regex_match(s, m, kArtifact)) {
    Citation c;
    c.spec_id = detail::canonical_spec(m[1].str());
    c.artifact = detail::canonical_artifact(m[2].str());
    return c;
  }
  return std::nullopt;
}

/// Re-renders a label in canonical form when it parses, else collapses
/// whitespace only.
inline std::string canonicalize_label(std::string_view label) {
  if (auto c = parse_citation(label)) return render_citation(*c);
  return text::collapse_ws(label);
}

/// Splits a citation list as written by a model. Entries are separated by
/// ';' or newlines; an entry of the form "TS 24.501, Clauses 5.5.1 and 5.4.2"
/// (or "Clauses a, b and c") expands to one label per clause.
inline std::vector<std::string> parse_citation_list(std::string_view line) {
  static const std::regex kPlural(R"(^(?:(.*?)\s*,\s*)?clauses\s+(.+)$)", std::regex::icase);
  static const std::regex kClauseId(R"([0-9]+(?:\.[0-9]+)*[A-Za-z]?)");
  std::vector<std::string> out;
  auto push_unique = [&out](std::string s) {
    if (s.empty()) return;
    for (const auto& e : out)
      if (e == s) return;
    out.push_back(std::move(s));
  };
  std::string normalized(line);
  for (auto& c : normalized)
    if (c == '\n') c = ';';
  for (const std::string& raw : text::split(normalized, ';')) {
    std::string entry = text::collapse_ws(raw);
    if (entry.empty()) continue;
    std::smatch m;
    if (std::regex_match(entry, m, kPlural)) {
      const std::string spec = detail::canonical_spec(m[1].str());
      const std::string ids = m[2].str();
      for (auto it = std::sregex_iterator(ids.begin(), ids.end(), kClauseId);
           it != std::sregex_iterator(); ++it) {
        push_unique(render_citation({spec, it->str(), ""}));
      }
      continue;
    }
    push_unique(canonicalize_label(entry));
  }
  return out;
}

/// True when `pred` covers `gold`: every field present in the gold label is
/// present and equal (case-insensitively) in the prediction. Labels that do
/// not parse compare by case-folded, whitespace-collapsed text.
inline bool label_covers(std::string_view pred, std::string_view gold) {
  const auto p = parse_citation(pred);
  const auto g = parse_citation(gold);
  if (!p || !g) return text::lower_ascii(text::collapse_ws(pred)) == text::lower_ascii(text::collapse_ws(gold));
  auto field_ok = [](const std::string& gf, const std::string& pf) {
    return gf.empty() || text::lower_ascii(gf) == text::lower_ascii(pf);
  };
  return field_ok(g->spec_id, p->spec_id) && field_ok(g->clause_id, p->clause_id) &&
         field_ok(g->artifact, p->artifact);
}

}  // namespace cellspec
