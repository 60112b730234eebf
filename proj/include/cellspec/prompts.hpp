#pragma once

// Versioned prompt templates. The shipped config/prompts.json carries the
// same text; a prompt directory or file can override the built-ins at run
// time. Placeholders use {{name}} syntax.
//
// The first line of every system prompt is a tag "[cellspec:<name>:v1]"
// which the bundled deterministic responder dispatches on.

#include <map>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "cellspec/digest.hpp"
#include "cellspec/error.hpp"

namespace cellspec {

inline constexpr std::string_view kPromptSchemaVersion = "cellspec-prompts/1";

struct PromptTemplate {
  std::string system;
  std::string user;
};

class PromptSet {
 public:
  static const PromptSet& defaults() {
    static const PromptSet set = build_defaults();
    return set;
  }

  static PromptSet load(const std::filesystem::path& file) {
    auto j = nlohmann::json::parse(read_file(file));
    if (j.value("version", "") != kPromptSchemaVersion) {
      throw Error(ErrorCode::SchemaViolation, "prompt file version mismatch in " + file.string());
    }
    PromptSet set;
    for (const auto& [name, p] : j.at("prompts").items()) {
      set.templates_[name] = {p.at("system").get<std::string>(), p.at("user").get<std::string>()};
    }
    return set;
  }

  nlohmann::json to_json() const {
    nlohmann::json prompts = nlohmann::json::object();
    for (const auto& [name, t] : templates_) prompts[name] = {{"system", t.system}, {"user", t.user}};
    return {{"version", kPromptSchemaVersion}, {"prompts", prompts}};
  }

  const PromptTemplate& get(const std::string& name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw Error(ErrorCode::SchemaViolation, "no prompt named " + name);
    return it->second;
  }

 private:
  static PromptSet build_defaults();
  std::map<std::string, PromptTemplate> templates_;
};

/// Replaces every {{key}} with its value. Unknown placeholders are left as-is.
inline std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    std::size_t open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    std::size_t close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    std::string key(tmpl.substr(open + 2, close - open - 2));
    if (auto it = vars.find(key); it != vars.end()) {
      out.append(it->second);
    } else {
      out.append(tmpl.substr(open, close + 2 - open));
    }
    pos = close + 2;
  }
  return out;
}

/// Returns the dispatch tag name of a system prompt ("judge" for
/// "[cellspec:judge:v1]"), or empty when there is none.
inline std::string prompt_tag(std::string_view system_prompt) {
  constexpr std::string_view kPrefix = "[cellspec:";
  if (system_prompt.substr(0, kPrefix.size()) != kPrefix) return {};
  auto colon = system_prompt.find(':', kPrefix.size());
  if (colon == std::string_view::npos) return {};
  return std::string(system_prompt.substr(kPrefix.size(), colon - kPrefix.size()));
}

inline PromptSet PromptSet::build_defaults() {
  PromptSet s;
  s.templates_["identify"] = {
      R"([cellspec:identify:v1]
You read one clause of a 3GPP technical specification and list every table and figure that belongs to it.
Report identifiers exactly as printed (for example "Table 9.11.3.20" or "Figure 5.5.2.2.1").
Reply with a single JSON object: {"identifiers": ["..."]}. Do not add any other text.)",
      R"(<clause citation="{{citation}}">
{{clause_text}}
</clause>
<regions>
{{regions}}
</regions>)"};

  s.templates_["table_extract"] = {
      R"([cellspec:table_extract:v1]
You convert a table from a 3GPP technical specification into a structured JSON description.
Reply with a single JSON object with exactly these keys:
  "identifier": the table identifier as printed, for example "Table 9.11.3.20",
  "caption": the table caption,
  "description": a faithful plain-language summary of what the table specifies,
  "rows": an array of rows, each row an array of cell strings, header row first.
Do not invent content that is not in the table. Do not add any other text.)",
      R"(<region kind="table" clause="{{citation}}">
{{region}}
</region>)"};

  s.templates_["figure_extract"] = {
      R"([cellspec:figure_extract:v1]
You convert a figure from a 3GPP technical specification (signaling flow, state machine or message format) into a structured JSON description.
Reply with a single JSON object with exactly these keys:
  "identifier": the figure identifier as printed, for example "Figure 5.5.2.2.1",
  "caption": the figure caption,
  "description": a faithful plain-language summary of the figure,
  "elements": an array of the entities, states or fields shown,
  "flows": an array of {"from": ..., "to": ..., "label": ...} objects, one per arrow or transition, in order.
Do not invent content that is not in the figure. Do not add any other text.)",
      R"(<region kind="figure" clause="{{citation}}">
{{region}}
</region>)"};

  s.templates_["repair"] = {
      "",
      R"({{original}}

<previous_reply>
{{previous}}
</previous_reply>
<error>{{error}}</error>
Your previous reply was rejected for the reason above. Reply again with only a corrected JSON object.)"};

  s.templates_["kg_extract"] = {
      R"([cellspec:kg_extract:v2]
You build a taxonomy-based knowledge graph for one clause of a 3GPP technical specification.
Use only these entity types: {{entity_types}}.
Use only these relation types: {{relation_types}}.
Every fact must be stated in the supplied clause text or its table and figure descriptions.
Write message names in upper case as in the clause text; keep IE, timer and state names exactly as spelled there.
Reply with a single JSON object:
{"entities": [{"name": "...", "type": "..."}], "relations": [{"source": "...", "relation": "...", "target": "..."}]}
Relation endpoints must be entity names from the entities list. Do not add any other text.)",
      R"(<clause citation="{{citation}}" title="{{title}}">
{{clause_text}}
</clause>
<components>
{{components}}
</components>)"};

  s.templates_["answer_open"] = {
      R"([cellspec:answer_open:v1]
You answer questions about 3GPP technical specifications.
Base the answer only on the supplied context; when no context is supplied, answer from your knowledge of the specifications.
Answer concisely.
{{evidence_instruction}})",
      R"(<question>
{{question}}
</question>
{{context}})"};

  s.templates_["answer_mc"] = {
      R"([cellspec:answer_mc:v1]
You answer multiple-choice questions about 3GPP technical specifications.
Exactly one option is compliant with the specifications. Base the choice only on the supplied context when context is supplied.
Start the reply with the key of the chosen option on its own line, for example "B".
{{evidence_instruction}})",
      R"(<question>
{{question}}
</question>
<options>
{{options}}
</options>
{{context}})"};

  s.templates_["answer_vul"] = {
      R"([cellspec:answer_vul:v1]
You analyse one normative sentence from a 3GPP technical specification for security design vulnerabilities or inconsistencies with other parts of the specifications.
Reply in exactly this format:
LABEL: VULNERABLE or NOT_VULNERABLE
CATEGORIES: comma-separated subset of {{categories}} (empty when not vulnerable)
EXPLANATION: why the sentence does or does not lead to a vulnerability, grounded in the context
{{evidence_instruction}})",
      R"(<sentence>
{{sentence}}
</sentence>
{{context}})"};

  s.templates_["judge"] = {
      R"([cellspec:judge:v1]
You grade an answer to a question about 3GPP technical specifications against a gold reference.
Base the decision only on the question, the gold answer and the gold evidence provided. Ignore any external knowledge.
Rubric:
  2 = fully correct: consistent with the gold answer and covers its key points
  1 = partially correct: some key points right, others missing or wrong
  0 = incorrect or unrelated
Reply with "SCORE: <0|1|2>" on the first line followed by "RATIONALE: <one sentence>".)",
      R"(<question>
{{question}}
</question>
<gold_answer>
{{gold_answer}}
</gold_answer>
<gold_evidence>
{{gold_evidence}}
</gold_evidence>
{{candidates}})"};

  return s;
}

}  // namespace cellspec
