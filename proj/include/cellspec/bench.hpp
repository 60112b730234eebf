#pragma once

// Benchmark runner: task loading, the four pipeline configurations, per-family
// scoring, aggregate metrics, report emission and the top-k ablation.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cellspec/citation.hpp"
#include "cellspec/corpus.hpp"
#include "cellspec/digest.hpp"
#include "cellspec/error.hpp"
#include "cellspec/gateway.hpp"
#include "cellspec/metrics.hpp"
#include "cellspec/parallel.hpp"
#include "cellspec/prompts.hpp"
#include "cellspec/retrieval.hpp"
#include "cellspec/specgraph.hpp"
#include "cellspec/text.hpp"

namespace cellspec {

inline constexpr std::string_view kReportSchemaVersion = "cellspec-report/1";

inline constexpr std::array<std::string_view, 7> kVulnCategories = {
    "denial_of_service", "replay", "downgrade", "privacy_tracking", "spoofing", "authentication_bypass", "other"};

inline bool is_vuln_category(std::string_view c) {
  return std::find(kVulnCategories.begin(), kVulnCategories.end(), c) != kVulnCategories.end();
}

/// Lower-cases and joins words with '_'; unknown names map to "other".
inline std::string canonical_category(std::string_view raw) {
  std::string s;
  for (char c : text::lower_ascii(text::collapse_ws(raw))) {
    if (c == ' ' || c == '-' || c == '/') {
      if (!s.empty() && s.back() != '_') s += '_';
    } else {
      s += c;
    }
  }
  if (s == "dos") s = "denial_of_service";
  if (s == "privacy" || s == "tracking") s = "privacy_tracking";
  return is_vuln_category(s) ? s : "other";
}

// ---------------------------------------------------------------------------
// Tasks

struct TaskInstance {
  std::string task_id;
  int stage = 1;
  std::string family;
  std::string question;
  std::vector<std::string> options;  // keyed A, B, ... by position
  std::string gold_answer;           // option key for multiple choice
  std::vector<std::string> gold_evidence;
  std::optional<bool> gold_binary;
  std::optional<std::set<std::string>> gold_categories;
  std::optional<std::string> sentence;
};

enum class TaskKind { open, mc, vul };

inline bool is_external_family(std::string_view f) { return f.substr(0, 9) == "EXTERNAL-" && f.size() > 9; }

inline bool is_known_family(std::string_view f) {
  static const std::set<std::string, std::less<>> kFamilies = {"EQA",  "AQA",  "MCQA", "EQA-E", "AQA-E",
                                                              "MCQA-E", "CCQA", "TFQA", "LABEL", "EXPLAIN"};
  return kFamilies.count(f) > 0 || is_external_family(f);
}

inline TaskKind task_kind(const TaskInstance& t) {
  if (t.family == "MCQA" || t.family == "MCQA-E") return TaskKind::mc;
  if (t.family == "LABEL" || t.family == "EXPLAIN") return TaskKind::vul;
  if (is_external_family(t.family)) {
    if (!t.options.empty()) return TaskKind::mc;
    if (t.sentence) return TaskKind::vul;
  }
  return TaskKind::open;
}

inline bool requires_evidence(std::string_view family) {
  return (family.size() > 2 && family.substr(family.size() - 2) == "-E" && !is_external_family(family)) ||
         family == "CCQA" || family == "TFQA" || family == "LABEL" || family == "EXPLAIN";
}

/// Negative controls carry gold_binary=false and an empty evidence set.
inline bool is_negative_control(const TaskInstance& t) {
  return (t.family == "LABEL" || t.family == "EXPLAIN") && t.gold_binary == false;
}

inline std::string option_key(std::size_t i) { return std::string(1, static_cast<char>('A' + i)); }

namespace detail {

inline std::vector<std::string> string_list(const nlohmann::json& j, const char* field) {
  std::vector<std::string> out;
  if (!j.contains(field) || j[field].is_null()) return out;
  if (!j[field].is_array()) throw std::runtime_error(std::string("'") + field + "' must be an array");
  for (const auto& e : j[field]) {
    if (!e.is_string()) throw std::runtime_error(std::string("'") + field + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace detail

/// Parses and validates one task record; throws std::runtime_error with a
/// description of the first problem.
inline TaskInstance task_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::runtime_error("record is not an object");
  TaskInstance t;
  if (!j.contains("task_id") || !j["task_id"].is_string() || j["task_id"].get<std::string>().empty()) {
    throw std::runtime_error("missing string 'task_id'");
  }
  t.task_id = j["task_id"].get<std::string>();
  if (!j.contains("stage") || !j["stage"].is_number_integer()) throw std::runtime_error("missing integer 'stage'");
  t.stage = j["stage"].get<int>();
  if (t.stage < 1 || t.stage > 3) throw std::runtime_error("stage must be 1, 2 or 3");
  if (!j.contains("family") || !j["family"].is_string()) throw std::runtime_error("missing string 'family'");
  t.family = j["family"].get<std::string>();
  if (!is_known_family(t.family)) throw std::runtime_error("unknown family '" + t.family + "'");
  if (j.contains("question") && !j["question"].is_null()) {
    if (!j["question"].is_string()) throw std::runtime_error("'question' must be a string");
    t.question = j["question"].get<std::string>();
  }
  t.options = detail::string_list(j, "options");
  t.gold_evidence = detail::string_list(j, "gold_evidence");
  if (j.contains("sentence") && !j["sentence"].is_null()) {
    if (!j["sentence"].is_string()) throw std::runtime_error("'sentence' must be a string");
    t.sentence = j["sentence"].get<std::string>();
  }
  if (j.contains("gold_binary") && !j["gold_binary"].is_null()) {
    if (!j["gold_binary"].is_boolean()) throw std::runtime_error("'gold_binary' must be a boolean");
    t.gold_binary = j["gold_binary"].get<bool>();
  }
  if (j.contains("gold_categories") && !j["gold_categories"].is_null()) {
    std::set<std::string> cats;
    for (const auto& c : detail::string_list(j, "gold_categories")) {
      if (!is_vuln_category(c)) throw std::runtime_error("unknown vulnerability category '" + c + "'");
      cats.insert(c);
    }
    t.gold_categories = cats;
  }

  std::vector<std::string> gold_keys;
  if (j.contains("gold_answer") && !j["gold_answer"].is_null()) {
    if (j["gold_answer"].is_string()) {
      t.gold_answer = j["gold_answer"].get<std::string>();
      gold_keys.push_back(t.gold_answer);
    } else if (j["gold_answer"].is_array()) {
      gold_keys = detail::string_list(j, "gold_answer");
      if (gold_keys.size() == 1) t.gold_answer = gold_keys.front();
    } else {
      throw std::runtime_error("'gold_answer' must be a string");
    }
  }

  const TaskKind kind = task_kind(t);
  if (t.family == "MCQA" || t.family == "MCQA-E") {
    if (t.options.size() < 2) throw std::runtime_error("multiple-choice task needs at least two options");
  }
  if (kind == TaskKind::mc) {
    if (t.options.size() > 5) throw std::runtime_error("at most five options (A-E) are supported");
    if (gold_keys.size() != 1) throw std::runtime_error("multiple-choice task needs exactly one gold option");
    std::string key = std::string(text::trim(t.gold_answer));
    if (key.size() != 1) {
      // Accept the option text itself and map it to its key.
      auto it = std::find(t.options.begin(), t.options.end(), t.gold_answer);
      if (it == t.options.end()) throw std::runtime_error("gold_answer is neither an option key nor an option");
      key = option_key(static_cast<std::size_t>(it - t.options.begin()));
    }
    if (key[0] < 'A' || key[0] >= 'A' + static_cast<char>(t.options.size())) {
      throw std::runtime_error("gold option '" + key + "' is out of range");
    }
    t.gold_answer = key;
    if (t.question.empty()) throw std::runtime_error("missing 'question'");
  } else if (kind == TaskKind::open) {
    if (t.question.empty()) throw std::runtime_error("missing 'question'");
    if (gold_keys.size() > 1) throw std::runtime_error("'gold_answer' must be a single string");
    if (text::trim(t.gold_answer).empty()) throw std::runtime_error("missing 'gold_answer'");
  } else {
    if (!t.sentence || text::trim(*t.sentence).empty()) throw std::runtime_error("missing 'sentence'");
    if (!t.gold_binary) throw std::runtime_error("missing 'gold_binary'");
    if (t.family == "LABEL" && *t.gold_binary && (!t.gold_categories || t.gold_categories->empty())) {
      throw std::runtime_error("positive LABEL task needs 'gold_categories'");
    }
    if (t.family == "EXPLAIN" && *t.gold_binary && text::trim(t.gold_answer).empty()) {
      throw std::runtime_error("positive EXPLAIN task needs a reference explanation in 'gold_answer'");
    }
  }
  if (is_negative_control(t) && !t.gold_evidence.empty()) {
    throw std::runtime_error("negative control must have empty gold_evidence");
  }
  if (t.stage >= 2 && requires_evidence(t.family) && !is_negative_control(t) && t.gold_evidence.empty()) {
    throw std::runtime_error("stage " + std::to_string(t.stage) + " task needs non-empty gold_evidence");
  }
  return t;
}

inline nlohmann::json task_to_json(const TaskInstance& t) {
  nlohmann::json j = {{"task_id", t.task_id}, {"stage", t.stage}, {"family", t.family}};
  if (!t.question.empty()) j["question"] = t.question;
  if (!t.options.empty()) j["options"] = t.options;
  if (!t.gold_answer.empty()) j["gold_answer"] = t.gold_answer;
  j["gold_evidence"] = t.gold_evidence;
  if (t.gold_binary) j["gold_binary"] = *t.gold_binary;
  if (t.gold_categories) j["gold_categories"] = *t.gold_categories;
  if (t.sentence) j["sentence"] = *t.sentence;
  return j;
}

enum class CountCheck { none, warn, error };

inline CountCheck parse_count_check(std::string_view s) {
  if (s == "none") return CountCheck::none;
  if (s == "warn") return CountCheck::warn;
  if (s == "error") return CountCheck::error;
  throw Error(ErrorCode::UsageError, "count check must be none, warn or error");
}

/// Published per-stage task counts. Stage 3 externals are the sentence-level,
/// sentence-pair and newly built sets together (1,454 + 320 + 55).
inline std::vector<std::pair<std::string, std::size_t>> official_counts(int stage) {
  switch (stage) {
    case 1: return {{"native", 4500}, {"external", 1000}};
    case 2: return {{"native", 4500}, {"external", 500}};
    case 3: return {{"CCQA", 222}, {"TFQA", 747}, {"LABEL", 300}, {"external", 1454 + 320 + 55}};
    default: return {};
  }
}

/// Compares the loaded tasks with the published counts for every stage they
/// contain. Returns one message per mismatch.
inline std::vector<std::string> count_mismatches(const std::vector<TaskInstance>& tasks) {
  std::map<int, std::map<std::string, std::size_t>> seen;
  for (const auto& t : tasks) {
    auto& m = seen[t.stage];
    if (is_external_family(t.family)) {
      ++m["external"];
    } else {
      ++m["native"];
      ++m[t.family];
    }
  }
  std::vector<std::string> out;
  for (const auto& [stage, counts] : seen) {
    for (const auto& [group, expected] : official_counts(stage)) {
      const std::size_t got = counts.count(group) ? counts.at(group) : 0;
      if (got != expected) {
        out.push_back("stage " + std::to_string(stage) + " " + group + ": " + std::to_string(got) +
                      " tasks, published count is " + std::to_string(expected));
      }
    }
  }
  return out;
}

struct LoadedTasks {
  std::vector<TaskInstance> tasks;
  std::vector<std::string> warnings;
};

inline LoadedTasks parse_tasks(std::string_view jsonl, std::optional<int> stage_filter = std::nullopt,
                               CountCheck check = CountCheck::warn, const std::string& source = "tasks") {
  LoadedTasks out;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  for (const auto& line : text::split(jsonl, '\n')) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    auto where = source + ":" + std::to_string(line_no);
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::SchemaViolation, where + ": not valid JSON");
    TaskInstance t;
    try {
      t = task_from_json(j);
    } catch (const std::runtime_error& e) {
      throw Error(ErrorCode::SchemaViolation, where + ": " + e.what());
    }
    if (!ids.insert(t.task_id).second) throw Error(ErrorCode::SchemaViolation, where + ": duplicate task_id " + t.task_id);
    if (stage_filter && t.stage != *stage_filter) continue;
    out.tasks.push_back(std::move(t));
  }
  if (check != CountCheck::none) {
    auto mismatches = count_mismatches(out.tasks);
    if (!mismatches.empty() && check == CountCheck::error) {
      throw Error(ErrorCode::CountMismatch, text::join(mismatches, "; "));
    }
    out.warnings = std::move(mismatches);
  }
  return out;
}

inline LoadedTasks load_tasks(const std::filesystem::path& path, std::optional<int> stage_filter = std::nullopt,
                              CountCheck check = CountCheck::warn) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) throw Error(ErrorCode::IoError, "task file not found: " + path.string());
  return parse_tasks(read_file(path), stage_filter, check, path.string());
}

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineConfig {
  bool use_fusion = true;
  bool use_rag = true;
  bool use_kg = true;
  RetrievalConfig retrieval;
  bool strict_evidence = false;
  std::size_t max_in_flight = 4;

  void validate() const {
    if (use_kg && !use_rag) throw Error(ErrorCode::UsageError, "the KG configuration requires retrieval");
    retrieval.validate();
  }

  std::string name() const {
    if (!use_fusion && !use_rag) return "base";
    if (use_kg) return use_fusion ? "ari" : "rag+kg";
    if (use_fusion && use_rag) return "fusion+rag";
    return use_fusion ? "fusion" : "rag";
  }

  static PipelineConfig base() { return {false, false, false, {}, false, 4}; }
  static PipelineConfig full() { return {}; }
};

inline nlohmann::json pipeline_to_json(const PipelineConfig& c) {
  return {{"name", c.name()},
          {"use_fusion", c.use_fusion},
          {"use_rag", c.use_rag},
          {"use_kg", c.use_kg},
          {"strict_evidence", c.strict_evidence},
          {"retrieval", retrieval_config_to_json(c.retrieval)}};
}

struct PipelineResources {
  const ComponentSpace* space = nullptr;       // table/figure lookup without retrieval
  const HybridIndex* chunk_index = nullptr;
  const HybridIndex* kg_index = nullptr;
};

struct RunCounters {
  std::atomic<std::size_t> retrieval_calls{0};
};

struct TaskPrediction {
  std::string answer;                 // free text, explanation, or the raw reply
  std::optional<std::string> option;  // multiple choice
  std::vector<std::string> cited;
  std::optional<bool> binary;
  std::set<std::string> categories;
  std::vector<std::string> context_labels;
  std::size_t retrieval_calls = 0;
};

/// Text that drives retrieval for a task.
inline std::string task_query(const TaskInstance& t) {
  if (task_kind(t) == TaskKind::vul) {
    std::string q = t.sentence.value_or("");
    if (!t.question.empty()) q = t.question + "\n" + q;
    return q;
  }
  return t.question;
}

/// Tables and figures whose identifier is mentioned in `query`.
inline std::vector<ContextItem> lookup_components(const ComponentSpace& space, const std::string& query) {
  std::vector<ContextItem> out;
  const std::string q = text::lower_ascii(text::collapse_ws(query));
  for (const auto& c : space.components) {
    if (c.kind == ComponentKind::text || !c.label) continue;
    const std::string needle = text::lower_ascii(*c.label);
    std::size_t at = q.find(needle);
    bool hit = false;
    while (at != std::string::npos) {
      const std::size_t end = at + needle.size();
      // "Table 9.1" must not match inside "Table 9.11"
      if (end == q.size() || !(std::isalnum(static_cast<unsigned char>(q[end])) || (q[end] == '.' && end + 1 < q.size() &&
                                                                                     std::isdigit(static_cast<unsigned char>(q[end + 1]))))) {
        hit = true;
        break;
      }
      at = q.find(needle, at + 1);
    }
    if (hit) out.push_back({render_citation(citation_of(c)), component_text(c), 0.0, c.component_id, "lookup"});
  }
  return out;
}

inline std::vector<ContextItem> build_context(const TaskInstance& t, const PipelineConfig& cfg,
                                              const PipelineResources& res, RunCounters& counters,
                                              std::size_t& calls) {
  const std::string query = task_query(t);
  if (!cfg.use_rag) {
    if (cfg.use_fusion && res.space) return lookup_components(*res.space, query);
    return {};
  }
  if (!res.chunk_index) throw Error(ErrorCode::UsageError, "retrieval configuration without a chunk index");
  RetrievalConfig rc = cfg.retrieval;
  if (!cfg.use_fusion) rc.kinds = {ComponentKind::text};
  ++counters.retrieval_calls;
  ++calls;
  EvidenceSet chunks = retrieve(*res.chunk_index, query, rc);
  if (!cfg.use_kg) return to_context(chunks);
  if (!res.kg_index) throw Error(ErrorCode::UsageError, "KG configuration without a KG index");
  ++counters.retrieval_calls;
  ++calls;
  EvidenceSet kg = kg_retrieve(*res.kg_index, query, rc);
  return merge_context(chunks, kg, rc.k);
}

/// First standalone option key A-E.
inline std::optional<std::string> parse_option(std::string_view reply) {
  static const std::regex kKey(R"((^|[^A-Za-z0-9])([A-E])(?=$|[^A-Za-z0-9]))");
  const std::string s(reply);
  std::smatch m;
  if (std::regex_search(s, m, kKey)) return m[2].str();
  return std::nullopt;
}

struct VulVerdict {
  bool vulnerable = false;
  std::set<std::string> categories;
  std::string explanation;
};

inline VulVerdict parse_vul_reply(std::string_view body) {
  VulVerdict v;
  bool have_label = false;
  std::string explanation;
  bool in_explanation = false;
  for (const auto& raw : text::split(body, '\n')) {
    const std::string_view line = text::trim(raw);
    if (text::starts_with_ci(line, "label:")) {
      const std::string val = text::upper_ascii(text::collapse_ws(line.substr(6)));
      if (val.find("NOT_VULNERABLE") != std::string::npos || val.find("NOT VULNERABLE") != std::string::npos ||
          val.find("NON-VULNERABLE") != std::string::npos || val.find("CONSISTENT") == 0) {
        v.vulnerable = false;
        have_label = true;
      } else if (val.find("VULNERABLE") != std::string::npos || val.find("INCONSISTENT") != std::string::npos) {
        v.vulnerable = true;
        have_label = true;
      }
      in_explanation = false;
    } else if (text::starts_with_ci(line, "categories:")) {
      for (const auto& c : text::split(line.substr(11), ',')) {
        if (!text::trim(c).empty()) v.categories.insert(canonical_category(c));
      }
      in_explanation = false;
    } else if (text::starts_with_ci(line, "explanation:")) {
      explanation = std::string(text::trim(line.substr(12)));
      in_explanation = true;
    } else if (in_explanation && !line.empty()) {
      explanation += " " + std::string(line);
    }
  }
  if (!have_label) throw Error(ErrorCode::UnparseableVerdict, "reply has no LABEL line");
  if (!v.vulnerable) v.categories.clear();
  v.explanation = explanation;
  return v;
}

inline std::string render_options(const std::vector<std::string>& options) {
  std::string out;
  for (std::size_t i = 0; i < options.size(); ++i) out += option_key(i) + ". " + options[i] + "\n";
  return out;
}

inline std::string categories_list() {
  std::vector<std::string> v(kVulnCategories.begin(), kVulnCategories.end());
  return text::join(v, ", ");
}

inline TaskPrediction run_task(const TaskInstance& t, const PipelineConfig& cfg, const PipelineResources& res,
                               Gateway& gw, RunCounters& counters,
                               const PromptSet& prompts = PromptSet::defaults()) {
  TaskPrediction p;
  const auto context = build_context(t, cfg, res, counters, p.retrieval_calls);
  for (const auto& c : context) p.context_labels.push_back(c.label);
  const bool evidence = requires_evidence(t.family);

  switch (task_kind(t)) {
    case TaskKind::open: {
      auto a = answer_with_context(gw, t.question, context, evidence, prompts);
      p.answer = a.text;
      p.cited = a.cited_labels;
      break;
    }
    case TaskKind::mc: {
      const auto& tp = prompts.get("answer_mc");
      auto req = gw.make_request(
          fill_template(tp.system, {{"evidence_instruction", evidence_instruction(evidence)}}),
          fill_template(tp.user, {{"question", t.question},
                                  {"options", render_options(t.options)},
                                  {"context", render_context(context)}}));
      auto [body, labels] = split_citations(gw.complete(req));
      p.answer = body;
      p.option = parse_option(body);
      if (evidence) p.cited = labels;
      break;
    }
    case TaskKind::vul: {
      const auto& tp = prompts.get("answer_vul");
      auto req = gw.make_request(
          fill_template(tp.system, {{"evidence_instruction", evidence_instruction(evidence)},
                                    {"categories", categories_list()}}),
          fill_template(tp.user, {{"sentence", *t.sentence}, {"context", render_context(context)}}));
      auto [body, labels] = split_citations(gw.complete(req));
      auto v = parse_vul_reply(body);
      p.binary = v.vulnerable;
      p.categories = v.categories;
      p.answer = v.explanation;
      if (evidence) p.cited = labels;
      break;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Scoring and reports

struct ReportRow {
  std::string task_id;
  int stage = 1;
  std::string family;
  std::string prediction;
  std::optional<std::string> option;
  std::optional<int> judge_score;
  std::optional<bool> answer_correct;
  std::optional<bool> evidence_correct;
  std::vector<std::string> predicted_evidence;
  std::vector<std::string> context;
  std::optional<bool> pred_binary;
  std::optional<bool> gold_binary;
  std::optional<std::set<std::string>> pred_categories;
  std::optional<std::set<std::string>> gold_categories;
  std::optional<int> explanation_score;
  std::optional<bool> evidence_explanation_correct;
  std::size_t retrieval_calls = 0;
  bool unscored = false;
  std::string error;
};

inline std::string gold_evidence_text(const TaskInstance& t) { return text::join(t.gold_evidence, "; "); }

/// Judge score for a free-text answer; gold evidence is shown to the judge
/// when the family requires evidence.
inline int score_answer_open(const std::string& prediction, const TaskInstance& t, Gateway& gw,
                             const PromptSet& prompts = PromptSet::defaults()) {
  std::optional<std::string> ev;
  if (requires_evidence(t.family) && !t.gold_evidence.empty()) ev = gold_evidence_text(t);
  return judge(gw, t.question, prediction, t.gold_answer, ev, prompts).score;
}

struct ExplanationScore {
  bool evidence_correct = false;
  std::optional<int> explanation_score;
};

/// Negative controls are correct iff predicted clean with no evidence; other
/// instances need complete evidence, and the explanation is judged.
inline ExplanationScore score_explanation(const TaskPrediction& p, const TaskInstance& t, Gateway& gw,
                                          bool strict = false, const PromptSet& prompts = PromptSet::defaults()) {
  ExplanationScore s;
  if (is_negative_control(t)) {
    s.evidence_correct = p.binary == false && p.cited.empty();
    return s;
  }
  s.evidence_correct = p.binary == true && score_evidence(p.cited, t.gold_evidence, strict);
  const std::string question = t.question.empty() ? "Why does this sentence lead to a vulnerability? " + t.sentence.value_or("")
                                                  : t.question;
  s.explanation_score = judge(gw, question, p.answer, t.gold_answer, gold_evidence_text(t), prompts).score;
  return s;
}

inline ReportRow score_task(const TaskInstance& t, const TaskPrediction& p, const PipelineConfig& cfg, Gateway& gw,
                            const PromptSet& prompts = PromptSet::defaults()) {
  ReportRow r;
  r.task_id = t.task_id;
  r.stage = t.stage;
  r.family = t.family;
  r.prediction = p.answer;
  r.option = p.option;
  r.predicted_evidence = p.cited;
  r.context = p.context_labels;
  r.retrieval_calls = p.retrieval_calls;
  const bool evidence = requires_evidence(t.family);

  switch (task_kind(t)) {
    case TaskKind::open:
      r.judge_score = score_answer_open(p.answer, t, gw, prompts);
      if (evidence) r.evidence_correct = score_evidence(p.cited, t.gold_evidence, cfg.strict_evidence);
      break;
    case TaskKind::mc:
      r.answer_correct = p.option && *p.option == t.gold_answer;
      if (evidence) r.evidence_correct = score_evidence(p.cited, t.gold_evidence, cfg.strict_evidence);
      break;
    case TaskKind::vul:
      r.pred_binary = p.binary;
      r.gold_binary = t.gold_binary;
      r.answer_correct = p.binary == t.gold_binary;
      if (t.gold_binary == true && t.gold_categories) {
        r.pred_categories = p.categories;
        r.gold_categories = *t.gold_categories;
      }
      if (t.family == "EXPLAIN") {
        auto s = score_explanation(p, t, gw, cfg.strict_evidence, prompts);
        r.evidence_correct = s.evidence_correct;
        r.explanation_score = s.explanation_score;
        r.evidence_explanation_correct =
            is_negative_control(t) ? s.evidence_correct : s.evidence_correct && s.explanation_score == 2;
      } else if (t.family == "LABEL") {
        r.evidence_correct = is_negative_control(t)
                                 ? p.cited.empty()
                                 : score_evidence(p.cited, t.gold_evidence, cfg.strict_evidence);
      }
      break;
  }
  return r;
}

inline nlohmann::json opt_json(const auto& o) { return o ? nlohmann::json(*o) : nlohmann::json(nullptr); }

inline nlohmann::json row_to_json(const ReportRow& r) {
  return {{"task_id", r.task_id},
          {"stage", r.stage},
          {"family", r.family},
          {"prediction", r.prediction},
          {"option", opt_json(r.option)},
          {"judge_score", opt_json(r.judge_score)},
          {"answer_correct", opt_json(r.answer_correct)},
          {"evidence_correct", opt_json(r.evidence_correct)},
          {"predicted_evidence", r.predicted_evidence},
          {"context", r.context},
          {"pred_binary", opt_json(r.pred_binary)},
          {"gold_binary", opt_json(r.gold_binary)},
          {"pred_categories", opt_json(r.pred_categories)},
          {"gold_categories", opt_json(r.gold_categories)},
          {"explanation_score", opt_json(r.explanation_score)},
          {"evidence_explanation_correct", opt_json(r.evidence_explanation_correct)},
          {"retrieval_calls", r.retrieval_calls},
          {"unscored", r.unscored},
          {"error", r.error}};
}

inline ReportRow row_from_json(const nlohmann::json& j) {
  ReportRow r;
  auto opt_str = [&](const char* k) -> std::optional<std::string> {
    return j.at(k).is_null() ? std::nullopt : std::optional<std::string>(j.at(k).get<std::string>());
  };
  auto opt_int = [&](const char* k) -> std::optional<int> {
    return j.at(k).is_null() ? std::nullopt : std::optional<int>(j.at(k).get<int>());
  };
  auto opt_bool = [&](const char* k) -> std::optional<bool> {
    return j.at(k).is_null() ? std::nullopt : std::optional<bool>(j.at(k).get<bool>());
  };
  auto opt_set = [&](const char* k) -> std::optional<std::set<std::string>> {
    if (j.at(k).is_null()) return std::nullopt;
    return j.at(k).get<std::set<std::string>>();
  };
  r.task_id = j.at("task_id").get<std::string>();
  r.stage = j.at("stage").get<int>();
  r.family = j.at("family").get<std::string>();
  r.prediction = j.at("prediction").get<std::string>();
  r.option = opt_str("option");
  r.judge_score = opt_int("judge_score");
  r.answer_correct = opt_bool("answer_correct");
  r.evidence_correct = opt_bool("evidence_correct");
  r.predicted_evidence = j.at("predicted_evidence").get<std::vector<std::string>>();
  r.context = j.at("context").get<std::vector<std::string>>();
  r.pred_binary = opt_bool("pred_binary");
  r.gold_binary = opt_bool("gold_binary");
  r.pred_categories = opt_set("pred_categories");
  r.gold_categories = opt_set("gold_categories");
  r.explanation_score = opt_int("explanation_score");
  r.evidence_explanation_correct = opt_bool("evidence_explanation_correct");
  r.retrieval_calls = j.at("retrieval_calls").get<std::size_t>();
  r.unscored = j.at("unscored").get<bool>();
  r.error = j.at("error").get<std::string>();
  return r;
}

namespace detail {

inline nlohmann::json rate(std::size_t hits, std::size_t n) {
  if (n == 0) return nullptr;
  return static_cast<double>(hits) / static_cast<double>(n);
}

inline nlohmann::json group_aggregates(const std::vector<const ReportRow*>& rows) {
  std::size_t unscored = 0, acc_n = 0, acc_hit = 0, s2_n = 0, s2_hit = 0, ev_n = 0, ev_hit = 0, ee_n = 0, ee_hit = 0,
              ex_n = 0, ex_hit = 0;
  std::vector<bool> bp, bg;
  std::vector<std::set<std::string>> mp, mg;
  for (const ReportRow* r : rows) {
    if (r->unscored) {
      ++unscored;
      continue;
    }
    if (r->answer_correct) {
      ++acc_n;
      acc_hit += *r->answer_correct;
    }
    if (r->judge_score) {
      ++s2_n;
      s2_hit += *r->judge_score == 2;
    }
    if (r->evidence_correct) {
      ++ev_n;
      ev_hit += *r->evidence_correct;
    }
    if (r->evidence_explanation_correct) {
      ++ee_n;
      ee_hit += *r->evidence_explanation_correct;
    }
    if (r->explanation_score) {
      ++ex_n;
      ex_hit += *r->explanation_score == 2;
    }
    if (r->gold_binary && r->pred_binary) {
      bp.push_back(*r->pred_binary);
      bg.push_back(*r->gold_binary);
    }
    if (r->gold_categories && r->pred_categories) {
      mp.push_back(*r->pred_categories);
      mg.push_back(*r->gold_categories);
    }
  }
  nlohmann::json j = {{"tasks", rows.size()},
                      {"scored", rows.size() - unscored},
                      {"unscored", unscored},
                      {"accuracy", rate(acc_hit, acc_n)},
                      {"score2_rate", rate(s2_hit, s2_n)},
                      {"evidence_correct_rate", rate(ev_hit, ev_n)},
                      {"evidence_explanation_correct_rate", rate(ee_hit, ee_n)},
                      {"explanation_score2_rate", rate(ex_hit, ex_n)},
                      {"binary_f1", nullptr},
                      {"micro_f1", nullptr},
                      {"macro_f1", nullptr}};
  if (!bg.empty()) j["binary_f1"] = binary_f1(bp, bg);
  bool any_positive = false;
  for (const auto& g : mg) any_positive = any_positive || !g.empty();
  if (any_positive) {
    auto f = multilabel_f1(mp, mg);
    j["micro_f1"] = f.micro;
    j["macro_f1"] = f.macro;
  }
  return j;
}

}  // namespace detail

/// Overall and per-family aggregates. Unscored rows are counted but left out
/// of every rate; an absent metric is null.
inline nlohmann::json compute_aggregates(const std::vector<ReportRow>& rows) {
  std::vector<const ReportRow*> all;
  std::map<std::string, std::vector<const ReportRow*>> by_family;
  for (const auto& r : rows) {
    all.push_back(&r);
    by_family[r.family].push_back(&r);
  }
  nlohmann::json per_family = nlohmann::json::object();
  for (const auto& [f, rs] : by_family) per_family[f] = detail::group_aggregates(rs);
  return {{"overall", detail::group_aggregates(all)}, {"per_family", per_family}};
}

struct EvalReport {
  nlohmann::json config;
  std::vector<ReportRow> rows;  // sorted by task_id
  nlohmann::json aggregates;
  std::size_t retrieval_calls = 0;
  std::size_t gateway_failures = 0;
};

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(row_to_json(row));
  return {{"schema_version", kReportSchemaVersion},
          {"config", r.config},
          {"counters", {{"tasks", r.rows.size()}, {"retrieval_calls", r.retrieval_calls}}},
          {"aggregates", r.aggregates},
          {"rows", rows}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", "") != kReportSchemaVersion) throw Error(ErrorCode::SchemaViolation, "not a report file");
  EvalReport r;
  try {
    r.config = j.at("config");
    for (const auto& row : j.at("rows")) r.rows.push_back(row_from_json(row));
    r.aggregates = j.at("aggregates");
    r.retrieval_calls = j.at("counters").at("retrieval_calls").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("report: ") + e.what());
  }
  return r;
}

/// Runs and scores every task. Per-task failures are recorded on the row and
/// do not stop the run.
inline EvalReport run_eval(const std::vector<TaskInstance>& tasks, const PipelineConfig& cfg,
                           const PipelineResources& res, Gateway& gw,
                           const PromptSet& prompts = PromptSet::defaults()) {
  cfg.validate();
  RunCounters counters;
  std::vector<ReportRow> rows(tasks.size());
  std::atomic<std::size_t> gateway_failures{0};
  bounded_parallel_for(tasks.size(), cfg.max_in_flight, [&](std::size_t i) {
    const TaskInstance& t = tasks[i];
    TaskPrediction p;
    try {
      p = run_task(t, cfg, res, gw, counters, prompts);
      rows[i] = score_task(t, p, cfg, gw, prompts);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::UsageError) throw;
      ReportRow r;
      r.task_id = t.task_id;
      r.stage = t.stage;
      r.family = t.family;
      r.prediction = p.answer;
      r.predicted_evidence = p.cited;
      r.context = p.context_labels;
      r.retrieval_calls = p.retrieval_calls;
      r.unscored = true;
      r.error = e.what();
      if (exit_code_for(e.code()) == ExitCode::Gateway) ++gateway_failures;
      rows[i] = std::move(r);
    }
  });
  std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) { return a.task_id < b.task_id; });
  EvalReport report;
  report.config = pipeline_to_json(cfg);
  report.rows = std::move(rows);
  report.aggregates = compute_aggregates(report.rows);
  report.retrieval_calls = counters.retrieval_calls.load();
  report.gateway_failures = gateway_failures.load();
  return report;
}

// RFC 4180: CRLF line ends; fields with a comma, quote or line break quoted.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string report_to_csv(const EvalReport& r) {
  static const char* kCols[] = {"task_id",          "stage",          "family",
                                "prediction",       "option",         "judge_score",
                                "answer_correct",   "evidence_correct", "predicted_evidence",
                                "context",          "pred_binary",    "gold_binary",
                                "pred_categories",  "gold_categories", "explanation_score",
                                "evidence_explanation_correct", "retrieval_calls", "unscored",
                                "error"};
  std::string out;
  for (std::size_t i = 0; i < std::size(kCols); ++i) out += (i ? "," : "") + std::string(kCols[i]);
  out += "\r\n";
  auto cell = [](const nlohmann::json& v) -> std::string {
    if (v.is_null()) return "";
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_array()) {
      std::vector<std::string> parts;
      for (const auto& e : v) parts.push_back(e.get<std::string>());
      return text::join(parts, "; ");
    }
    return v.dump();
  };
  for (const auto& row : r.rows) {
    const auto j = row_to_json(row);
    for (std::size_t i = 0; i < std::size(kCols); ++i) out += (i ? "," : "") + csv_field(cell(j.at(kCols[i])));
    out += "\r\n";
  }
  return out;
}

/// Writes <stem>.json (and <stem>.csv when `csv`) into `dir`, after checking
/// the stored aggregates against a recomputation from the rows.
inline std::vector<std::filesystem::path> emit_report(const EvalReport& r, const std::filesystem::path& dir,
                                                      const std::string& stem = "report", bool csv = true) {
  if (compute_aggregates(r.rows) != r.aggregates) {
    throw Error(ErrorCode::SchemaViolation, "stored aggregates differ from a recomputation over the rows");
  }
  std::vector<std::filesystem::path> out;
  out.push_back(dir / (stem + ".json"));
  write_file(out.back(), report_to_json(r).dump(2) + "\n");
  if (csv) {
    out.push_back(dir / (stem + ".csv"));
    write_file(out.back(), report_to_csv(r));
  }
  return out;
}

struct AblationReport {
  std::vector<std::size_t> k_values;
  std::vector<EvalReport> reports;  // parallel to k_values
};

inline AblationReport run_ablation(const std::vector<TaskInstance>& tasks, const std::vector<std::size_t>& k_values,
                                   const PipelineConfig& cfg, const PipelineResources& res, Gateway& gw,
                                   const PromptSet& prompts = PromptSet::defaults()) {
  if (!cfg.use_rag) throw Error(ErrorCode::UsageError, "the ablation varies k and needs retrieval");
  if (k_values.empty()) throw Error(ErrorCode::UsageError, "empty k list");
  AblationReport a;
  for (auto k : k_values) {
    PipelineConfig c = cfg;
    c.retrieval.k = k;
    a.k_values.push_back(k);
    a.reports.push_back(run_eval(tasks, c, res, gw, prompts));
  }
  return a;
}

/// Side-by-side aggregates per family, one column per k in input order.
inline nlohmann::json ablation_summary(const AblationReport& a) {
  nlohmann::json columns = nlohmann::json::array();
  std::set<std::string> families;
  for (std::size_t i = 0; i < a.k_values.size(); ++i) {
    columns.push_back({{"k", a.k_values[i]}, {"aggregates", a.reports[i].aggregates}});
    for (const auto& [f, _] : a.reports[i].aggregates["per_family"].items()) families.insert(f);
  }
  nlohmann::json per_family = nlohmann::json::object();
  for (const auto& f : families) {
    nlohmann::json cols = nlohmann::json::array();
    for (std::size_t i = 0; i < a.k_values.size(); ++i) {
      const auto& pf = a.reports[i].aggregates["per_family"];
      cols.push_back({{"k", a.k_values[i]}, {"aggregates", pf.contains(f) ? pf[f] : nlohmann::json(nullptr)}});
    }
    per_family[f] = cols;
  }
  return {{"schema_version", kReportSchemaVersion}, {"k_values", a.k_values}, {"columns", columns}, {"per_family", per_family}};
}

inline std::vector<std::filesystem::path> emit_ablation(const AblationReport& a, const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (std::size_t i = 0; i < a.k_values.size(); ++i) {
    auto files = emit_report(a.reports[i], dir, "ablation_k" + std::to_string(a.k_values[i]), false);
    out.insert(out.end(), files.begin(), files.end());
  }
  out.push_back(dir / "ablation.json");
  write_file(out.back(), ablation_summary(a).dump(2) + "\n");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace cellspec
