#pragma once

// Deterministic stand-in for the chat model. It dispatches on the prompt tag
// and answers from the prompt contents alone, so every reply is a pure
// function of the request. Used by mock transport and to record the bundled
// replay fixture.

#include <algorithm>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cellspec/corpus.hpp"
#include "cellspec/gateway.hpp"
#include "cellspec/prompts.hpp"
#include "cellspec/text.hpp"

namespace cellspec::mock {

inline bool is_stopword(std::string_view t) {
  static const std::set<std::string, std::less<>> kStop = {
      "a",     "an",   "the",  "of",    "to",     "in",     "is",   "are",   "was",   "be",    "been", "and",
      "or",    "for",  "on",   "by",    "with",   "what",   "which", "when", "how",   "does",  "do",   "during",
      "that",  "this", "it",   "as",    "at",     "from",   "shall", "may",  "if",    "its",   "who",  "why",
      "after", "before", "not", "no",   "into",   "than",   "then", "there", "these", "those", "can",  "will",
      "should", "has", "have", "had",   "any",    "all",    "each", "such", "their", "they",  "them", "where",
      "while", "via",  "per",  "under", "about",  "between", "whether", "also", "only", "both", "either"};
  return kStop.count(t) > 0;
}

/// Lower-cased tokens without stopwords.
inline std::set<std::string> content_tokens(std::string_view s) {
  std::set<std::string> out;
  for (auto& t : text::tokenize(s))
    if (!is_stopword(t)) out.insert(std::move(t));
  return out;
}

inline std::size_t overlap(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::size_t n = 0;
  for (const auto& t : a) n += b.count(t);
  return n;
}

/// Text between the first "<tag ...>" line and the matching "</tag>".
inline std::optional<std::string> section(std::string_view s, std::string_view tag) {
  const std::string open = "<" + std::string(tag);
  const std::string close = "</" + std::string(tag) + ">";
  std::size_t a = s.find(open);
  while (a != std::string_view::npos) {
    const char after = a + open.size() < s.size() ? s[a + open.size()] : '\0';
    if (after == '>' || after == ' ') break;
    a = s.find(open, a + 1);
  }
  if (a == std::string_view::npos) return std::nullopt;
  const std::size_t body = s.find('>', a);
  const std::size_t z = s.find(close, body);
  if (body == std::string_view::npos || z == std::string_view::npos) return std::nullopt;
  return std::string(text::trim(s.substr(body + 1, z - body - 1)));
}

struct Block {
  std::map<std::string, std::string> attrs;
  std::string body;
};

/// Every "<tag a="..">body</tag>" occurrence, in order.
inline std::vector<Block> blocks(std::string_view s, std::string_view tag) {
  std::vector<Block> out;
  const std::string open = "<" + std::string(tag);
  const std::string close = "</" + std::string(tag) + ">";
  static const std::regex kAttr(R"re(([A-Za-z_]+)="([^"]*)")re");
  std::size_t pos = 0;
  for (;;) {
    std::size_t a = s.find(open, pos);
    if (a == std::string_view::npos) break;
    const char after = a + open.size() < s.size() ? s[a + open.size()] : '\0';
    if (after != '>' && after != ' ') {
      pos = a + 1;
      continue;
    }
    const std::size_t head_end = s.find('>', a);
    const std::size_t z = s.find(close, head_end);
    if (head_end == std::string_view::npos || z == std::string_view::npos) break;
    Block b;
    const std::string head(s.substr(a, head_end - a));
    for (auto it = std::sregex_iterator(head.begin(), head.end(), kAttr); it != std::sregex_iterator(); ++it) {
      b.attrs[(*it)[1].str()] = (*it)[2].str();
    }
    b.body = std::string(text::trim(s.substr(head_end + 1, z - head_end - 1)));
    out.push_back(std::move(b));
    pos = z + close.size();
  }
  return out;
}

inline bool wants_citations(const ModelRequest& req) {
  return req.system_prompt.find("CITATIONS:") != std::string::npos;
}

/// Labels of context blocks whose overlap with `probe` is at least half of
/// the best overlap (and non-zero), in context order.
inline std::vector<std::string> supporting_labels(const std::vector<Block>& ctx, const std::set<std::string>& probe) {
  std::vector<std::size_t> scores;
  std::size_t best = 0;
  for (const auto& b : ctx) {
    scores.push_back(overlap(content_tokens(b.body), probe));
    best = std::max(best, scores.back());
  }
  std::vector<std::string> out;
  if (best == 0) return out;
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    if (2 * scores[i] >= best) {
      const std::string& l = ctx[i].attrs.count("label") ? ctx[i].attrs.at("label") : std::string();
      if (!l.empty() && std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
    }
  }
  return out;
}

inline std::string citation_line(const std::vector<std::string>& labels) {
  return "CITATIONS: " + text::join(labels, "; ");
}

// Text of a context block without a KG block's entity and relation listing.
inline std::string prose_of(const std::string& body) {
  const std::size_t t = body.find("\nText:\n");
  if (body.find("\nEntities:\n") != std::string::npos && t != std::string::npos) return body.substr(t + 7);
  return body;
}

/// The context sentence sharing the most content tokens with `probe`
/// (earliest wins ties); empty when nothing overlaps.
inline std::string best_sentence(const std::vector<Block>& ctx, const std::set<std::string>& probe) {
  std::string best;
  std::size_t best_score = 0;
  for (const auto& b : ctx) {
    const std::string prose = prose_of(b.body);
    for (const auto& sp : text::sentence_spans(prose)) {
      std::string sent = text::collapse_ws(std::string_view(prose).substr(sp.begin, sp.end - sp.begin));
      const std::size_t sc = overlap(content_tokens(sent), probe);
      if (sc > best_score) {
        best_score = sc;
        best = std::move(sent);
      }
    }
  }
  return best;
}

inline std::string answer_open(const ModelRequest& req) {
  const std::string question = section(req.user_prompt, "question").value_or("");
  const auto ctx = blocks(req.user_prompt, "context");
  const auto probe = content_tokens(question);
  std::string answer = best_sentence(ctx, probe);
  if (answer.empty()) answer = "The supplied context does not answer this question.";
  if (wants_citations(req)) answer += "\n" + citation_line(supporting_labels(ctx, probe));
  return answer;
}

inline std::string answer_mc(const ModelRequest& req) {
  const std::string question = section(req.user_prompt, "question").value_or("");
  const auto ctx = blocks(req.user_prompt, "context");
  static const std::regex kOption(R"(^\s*([A-E])[\.\):]\s*(.*)$)");
  std::vector<std::pair<std::string, std::string>> options;
  for (const auto& line : text::split(section(req.user_prompt, "options").value_or(""), '\n')) {
    std::smatch m;
    if (std::regex_match(line, m, kOption)) options.emplace_back(m[1].str(), m[2].str());
  }
  if (options.empty()) return "A";

  std::set<std::string> evidence;
  if (ctx.empty()) {
    evidence = content_tokens(question);
  } else {
    for (const auto& b : ctx)
      for (auto& t : content_tokens(prose_of(b.body))) evidence.insert(t);
  }
  std::size_t best = 0;
  double best_frac = -1.0;
  for (std::size_t i = 0; i < options.size(); ++i) {
    const auto toks = content_tokens(options[i].second);
    const double frac = toks.empty() ? 0.0 : static_cast<double>(overlap(toks, evidence)) / static_cast<double>(toks.size());
    if (frac > best_frac) {
      best_frac = frac;
      best = i;
    }
  }
  std::string reply = options[best].first + "\n" + options[best].second;
  if (wants_citations(req)) {
    auto probe = content_tokens(question);
    for (auto& t : content_tokens(options[best].second)) probe.insert(t);
    reply += "\n" + citation_line(supporting_labels(ctx, probe));
  }
  return reply;
}

/// Keyword rules over the normative sentence.
inline std::string answer_vul(const ModelRequest& req) {
  const std::string sentence = section(req.user_prompt, "sentence").value_or("");
  const auto ctx = blocks(req.user_prompt, "context");
  const std::string s = text::lower_ascii(sentence);
  auto has = [&](std::string_view needle) { return s.find(needle) != std::string::npos; };

  std::vector<std::string> cats;
  auto add = [&](const char* c) {
    if (std::find(cats.begin(), cats.end(), c) == cats.end()) cats.push_back(c);
  };
  const bool unprotected = has("without integrity protection") || has("not integrity protected") ||
                           has("unprotected") || has("without security protection") || has("before security");
  if (unprotected) {
    add("spoofing");
    if (has("reject") || has("deregistration") || has("de-registration") || has("release")) add("denial_of_service");
  }
  if (has("replay") || has("sequence number is not") || has("same sequence number")) add("replay");
  if (has("null") || has("ea0") || has("ia0") || has("downgrade") || has("lower security")) add("downgrade");
  if (has("in clear") || has("cleartext") || has("plain text") || has("plaintext") || has("unencrypted")) {
    add("privacy_tracking");
  }
  if (has("without authentication") || has("skip the authentication") || has("authentication is not")) {
    add("authentication_bypass");
  }
  const bool vulnerable = !cats.empty();

  std::string reply = std::string("LABEL: ") + (vulnerable ? "VULNERABLE" : "NOT_VULNERABLE") + "\n";
  reply += "CATEGORIES: " + text::join(cats, ", ") + "\n";
  if (vulnerable) {
    reply += "EXPLANATION: The sentence permits behaviour an attacker can exploit (" + text::join(cats, ", ") + ").";
  } else {
    reply += "EXPLANATION: The sentence keeps the required protection in place.";
  }
  if (wants_citations(req)) {
    reply += "\n" + citation_line(vulnerable ? supporting_labels(ctx, content_tokens(sentence)) : std::vector<std::string>{});
  }
  return reply;
}

/// Exact token match scores 2, any shared content token 1, else 0.
inline std::string judge(const ModelRequest& req) {
  const std::string gold = section(req.user_prompt, "gold_answer").value_or("");
  const auto cands = blocks(req.user_prompt, "candidate");
  const std::string cand = cands.empty() ? std::string() : cands.front().body;
  int score = 0;
  const auto gt = text::tokenize(gold), ct = text::tokenize(cand);
  if (!gt.empty() && gt == ct) {
    score = 2;
  } else if (overlap(content_tokens(gold), content_tokens(cand)) > 0) {
    score = 1;
  }
  static const char* kWhy[] = {"The candidate does not match the gold answer.",
                               "The candidate matches the gold answer in part.",
                               "The candidate matches the gold answer."};
  return "SCORE: " + std::to_string(score) + "\nRATIONALE: " + kWhy[score];
}

inline std::string identify(const ModelRequest& req) {
  static const std::regex kAny(R"(\b((?:Table|Figure)\s+[0-9A-Z][0-9A-Za-z.\-]*[0-9A-Za-z]|(?:Table|Figure)\s+[0-9A-Z])\b)");
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& b : blocks(req.user_prompt, "region")) {
    const auto kind = b.attrs.count("kind") && b.attrs.at("kind") == "figure" ? ComponentKind::figure : ComponentKind::table;
    std::optional<std::string> id = detect_region_identifier(b.body, kind);
    std::smatch m;
    if (!id && std::regex_search(b.body, m, kAny)) id = m[1].str();
    if (id) ids.push_back(*id);
  }
  return nlohmann::json{{"identifiers", ids}}.dump();
}

// First non-empty line split into identifier and caption.
inline std::pair<std::string, std::string> heading_of(const std::string& region, ComponentKind kind) {
  std::string first;
  for (const auto& line : text::split(region, '\n')) {
    if (!text::trim(line).empty()) {
      first = std::string(text::trim(line));
      break;
    }
  }
  std::string id = detect_region_identifier(region, kind).value_or("");
  std::string caption = first;
  if (!id.empty()) {
    caption = first.substr(first.find(id) + id.size());
    while (!caption.empty() && (caption.front() == ':' || text::is_space(caption.front()) || caption.front() == '-'))
      caption.erase(caption.begin());
  }
  if (id.empty()) id = kind == ComponentKind::table ? "Table (unnumbered)" : "Figure (unnumbered)";
  return {id, caption};
}

inline std::string table_extract(const ModelRequest& req) {
  const auto regions = blocks(req.user_prompt, "region");
  const std::string region = regions.empty() ? std::string() : regions.front().body;
  auto [id, caption] = heading_of(region, ComponentKind::table);
  nlohmann::json rows = nlohmann::json::array();
  std::vector<std::string> notes;
  bool first = true;
  for (const auto& line : text::split(region, '\n')) {
    const std::string_view t = text::trim(line);
    if (t.empty()) continue;
    if (first) {
      first = false;
      continue;
    }
    if (t.find('|') == std::string_view::npos) {
      notes.emplace_back(t);
      continue;
    }
    std::string_view inner = t;
    if (inner.front() == '|') inner.remove_prefix(1);
    if (!inner.empty() && inner.back() == '|') inner.remove_suffix(1);
    nlohmann::json row = nlohmann::json::array();
    bool rule = true;
    for (const auto& cell : text::split(inner, '|')) {
      const std::string c(text::trim(cell));
      if (c.find_first_not_of("-: ") != std::string::npos) rule = false;
      row.push_back(c);
    }
    if (!rule) rows.push_back(row);
  }
  std::string desc = id + " specifies " + (caption.empty() ? std::string("its contents") : caption) + ".";
  if (!notes.empty()) desc += " " + text::join(notes, " ");
  return nlohmann::json{{"identifier", id}, {"caption", caption}, {"description", desc}, {"rows", rows}}.dump();
}

inline std::string figure_extract(const ModelRequest& req) {
  const auto regions = blocks(req.user_prompt, "region");
  const std::string region = regions.empty() ? std::string() : regions.front().body;
  auto [id, caption] = heading_of(region, ComponentKind::figure);
  static const std::regex kFlow(R"(^\s*(.+?)\s*->\s*(.+?)\s*(?::\s*(.*))?$)");
  nlohmann::json elements = nlohmann::json::array(), flows = nlohmann::json::array();
  std::vector<std::string> seen, notes;
  auto element = [&](const std::string& e) {
    if (std::find(seen.begin(), seen.end(), e) == seen.end()) {
      seen.push_back(e);
      elements.push_back(e);
    }
  };
  bool first = true;
  for (const auto& line : text::split(region, '\n')) {
    if (text::trim(line).empty()) continue;
    if (first) {
      first = false;
      continue;
    }
    std::smatch m;
    if (std::regex_match(line, m, kFlow)) {
      element(m[1].str());
      element(m[2].str());
      flows.push_back({{"from", m[1].str()}, {"to", m[2].str()}, {"label", m[3].matched ? m[3].str() : ""}});
    } else {
      notes.emplace_back(text::trim(line));
    }
  }
  std::string desc = id + " shows " + (caption.empty() ? std::string("its contents") : caption) + ".";
  for (const auto& f : flows) {
    desc += " " + f["from"].get<std::string>() + " to " + f["to"].get<std::string>();
    if (!f["label"].get<std::string>().empty()) desc += ": " + f["label"].get<std::string>();
    desc += ".";
  }
  if (!notes.empty()) desc += " " + text::join(notes, " ");
  return nlohmann::json{{"identifier", id}, {"caption", caption}, {"description", desc}, {"elements", elements},
                        {"flows", flows}}
      .dump();
}

// Heuristic graph over message, timer, state, identifier and IE mentions.
inline std::string kg_extract(const ModelRequest& req) {
  auto clause = blocks(req.user_prompt, "clause");
  const std::string title = clause.empty() ? std::string() : clause.front().attrs["title"];
  std::string body = clause.empty() ? std::string() : clause.front().body;
  if (auto comps = section(req.user_prompt, "components")) body += "\n\n" + *comps;

  nlohmann::json entities = nlohmann::json::array(), relations = nlohmann::json::array();
  std::map<std::string, std::string> type_of;
  std::vector<std::string> order;
  auto entity = [&](const std::string& name, const char* type) {
    if (name.empty() || type_of.count(name)) return;
    type_of[name] = type;
    order.push_back(name);
    entities.push_back({{"name", name}, {"type", type}});
  };
  std::set<std::string> rel_seen;
  auto relation = [&](const std::string& s, const char* r, const std::string& t) {
    if (s == t || !type_of.count(s) || !type_of.count(t)) return;
    if (!rel_seen.insert(s + "\x1f" + r + "\x1f" + t).second) return;
    relations.push_back({{"source", s}, {"relation", r}, {"target", t}});
  };

  std::string procedure = std::string(text::trim(title));
  if (!procedure.empty()) {
    procedure[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(procedure[0])));
    entity(procedure, "Procedure");
  }

  static const std::regex kMessage(
      R"(\b((?:[A-Z][A-Z0-9\-]+ )+(?:REQUEST|ACCEPT|REJECT|COMPLETE|COMMAND|RESPONSE|FAILURE|INDICATION))\b)");
  static const std::regex kTimer(R"(\b(T3[0-9]{3})\b)");
  static const std::regex kState(R"(\b((?:5GMM|EMM|5GSM)-[A-Z][A-Z\-\.]*[A-Z]|RRC_[A-Z]+))");
  static const std::regex kIdent(R"(\b(SUCI|SUPI|5G-GUTI|5G-S-TMSI|GUTI|IMSI|IMEI|PEI)\b)");
  static const std::regex kIe(R"(\b([A-Z0-9][A-Za-z0-9\-]*(?: [a-z0-9][A-Za-z0-9\-]*){0,3}) IE\b)");
  static const std::string kProtection = "NAS integrity protection";
  static const std::string kContext = "NAS security context";

  auto find_all = [](const std::string& s, const std::regex& re) {
    std::vector<std::pair<std::size_t, std::string>> out;
    for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
      out.emplace_back(static_cast<std::size_t>(it->position(1)), (*it)[1].str());
    }
    return out;
  };

  for (const auto& sp : text::sentence_spans(body)) {
    const std::string sent = text::collapse_ws(std::string_view(body).substr(sp.begin, sp.end - sp.begin));
    const std::string low = text::lower_ascii(sent);
    auto has = [&](std::string_view n) { return low.find(n) != std::string::npos; };

    auto messages = find_all(sent, kMessage);
    auto timers = find_all(sent, kTimer);
    auto states = find_all(sent, kState);
    for (const auto& [p, m] : messages) entity(m, "Message");
    for (const auto& [p, t] : timers) entity(t, "Timer");
    for (const auto& [p, st] : states) entity(st, "State");
    for (const auto& [p, id] : find_all(sent, kIdent)) entity(id, "Identifier");
    std::vector<std::string> ies;
    for (auto [p, ie] : find_all(sent, kIe)) {
      for (const char* art : {"The ", "A ", "An "})
        if (text::starts_with_ci(ie, art) && ie.size() > std::string_view(art).size()) ie = ie.substr(std::string_view(art).size());
      if (type_of.count(ie) && type_of[ie] != std::string("InformationElement")) continue;
      entity(ie, "InformationElement");
      ies.push_back(ie);
    }

    for (const auto& [p, m] : messages) {
      relation(procedure, "has_step", m);
      for (const auto& ie : ies) relation(m, "contains_IE", ie);
    }
    for (const auto& [p, t] : timers) {
      if (has("stop")) relation(procedure, "stops", t);
      else if (has("restart") || has("reset")) relation(procedure, "resets", t);
      else if (has("start")) relation(procedure, "starts", t);
    }
    if (has("enter") && states.size() >= 2) {
      for (std::size_t i = 0; i + 1 < states.size(); ++i) {
        relation(states[i].second, "state_transition", states[i + 1].second);
      }
    } else if (has("in state") || has("in the state") || has("in 5gmm") || has("in emm")) {
      for (const auto& [p, st] : states) relation(procedure, "requires_state", st);
    }
    const bool unprotected = has("without integrity protection") || has("not integrity protected") || has("unprotected");
    if (unprotected || has("integrity protect")) {
      entity(kProtection, "Property");
      for (const auto& [p, m] : messages) relation(m, unprotected ? "may_be_unprotected" : "integrity_required", kProtection);
    }
    if (has("security context") && has("establish")) {
      entity(kContext, "Property");
      relation(procedure, "establishes", kContext);
    }
    if (messages.size() >= 2) {
      for (const char* cue : {"receipt of", "receiving", "upon reception of"}) {
        const std::size_t at = low.find(cue);
        if (at == std::string::npos) continue;
        const std::pair<std::size_t, std::string>* trigger = nullptr;
        for (const auto& m : messages)
          if (m.first > at && (!trigger || m.first < trigger->first)) trigger = &m;
        if (!trigger) continue;
        for (const auto& m : messages)
          if (m.second != trigger->second) relation(m.second, "action_triggered_by", trigger->second);
        break;
      }
    }
  }
  return nlohmann::json{{"entities", entities}, {"relations", relations}}.dump();
}

/// The bundled rule. Returns nullopt for prompts it does not recognise.
inline std::optional<std::string> respond(const ModelRequest& req) {
  const std::string tag = prompt_tag(req.system_prompt);
  if (tag == "answer_open") return answer_open(req);
  if (tag == "answer_mc") return answer_mc(req);
  if (tag == "answer_vul") return answer_vul(req);
  if (tag == "judge") return judge(req);
  if (tag == "identify") return identify(req);
  if (tag == "table_extract") return table_extract(req);
  if (tag == "figure_extract") return figure_extract(req);
  if (tag == "kg_extract") return kg_extract(req);
  return std::nullopt;
}

inline void install(Gateway& gw) { gw.register_mock(respond); }

}  // namespace cellspec::mock
