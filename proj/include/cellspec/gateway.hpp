#pragma once

// Chat-completion access with deterministic configuration. Four transports:
//   live    - OpenAI-compatible HTTP endpoint
//   record  - live (or mock) upstream, every response persisted to the cache
//   replay  - cache only; a miss is an error and nothing touches the network
//   mock    - registered in-process rules
// Cache entries are content-addressed files cache/<request hash>.json.

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
// <resolv.h> defines _res as a macro, which clashes with identifiers in
// other headers (Eigen among them). httplib does not need it past this point.
#ifdef _res
#undef _res
#endif

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cellspec/citation.hpp"
#include "cellspec/digest.hpp"
#include "cellspec/error.hpp"
#include "cellspec/prompts.hpp"
#include "cellspec/text.hpp"

namespace cellspec {

enum class TransportMode { live, record, replay, mock };

inline std::string_view to_string(TransportMode m) {
  switch (m) {
    case TransportMode::live: return "live";
    case TransportMode::record: return "record";
    case TransportMode::replay: return "replay";
    case TransportMode::mock: return "mock";
  }
  return "mock";
}

inline TransportMode parse_transport(std::string_view s) {
  if (s == "live") return TransportMode::live;
  if (s == "record") return TransportMode::record;
  if (s == "replay") return TransportMode::replay;
  if (s == "mock") return TransportMode::mock;
  throw Error(ErrorCode::UsageError, "unknown transport '" + std::string(s) + "'");
}

inline constexpr const char* kEndpointEnv = "CELLSPEC_ENDPOINT";
inline constexpr const char* kApiKeyEnv = "CELLSPEC_API_KEY";
inline constexpr std::string_view kDefaultModel = "DeepSeek-V3.2-Exp";

struct ModelRequest {
  // Every pipeline and judge call decodes greedily; there is no setter.
  static constexpr double temperature = 0.0;

  std::string system_prompt;
  std::string user_prompt;
  int max_output = 1024;
  std::string model_name{kDefaultModel};

  nlohmann::json to_json() const {
    // nlohmann::json objects keep keys sorted, so the dump is field-order free.
    return {{"system_prompt", system_prompt},
            {"user_prompt", user_prompt},
            {"temperature", temperature},
            {"max_output", max_output},
            {"model_name", model_name}};
  }
};

inline std::string request_hash(const ModelRequest& req) { return sha256_hex(req.to_json().dump()); }

class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path entry_path(const std::string& hash) const { return dir_ / (hash + ".json"); }

  std::optional<std::string> lookup(const std::string& hash) const {
    const auto p = entry_path(hash);
    std::error_code ec;
    if (!std::filesystem::exists(p, ec)) return std::nullopt;
    auto j = nlohmann::json::parse(read_file(p), nullptr, false);
    if (j.is_discarded() || !j.contains("response") || !j["response"].is_string()) {
      throw Error(ErrorCode::GatewayError, "corrupt cache entry " + p.string());
    }
    return j["response"].get<std::string>();
  }

  void store(const std::string& hash, const ModelRequest& req, const std::string& response) {
    std::lock_guard<std::mutex> lock(mu_);
    std::time_t now = std::time(nullptr);
    char ts[32];
    std::strftime(ts, sizeof ts, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    nlohmann::json j = {{"request", req.to_json()}, {"response", response}, {"timestamp", ts}};
    const auto final_path = entry_path(hash);
    const auto tmp = dir_ / (hash + ".json.tmp");
    write_file(tmp, j.dump(2) + "\n");
    std::filesystem::rename(tmp, final_path);
  }

 private:
  std::filesystem::path dir_;
  std::mutex mu_;
};

/// A mock rule answers the requests it recognises and returns nullopt for the
/// rest. Rules must be pure functions of the request.
using MockRule = std::function<std::optional<std::string>(const ModelRequest&)>;

struct GatewayConfig {
  TransportMode mode = TransportMode::mock;
  // Upstream used by record mode. Only live or mock are meaningful.
  TransportMode record_upstream = TransportMode::live;
  std::filesystem::path cache_dir = "cache";
  std::string endpoint;
  std::string api_key;
  std::string model_name{kDefaultModel};
  int max_output = 1024;
  std::size_t max_in_flight = 4;
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::seconds timeout{120};

  /// Reads endpoint and credential from the environment. Never persisted.
  static GatewayConfig from_env(GatewayConfig base);
  static GatewayConfig from_env();
};

inline GatewayConfig GatewayConfig::from_env() { return from_env(GatewayConfig{}); }

inline GatewayConfig GatewayConfig::from_env(GatewayConfig base) {
  if (const char* e = std::getenv(kEndpointEnv)) base.endpoint = e;
  if (const char* k = std::getenv(kApiKeyEnv)) base.api_key = k;
  return base;
}

class Gateway {
 public:
  explicit Gateway(GatewayConfig cfg) : cfg_(std::move(cfg)), cache_(cfg_.cache_dir) {}

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  const GatewayConfig& config() const { return cfg_; }
  TransportMode mode() const { return cfg_.mode; }

  /// Later registrations take precedence over earlier ones.
  void register_mock(MockRule rule) {
    std::lock_guard<std::mutex> lock(rules_mu_);
    rules_.insert(rules_.begin(), std::move(rule));
  }

  ModelRequest make_request(std::string system_prompt, std::string user_prompt) const {
    ModelRequest r;
    r.system_prompt = std::move(system_prompt);
    r.user_prompt = std::move(user_prompt);
    r.max_output = cfg_.max_output;
    r.model_name = cfg_.model_name;
    return r;
  }

  std::string complete(const ModelRequest& req) {
    ++completions_;
    switch (cfg_.mode) {
      case TransportMode::mock:
        return run_mock(req);
      case TransportMode::replay: {
        const auto h = request_hash(req);
        if (auto hit = cache_.lookup(h)) return *hit;
        throw Error(ErrorCode::ReplayMiss, "no cached response for request " + h);
      }
      case TransportMode::live:
        return call_live(req);
      case TransportMode::record: {
        std::string resp = cfg_.record_upstream == TransportMode::mock ? run_mock(req) : call_live(req);
        cache_.store(request_hash(req), req, resp);
        return resp;
      }
    }
    throw Error(ErrorCode::GatewayError, "unhandled transport");
  }

  std::size_t completions() const { return completions_.load(); }
  std::size_t network_calls() const { return network_calls_.load(); }

 private:
  std::string run_mock(const ModelRequest& req) {
    std::vector<MockRule> rules;
    {
      std::lock_guard<std::mutex> lock(rules_mu_);
      rules = rules_;
    }
    for (const auto& rule : rules) {
      if (auto r = rule(req)) return *r;
    }
    throw Error(ErrorCode::GatewayError, "no mock rule matched the request");
  }

  struct EndpointParts {
    std::string origin;  // scheme://host[:port]
    std::string path;    // path prefix, no trailing slash
  };

  static EndpointParts split_endpoint(const std::string& url) {
    static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, kUrl)) {
      throw Error(ErrorCode::NetworkError, "malformed endpoint URL '" + url + "'");
    }
    std::string path = m[2].matched ? m[2].str() : "";
    while (!path.empty() && path.back() == '/') path.pop_back();
    return {m[1].str(), path};
  }

  class InFlightSlot {
   public:
    explicit InFlightSlot(Gateway& g) : g_(g) {
      std::unique_lock<std::mutex> lock(g_.slot_mu_);
      g_.slot_cv_.wait(lock, [&] { return g_.in_flight_ < std::max<std::size_t>(1, g_.cfg_.max_in_flight); });
      ++g_.in_flight_;
    }
    ~InFlightSlot() {
      {
        std::lock_guard<std::mutex> lock(g_.slot_mu_);
        --g_.in_flight_;
      }
      g_.slot_cv_.notify_one();
    }
    InFlightSlot(const InFlightSlot&) = delete;
    InFlightSlot& operator=(const InFlightSlot&) = delete;

   private:
    Gateway& g_;
  };

  std::string call_live(const ModelRequest& req) {
    if (cfg_.endpoint.empty() || cfg_.api_key.empty()) {
      throw Error(ErrorCode::CredentialMissing,
                  std::string("set ") + kEndpointEnv + " and " + kApiKeyEnv + " for live transport");
    }
    const auto ep = split_endpoint(cfg_.endpoint);
    nlohmann::json body = {
        {"model", req.model_name},
        {"messages",
         nlohmann::json::array({{{"role", "system"}, {"content", req.system_prompt}},
                                {{"role", "user"}, {"content", req.user_prompt}}})},
        {"temperature", ModelRequest::temperature},
        {"max_tokens", req.max_output},
        {"stream", false}};
    const std::string payload = body.dump();

    InFlightSlot slot(*this);
    httplib::Client cli(ep.origin);
    cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout).count());
    cli.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout).count());
    cli.set_bearer_token_auth(cfg_.api_key);

    auto backoff = cfg_.initial_backoff;
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      ++network_calls_;
      auto res = cli.Post(ep.path + "/chat/completions", payload, "application/json");
      if (!res) {
        last_error = "transport failure: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw Error(ErrorCode::NetworkError, "HTTP " + std::to_string(res->status) + ": " + res->body);
      }
      auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::GatewayError, "endpoint returned non-JSON body");
      try {
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::GatewayError, std::string("unexpected completion payload: ") + e.what());
      }
    }
    throw Error(ErrorCode::NetworkError, "giving up after retries: " + last_error);
  }

  GatewayConfig cfg_;
  ResponseCache cache_;
  std::mutex rules_mu_;
  std::vector<MockRule> rules_;
  std::mutex slot_mu_;
  std::condition_variable slot_cv_;
  std::size_t in_flight_ = 0;
  std::atomic<std::size_t> completions_{0};
  std::atomic<std::size_t> network_calls_{0};
};

// ---------------------------------------------------------------------------
// Grounded answering and judging

struct ContextItem {
  std::string label;         // canonical citation label
  std::string text;          // evidence text handed to the model
  double score = 0.0;        // fused retrieval score; 0 for non-retrieved context
  std::string component_id;  // source chunk or KG block
  std::string origin;        // "chunk", "kg" or "lookup"
};

inline std::string render_context(const std::vector<ContextItem>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    out += "<context id=\"" + std::to_string(i + 1) + "\" label=\"" + items[i].label + "\">\n";
    out += items[i].text;
    out += "\n</context>\n";
  }
  return out;
}

inline std::string evidence_instruction(bool require_evidence) {
  if (!require_evidence) return "";
  return "End the reply with one final line of the form \"CITATIONS: <label>; <label>\" listing the "
         "canonical labels (for example \"TS 24.501, Clause 5.5.1\") of the context items that "
         "support the answer.";
}

/// Splits a reply into its body and the labels on a trailing CITATIONS line.
/// A reply without that line yields an empty label list.
inline std::pair<std::string, std::vector<std::string>> split_citations(std::string_view reply) {
  std::vector<std::string> lines = text::split(reply, '\n');
  for (std::size_t i = lines.size(); i-- > 0;) {
    std::string_view t = text::trim(lines[i]);
    if (t.empty()) continue;
    if (text::starts_with_ci(t, "citations:")) {
      auto labels = parse_citation_list(t.substr(10));
      lines.erase(lines.begin() + static_cast<std::ptrdiff_t>(i));
      return {std::string(text::trim(text::join(lines, "\n"))), labels};
    }
    break;
  }
  return {std::string(text::trim(reply)), {}};
}

struct GroundedAnswer {
  std::string text;
  std::vector<std::string> cited_labels;
};

inline GroundedAnswer answer_with_context(Gateway& gw, const std::string& question,
                                          const std::vector<ContextItem>& context, bool require_evidence,
                                          const PromptSet& prompts = PromptSet::defaults()) {
  const auto& t = prompts.get("answer_open");
  auto req = gw.make_request(fill_template(t.system, {{"evidence_instruction", evidence_instruction(require_evidence)}}),
                             fill_template(t.user, {{"question", question}, {"context", render_context(context)}}));
  auto [body, labels] = split_citations(gw.complete(req));
  if (!require_evidence) labels.clear();
  return {body, labels};
}

struct JudgeVerdict {
  int score = 0;  // 0, 1 or 2
  std::string rationale;
};

/// First standalone 0/1/2 after a "SCORE" marker (case-insensitive).
inline std::optional<int> parse_judge_score(std::string_view reply) {
  const std::string lower = text::lower_ascii(reply);
  const std::size_t marker = lower.find("score");
  if (marker == std::string::npos) return std::nullopt;
  auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
  auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
  std::size_t i = marker + 5;
  while (i < lower.size()) {
    if (!is_word(lower[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < lower.size() && is_word(lower[j])) ++j;
    std::string_view tok = std::string_view(lower).substr(i, j - i);
    // "1.5" and "0.2" are decimals, not rubric scores
    const bool decimal_tail = j + 1 < lower.size() && lower[j] == '.' && is_digit(lower[j + 1]);
    const bool decimal_head = i >= 2 && lower[i - 1] == '.' && is_digit(lower[i - 2]);
    if (tok.size() == 1 && tok[0] >= '0' && tok[0] <= '2' && !decimal_tail && !decimal_head) {
      return tok[0] - '0';
    }
    i = j;
  }
  return std::nullopt;
}

/// Deterministically orders several candidate answers under neutral labels.
/// Single-candidate grading passes one element and gets it back unchanged.
inline std::vector<std::pair<std::string, std::string>> blind_candidates(std::vector<std::string> candidates,
                                                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    out.emplace_back(std::string("Answer ") + static_cast<char>('A' + i), std::move(candidates[i]));
  }
  return out;
}

inline std::string build_judge_user_prompt(const std::string& question, const std::string& candidate,
                                           const std::string& gold_answer,
                                           const std::optional<std::string>& gold_evidence,
                                           const PromptSet& prompts = PromptSet::defaults()) {
  std::string cands;
  for (const auto& [name, text] : blind_candidates({candidate}, 0)) {
    cands += "<candidate name=\"" + name + "\">\n" + text + "\n</candidate>\n";
  }
  return fill_template(prompts.get("judge").user, {{"question", question},
                                                   {"gold_answer", gold_answer},
                                                   {"gold_evidence", gold_evidence.value_or("(none)")},
                                                   {"candidates", cands}});
}

inline JudgeVerdict judge(Gateway& gw, const std::string& question, const std::string& candidate,
                          const std::string& gold_answer, const std::optional<std::string>& gold_evidence,
                          const PromptSet& prompts = PromptSet::defaults()) {
  if (text::trim(gold_answer).empty()) throw Error(ErrorCode::SchemaViolation, "judge needs a gold answer");
  auto req = gw.make_request(prompts.get("judge").system,
                             build_judge_user_prompt(question, candidate, gold_answer, gold_evidence, prompts));
  const std::string reply = gw.complete(req);
  auto score = parse_judge_score(reply);
  if (!score) throw Error(ErrorCode::UnparseableVerdict, "no SCORE token in judge reply");
  std::string rationale;
  if (auto pos = text::lower_ascii(reply).find("rationale:"); pos != std::string::npos) {
    rationale = std::string(text::trim(std::string_view(reply).substr(pos + 10)));
  }
  return {*score, rationale};
}

}  // namespace cellspec
