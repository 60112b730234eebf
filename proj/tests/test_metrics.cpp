#include <catch_amalgamated.hpp>

#include <map>
#include <random>

#include "oracles.hpp"

using namespace cellspec;
using testsupport::binary_oracle;
using testsupport::multilabel_oracle;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no cellspec::Error thrown");
  return ErrorCode::UsageError;
}

}  // namespace

TEST_CASE("binary F1 examples") {
  REQUIRE(binary_f1({true, false, true}, {true, false, true}) == 1.0);
  // TP=2, FP=1, FN=1
  REQUIRE(binary_f1({true, true, true, false, false}, {true, true, false, true, false}) ==
          Catch::Approx(0.666667).margin(1e-6));
  REQUIRE(binary_f1({false, false}, {true, true}) == 0.0);
  REQUIRE(binary_f1({}, {}) == 0.0);
  REQUIRE(code_of([] { binary_f1({true}, {true, false}); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("multilabel F1 examples") {
  auto perfect = multilabel_f1({{"replay"}, {"spoofing", "downgrade"}}, {{"replay"}, {"spoofing", "downgrade"}});
  REQUIRE(perfect.micro == 1.0);
  REQUIRE(perfect.macro == 1.0);

  auto single = multilabel_f1({{"spoofing"}, {}, {"spoofing", "replay"}}, {{"spoofing"}, {"spoofing"}, {"spoofing"}});
  REQUIRE(single.micro == Catch::Approx(single.macro).margin(1e-12));

  // Hand-pooled: a has TP=2 FP=1 FN=0, b has TP=1 FP=0 FN=1.
  std::vector<std::set<std::string>> pred = {{"a"}, {"a"}, {"a", "b"}};
  std::vector<std::set<std::string>> gold = {{"a"}, {"a", "b"}, {"b"}};
  auto m = multilabel_f1(pred, gold);
  REQUIRE(m.micro == Catch::Approx(6.0 / 8.0).margin(1e-12));
  REQUIRE(m.macro == Catch::Approx((0.8 + 2.0 / 3.0) / 2.0).margin(1e-12));

  // Instances without gold categories are not scored.
  pred.push_back({"a", "b"});
  gold.push_back({});
  auto m2 = multilabel_f1(pred, gold);
  REQUIRE(m2.micro == m.micro);
  REQUIRE(m2.macro == m.macro);

  REQUIRE(code_of([] { multilabel_f1({{"a"}}, {{}}); }) == ErrorCode::NoPositiveInstances);
  REQUIRE(code_of([] { multilabel_f1({{"a"}}, {{"a"}, {"b"}}); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("F1 matches a contingency-count oracle on random labels") {
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
    REQUIRE(std::abs(binary_f1(p, g) - binary_oracle(p, g)) <= 1e-9);

    std::vector<std::set<std::string>> mp(n), mg(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& c : cats) {
        if (coin(rng) && coin(rng)) mp[i].insert(c);
        if (coin(rng) && coin(rng)) mg[i].insert(c);
      }
    }
    if (std::all_of(mg.begin(), mg.end(), [](const auto& s) { return s.empty(); })) mg[0].insert("replay");
    auto got = multilabel_f1(mp, mg);
    auto want = multilabel_oracle(mp, mg);
    REQUIRE(std::abs(got.micro - want.micro) <= 1e-9);
    REQUIRE(std::abs(got.macro - want.macro) <= 1e-9);
    REQUIRE((got.micro >= 0.0 && got.micro <= 1.0 && got.macro >= 0.0 && got.macro <= 1.0));
  }
}

TEST_CASE("evidence scoring uses set semantics and normalization") {
  const std::vector<std::string> gold = {"TS 24.501, Clause 5.5.1", "TS 24.501, Clause 5.4.2"};
  REQUIRE(score_evidence({"TS 24.501, Clause 5.4.2", "TS 24.501, Clause 5.5.1"}, gold));
  REQUIRE_FALSE(score_evidence({"TS 24.501, Clause 5.5.1"}, gold));
  REQUIRE(score_evidence({" clause 5.5.1 "}, {"Clause 5.5.1"}));
  REQUIRE(score_evidence({"ts 24.501 ,  CLAUSE 5.5.1"}, {"TS 24.501, Clause 5.5.1"}));
  REQUIRE(score_evidence({"TS 24.501, Clause 10.2, Table 10.2.1"}, {"TS 24.501, Table 10.2.1"}));
}

TEST_CASE("strict evidence mode requires equal sets") {
  const std::vector<std::string> gold = {"TS 24.501, Clause 5.5.1"};
  REQUIRE(score_evidence({"ts 24.501, clause 5.5.1"}, gold, true));
  REQUIRE_FALSE(score_evidence({"TS 24.501, Clause 5.5.1", "TS 24.501, Clause 5.4.2"}, gold, true));
  REQUIRE(score_evidence({"TS 24.501, Clause 5.5.1", "TS 24.501, Clause 5.4.2"}, gold, false));
}

TEST_CASE("adding predicted labels never breaks a correct evidence set") {
  std::mt19937 rng(77);
  std::vector<std::string> pool;
  for (const char* c : {"5.4.2", "5.5.1", "5.5.2.2", "10.2", "9.11.3.20"}) pool.push_back(std::string("TS 24.501, Clause ") + c);
  pool.push_back("TS 24.501, Clause 10.2, Table 10.2.1");
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::string> pred, gold;
    for (const auto& l : pool) {
      if (coin(rng)) pred.push_back(l);
      if (coin(rng) && coin(rng)) gold.push_back(l);
    }
    const bool before = score_evidence(pred, gold);
    pred.push_back(pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]);
    if (before) REQUIRE(score_evidence(pred, gold));
  }
}
