#include <catch_amalgamated.hpp>

#include <atomic>
#include <random>

#include "cellspec/citation.hpp"
#include "cellspec/digest.hpp"
#include "cellspec/parallel.hpp"
#include "cellspec/text.hpp"

using namespace cellspec;

TEST_CASE("tokenize keeps dotted clause numbers whole and lower-cases") {
  auto t = text::tokenize("See Clause 5.5.1, then T3510. NAS-level");
  REQUIRE(t == std::vector<std::string>{"see", "clause", "5.5.1", "then", "t3510", "nas", "level"});
  REQUIRE(text::tokenize("5.5.2.2A") == std::vector<std::string>{"5.5.2.2a"});
  REQUIRE(text::tokenize("end.") == std::vector<std::string>{"end"});
  REQUIRE(text::tokenize("").empty());
}

TEST_CASE("tokenize folds non-ASCII letters") {
  auto t = text::tokenize("ÄMF Über");
  REQUIRE(t == std::vector<std::string>{"ämf", "über"});
}

TEST_CASE("decode_utf8 rejects or replaces invalid bytes") {
  const std::string bad = std::string("ok") + static_cast<char>(0xFF) + "x";
  REQUIRE_THROWS_MATCHES(text::decode_utf8(bad, false), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) {
                           return e.code() == ErrorCode::UndecodableInput;
                         }));
  REQUIRE(text::decode_utf8(bad, true) == "ok\xEF\xBF\xBDx");
  REQUIRE(text::decode_utf8("plain", false) == "plain");
}

TEST_CASE("whitespace helpers") {
  REQUIRE(text::collapse_ws("  a \t b\n\nc  ") == "a b c");
  REQUIRE(text::trim("\n x \t") == "x");
  REQUIRE(text::split("a,,b", ',') == std::vector<std::string>{"a", "", "b"});
  REQUIRE(text::join({"a", "b"}, "; ") == "a; b");
  REQUIRE(text::starts_with_ci("CITATIONS: x", "citations:"));
}

TEST_CASE("sentence spans protect dotted references and abbreviations") {
  auto count = [](std::string_view s) { return text::sentence_spans(s).size(); };
  REQUIRE(count("A. B.") == 2);
  REQUIRE(count("See clause 5.5.1 for details.") == 1);
  REQUIRE(count("Use e.g. the AMF. Then stop.") == 2);
  REQUIRE(count("First line\n\nSecond paragraph") == 2);
  REQUIRE(count("Ends with a question? Yes!") == 2);
}

TEST_CASE("paragraph spans tile non-blank text") {
  const std::string s = "  one\ntwo  \n\n\nthree\n";
  auto spans = text::paragraph_spans(s);
  REQUIRE(spans.size() == 2);
  REQUIRE(s.substr(spans[0].begin, spans[0].size()) == "one\ntwo");
  REQUIRE(s.substr(spans[1].begin, spans[1].size()) == "three");
}

TEST_CASE("citation rendering and parsing round-trip") {
  Citation c{"TS 24.501", "5.5.1", ""};
  REQUIRE(render_citation(c) == "TS 24.501, Clause 5.5.1");
  REQUIRE(parse_citation("TS 24.501, Clause 5.5.1") == c);
  Citation t{"TS 24.501", "10.2", "Table 10.2.1"};
  REQUIRE(render_citation(t) == "TS 24.501, Clause 10.2, Table 10.2.1");
  REQUIRE(parse_citation(render_citation(t)) == t);
  REQUIRE(parse_citation("ts 24.501 , clause   5.4.2") == Citation{"TS 24.501", "5.4.2", ""});
  REQUIRE(parse_citation("3GPP TS 24.501, Fig. 5.5.2.2.1") == Citation{"TS 24.501", "", "Figure 5.5.2.2.1"});
  REQUIRE_FALSE(parse_citation("random words").has_value());
}

TEST_CASE("canonicalize_label normalizes spacing and case") {
  REQUIRE(canonicalize_label(" clause 5.5.1 ") == "Clause 5.5.1");
  REQUIRE(canonicalize_label("TS  24.501,clause 5.5.1") == "TS 24.501, Clause 5.5.1");
  REQUIRE(canonicalize_label("  not   a label ") == "not a label");
}

TEST_CASE("parse_citation_list splits and expands plural clause lists") {
  auto v = parse_citation_list("TS 24.501, Clauses 5.5.1 and 5.4.2");
  REQUIRE(v == std::vector<std::string>{"TS 24.501, Clause 5.5.1", "TS 24.501, Clause 5.4.2"});
  auto w = parse_citation_list("TS 24.501, Clause 5.5.1; ts 24.501, clause 5.5.1\nTable 10.2.1");
  REQUIRE(w == std::vector<std::string>{"TS 24.501, Clause 5.5.1", "Table 10.2.1"});
  REQUIRE(parse_citation_list("  ").empty());
}

TEST_CASE("label_covers compares only the fields the gold label carries") {
  REQUIRE(label_covers("TS 24.501, Clause 10.2, Table 10.2.1", "TS 24.501, Table 10.2.1"));
  REQUIRE(label_covers("TS 24.501, Clause 5.5.1", "Clause 5.5.1"));
  REQUIRE_FALSE(label_covers("Clause 5.5.1", "TS 24.501, Clause 5.5.1"));
  REQUIRE_FALSE(label_covers("TS 24.501, Clause 5.5.1", "TS 24.501, Clause 5.5.1.1"));
  REQUIRE(label_covers("free text", " FREE  text"));
}

TEST_CASE("sha256 matches known vectors") {
  REQUIRE(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  REQUIRE(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("bounded_parallel_for writes by index and rethrows the lowest failure") {
  std::vector<int> out(100, 0);
  bounded_parallel_for(out.size(), 4, [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
  for (std::size_t i = 0; i < out.size(); ++i) REQUIRE(out[i] == static_cast<int>(i * i));

  std::atomic<int> calls{0};
  try {
    bounded_parallel_for(10, 3, [&](std::size_t i) {
      ++calls;
      if (i == 7 || i == 4) throw std::runtime_error("fail " + std::to_string(i));
    });
    FAIL("expected a throw");
  } catch (const std::runtime_error& e) {
    REQUIRE(std::string(e.what()) == "fail 4");
  }
  REQUIRE(calls == 10);
}
