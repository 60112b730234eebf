#pragma once

// UTF-8 handling, tokenization and span-based text splitting shared by the
// corpus, retrieval and bench modules.

#include <algorithm>
#include <array>
#include <cctype>
#include <clocale>
#include <cstddef>
#include <cstdint>
#include <locale.h>
#include <string>
#include <string_view>
#include <utility>
#include <vector>
#include <wctype.h>

#include "cellspec/error.hpp"

namespace cellspec::text {

/// Half-open byte range [begin, end) into some owning string.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const Span&) const = default;
};

namespace detail {

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Decodes one code point at `pos`. Returns {code point, byte length}; length 0
// marks an invalid sequence.
inline std::pair<char32_t, std::size_t> decode_at(std::string_view s, std::size_t pos) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  if (b0 < 0x80) return {b0, 1};
  std::size_t len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {0, 0};
  }
  if (pos + len > s.size()) return {0, 0};
  for (std::size_t i = 1; i < len; ++i) {
    const auto b = static_cast<unsigned char>(s[pos + i]);
    if ((b & 0xC0) != 0x80) return {0, 0};
    cp = (cp << 6) | (b & 0x3F);
  }
  // Reject overlong forms, surrogates and out-of-range values.
  static constexpr std::array<char32_t, 5> kMin = {0, 0, 0x80, 0x800, 0x10000};
  if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return {0, 0};
  return {cp, len};
}

class CharClass {
 public:
  static const CharClass& instance() {
    static const CharClass cc;
    return cc;
  }
  bool is_alnum(char32_t cp) const {
    if (cp < 0x80) return std::isalnum(static_cast<int>(cp)) != 0;
    if (loc_ == nullptr) return true;
    return iswalnum_l(static_cast<wint_t>(cp), loc_) != 0;
  }
  char32_t to_lower(char32_t cp) const {
    if (cp < 0x80) return static_cast<char32_t>(std::tolower(static_cast<int>(cp)));
    if (loc_ == nullptr) return cp;
    return static_cast<char32_t>(towlower_l(static_cast<wint_t>(cp), loc_));
  }
  ~CharClass() {
    if (loc_ != nullptr) freelocale(loc_);
  }
  CharClass(const CharClass&) = delete;
  CharClass& operator=(const CharClass&) = delete;

 private:
  CharClass() {
    loc_ = newlocale(LC_CTYPE_MASK, "C.UTF-8", static_cast<locale_t>(nullptr));
    if (loc_ == nullptr) loc_ = newlocale(LC_CTYPE_MASK, "C.utf8", static_cast<locale_t>(nullptr));
  }
  locale_t loc_ = nullptr;
};

}  // namespace detail

/// Validates UTF-8. Invalid sequences are replaced with U+FFFD when `lossy`,
/// otherwise UndecodableInput is thrown.
inline std::string decode_utf8(std::string_view bytes, bool lossy) {
  std::string out;
  out.reserve(bytes.size());
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    auto [cp, len] = detail::decode_at(bytes, pos);
    if (len == 0) {
      if (!lossy) {
        throw Error(ErrorCode::UndecodableInput,
                    "invalid UTF-8 sequence at byte offset " + std::to_string(pos));
      }
      detail::append_utf8(out, 0xFFFD);
      ++pos;
      continue;
    }
    out.append(bytes.substr(pos, len));
    pos += len;
  }
  return out;
}

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string_view trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

inline std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string upper_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

/// Trims and collapses every whitespace run to a single space.
inline std::string collapse_ws(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending = false;
  for (char c : trim(s)) {
    if (is_space(c)) {
      pending = true;
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  return lower_ascii(s.substr(0, prefix.size())) == lower_ascii(prefix);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

/// Lowercased word tokens. A token is a maximal run of Unicode alphanumerics;
/// a '.' joins two runs when the run before it ends in an all-digit segment
/// and a digit follows, so clause references like "5.5.1" stay whole.
inline std::vector<std::string> tokenize(std::string_view s) {
  const auto& cc = detail::CharClass::instance();
  std::vector<std::string> tokens;
  std::string cur;
  bool segment_all_digits = true;
  std::size_t pos = 0;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(std::move(cur));
    cur.clear();
    segment_all_digits = true;
  };
  while (pos < s.size()) {
    auto [cp, len] = detail::decode_at(s, pos);
    if (len == 0) {
      flush();
      ++pos;
      continue;
    }
    if (cc.is_alnum(cp)) {
      if (!(cp >= '0' && cp <= '9')) segment_all_digits = false;
      detail::append_utf8(cur, cc.to_lower(cp));
    } else if (cp == '.' && !cur.empty() && segment_all_digits && pos + 1 < s.size() &&
               s[pos + 1] >= '0' && s[pos + 1] <= '9') {
      cur.push_back('.');
      // next segment starts fresh
      segment_all_digits = true;
    } else {
      flush();
    }
    pos += len;
  }
  flush();
  return tokens;
}

/// Paragraph spans: maximal blocks of non-blank lines, each trimmed to its
/// first and last non-whitespace byte.
inline std::vector<Span> paragraph_spans(std::string_view s) {
  std::vector<Span> out;
  std::size_t line_start = 0;
  std::size_t para_begin = std::string_view::npos;
  std::size_t para_end = 0;
  auto close = [&] {
    if (para_begin != std::string_view::npos) out.push_back({para_begin, para_end});
    para_begin = std::string_view::npos;
  };
  while (line_start <= s.size()) {
    std::size_t nl = s.find('\n', line_start);
    std::size_t line_end = nl == std::string_view::npos ? s.size() : nl;
    std::string_view line = s.substr(line_start, line_end - line_start);
    std::string_view t = trim(line);
    if (t.empty()) {
      close();
    } else {
      std::size_t b = line_start + static_cast<std::size_t>(t.data() - line.data());
      if (para_begin == std::string_view::npos) para_begin = b;
      para_end = b + t.size();
    }
    if (nl == std::string_view::npos) break;
    line_start = nl + 1;
  }
  close();
  return out;
}

namespace detail {

inline bool is_protected_abbreviation(std::string_view word) {
  static constexpr std::array<std::string_view, 16> kAbbrev = {
      "e.g", "i.e", "etc", "cf", "vs", "fig", "figs", "no", "nos", "approx",
      "incl", "ref", "sec", "subcl", "viz", "resp"};
  const std::string w = lower_ascii(word);
  return std::find(kAbbrev.begin(), kAbbrev.end(), w) != kAbbrev.end();
}

}  // namespace detail

/// Sentence spans within `s`. A sentence ends at '.', '!' or '?' (plus any
/// closing quotes or brackets) followed by whitespace or end of text, and at
/// every paragraph break. A period never splits when it is part of a dotted
/// token ("5.5.1", "e.g."), follows a listed abbreviation, or is followed by
/// a lowercase letter.
inline std::vector<Span> sentence_spans(std::string_view s) {
  std::vector<Span> out;
  for (const Span& para : paragraph_spans(s)) {
    std::size_t begin = para.begin;
    std::size_t i = para.begin;
    while (i < para.end) {
      const char c = s[i];
      if (c == '.' || c == '!' || c == '?') {
        std::size_t term_end = i + 1;
        while (term_end < para.end &&
               (s[term_end] == '"' || s[term_end] == '\'' || s[term_end] == ')' ||
                s[term_end] == ']'))
          ++term_end;
        const bool at_end = term_end >= para.end;
        const bool ws_follows = !at_end && is_space(s[term_end]);
        bool split_here = at_end || ws_follows;
        if (split_here && !at_end && c == '.') {
          std::size_t w = i;
          while (w > begin && !is_space(s[w - 1])) --w;
          std::string_view word = s.substr(w, i - w);
          if (detail::is_protected_abbreviation(word)) split_here = false;
          std::size_t n = term_end;
          while (n < para.end && is_space(s[n])) ++n;
          if (n < para.end && std::islower(static_cast<unsigned char>(s[n]))) split_here = false;
        }
        if (split_here) {
          out.push_back({begin, term_end});
          std::size_t n = term_end;
          while (n < para.end && is_space(s[n])) ++n;
          begin = n;
          i = n;
          continue;
        }
      }
      ++i;
    }
    if (begin < para.end) {
      std::string_view rest = trim(s.substr(begin, para.end - begin));
      if (!rest.empty()) {
        std::size_t b = static_cast<std::size_t>(rest.data() - s.data());
        out.push_back({b, b + rest.size()});
      }
    }
  }
  return out;
}

inline std::size_t count_sentences(std::string_view s) { return sentence_spans(s).size(); }

}  // namespace cellspec::text
