#pragma once

// Hybrid sparse/dense retrieval over specification chunks.
//
// Sparse: Okapi BM25 over token postings,
//   idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))
//   s_sp   = sum over distinct query terms t of
//            idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avglen))
// Dense: log-scaled TF-IDF rows, tf' = 1 + ln(tf), idf' = ln((1 + N) / (1 + df)) + 1,
//   L2-normalized, projected on the top right singular vectors of the chunk
//   matrix; s_de is the cosine of the projections (0 if either is zero).
// Fusion: per-query min-max normalization of both scores over all candidates,
//   then alpha * sparse + (1 - alpha) * dense. Ties break on component id.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cellspec/citation.hpp"
#include "cellspec/corpus.hpp"
#include "cellspec/digest.hpp"
#include "cellspec/error.hpp"
#include "cellspec/text.hpp"

namespace cellspec {

inline constexpr std::string_view kIndexSchemaVersion = "cellspec-index/1";
inline constexpr std::size_t kDefaultSvdDim = 256;

struct RetrievalConfig {
  double alpha = 0.5;
  std::size_t k = 8;
  double bm25_k1 = 1.2;
  double bm25_b = 0.75;
  // Unset means min(256, #chunks, vocabulary size). An explicit value larger
  // than either bound is rejected at build time.
  std::optional<std::size_t> svd_dim;
  std::set<ComponentKind> kinds = {ComponentKind::text, ComponentKind::table, ComponentKind::figure};

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::OutOfRangeInput, "alpha must lie in [0,1]");
    if (k < 1) throw Error(ErrorCode::OutOfRangeInput, "k must be at least 1");
    if (!(bm25_k1 >= 0.0) || !(bm25_b >= 0.0 && bm25_b <= 1.0)) {
      throw Error(ErrorCode::OutOfRangeInput, "bm25 parameters out of range");
    }
    if (svd_dim && *svd_dim == 0) throw Error(ErrorCode::OutOfRangeInput, "svd_dim must be positive");
    if (kinds.empty()) throw Error(ErrorCode::OutOfRangeInput, "empty chunk kind filter");
  }
};

/// One retrievable unit: a corpus component or a KG block.
struct Chunk {
  std::string id;
  ComponentKind kind = ComponentKind::text;
  std::string spec_id;
  std::string clause_id;
  std::optional<std::string> label;
  std::string content;     // text handed to the model as evidence
  std::string index_text;  // text that is tokenized and scored

  std::string citation() const {
    return render_citation({spec_id, clause_id, kind == ComponentKind::text ? "" : label.value_or("")});
  }
};

/// Readable rendering of a component: text as-is, tables and figures from
/// their structured description.
inline std::string component_text(const SpecComponent& c) {
  if (c.kind == ComponentKind::text) return c.content;
  auto j = nlohmann::json::parse(c.content, nullptr, false);
  if (j.is_discarded()) return c.content;
  std::string out = j.value("identifier", "") + ": " + j.value("caption", "") + "\n" + j.value("description", "");
  if (c.kind == ComponentKind::table && j.contains("rows")) {
    for (const auto& row : j["rows"]) {
      std::vector<std::string> cells;
      for (const auto& cell : row) cells.push_back(cell.get<std::string>());
      out += "\n" + text::join(cells, " | ");
    }
  } else if (c.kind == ComponentKind::figure) {
    if (j.contains("elements")) {
      std::vector<std::string> els;
      for (const auto& e : j["elements"]) els.push_back(e.get<std::string>());
      out += "\nElements: " + text::join(els, ", ");
    }
    if (j.contains("flows")) {
      for (const auto& f : j["flows"]) {
        out += "\n" + f.value("from", "") + " -> " + f.value("to", "");
        if (f.contains("label") && f["label"].is_string() && !f["label"].get<std::string>().empty()) {
          out += " (" + f["label"].get<std::string>() + ")";
        }
      }
    }
  }
  return out;
}

/// Chunks for the component-space index. Index text is prefixed with the
/// clause id and title so clause-level queries can match.
inline std::vector<Chunk> chunks_from_space(const ComponentSpace& space, const std::set<ComponentKind>& kinds) {
  std::vector<Chunk> out;
  for (const auto& c : space.components) {
    if (!kinds.count(c.kind)) continue;
    Chunk ch;
    ch.id = c.component_id;
    ch.kind = c.kind;
    ch.spec_id = c.spec_id;
    ch.clause_id = c.clause_id;
    ch.label = c.label;
    ch.content = component_text(c);
    std::string header = "Clause " + c.clause_id;
    if (auto it = space.clause_titles.find(title_key(c.spec_id, c.clause_id)); it != space.clause_titles.end()) {
      header += " " + it->second;
    }
    ch.index_text = header + "\n" + ch.content;
    out.push_back(std::move(ch));
  }
  return out;
}

struct Posting {
  std::uint32_t chunk = 0;
  std::uint32_t tf = 0;
  bool operator==(const Posting&) const = default;
};

struct ScoreBreakdown {
  double sparse_raw = 0.0;
  double dense_raw = 0.0;
  double sparse_norm = 0.0;
  double dense_norm = 0.0;
  double fused = 0.0;
};

struct EvidenceItem {
  std::string component_id;
  ComponentKind kind = ComponentKind::text;
  std::string spec_id;
  std::string clause_id;
  std::string label;  // citation label
  std::string content;
  ScoreBreakdown scores;
};

struct EvidenceSet {
  std::string query;
  std::vector<EvidenceItem> items;
  std::size_t m() const { return items.size(); }
};

inline double hybrid_score(double sparse_norm, double dense_norm, double alpha) {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(sparse_norm) || !in_unit(dense_norm) || !in_unit(alpha)) {
    throw Error(ErrorCode::OutOfRangeInput, "hybrid_score inputs must lie in [0,1]");
  }
  return alpha * sparse_norm + (1.0 - alpha) * dense_norm;
}

/// Min-max normalization: max -> 1, min -> 0; all-equal inputs map to 0.
inline std::vector<double> min_max_normalize(const std::vector<double>& v) {
  std::vector<double> out(v.size(), 0.0);
  if (v.empty()) return out;
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::clamp((v[i] - *lo) / range, 0.0, 1.0);
  }
  return out;
}

class HybridIndex;
HybridIndex build_index(std::vector<Chunk> chunks, const RetrievalConfig& cfg);
void save_index(const HybridIndex& index, const std::filesystem::path& dir);
HybridIndex load_index(const std::filesystem::path& dir);

/// Immutable after construction; const member functions are safe to call
/// from several threads.
class HybridIndex {
 public:
  const std::vector<Chunk>& chunks() const { return chunks_; }
  std::size_t size() const { return chunks_.size(); }
  std::size_t svd_dim() const { return svd_dim_; }
  std::size_t vocabulary_size() const { return terms_.size(); }
  const std::vector<std::string>& terms() const { return terms_; }
  const RetrievalConfig& build_config() const { return cfg_; }
  double average_length() const { return avgdl_; }
  std::uint64_t chunk_length(std::size_t i) const { return chunk_len_.at(i); }
  std::uint64_t document_frequency(std::size_t term) const { return df_.at(term); }
  const std::vector<Posting>& postings(std::size_t term) const { return postings_.at(term); }
  const std::vector<double>& tfidf_idf() const { return idf_; }
  /// Row-major vocabulary x svd_dim projection basis.
  const std::vector<double>& basis() const { return basis_; }
  /// Row-major chunk x svd_dim projected vectors.
  const std::vector<double>& projected() const { return projected_; }

  std::optional<std::size_t> term_index(std::string_view t) const {
    auto it = term_ids_.find(std::string(t));
    if (it == term_ids_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t chunk_index(std::string_view id) const {
    auto it = chunk_ids_.find(std::string(id));
    if (it == chunk_ids_.end()) throw Error(ErrorCode::UnknownChunk, "no chunk '" + std::string(id) + "'");
    return it->second;
  }

  double bm25_idf(std::size_t term) const {
    const double n = static_cast<double>(chunks_.size());
    const double df = static_cast<double>(df_[term]);
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
  }

  /// BM25 of every chunk for the distinct terms of `query_tokens`.
  std::vector<double> sparse_scores(const std::vector<std::string>& query_tokens) const {
    std::vector<double> scores(chunks_.size(), 0.0);
    std::set<std::string> distinct(query_tokens.begin(), query_tokens.end());
    for (const auto& t : distinct) {
      auto ti = term_index(t);
      if (!ti) continue;
      const double idf = bm25_idf(*ti);
      for (const auto& p : postings_[*ti]) scores[p.chunk] += bm25_term(idf, p.tf, chunk_len_[p.chunk]);
    }
    return scores;
  }

  double sparse_score(const std::vector<std::string>& query_tokens, std::string_view chunk_id) const {
    const std::size_t ci = chunk_index(chunk_id);
    double s = 0.0;
    std::set<std::string> distinct(query_tokens.begin(), query_tokens.end());
    for (const auto& t : distinct) {
      auto ti = term_index(t);
      if (!ti) continue;
      const auto& plist = postings_[*ti];
      auto it = std::lower_bound(plist.begin(), plist.end(), ci,
                                 [](const Posting& p, std::size_t c) { return p.chunk < c; });
      if (it == plist.end() || it->chunk != ci) continue;
      s += bm25_term(bm25_idf(*ti), it->tf, chunk_len_[ci]);
    }
    return s;
  }

  /// Projection of a text into the latent space (zero vector when no token
  /// is in the vocabulary).
  std::vector<double> project(std::string_view text) const { return project_tokens(text::tokenize(text)); }

  std::vector<double> project_tokens(const std::vector<std::string>& tokens) const {
    std::map<std::size_t, std::uint32_t> tf;
    for (const auto& t : tokens)
      if (auto ti = term_index(t)) ++tf[*ti];
    return project_counts(tf);
  }

  std::vector<double> dense_scores(std::string_view query_text) const {
    const auto q = project(query_text);
    std::vector<double> out(chunks_.size(), 0.0);
    for (std::size_t i = 0; i < chunks_.size(); ++i) out[i] = cosine(q, chunk_vector(i));
    return out;
  }

  double dense_score(std::string_view query_text, std::string_view chunk_id) const {
    const std::size_t ci = chunk_index(chunk_id);
    return cosine(project(query_text), chunk_vector(ci));
  }

  std::vector<double> chunk_vector(std::size_t i) const {
    return {projected_.begin() + static_cast<std::ptrdiff_t>(i * svd_dim_),
            projected_.begin() + static_cast<std::ptrdiff_t>((i + 1) * svd_dim_)};
  }

  static double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    // Inputs are projections of unit vectors, so a norm below 1e-12 is
    // rounding noise from the SVD and counts as the zero vector.
    if (na < 1e-24 || nb < 1e-24) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
  }

 private:
  friend HybridIndex build_index(std::vector<Chunk> chunks, const RetrievalConfig& cfg);
  friend void save_index(const HybridIndex& index, const std::filesystem::path& dir);
  friend HybridIndex load_index(const std::filesystem::path& dir);

  double bm25_term(double idf, std::uint32_t tf, std::uint64_t len) const {
    const double k1 = cfg_.bm25_k1, b = cfg_.bm25_b;
    const double f = static_cast<double>(tf);
    const double norm = avgdl_ > 0.0 ? static_cast<double>(len) / avgdl_ : 0.0;
    return idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * norm));
  }

  // L2-normalized log-scaled TF-IDF vector times the basis.
  std::vector<double> project_counts(const std::map<std::size_t, std::uint32_t>& tf) const {
    std::vector<double> out(svd_dim_, 0.0);
    double norm2 = 0.0;
    std::vector<std::pair<std::size_t, double>> w;
    w.reserve(tf.size());
    for (const auto& [t, f] : tf) {
      const double v = (1.0 + std::log(static_cast<double>(f))) * idf_[t];
      w.emplace_back(t, v);
      norm2 += v * v;
    }
    if (norm2 == 0.0) return out;
    const double inv = 1.0 / std::sqrt(norm2);
    for (const auto& [t, v] : w) {
      const double* row = &basis_[t * svd_dim_];
      for (std::size_t d = 0; d < svd_dim_; ++d) out[d] += v * inv * row[d];
    }
    return out;
  }

  void rebuild_lookups() {
    term_ids_.clear();
    for (std::size_t i = 0; i < terms_.size(); ++i) term_ids_[terms_[i]] = i;
    chunk_ids_.clear();
    for (std::size_t i = 0; i < chunks_.size(); ++i) chunk_ids_[chunks_[i].id] = i;
  }

  RetrievalConfig cfg_;
  std::vector<Chunk> chunks_;  // sorted by id
  std::vector<std::string> terms_;  // sorted
  std::vector<std::uint64_t> df_;
  std::vector<std::vector<Posting>> postings_;
  std::vector<std::uint64_t> chunk_len_;
  double avgdl_ = 0.0;
  std::vector<double> idf_;
  std::size_t svd_dim_ = 0;
  std::vector<double> basis_;
  std::vector<double> projected_;
  std::unordered_map<std::string, std::size_t> term_ids_;
  std::unordered_map<std::string, std::size_t> chunk_ids_;
};

namespace detail {

// Top `dim` right singular vectors of X (rows x cols) as a cols x dim matrix.
// Uses the eigendecomposition of whichever Gram matrix is smaller. Directions
// with a numerically zero singular value are left as zero columns. Each
// column's largest-magnitude entry is made positive.
inline Eigen::MatrixXd top_right_singular_vectors(const Eigen::MatrixXd& x, std::size_t dim) {
  const auto rows = x.rows(), cols = x.cols();
  const auto d = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(cols, d);
  if (rows <= cols) {
    Eigen::MatrixXd g = x * x.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
    const auto& evals = es.eigenvalues();  // ascending
    const double top = std::max(0.0, evals(rows - 1));
    for (Eigen::Index j = 0; j < d; ++j) {
      const Eigen::Index src = rows - 1 - j;
      const double lambda = evals(src);
      if (!(lambda > top * 1e-20) || lambda <= 0.0) continue;
      v.col(j) = x.transpose() * es.eigenvectors().col(src) / std::sqrt(lambda);
    }
  } else {
    Eigen::MatrixXd g = x.transpose() * x;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
    const auto& evals = es.eigenvalues();
    const double top = std::max(0.0, evals(cols - 1));
    for (Eigen::Index j = 0; j < d; ++j) {
      const Eigen::Index src = cols - 1 - j;
      const double lambda = evals(src);
      if (!(lambda > top * 1e-20) || lambda <= 0.0) continue;
      v.col(j) = es.eigenvectors().col(src);
    }
  }
  for (Eigen::Index j = 0; j < d; ++j) {
    Eigen::Index arg = 0;
    double best = 0.0;
    for (Eigen::Index i = 0; i < cols; ++i) {
      if (std::abs(v(i, j)) > best + 1e-12) {
        best = std::abs(v(i, j));
        arg = i;
      }
    }
    if (v(arg, j) < 0.0) v.col(j) *= -1.0;
  }
  return v;
}

}  // namespace detail

/// Builds the index. Chunks are reordered by id so the result does not
/// depend on insertion order.
inline HybridIndex build_index(std::vector<Chunk> chunks, const RetrievalConfig& cfg) {
  cfg.validate();
  chunks.erase(std::remove_if(chunks.begin(), chunks.end(), [&](const Chunk& c) { return !cfg.kinds.count(c.kind); }),
               chunks.end());
  if (chunks.empty()) throw Error(ErrorCode::EmptyCorpus, "no chunks to index after kind filtering");
  std::sort(chunks.begin(), chunks.end(), [](const Chunk& a, const Chunk& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < chunks.size(); ++i) {
    if (chunks[i].id == chunks[i - 1].id) throw Error(ErrorCode::SchemaViolation, "duplicate chunk id " + chunks[i].id);
  }

  HybridIndex idx;
  idx.cfg_ = cfg;
  idx.chunks_ = std::move(chunks);
  const std::size_t n = idx.chunks_.size();

  std::vector<std::map<std::string, std::uint32_t>> counts(n);
  std::set<std::string> vocab;
  idx.chunk_len_.resize(n);
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto toks = text::tokenize(idx.chunks_[i].index_text);
    idx.chunk_len_[i] = toks.size();
    total += toks.size();
    for (auto& t : toks) {
      ++counts[i][t];
      vocab.insert(std::move(t));
    }
  }
  idx.avgdl_ = static_cast<double>(total) / static_cast<double>(n);
  idx.terms_.assign(vocab.begin(), vocab.end());
  idx.rebuild_lookups();
  const std::size_t v = idx.terms_.size();

  const std::size_t cap = std::min(n, v);
  if (cfg.svd_dim && *cfg.svd_dim > cap) {
    throw Error(ErrorCode::SvdDimTooLarge, "svd_dim " + std::to_string(*cfg.svd_dim) + " exceeds min(#chunks=" +
                                               std::to_string(n) + ", vocabulary=" + std::to_string(v) + ")");
  }
  idx.svd_dim_ = cfg.svd_dim ? *cfg.svd_dim : std::min(kDefaultSvdDim, cap);
  idx.cfg_.svd_dim = idx.svd_dim_;

  idx.df_.assign(v, 0);
  idx.postings_.assign(v, {});
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& [t, f] : counts[i]) {
      const std::size_t ti = *idx.term_index(t);
      ++idx.df_[ti];
      idx.postings_[ti].push_back({static_cast<std::uint32_t>(i), f});
    }
  }

  idx.idf_.resize(v);
  for (std::size_t t = 0; t < v; ++t) {
    idx.idf_[t] = std::log((1.0 + static_cast<double>(n)) / (1.0 + static_cast<double>(idx.df_[t]))) + 1.0;
  }

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(v));
  for (std::size_t i = 0; i < n; ++i) {
    double norm2 = 0.0;
    for (const auto& [t, f] : counts[i]) {
      const std::size_t ti = *idx.term_index(t);
      const double w = (1.0 + std::log(static_cast<double>(f))) * idx.idf_[ti];
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(ti)) = w;
      norm2 += w * w;
    }
    if (norm2 > 0.0) x.row(static_cast<Eigen::Index>(i)) /= std::sqrt(norm2);
  }
  const Eigen::MatrixXd basis = detail::top_right_singular_vectors(x, idx.svd_dim_);
  idx.basis_.resize(v * idx.svd_dim_);
  for (std::size_t t = 0; t < v; ++t)
    for (std::size_t d = 0; d < idx.svd_dim_; ++d)
      idx.basis_[t * idx.svd_dim_ + d] = basis(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d));

  idx.projected_.resize(n * idx.svd_dim_);
  for (std::size_t i = 0; i < n; ++i) {
    std::map<std::size_t, std::uint32_t> tf;
    for (const auto& [t, f] : counts[i]) tf[*idx.term_index(t)] = f;
    auto p = idx.project_counts(tf);
    std::copy(p.begin(), p.end(), idx.projected_.begin() + static_cast<std::ptrdiff_t>(i * idx.svd_dim_));
  }
  return idx;
}

inline HybridIndex build_index(const ComponentSpace& space, const RetrievalConfig& cfg) {
  return build_index(chunks_from_space(space, cfg.kinds), cfg);
}

/// Top-k evidence for `query`. Uses alpha, k and kinds from `cfg`; BM25
/// parameters and svd_dim are those the index was built with.
inline EvidenceSet retrieve(const HybridIndex& index, const std::string& query, const RetrievalConfig& cfg) {
  cfg.validate();
  const auto tokens = text::tokenize(query);
  if (tokens.empty()) throw Error(ErrorCode::EmptyQuery, "query has no tokens");

  const auto sparse = index.sparse_scores(tokens);
  const auto dense = index.dense_scores(query);
  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < index.size(); ++i)
    if (cfg.kinds.count(index.chunks()[i].kind)) cand.push_back(i);

  std::vector<double> sp, de;
  sp.reserve(cand.size());
  de.reserve(cand.size());
  for (auto i : cand) {
    sp.push_back(sparse[i]);
    de.push_back(dense[i]);
  }
  const auto spn = min_max_normalize(sp);
  const auto den = min_max_normalize(de);

  std::vector<std::pair<double, std::size_t>> ranked;  // (fused, position in cand)
  ranked.reserve(cand.size());
  for (std::size_t j = 0; j < cand.size(); ++j) ranked.emplace_back(hybrid_score(spn[j], den[j], cfg.alpha), j);
  const std::size_t take = std::min(cfg.k, ranked.size());
  auto by_score = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return index.chunks()[cand[a.second]].id < index.chunks()[cand[b.second]].id;
  };
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(), by_score);

  EvidenceSet ev;
  ev.query = query;
  for (std::size_t r = 0; r < take; ++r) {
    const std::size_t j = ranked[r].second;
    const Chunk& c = index.chunks()[cand[j]];
    ev.items.push_back({c.id, c.kind, c.spec_id, c.clause_id, c.citation(), c.content,
                        {sp[j], de[j], spn[j], den[j], ranked[r].first}});
  }
  return ev;
}

inline nlohmann::json evidence_to_json(const EvidenceSet& ev) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : ev.items) {
    items.push_back({{"component", it.component_id},
                     {"kind", to_string(it.kind)},
                     {"label", it.label},
                     {"content", it.content},
                     {"scores",
                      {{"sparse_raw", it.scores.sparse_raw},
                       {"dense_raw", it.scores.dense_raw},
                       {"sparse_norm", it.scores.sparse_norm},
                       {"dense_norm", it.scores.dense_norm},
                       {"fused", it.scores.fused}}}});
  }
  return {{"query", ev.query}, {"m", ev.m()}, {"items", items}};
}

// ---------------------------------------------------------------------------
// Persistence. An index directory holds:
//   config.json   build configuration and dimensions
//   chunks.jsonl  one chunk per line, index order
//   sparse.bin    little-endian:
//                   char[8] "CSSPARSE", u32 version (1), u64 n_chunks,
//                   u64 n_terms, f64 avg_length, u64 length[n_chunks],
//                   then per term in sorted order:
//                   u32 byte_len, bytes, u64 df, u64 n_postings,
//                   n_postings x (u32 chunk, u32 tf)
//   dense.bin     n_chunks x svd_dim f64, row-major, little-endian, no header
//   basis.bin     n_terms f64 TF-IDF idf weights, then
//                 n_terms x svd_dim f64 basis, row-major, little-endian

namespace detail {

class LeWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    u64(bits);
  }
  void bytes(std::string_view s) { buf_.append(s); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class LeReader {
 public:
  explicit LeReader(std::string data) : data_(std::move(data)) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw Error(ErrorCode::SchemaViolation, "truncated index file");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

inline nlohmann::json kinds_to_json(const std::set<ComponentKind>& kinds) {
  nlohmann::json a = nlohmann::json::array();
  for (auto k : kinds) a.push_back(to_string(k));
  return a;
}

}  // namespace detail

inline nlohmann::json retrieval_config_to_json(const RetrievalConfig& c) {
  return {{"alpha", c.alpha},
          {"k", c.k},
          {"bm25_k1", c.bm25_k1},
          {"bm25_b", c.bm25_b},
          {"svd_dim", c.svd_dim ? nlohmann::json(*c.svd_dim) : nlohmann::json(nullptr)},
          {"kinds", detail::kinds_to_json(c.kinds)}};
}

inline nlohmann::json chunk_to_json(const Chunk& c) {
  return {{"component_id", c.id},
          {"kind", to_string(c.kind)},
          {"spec_id", c.spec_id},
          {"clause_id", c.clause_id},
          {"label", c.label ? nlohmann::json(*c.label) : nlohmann::json(nullptr)},
          {"content", c.content},
          {"index_text", c.index_text}};
}

inline void save_index(const HybridIndex& index, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json cfg = retrieval_config_to_json(index.cfg_);
  cfg["schema_version"] = kIndexSchemaVersion;
  cfg["n_chunks"] = index.size();
  cfg["n_terms"] = index.vocabulary_size();
  write_file(dir / "config.json", cfg.dump(2) + "\n");

  std::string chunks;
  for (const auto& c : index.chunks_) chunks += chunk_to_json(c).dump() + "\n";
  write_file(dir / "chunks.jsonl", chunks);

  detail::LeWriter sp;
  sp.bytes("CSSPARSE");
  sp.u32(1);
  sp.u64(index.size());
  sp.u64(index.vocabulary_size());
  sp.f64(index.avgdl_);
  for (auto len : index.chunk_len_) sp.u64(len);
  for (std::size_t t = 0; t < index.terms_.size(); ++t) {
    sp.u32(static_cast<std::uint32_t>(index.terms_[t].size()));
    sp.bytes(index.terms_[t]);
    sp.u64(index.df_[t]);
    sp.u64(index.postings_[t].size());
    for (const auto& p : index.postings_[t]) {
      sp.u32(p.chunk);
      sp.u32(p.tf);
    }
  }
  write_file(dir / "sparse.bin", sp.str());

  detail::LeWriter de;
  for (double d : index.projected_) de.f64(d);
  write_file(dir / "dense.bin", de.str());

  detail::LeWriter ba;
  for (double d : index.idf_) ba.f64(d);
  for (double d : index.basis_) ba.f64(d);
  write_file(dir / "basis.bin", ba.str());
}

inline HybridIndex load_index(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw Error(ErrorCode::IoError, "index directory not found: " + dir.string());
  HybridIndex idx;
  auto cfg = nlohmann::json::parse(read_file(dir / "config.json"));
  if (cfg.value("schema_version", "") != kIndexSchemaVersion) {
    throw Error(ErrorCode::SchemaViolation, "unsupported index schema in " + dir.string());
  }
  idx.cfg_.alpha = cfg.at("alpha").get<double>();
  idx.cfg_.k = cfg.at("k").get<std::size_t>();
  idx.cfg_.bm25_k1 = cfg.at("bm25_k1").get<double>();
  idx.cfg_.bm25_b = cfg.at("bm25_b").get<double>();
  idx.cfg_.svd_dim = cfg.at("svd_dim").get<std::size_t>();
  idx.cfg_.kinds.clear();
  for (const auto& k : cfg.at("kinds")) idx.cfg_.kinds.insert(parse_kind(k.get<std::string>()));
  idx.svd_dim_ = *idx.cfg_.svd_dim;
  const auto n = cfg.at("n_chunks").get<std::size_t>();
  const auto v = cfg.at("n_terms").get<std::size_t>();

  for (const auto& line : text::split(read_file(dir / "chunks.jsonl"), '\n')) {
    if (text::trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line);
    Chunk c;
    c.id = j.at("component_id").get<std::string>();
    c.kind = parse_kind(j.at("kind").get<std::string>());
    c.spec_id = j.at("spec_id").get<std::string>();
    c.clause_id = j.at("clause_id").get<std::string>();
    if (!j.at("label").is_null()) c.label = j.at("label").get<std::string>();
    c.content = j.at("content").get<std::string>();
    c.index_text = j.at("index_text").get<std::string>();
    idx.chunks_.push_back(std::move(c));
  }
  if (idx.chunks_.size() != n) throw Error(ErrorCode::SchemaViolation, "chunk count mismatch in " + dir.string());

  detail::LeReader sp(read_file(dir / "sparse.bin"));
  if (sp.bytes(8) != "CSSPARSE" || sp.u32() != 1) throw Error(ErrorCode::SchemaViolation, "bad sparse.bin header");
  if (sp.u64() != n || sp.u64() != v) throw Error(ErrorCode::SchemaViolation, "sparse.bin dimensions mismatch");
  idx.avgdl_ = sp.f64();
  idx.chunk_len_.resize(n);
  for (auto& len : idx.chunk_len_) len = sp.u64();
  idx.terms_.resize(v);
  idx.df_.resize(v);
  idx.postings_.resize(v);
  for (std::size_t t = 0; t < v; ++t) {
    idx.terms_[t] = sp.bytes(sp.u32());
    idx.df_[t] = sp.u64();
    idx.postings_[t].resize(sp.u64());
    for (auto& p : idx.postings_[t]) {
      p.chunk = sp.u32();
      p.tf = sp.u32();
    }
  }
  if (!sp.done()) throw Error(ErrorCode::SchemaViolation, "trailing bytes in sparse.bin");

  detail::LeReader de(read_file(dir / "dense.bin"));
  idx.projected_.resize(n * idx.svd_dim_);
  for (auto& d : idx.projected_) d = de.f64();
  if (!de.done()) throw Error(ErrorCode::SchemaViolation, "dense.bin size mismatch");

  detail::LeReader ba(read_file(dir / "basis.bin"));
  idx.idf_.resize(v);
  for (auto& d : idx.idf_) d = ba.f64();
  idx.basis_.resize(v * idx.svd_dim_);
  for (auto& d : idx.basis_) d = ba.f64();
  if (!ba.done()) throw Error(ErrorCode::SchemaViolation, "basis.bin size mismatch");

  idx.rebuild_lookups();
  return idx;
}

}  // namespace cellspec
