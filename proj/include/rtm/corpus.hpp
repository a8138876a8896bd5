// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rtm/linkfn.hpp"
#include "rtm/matrix.hpp"

namespace rtm {

class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct TermCount {
  std::size_t term = 0;
  int count = 0;
  bool operator==(const TermCount&) const = default;
};

// Bag of words, terms sorted by id, each id at most once.
struct Document {
  std::vector<TermCount> terms;

  int length() const {
    int n = 0;
    for (const auto& t : terms) n += t.count;
    return n;
  }
  bool operator==(const Document&) const = default;
};

// Undirected link stored with first < second.
struct Link {
  std::size_t first = 0;
  std::size_t second = 0;
  auto operator<=>(const Link&) const = default;
};

inline Link make_link(std::size_t a, std::size_t b) {
  return a < b ? Link{a, b} : Link{b, a};
}

// Sorts terms and merges duplicate entries.
inline Document make_document(std::vector<TermCount> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const TermCount& x, const TermCount& y) { return x.term < y.term; });
  Document doc;
  for (const auto& e : entries) {
    if (!doc.terms.empty() && doc.terms.back().term == e.term)
      doc.terms.back().count += e.count;
    else
      doc.terms.push_back(e);
  }
  return doc;
}

// Documents over a shared vocabulary plus an undirected link set.
// Immutable once constructed.
class Corpus {
 public:
  Corpus() = default;

  Corpus(std::vector<std::string> vocab, std::vector<Document> docs,
         const std::vector<Link>& links)
      : vocab_(std::move(vocab)), docs_(std::move(docs)) {
    const std::size_t v = vocab_.size();
    for (std::size_t d = 0; d < docs_.size(); ++d) {
      const auto& doc = docs_[d];
      if (doc.terms.empty() || doc.length() < 1)
        throw Error("document " + std::to_string(d) + " has no tokens");
      for (std::size_t i = 0; i < doc.terms.size(); ++i) {
        if (doc.terms[i].term >= v)
          throw Error("document " + std::to_string(d) + ": term id " +
                      std::to_string(doc.terms[i].term) + " out of range (V=" +
                      std::to_string(v) + ")");
        if (doc.terms[i].count < 1)
          throw Error("document " + std::to_string(d) + ": non-positive count");
        if (i > 0 && doc.terms[i].term <= doc.terms[i - 1].term)
          throw Error("document " + std::to_string(d) + ": terms not sorted/unique");
      }
    }
    links_.reserve(links.size());
    for (const auto& raw : links) {
      if (raw.first == raw.second)
        throw Error("self-link on document " + std::to_string(raw.first));
      const Link l = make_link(raw.first, raw.second);
      if (l.second >= docs_.size())
        throw Error("link endpoint " + std::to_string(l.second) + " out of range (D=" +
                    std::to_string(docs_.size()) + ")");
      links_.push_back(l);
    }
    std::sort(links_.begin(), links_.end());
    links_.erase(std::unique(links_.begin(), links_.end()), links_.end());

    neighbors_.assign(docs_.size(), {});
    for (const auto& l : links_) {
      neighbors_[l.first].push_back(l.second);
      neighbors_[l.second].push_back(l.first);
    }
    for (auto& n : neighbors_) std::sort(n.begin(), n.end());
  }

  std::size_t num_docs() const { return docs_.size(); }
  std::size_t vocab_size() const { return vocab_.size(); }
  std::size_t num_links() const { return links_.size(); }

  const std::vector<std::string>& vocab() const { return vocab_; }
  const std::vector<Document>& docs() const { return docs_; }
  const Document& doc(std::size_t d) const { return docs_[d]; }
  const std::vector<Link>& links() const { return links_; }
  const std::vector<std::size_t>& neighbors(std::size_t d) const { return neighbors_[d]; }

  bool has_link(std::size_t a, std::size_t b) const {
    return std::binary_search(links_.begin(), links_.end(), make_link(a, b));
  }

  std::vector<std::size_t> isolated_documents() const {
    std::vector<std::size_t> out;
    for (std::size_t d = 0; d < docs_.size(); ++d)
      if (neighbors_[d].empty()) out.push_back(d);
    return out;
  }

  std::size_t num_tokens() const {
    std::size_t n = 0;
    for (const auto& d : docs_) n += static_cast<std::size_t>(d.length());
    return n;
  }

  bool operator==(const Corpus& o) const {
    return vocab_ == o.vocab_ && docs_ == o.docs_ && links_ == o.links_;
  }

 private:
  std::vector<std::string> vocab_;
  std::vector<Document> docs_;
  std::vector<Link> links_;
  std::vector<std::vector<std::size_t>> neighbors_;
};

// Restriction of a corpus to a subset of documents, keeping only links whose
// endpoints both survive. Indices are remapped to positions in `keep`.
inline Corpus subcorpus(const Corpus& corpus, const std::vector<std::size_t>& keep) {
  std::vector<std::size_t> remap(corpus.num_docs(), SIZE_MAX);
  std::vector<Document> docs;
  docs.reserve(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    remap[keep[i]] = i;
    docs.push_back(corpus.doc(keep[i]));
  }
  std::vector<Link> links;
  for (const auto& l : corpus.links()) {
    const std::size_t a = remap[l.first], b = remap[l.second];
    if (a != SIZE_MAX && b != SIZE_MAX) links.push_back(make_link(a, b));
  }
  return Corpus(corpus.vocab(), std::move(docs), links);
}

// Removes documents without links (the usual preprocessing for citation
// corpora). Returns the new corpus; `kept` receives the original indices.
inline Corpus drop_isolated(const Corpus& corpus, std::vector<std::size_t>* kept = nullptr) {
  std::vector<std::size_t> keep;
  for (std::size_t d = 0; d < corpus.num_docs(); ++d)
    if (!corpus.neighbors(d).empty()) keep.push_back(d);
  if (kept) *kept = keep;
  return subcorpus(corpus, keep);
}

// ---------------------------------------------------------------------------
// Text formats
//
//   documents: "M term:count term:count ..." one document per line
//   vocabulary: one token per line, id = line index
//   links: "d1 d2" per line

namespace detail {

inline bool blank(const std::string& s) {
  return s.find_first_not_of(" \t\r") == std::string::npos;
}

template <typename T>
bool parse_number(const std::string& tok, T& out) {
  if (tok.empty()) return false;
  for (char c : tok)
    if (c < '0' || c > '9') return false;
  try {
    const unsigned long long v = std::stoull(tok);
    out = static_cast<T>(v);
    return static_cast<unsigned long long>(out) == v;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace detail

inline std::vector<std::string> read_vocab(std::istream& in) {
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.push_back(line);
  }
  return vocab;
}

inline std::vector<Document> read_documents(std::istream& in, std::size_t vocab_size,
                                            const std::string& source = "documents") {
  std::vector<Document> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) throw ParseError(source, lineno, "zero-length document");
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    std::size_t m = 0;
    if (!detail::parse_number(tok, m))
      throw ParseError(source, lineno, "expected term count, got '" + tok + "'");
    std::vector<TermCount> entries;
    while (ss >> tok) {
      const auto colon = tok.find(':');
      TermCount tc;
      if (colon == std::string::npos ||
          !detail::parse_number(tok.substr(0, colon), tc.term) ||
          !detail::parse_number(tok.substr(colon + 1), tc.count))
        throw ParseError(source, lineno, "malformed entry '" + tok + "'");
      if (tc.term >= vocab_size)
        throw ParseError(source, lineno,
                         "term id " + std::to_string(tc.term) + " out of range (V=" +
                             std::to_string(vocab_size) + ")");
      if (tc.count < 1) throw ParseError(source, lineno, "count must be >= 1");
      entries.push_back(tc);
    }
    if (entries.size() != m)
      throw ParseError(source, lineno,
                       "declared " + std::to_string(m) + " entries, found " +
                           std::to_string(entries.size()));
    if (entries.empty()) throw ParseError(source, lineno, "zero-length document");
    docs.push_back(make_document(std::move(entries)));
  }
  return docs;
}

inline std::vector<Link> read_links(std::istream& in, std::size_t num_docs,
                                    const std::string& source = "links") {
  std::vector<Link> links;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    std::istringstream ss(line);
    std::string a_tok, b_tok, extra;
    std::size_t a = 0, b = 0;
    if (!(ss >> a_tok >> b_tok) || (ss >> extra) || !detail::parse_number(a_tok, a) ||
        !detail::parse_number(b_tok, b))
      throw ParseError(source, lineno, "expected 'd1 d2'");
    if (a >= num_docs || b >= num_docs)
      throw ParseError(source, lineno,
                       "document index out of range (D=" + std::to_string(num_docs) + ")");
    if (a == b) throw ParseError(source, lineno, "self-link on document " + std::to_string(a));
    links.push_back(make_link(a, b));
  }
  return links;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open file");
  return in;
}

// Loads and validates a corpus. Documents without links are kept; a warning
// naming how many there are goes to `diagnostics` when given.
inline Corpus load_corpus(const std::string& docs_path, const std::string& vocab_path,
                          const std::string& links_path,
                          std::ostream* diagnostics = nullptr) {
  auto vin = open_input(vocab_path);
  auto vocab = read_vocab(vin);
  auto din = open_input(docs_path);
  auto docs = read_documents(din, vocab.size(), docs_path);
  std::vector<Link> links;
  if (!links_path.empty()) {
    auto lin = open_input(links_path);
    links = read_links(lin, docs.size(), links_path);
  }
  Corpus corpus(std::move(vocab), std::move(docs), links);
  if (diagnostics) {
    const auto isolated = corpus.isolated_documents();
    if (!isolated.empty())
      *diagnostics << "warning: " << isolated.size() << " of " << corpus.num_docs()
                   << " documents have no links\n";
  }
  return corpus;
}

inline void write_documents(std::ostream& out, const Corpus& corpus) {
  for (const auto& doc : corpus.docs()) {
    out << doc.terms.size();
    for (const auto& t : doc.terms) out << ' ' << t.term << ':' << t.count;
    out << '\n';
  }
}

inline void write_vocab(std::ostream& out, const Corpus& corpus) {
  for (const auto& w : corpus.vocab()) out << w << '\n';
}

inline void write_links(std::ostream& out, const Corpus& corpus) {
  for (const auto& l : corpus.links()) out << l.first << ' ' << l.second << '\n';
}

inline void write_corpus(const Corpus& corpus, const std::string& docs_path,
                         const std::string& vocab_path, const std::string& links_path) {
  auto open = [](const std::string& p) {
    std::ofstream out(p);
    if (!out) throw IoError(p, "cannot write file");
    return out;
  };
  auto d = open(docs_path);
  write_documents(d, corpus);
  auto v = open(vocab_path);
  write_vocab(v, corpus);
  auto l = open(links_path);
  write_links(l, corpus);
}

// ---------------------------------------------------------------------------
// Cross-validation folds

struct FoldPlan {
  std::size_t num_folds = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> fold_of;  // per document

  std::vector<std::size_t> members(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t d = 0; d < fold_of.size(); ++d)
      if (fold_of[d] == fold) out.push_back(d);
    return out;
  }

  bool operator==(const FoldPlan&) const = default;
};

// Uniform random assignment with balanced sizes: a seeded shuffle dealt
// round-robin into k folds.
inline FoldPlan split_folds(const Corpus& corpus, std::size_t k, std::uint64_t seed) {
  const std::size_t d = corpus.num_docs();
  if (k < 2 || k > d)
    throw Error("number of folds must lie in [2, " + std::to_string(d) + "], got " +
                std::to_string(k));
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  FoldPlan plan{k, seed, std::vector<std::size_t>(d)};
  for (std::size_t i = 0; i < d; ++i) plan.fold_of[order[i]] = i % k;
  return plan;
}

// Training view for one fold: the test documents are removed together with
// every link that touches them.
struct FoldSplit {
  Corpus train;
  std::vector<std::size_t> train_ids;  // train index -> original index
  std::vector<std::size_t> test_ids;   // original indices
};

inline FoldSplit make_fold_split(const Corpus& corpus, const FoldPlan& plan,
                                 std::size_t fold) {
  FoldSplit split;
  for (std::size_t d = 0; d < corpus.num_docs(); ++d)
    (plan.fold_of[d] == fold ? split.test_ids : split.train_ids).push_back(d);
  split.train = subcorpus(corpus, split.train_ids);
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic corpora drawn from the generative process.

struct SyntheticConfig {
  std::size_t num_topics = 2;
  std::size_t vocab_size = 20;
  std::size_t num_docs = 50;
  std::size_t doc_length = 40;
  std::vector<double> alpha;  // size K
  LinkParams link;
  Matrix beta;                     // K x V; drawn from Dir(topic_concentration) if empty
  double topic_concentration = 0.1;
  std::uint64_t seed = 1;
};

struct SyntheticTruth {
  Matrix beta;
  std::vector<double> alpha;
  LinkParams link;
  Matrix theta;  // D x K
  Matrix zbar;   // D x K
};

template <typename Rng>
std::vector<double> sample_dirichlet(std::span<const double> alpha, Rng& rng) {
  std::vector<double> x(alpha.size());
  double total = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    std::gamma_distribution<double> g(alpha[i], 1.0);
    x[i] = g(rng);
    total += x[i];
  }
  if (!(total > 0.0)) {
    // every gamma draw underflowed; fall back to the dominant component
    std::fill(x.begin(), x.end(), 0.0);
    x[std::max_element(alpha.begin(), alpha.end()) - alpha.begin()] = 1.0;
    return x;
  }
  for (double& v : x) v /= total;
  return x;
}

template <typename Rng>
std::size_t sample_categorical(std::span<const double> p, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng) * sum(p);
  for (std::size_t i = 0; i < p.size(); ++i) {
    r -= p[i];
    if (r < 0.0) return i;
  }
  // rounding: return the last component with mass
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] > 0.0) return i;
  return p.size() - 1;
}

// One Bernoulli link draw for a pair of mean assignment vectors.
template <typename Rng>
bool draw_link(const LinkParams& params, std::span<const double> zbar_a,
               std::span<const double> zbar_b, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng) < link_probability(params, zbar_a, zbar_b);
}

inline std::pair<Corpus, SyntheticTruth> generate_synthetic(const SyntheticConfig& cfg) {
  const std::size_t k = cfg.num_topics, v = cfg.vocab_size, d = cfg.num_docs;
  if (k == 0 || v == 0 || d == 0 || cfg.doc_length == 0)
    throw Error("generate_synthetic: K, V, D and doc_length must be positive");
  if (cfg.alpha.size() != k) throw Error("generate_synthetic: alpha must have K entries");
  for (double a : cfg.alpha)
    if (!(a > 0.0)) throw Error("generate_synthetic: alpha must be positive");
  if (cfg.link.eta.size() != k) throw Error("generate_synthetic: eta must have K entries");
  check_admissible(cfg.link);

  std::mt19937_64 rng(cfg.seed);
  SyntheticTruth truth;
  truth.alpha = cfg.alpha;
  truth.link = cfg.link;
  if (cfg.beta.empty()) {
    truth.beta = Matrix(k, v);
    const std::vector<double> conc(v, cfg.topic_concentration);
    for (std::size_t t = 0; t < k; ++t) {
      auto row = sample_dirichlet<std::mt19937_64>(conc, rng);
      std::copy(row.begin(), row.end(), truth.beta.row(t).begin());
    }
  } else {
    if (cfg.beta.rows() != k || cfg.beta.cols() != v)
      throw Error("generate_synthetic: beta must be K x V");
    truth.beta = cfg.beta;
  }

  truth.theta = Matrix(d, k);
  truth.zbar = Matrix(d, k);
  std::vector<Document> docs;
  docs.reserve(d);
  for (std::size_t doc = 0; doc < d; ++doc) {
    auto theta = sample_dirichlet<std::mt19937_64>(cfg.alpha, rng);
    std::copy(theta.begin(), theta.end(), truth.theta.row(doc).begin());
    std::map<std::size_t, int> counts;
    for (std::size_t n = 0; n < cfg.doc_length; ++n) {
      const std::size_t z = sample_categorical<std::mt19937_64>(theta, rng);
      truth.zbar(doc, z) += 1.0 / static_cast<double>(cfg.doc_length);
      ++counts[sample_categorical<std::mt19937_64>(truth.beta.row(z), rng)];
    }
    Document out;
    for (const auto& [term, c] : counts) out.terms.push_back({term, c});
    docs.push_back(std::move(out));
  }

  std::vector<Link> links;
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a + 1; b < d; ++b)
      if (draw_link(cfg.link, truth.zbar.row(a), truth.zbar.row(b), rng))
        links.push_back({a, b});

  std::vector<std::string> vocab(v);
  for (std::size_t w = 0; w < v; ++w) vocab[w] = "w" + std::to_string(w);
  return {Corpus(std::move(vocab), std::move(docs), links), std::move(truth)};
}

}  // namespace rtm
