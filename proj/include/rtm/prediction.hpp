// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

// Predictions for documents that were not part of training: links from
// words, words from links, and the rank metrics used to score them.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include "rtm/corpus.hpp"
#include "rtm/estimation.hpp"
#include "rtm/inference.hpp"
#include "rtm/linkfn.hpp"
#include "rtm/model.hpp"

namespace rtm {

enum class Evidence { WordsOnly, LinksOnly };

struct HeldoutPosterior {
  Evidence evidence = Evidence::WordsOnly;
  std::vector<double> phi_bar;
  std::vector<double> var;
  std::vector<double> gamma;
  std::vector<double> phi;  // per distinct term (words) or the pseudo-token (links)
};

struct HeldoutOptions {
  double tol = 1e-8;
  int max_iterations = 200;
};

namespace detail {

inline HeldoutPosterior run_local(const ModelParams& params, std::span<const TermCount> terms,
                                  bool word_evidence, const std::vector<NeighborStats>& nbrs,
                                  Evidence evidence, const HeldoutOptions& opt) {
  const std::size_t k = params.num_topics();
  HeldoutPosterior h;
  h.evidence = evidence;
  h.phi.assign(terms.size() * k, 1.0 / static_cast<double>(k));
  h.gamma.resize(k);
  h.phi_bar.resize(k);
  h.var.resize(k);
  double n = 0.0;
  for (const auto& t : terms) n += t.count;
  for (std::size_t i = 0; i < k; ++i) h.gamma[i] = params.alpha[i] + n / static_cast<double>(k);
  document_moments(terms, h.phi, k, h.phi_bar, h.var);
  LocalDocument doc{terms, word_evidence, h.phi, h.gamma, h.phi_bar, h.var, n};
  InferenceCounters ctr;
  for (int it = 0; it < opt.max_iterations; ++it)
    if (sweep_document(params, params.alpha, doc, nbrs, ctr) < opt.tol) break;
  return h;
}

}  // namespace detail

// Posterior of a new document given only its words. No link terms enter.
inline HeldoutPosterior infer_words_only(const ModelParams& params, const Document& doc,
                                         const HeldoutOptions& opt = {}) {
  if (doc.terms.empty()) throw Error("infer_words_only: empty document");
  for (const auto& t : doc.terms)
    if (t.term >= params.vocab_size()) throw Error("infer_words_only: term id out of range");
  return detail::run_local(params, doc.terms, true, {}, Evidence::WordsOnly, opt);
}

// Posterior of a new document given only its links to training documents.
// The document is represented by one latent pseudo-token whose update has
// no word term. Link terms are used only by models that have them in
// inference; the baselines therefore fall back to the prior.
inline HeldoutPosterior infer_links_only(const ModelParams& params,
                                         const std::vector<NeighborStats>& neighbors,
                                         const HeldoutOptions& opt = {}) {
  if (neighbors.empty()) throw Error("infer_links_only: no links given");
  static const TermCount pseudo[1] = {TermCount{0, 1}};
  const auto nbrs = params.links_in_inference() ? neighbors : std::vector<NeighborStats>{};
  return detail::run_local(params, pseudo, false, nbrs, Evidence::LinksOnly, opt);
}

// A single pseudo-token update at fixed gamma.
inline std::vector<double> links_only_phi_step(const ModelParams& params,
                                               const std::vector<NeighborStats>& neighbors,
                                               std::span<const double> gamma,
                                               std::span<const double> current_phi) {
  static const TermCount pseudo[1] = {TermCount{0, 1}};
  const std::size_t k = params.num_topics();
  std::vector<double> phi(current_phi.begin(), current_phi.end());
  std::vector<double> g(gamma.begin(), gamma.end()), mean(phi), var(k);
  for (std::size_t i = 0; i < k; ++i) var[i] = phi[i] * (1.0 - phi[i]);
  const detail::LocalDocument doc{pseudo, false, phi, g, mean, var, 1.0};
  InferenceCounters ctr;
  auto e = detail::phi_exponent(params, doc, 0, expected_log_theta(gamma), neighbors, ctr);
  detail::softmax_inplace(e);
  return e;
}

// Approximate predictive link probability: psi at the posterior means for
// the hadamard kinds; for the gaussian kind the exact expected log, with
// variances, exponentiated.
inline double predict_link_prob(const ModelParams& params, const HeldoutPosterior& h,
                                const NeighborStats& train) {
  if (!params.scores_links()) throw Error("predict_link_prob: model has no link function");
  const auto& link = params.link;
  if (link.kind == LinkKind::Gaussian)
    return std::exp(expected_log_link(link, PairStat{h.phi_bar, train.mean, h.var, train.var}));
  const double x = linear_predictor(link, h.phi_bar, train.mean);
  switch (link.kind) {
    case LinkKind::Sigmoid: return sigmoid(x);
    case LinkKind::Probit: return normal_cdf(x);
    default: return std::exp(x);
  }
}

// p(w | links) ~ sum_k phi_k beta_kw for the pseudo-token.
inline std::vector<double> predict_word_dist(const ModelParams& params,
                                             const HeldoutPosterior& h) {
  const std::size_t k = params.num_topics(), v = params.vocab_size();
  const std::span<const double> phi =
      h.evidence == Evidence::LinksOnly ? std::span<const double>(h.phi) : h.phi_bar;
  std::vector<double> out(v, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t w = 0; w < v; ++w) out[w] += phi[i] * std::exp(params.log_beta(i, w));
  return out;
}

// ---------------------------------------------------------------------------
// Rank metrics. Rank 1 is the highest score; tied scores share the mean of
// the positions they occupy.

inline std::vector<double> average_ranks(std::span<const double> scores) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) ranks[order[m]] = r;
    i = j + 1;
  }
  return ranks;
}

// Indices of the top_k scores, descending, ties by index.
inline std::vector<std::size_t> top_indices(std::span<const double> scores, std::size_t top_k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(top_k, order.size()));
  return order;
}

struct DocRankRow {
  std::size_t doc = 0;  // index in the full corpus
  std::size_t true_links = 0;
  double link_rank = std::numeric_limits<double>::quiet_NaN();
  double precision = std::numeric_limits<double>::quiet_NaN();
  double word_rank = std::numeric_limits<double>::quiet_NaN();
};

struct RankReport {
  double mean_link_rank = std::numeric_limits<double>::quiet_NaN();
  double mean_word_rank = std::numeric_limits<double>::quiet_NaN();
  double precision_at_k = std::numeric_limits<double>::quiet_NaN();
  std::size_t top_k = 0;
  std::size_t docs_without_links = 0;
  std::vector<DocRankRow> rows;
};

struct EvalOptions {
  std::size_t top_k = 20;
  bool distinct_terms = false;  // word rank over distinct terms instead of tokens
  HeldoutOptions heldout;
};

// Mean rank of the true targets among the candidates' scores.
inline double mean_rank_of(std::span<const double> scores, std::span<const std::size_t> targets,
                           std::span<const double> weights = {}) {
  const auto ranks = average_ranks(scores);
  double s = 0.0, w = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double wi = weights.empty() ? 1.0 : weights[i];
    s += wi * ranks[targets[i]];
    w += wi;
  }
  return s / w;
}

// Evaluates one cross-validation fold. `train_state` holds the posteriors of
// split.train's documents under `params`. Link ranks score every training
// document from the test document's words; word ranks rank the vocabulary
// from the test document's links to training documents. Per-document values
// are averaged over the test documents that have links into the training set.
inline RankReport evaluate_fold(const ModelParams& params, const VariationalState& train_state,
                                const Corpus& full, const FoldSplit& split,
                                const EvalOptions& opt = {}) {
  RankReport report;
  report.top_k = opt.top_k;
  std::vector<std::size_t> train_index(full.num_docs(), SIZE_MAX);
  for (std::size_t i = 0; i < split.train_ids.size(); ++i) train_index[split.train_ids[i]] = i;

  const std::size_t c = split.train_ids.size();
  double link_sum = 0.0, prec_sum = 0.0, word_sum = 0.0;
  std::size_t link_n = 0, word_n = 0;
  std::vector<double> scores(c);

  for (std::size_t test : split.test_ids) {
    DocRankRow row;
    row.doc = test;
    std::vector<std::size_t> targets;
    for (std::size_t nb : full.neighbors(test))
      if (train_index[nb] != SIZE_MAX) targets.push_back(train_index[nb]);
    row.true_links = targets.size();
    if (targets.empty()) {
      ++report.docs_without_links;
      report.rows.push_back(row);
      continue;
    }

    if (params.scores_links()) {
      const auto h = infer_words_only(params, full.doc(test), opt.heldout);
      for (std::size_t j = 0; j < c; ++j)
        scores[j] = predict_link_prob(params, h,
                                      NeighborStats{train_state.phi_bar.row(j),
                                                    train_state.var_bar.row(j)});
      row.link_rank = mean_rank_of(scores, targets);
      std::size_t hits = 0;
      for (std::size_t j : top_indices(scores, opt.top_k))
        if (std::find(targets.begin(), targets.end(), j) != targets.end()) ++hits;
      row.precision = static_cast<double>(hits) /
                      static_cast<double>(std::min(opt.top_k, c));
      link_sum += row.link_rank;
      prec_sum += row.precision;
      ++link_n;
    }

    std::vector<NeighborStats> nbrs;
    for (std::size_t j : targets)
      nbrs.push_back({train_state.phi_bar.row(j), train_state.var_bar.row(j)});
    const auto h = infer_links_only(params, nbrs, opt.heldout);
    const auto dist = predict_word_dist(params, h);
    std::vector<std::size_t> words;
    std::vector<double> weights;
    for (const auto& t : full.doc(test).terms) {
      words.push_back(t.term);
      weights.push_back(opt.distinct_terms ? 1.0 : static_cast<double>(t.count));
    }
    row.word_rank = mean_rank_of(dist, words, weights);
    word_sum += row.word_rank;
    ++word_n;
    report.rows.push_back(row);
  }
  if (link_n) {
    report.mean_link_rank = link_sum / static_cast<double>(link_n);
    report.precision_at_k = prec_sum / static_cast<double>(link_n);
  }
  if (word_n) report.mean_word_rank = word_sum / static_cast<double>(word_n);
  return report;
}

// doc_id <TAB> metric <TAB> value, then a summary block.
inline void write_report(std::ostream& out, const RankReport& r) {
  out << std::setprecision(10);
  out << "doc_id\tmetric\tvalue\n";
  for (const auto& row : r.rows) {
    out << row.doc << "\ttrue_links\t" << row.true_links << '\n';
    if (!std::isnan(row.link_rank)) out << row.doc << "\tlink_rank\t" << row.link_rank << '\n';
    if (!std::isnan(row.precision))
      out << row.doc << "\tprecision_at_" << r.top_k << '\t' << row.precision << '\n';
    if (!std::isnan(row.word_rank)) out << row.doc << "\tword_rank\t" << row.word_rank << '\n';
  }
  out << "summary\tmean_link_rank\t" << r.mean_link_rank << '\n';
  out << "summary\tmean_word_rank\t" << r.mean_word_rank << '\n';
  out << "summary\tprecision_at_" << r.top_k << '\t' << r.precision_at_k << '\n';
  out << "summary\tdocs_without_links\t" << r.docs_without_links << '\n';
}

}  // namespace rtm
