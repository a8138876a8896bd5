// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

// Comparators: LDA, LDA followed by a logistic regression on the links, and
// a corpus-wide unigram distribution.

#include <cmath>
#include <vector>

#include "rtm/corpus.hpp"
#include "rtm/estimation.hpp"
#include "rtm/model.hpp"

namespace rtm {

// LDA is the RTM pipeline with the link terms switched off.
inline FittedModel fit_lda(const Corpus& corpus, FitConfig cfg) {
  cfg.model_links = false;
  return fit(corpus, cfg);
}

// Two stages: LDA, then a sigmoid link regression on pi_bar of the frozen
// LDA posteriors, regularised like the RTM. The first stage is not revisited.
inline FittedModel fit_lda_regression(const Corpus& corpus, FitConfig cfg) {
  FittedModel out = fit_lda(corpus, cfg);
  out.params.model = ModelKind::LdaRegression;
  out.params.link = initial_link(LinkKind::Sigmoid, cfg.num_topics);
  if (corpus.num_links() > 0) {
    out.params.link = fit_link_sigmoid_probit(
        LinkKind::Sigmoid, link_pi_bars(corpus, out.state), cfg.reg.rho_for(corpus.num_links()),
        cfg.reg.lambda, out.params.alpha, out.params.link, cfg.ascent);
  }
  return out;
}

// Smoothed corpus term frequencies as a one-topic model.
inline ModelParams unigram(const Corpus& corpus, double smoothing) {
  if (corpus.num_docs() == 0) throw Error("unigram: empty corpus");
  const std::size_t v = corpus.vocab_size();
  std::vector<double> counts(v, smoothing);
  for (const auto& d : corpus.docs())
    for (const auto& t : d.terms) counts[t.term] += t.count;
  const double total = sum(counts);
  ModelParams p;
  p.model = ModelKind::Unigram;
  p.alpha = {1.0};
  p.smoothing = smoothing;
  p.link = LinkParams{LinkKind::Sigmoid, {0.0}, 0.0};
  p.log_beta = Matrix(1, v);
  for (std::size_t w = 0; w < v; ++w) p.log_beta(0, w) = std::log(counts[w] / total);
  return p;
}

}  // namespace rtm
