// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "rtm/model.hpp"

namespace rtm {

// score_kw = beta_kw (log beta_kw - mean_k' log beta_k'w). Words common to
// every topic score near zero.
inline Matrix topic_word_scores(const ModelParams& params) {
  const std::size_t k = params.num_topics(), v = params.vocab_size();
  Matrix scores(k, v);
  for (std::size_t w = 0; w < v; ++w) {
    double mean_log = 0.0;
    for (std::size_t i = 0; i < k; ++i) mean_log += params.log_beta(i, w);
    mean_log /= static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) {
      const double lb = params.log_beta(i, w);
      scores(i, w) = std::exp(lb) * (lb - mean_log);
    }
  }
  return scores;
}

struct ScoredWord {
  std::size_t term = 0;
  double score = 0.0;
};

// Top n words of every topic by descending score, ties by term id.
inline std::vector<std::vector<ScoredWord>> top_topic_words(const ModelParams& params,
                                                            std::size_t n) {
  const Matrix scores = topic_word_scores(params);
  std::vector<std::vector<ScoredWord>> out(params.num_topics());
  for (std::size_t i = 0; i < params.num_topics(); ++i) {
    std::vector<std::size_t> order(params.vocab_size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores(i, a) > scores(i, b); });
    order.resize(std::min(n, order.size()));
    for (std::size_t w : order) out[i].push_back({w, scores(i, w)});
  }
  return out;
}

}  // namespace rtm
