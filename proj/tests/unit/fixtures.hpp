// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <cmath>
#include <vector>

#include "rtm/corpus.hpp"
#include "rtm/model.hpp"

namespace fixtures {

inline rtm::Matrix matrix(const std::vector<std::vector<double>>& rows) {
  rtm::Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  return m;
}

inline rtm::ModelParams model(const std::vector<std::vector<double>>& beta,
                              std::vector<double> alpha, rtm::LinkParams link) {
  rtm::ModelParams p;
  p.log_beta = rtm::log_of(matrix(beta));
  p.alpha = std::move(alpha);
  p.link = std::move(link);
  return p;
}

inline std::vector<std::string> vocab(std::size_t v) {
  std::vector<std::string> out;
  for (std::size_t w = 0; w < v; ++w) out.push_back("w" + std::to_string(w));
  return out;
}

// K = 3, V = 30, 50 documents of 40 tokens from the generative process.
inline std::pair<rtm::Corpus, rtm::SyntheticTruth> synthetic50(rtm::LinkKind kind,
                                                               std::uint64_t seed = 5) {
  rtm::SyntheticConfig cfg;
  cfg.num_topics = 3;
  cfg.vocab_size = 30;
  cfg.num_docs = 50;
  cfg.doc_length = 40;
  cfg.alpha = {0.2, 0.2, 0.2};
  cfg.seed = seed;
  switch (kind) {
    case rtm::LinkKind::Exponential:
      cfg.link = {kind, {2.5, 2.5, 2.5}, -4.0};
      break;
    case rtm::LinkKind::Gaussian:
      cfg.link = {kind, {4.0, 4.0, 4.0}, 2.5};
      break;
    default:
      cfg.link = {kind, {8.0, 8.0, 8.0}, -5.5};
  }
  return rtm::generate_synthetic(cfg);
}

}  // namespace fixtures
