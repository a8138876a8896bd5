// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

// k-fold held-out evaluation of the RTM against the baselines. Each fold's
// test documents are removed, with their links, before fitting.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "rtm/baselines.hpp"
#include "rtm/corpus.hpp"
#include "rtm/estimation.hpp"
#include "rtm/prediction.hpp"

namespace rtm {

struct CrossValidationResult {
  FoldPlan plan;
  std::vector<std::string> models;  // "rtm", "lda_regression", "lda", "unigram"
  // reports[model][fold]
  std::map<std::string, std::vector<RankReport>> reports;

  // Mean over folds of the per-fold means, skipping folds without a value.
  double mean(const std::string& model, double RankReport::*field) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : reports.at(model)) {
      const double v = r.*field;
      if (!std::isnan(v)) {
        s += v;
        ++n;
      }
    }
    return n ? s / static_cast<double>(n) : std::nan("");
  }
};

struct CrossValidationOptions {
  std::size_t folds = 5;
  std::uint64_t fold_seed = 42;
  bool include_baselines = true;
  EvalOptions eval;
};

inline CrossValidationResult cross_validate(const Corpus& corpus, const FitConfig& cfg,
                                            const CrossValidationOptions& opt = {}) {
  CrossValidationResult res;
  res.plan = split_folds(corpus, opt.folds, opt.fold_seed);
  res.models = {"rtm"};
  if (opt.include_baselines) res.models.insert(res.models.end(), {"lda_regression", "lda", "unigram"});

  for (std::size_t f = 0; f < opt.folds; ++f) {
    const FoldSplit split = make_fold_split(corpus, res.plan, f);
    FitConfig rtm_cfg = cfg;
    rtm_cfg.model_links = true;
    const FittedModel rtm = fit(split.train, rtm_cfg);
    res.reports["rtm"].push_back(evaluate_fold(rtm.params, rtm.state, corpus, split, opt.eval));
    if (!opt.include_baselines) continue;

    // LDA+Regression shares its first stage with plain LDA.
    const FittedModel lda_reg = fit_lda_regression(split.train, cfg);
    ModelParams lda = lda_reg.params;
    lda.model = ModelKind::Lda;
    res.reports["lda_regression"].push_back(
        evaluate_fold(lda_reg.params, lda_reg.state, corpus, split, opt.eval));
    res.reports["lda"].push_back(evaluate_fold(lda, lda_reg.state, corpus, split, opt.eval));

    const ModelParams uni = unigram(split.train, cfg.reg.smoothing);
    const auto uni_state = init_state(split.train, 1, uni.alpha, 0, 0.0);
    res.reports["unigram"].push_back(evaluate_fold(uni, uni_state, corpus, split, opt.eval));
  }
  return res;
}

}  // namespace rtm
