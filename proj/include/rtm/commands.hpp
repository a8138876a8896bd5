// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

// Command implementations behind the rtm executable. Each returns a process
// exit code: 0 on success, 2 for unreadable inputs or bad arguments, 1 for
// any other failure. Diagnostics go to `err` as a single line.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rtm/baselines.hpp"
#include "rtm/corpus.hpp"
#include "rtm/estimation.hpp"
#include "rtm/evaluation.hpp"
#include "rtm/model.hpp"
#include "rtm/prediction.hpp"
#include "rtm/topics.hpp"

namespace rtm {

struct RunConfig {
  std::string docs, vocab, links, model, out, query;
  std::size_t topics = 10;
  double alpha_total = 1.0;
  std::string link_fn = "exponential";
  double rho = -1.0;  // negative: one pseudo non-link per observed link
  double l2 = 0.0;
  double smoothing = 0.01;
  std::uint64_t seed = 42;
  int em_iters = 50;
  double tol = 1e-5;
  std::size_t folds = 5;
  std::size_t top_k = 20;
  bool drop_isolated = false;
  bool verbose = false;
  bool distinct_terms = false;
  int threads = 1;

  // synthesize
  std::size_t vocab_size = 100;
  std::size_t num_docs = 100;
  std::size_t doc_length = 50;
  double eta = 6.0;
  double nu = -6.0;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

inline FitConfig fit_config(const RunConfig& rc) {
  FitConfig cfg;
  cfg.num_topics = rc.topics;
  cfg.alpha_total = rc.alpha_total;
  cfg.link_kind = parse_link_kind(rc.link_fn);
  cfg.reg.rho = rc.rho;
  cfg.reg.lambda = rc.l2;
  cfg.reg.smoothing = rc.smoothing;
  cfg.seed = rc.seed;
  cfg.em_iterations = rc.em_iters;
  cfg.tol = rc.tol;
  cfg.estep.threads = rc.threads;
  if (rc.topics < 1) throw UsageError("--topics must be at least 1");
  if (!(rc.alpha_total > 0.0)) throw UsageError("--alpha-total must be positive");
  if (!(rc.smoothing > 0.0)) throw UsageError("--smoothing must be positive");
  if (rc.l2 < 0.0) throw UsageError("--l2 must be non-negative");
  if (rc.em_iters < 1) throw UsageError("--em-iters must be at least 1");
  if (!(rc.tol > 0.0)) throw UsageError("--tol must be positive");
  if (rc.threads < 1) throw UsageError("--threads must be at least 1");
  return cfg;
}

inline Corpus load_run_corpus(const RunConfig& rc, std::ostream& err) {
  if (rc.docs.empty() || rc.vocab.empty()) throw UsageError("--docs and --vocab are required");
  Corpus c = load_corpus(rc.docs, rc.vocab, rc.links, &err);
  if (rc.drop_isolated) c = drop_isolated(c);
  return c;
}

template <typename Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

inline int cmd_fit(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (rc.model.empty()) throw UsageError("--model is required");
    FitConfig cfg = fit_config(rc);
    const Corpus corpus = load_run_corpus(rc, err);
    if (rc.verbose) {
      cfg.estep.trace = &err;
      cfg.trace = &err;
    }
    const FittedModel m = fit(corpus, cfg);
    save_model(rc.model, m.params);
    out << std::setprecision(12) << "elbo\t" << m.elbo_trace.back() << '\n'
        << "objective\t" << m.objective_trace.back() << '\n'
        << "iterations\t" << m.iterations << '\n';
    return 0;
  });
}

// Top words per topic by the frequency-corrected score.
inline int cmd_report_topics(const RunConfig& rc, std::size_t top_n, std::ostream& out,
                             std::ostream& err) {
  return guarded(err, [&] {
    if (rc.model.empty()) throw UsageError("--model is required");
    const ModelParams p = load_model(rc.model);
    std::vector<std::string> vocab;
    if (!rc.vocab.empty()) {
      auto in = open_input(rc.vocab);
      vocab = read_vocab(in);
      if (vocab.size() != p.vocab_size())
        throw Error("vocabulary size " + std::to_string(vocab.size()) +
                    " does not match the model (" + std::to_string(p.vocab_size()) + ")");
    }
    out << std::setprecision(8) << "topic\trank\tterm\tscore\n";
    const auto top = top_topic_words(p, top_n);
    for (std::size_t k = 0; k < top.size(); ++k)
      for (std::size_t r = 0; r < top[k].size(); ++r) {
        const auto& sw = top[k][r];
        out << k << '\t' << r + 1 << '\t'
            << (vocab.empty() ? std::to_string(sw.term) : vocab[sw.term]) << '\t' << sw.score
            << '\n';
      }
    return 0;
  });
}

struct LinkSuggestion {
  std::size_t doc = 0;
  double score = 0.0;
};

// Training documents most likely to link to a new document with the given
// words, best first, ties by document index.
inline std::vector<LinkSuggestion> suggest_links(const ModelParams& params,
                                                 const VariationalState& train_state,
                                                 const Document& words, std::size_t top_k) {
  if (words.terms.empty()) throw Error("suggest_links: empty word list");
  const auto h = infer_words_only(params, words);
  const std::size_t d = train_state.phi_bar.rows();
  std::vector<double> scores(d);
  for (std::size_t j = 0; j < d; ++j)
    scores[j] = predict_link_prob(
        params, h, NeighborStats{train_state.phi_bar.row(j), train_state.var_bar.row(j)});
  std::vector<LinkSuggestion> out;
  for (std::size_t j : top_indices(scores, top_k)) out.push_back({j, scores[j]});
  return out;
}

inline int cmd_suggest_links(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (rc.model.empty() || rc.query.empty())
      throw UsageError("--model and --query are required");
    const ModelParams p = load_model(rc.model);
    if (!p.scores_links()) throw Error("model kind " + model_kind_tag(p) + " cannot score links");
    const Corpus corpus = load_run_corpus(rc, err);
    if (corpus.vocab_size() != p.vocab_size())
      throw Error("corpus vocabulary does not match the model");
    auto qin = open_input(rc.query);
    const auto queries = read_documents(qin, p.vocab_size(), rc.query);
    EStepOptions opt;
    opt.threads = rc.threads;
    const auto state = infer_posteriors(corpus, p, rc.seed, opt);
    out << std::setprecision(10) << "query\trank\tdoc_id\tscore\n";
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const auto s = suggest_links(p, state, queries[q], rc.top_k);
      for (std::size_t r = 0; r < s.size(); ++r)
        out << q << '\t' << r + 1 << '\t' << s[r].doc << '\t' << s[r].score << '\n';
    }
    return 0;
  });
}

inline int cmd_eval(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (rc.out.empty()) throw UsageError("--out directory is required");
    if (rc.folds < 2) throw UsageError("--folds must be at least 2");
    FitConfig cfg = fit_config(rc);
    const Corpus corpus = load_run_corpus(rc, err);
    CrossValidationOptions opt;
    opt.folds = rc.folds;
    opt.fold_seed = rc.seed;
    opt.eval.top_k = rc.top_k;
    opt.eval.distinct_terms = rc.distinct_terms;
    const auto res = cross_validate(corpus, cfg, opt);

    std::filesystem::create_directories(rc.out);
    for (const auto& model : res.models) {
      for (std::size_t f = 0; f < rc.folds; ++f) {
        const auto path = (std::filesystem::path(rc.out) /
                           ("fold" + std::to_string(f) + "." + model + ".tsv"))
                              .string();
        std::ofstream o(path);
        if (!o) throw IoError(path, "cannot write file");
        write_report(o, res.reports.at(model)[f]);
      }
    }
    const auto summary_path = (std::filesystem::path(rc.out) / "summary.tsv").string();
    std::ofstream s(summary_path);
    if (!s) throw IoError(summary_path, "cannot write file");
    for (std::ostream* o : {static_cast<std::ostream*>(&s), &out}) {
      *o << std::setprecision(10) << "model\tmetric\tvalue\n";
      for (const auto& model : res.models) {
        *o << model << "\tmean_link_rank\t" << res.mean(model, &RankReport::mean_link_rank) << '\n';
        *o << model << "\tmean_word_rank\t" << res.mean(model, &RankReport::mean_word_rank) << '\n';
        *o << model << "\tprecision_at_" << rc.top_k << '\t'
           << res.mean(model, &RankReport::precision_at_k) << '\n';
      }
    }
    return 0;
  });
}

// Writes a synthetic corpus (docs.txt, vocab.txt, links.txt) into --out.
inline int cmd_synthesize(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (rc.out.empty()) throw UsageError("--out directory is required");
    SyntheticConfig sc;
    sc.num_topics = rc.topics;
    sc.vocab_size = rc.vocab_size;
    sc.num_docs = rc.num_docs;
    sc.doc_length = rc.doc_length;
    sc.alpha = symmetric_alpha(rc.topics, rc.alpha_total);
    sc.link = LinkParams{parse_link_kind(rc.link_fn), std::vector<double>(rc.topics, rc.eta),
                         rc.nu};
    sc.seed = rc.seed;
    const auto [corpus, truth] = generate_synthetic(sc);
    std::filesystem::create_directories(rc.out);
    const std::filesystem::path dir(rc.out);
    write_corpus(corpus, (dir / "docs.txt").string(), (dir / "vocab.txt").string(),
                 (dir / "links.txt").string());
    out << "documents\t" << corpus.num_docs() << "\nlinks\t" << corpus.num_links() << '\n';
    return 0;
  });
}

}  // namespace rtm
