// Apache License, Version 2.0, refer to LICENSE.txt

#include <iostream>

#include "CLI11.hpp"
#include "rtm/commands.hpp"

namespace {

void corpus_flags(CLI::App* app, rtm::RunConfig& rc, bool links = true) {
  app->add_option("--docs", rc.docs, "document file (term:count lines)");
  app->add_option("--vocab", rc.vocab, "vocabulary file, one term per line");
  if (links) app->add_option("--links", rc.links, "link file, one 'a b' pair per line");
  app->add_flag("--drop-isolated", rc.drop_isolated, "remove documents without links");
}

void fit_flags(CLI::App* app, rtm::RunConfig& rc) {
  app->add_option("--topics", rc.topics, "number of topics")->capture_default_str();
  app->add_option("--alpha-total", rc.alpha_total, "symmetric Dirichlet mass")
      ->capture_default_str();
  app->add_option("--link-fn", rc.link_fn, "sigmoid | exponential | probit | gaussian")
      ->capture_default_str();
  app->add_option("--rho", rc.rho, "pseudo non-link count (default: number of links)");
  app->add_option("--l2", rc.l2, "l2 penalty on eta")->capture_default_str();
  app->add_option("--smoothing", rc.smoothing, "topic pseudocount")->capture_default_str();
  app->add_option("--seed", rc.seed, "random seed")->capture_default_str();
  app->add_option("--em-iters", rc.em_iters, "maximum EM iterations")->capture_default_str();
  app->add_option("--tol", rc.tol, "relative EM convergence tolerance")->capture_default_str();
  app->add_option("--threads", rc.threads, "E-step worker threads")->capture_default_str();
  app->add_flag("--verbose", rc.verbose, "trace objectives to stderr");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relational topic model: fit, evaluate and query"};
  app.require_subcommand(1);
  rtm::RunConfig rc;
  std::size_t top_n = 10;

  auto* fit = app.add_subcommand("fit", "fit a model by variational EM");
  corpus_flags(fit, rc);
  fit_flags(fit, rc);
  fit->add_option("--model", rc.model, "output model file")->required();

  auto* eval = app.add_subcommand("eval", "cross-validated link and word prediction");
  corpus_flags(eval, rc);
  fit_flags(eval, rc);
  eval->add_option("--out", rc.out, "report directory")->required();
  eval->add_option("--folds", rc.folds, "number of folds")->capture_default_str();
  eval->add_option("--top-k", rc.top_k, "cutoff for precision")->capture_default_str();
  eval->add_flag("--distinct-terms", rc.distinct_terms, "rank each distinct held-out term once");

  auto* report = app.add_subcommand("report", "top words per topic");
  report->add_option("--model", rc.model, "model file")->required();
  report->add_option("--vocab", rc.vocab, "vocabulary file");
  report->add_option("--top-n", top_n, "words per topic")->capture_default_str();

  auto* suggest = app.add_subcommand("suggest", "suggest links for new documents");
  suggest->alias("predict");
  corpus_flags(suggest, rc);
  suggest->add_option("--model", rc.model, "model file")->required();
  suggest->add_option("--query", rc.query, "documents to suggest links for")->required();
  suggest->add_option("--top-k", rc.top_k, "suggestions per document")->capture_default_str();
  suggest->add_option("--seed", rc.seed, "random seed")->capture_default_str();
  suggest->add_option("--threads", rc.threads, "E-step worker threads")->capture_default_str();

  auto* synth = app.add_subcommand("synthesize", "sample a corpus from the generative model");
  synth->add_option("--out", rc.out, "output directory")->required();
  synth->add_option("--topics", rc.topics, "number of topics")->capture_default_str();
  synth->add_option("--vocab-size", rc.vocab_size)->capture_default_str();
  synth->add_option("--num-docs", rc.num_docs)->capture_default_str();
  synth->add_option("--doc-length", rc.doc_length)->capture_default_str();
  synth->add_option("--alpha-total", rc.alpha_total)->capture_default_str();
  synth->add_option("--link-fn", rc.link_fn)->capture_default_str();
  synth->add_option("--eta", rc.eta, "per-topic link weight")->capture_default_str();
  synth->add_option("--nu", rc.nu, "link intercept")->capture_default_str();
  synth->add_option("--seed", rc.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  if (*fit) return rtm::cmd_fit(rc, std::cout, std::cerr);
  if (*eval) return rtm::cmd_eval(rc, std::cout, std::cerr);
  if (*report) return rtm::cmd_report_topics(rc, top_n, std::cout, std::cerr);
  if (*suggest) return rtm::cmd_suggest_links(rc, std::cout, std::cerr);
  return rtm::cmd_synthesize(rc, std::cout, std::cerr);
}
