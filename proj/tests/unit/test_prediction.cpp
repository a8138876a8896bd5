// Apache License, Version 2.0, refer to LICENSE.txt

#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "rtm/evaluation.hpp"
#include "rtm/prediction.hpp"

using namespace rtm;

TEST(WordsOnly, SingleTopic) {
  const auto p = fixtures::model({{0.5, 0.5}}, {1.0}, {LinkKind::Exponential, {0.0}, -1.0});
  const auto h = infer_words_only(p, make_document({{0, 2}, {1, 1}}));
  EXPECT_EQ(h.phi_bar, std::vector<double>{1.0});
  EXPECT_THROW(infer_words_only(p, Document{}), Error);
}

TEST(WordsOnly, EqualsLdaInference) {
  const auto p = fixtures::model({{0.7, 0.2, 0.1}, {0.1, 0.3, 0.6}}, {0.5, 0.5},
                                 {LinkKind::Exponential, {-1.0, -1.0}, -0.5});
  const Document doc = make_document({{0, 2}, {2, 3}});
  const Corpus c(fixtures::vocab(3), {doc}, {});
  auto lda = p;
  lda.model = ModelKind::Lda;
  auto s = init_state(c, 2, p.alpha, 0, 0.0);
  EStepOptions o;
  o.tol = 1e-14;
  o.max_sweeps = 1000;
  run_e_step(c, lda, s, o);
  const auto h = infer_words_only(p, doc);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(h.phi_bar[i], s.phi_bar(0, i), 1e-8);
}

TEST(LinksOnly, WorkedExample) {
  const auto p = fixtures::model({{0.5, 0.5}, {0.5, 0.5}}, {0.5, 0.5},
                                 {LinkKind::Exponential, {1.0, 1.0}, -2.0});
  const std::vector<double> mean{0.9, 0.1}, var{0.0, 0.0};
  const std::vector<NeighborStats> nbrs{{mean, var}};
  const std::vector<double> gamma{1.0, 1.0}, phi{0.5, 0.5};
  const auto step = links_only_phi_step(p, nbrs, gamma, phi);
  EXPECT_NEAR(step[0], 0.6900, 1e-4);
  EXPECT_NEAR(step[1], 0.3100, 1e-4);
  EXPECT_NEAR(step[0], std::exp(0.9) / (std::exp(0.9) + std::exp(0.1)), 1e-14);
  EXPECT_THROW(infer_links_only(p, {}), Error);
  const auto h = infer_links_only(p, nbrs);
  EXPECT_GT(h.phi[0], 0.5);
  EXPECT_NEAR(sum(h.phi), 1.0, 1e-12);
}

TEST(PredictLink, Examples) {
  const auto s = fixtures::model({{0.5, 0.5}, {0.5, 0.5}}, {0.5, 0.5},
                                 {LinkKind::Sigmoid, {0.0, 0.0}, 0.0});
  HeldoutPosterior h;
  h.phi_bar = {0.3, 0.7};
  h.var = {0.0, 0.0};
  const std::vector<double> m{0.6, 0.4}, zero{0.0, 0.0};
  EXPECT_DOUBLE_EQ(predict_link_prob(s, h, {m, zero}), 0.5);

  auto g = s;
  g.link = {LinkKind::Gaussian, {2.0, 5.0}, 0.0};
  EXPECT_DOUBLE_EQ(predict_link_prob(g, h, {h.phi_bar, zero}), 1.0);

  auto e = s;
  e.link = {LinkKind::Exponential, {-0.5, -1.5}, -0.3};
  EXPECT_DOUBLE_EQ(predict_link_prob(e, h, {m, zero}),
                   std::exp(expected_log_link(e.link, PairStat{h.phi_bar, m, zero, zero})));

  auto lda = s;
  lda.model = ModelKind::Lda;
  EXPECT_THROW(predict_link_prob(lda, h, {m, zero}), Error);
}

TEST(PredictWords, Examples) {
  const auto p = fixtures::model({{0.6, 0.3, 0.1}, {0.2, 0.2, 0.6}}, {0.5, 0.5},
                                 {LinkKind::Exponential, {0.0, 0.0}, 0.0});
  HeldoutPosterior h;
  h.evidence = Evidence::LinksOnly;
  h.phi = {1.0, 0.0};
  auto d = predict_word_dist(p, h);
  for (std::size_t w = 0; w < 3; ++w) EXPECT_NEAR(d[w], std::exp(p.log_beta(0, w)), 1e-15);
  h.phi = {0.5, 0.5};
  d = predict_word_dist(p, h);
  EXPECT_NEAR(d[0], 0.4, 1e-15);
  EXPECT_NEAR(d[2], 0.35, 1e-15);
  EXPECT_NEAR(sum(d), 1.0, 1e-10);

  const auto one = fixtures::model({{0.25, 0.75}}, {1.0}, {LinkKind::Exponential, {0.0}, 0.0});
  HeldoutPosterior k1;
  k1.evidence = Evidence::LinksOnly;
  k1.phi = {1.0};
  EXPECT_NEAR(predict_word_dist(one, k1)[1], 0.75, 1e-15);
}

TEST(Ranks, AverageTiesAndOrientation) {
  EXPECT_EQ(average_ranks(std::vector<double>{0.1, 0.9, 0.5}), (std::vector<double>{3, 1, 2}));
  EXPECT_EQ(average_ranks(std::vector<double>{1, 1, 1, 1}), (std::vector<double>(4, 2.5)));
  EXPECT_EQ(average_ranks(std::vector<double>{2, 5, 2, 0}), (std::vector<double>{2.5, 1, 2.5, 4}));
  EXPECT_EQ(top_indices(std::vector<double>{0.3, 0.9, 0.9, 0.1}, 3),
            (std::vector<std::size_t>{1, 2, 0}));
}

TEST(Ranks, MatchBruteForceAndInvariantUnderMonotoneMaps) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> u(0, 9);
  for (int it = 0; it < 200; ++it) {
    std::vector<double> s(15);
    for (double& x : s) x = u(rng) / 10.0;
    const auto r = average_ranks(s);
    std::vector<double> t(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) t[i] = std::exp(3.0 * s[i]) - 7.0;
    EXPECT_EQ(r, average_ranks(t));
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_DOUBLE_EQ(r[i], oracle::brute_rank(s, i));
  }
}

namespace {

// Three training documents, one per topic, and two test documents.
struct Toy {
  Corpus corpus;
  FoldSplit split;
  ModelParams params;
  VariationalState state;
};

Toy toy(LinkKind kind, std::vector<double> eta, double nu) {
  std::vector<Document> docs{make_document({{0, 5}}), make_document({{1, 5}}),
                             make_document({{2, 5}}), make_document({{1, 4}}),
                             make_document({{0, 3}, {2, 1}})};
  Corpus c(fixtures::vocab(3), docs, {{3, 1}, {4, 0}, {4, 2}, {0, 1}});
  FoldPlan plan{2, 0, {0, 0, 0, 1, 1}};
  Toy t{c, make_fold_split(c, plan, 1),
        fixtures::model({{0.9, 0.05, 0.05}, {0.05, 0.9, 0.05}, {0.05, 0.05, 0.9}},
                        {0.3, 0.3, 0.3}, {kind, std::move(eta), nu}),
        {}};
  t.state = infer_posteriors(t.split.train, t.params, 0);
  return t;
}

}  // namespace

TEST(EvaluateFold, MatchesBruteForceMetric) {
  const Toy t = toy(LinkKind::Exponential, {0.0, 0.0, 0.0}, -1.0);
  auto tt = t;
  tt.params.link = {LinkKind::Exponential, {-0.2, -0.1, -0.3}, -0.5};
  const auto r = evaluate_fold(tt.params, tt.state, tt.corpus, tt.split, {2, false, {}});
  ASSERT_EQ(r.rows.size(), 2u);

  double link_total = 0.0, word_total = 0.0, prec_total = 0.0;
  for (const auto& row : r.rows) {
    const auto h = infer_words_only(tt.params, tt.corpus.doc(row.doc));
    std::vector<double> scores;
    for (std::size_t j = 0; j < 3; ++j) {
      double x = tt.params.link.nu;
      for (std::size_t i = 0; i < 3; ++i)
        x += tt.params.link.eta[i] * h.phi_bar[i] * tt.state.phi_bar(j, i);
      scores.push_back(x);
    }
    double link_rank = 0.0, hits = 0.0;
    const auto& nb = tt.corpus.neighbors(row.doc);
    std::vector<std::size_t> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return scores[a] > scores[b]; });
    for (std::size_t j : nb) {
      link_rank += oracle::brute_rank(scores, j);
      if (j == order[0] || j == order[1]) hits += 1.0;
    }
    link_rank /= nb.size();
    EXPECT_NEAR(row.link_rank, link_rank, 1e-12);
    EXPECT_NEAR(row.precision, hits / 2.0, 1e-12);

    std::vector<NeighborStats> nbrs;
    for (std::size_t j : nb) nbrs.push_back({tt.state.phi_bar.row(j), tt.state.var_bar.row(j)});
    const auto dist = predict_word_dist(tt.params, infer_links_only(tt.params, nbrs));
    double wr = 0.0, n = 0.0;
    for (const auto& term : tt.corpus.doc(row.doc).terms) {
      wr += term.count * oracle::brute_rank(dist, term.term);
      n += term.count;
    }
    EXPECT_NEAR(row.word_rank, wr / n, 1e-12);
    link_total += link_rank;
    word_total += wr / n;
    prec_total += hits / 2.0;
  }
  EXPECT_NEAR(r.mean_link_rank, link_total / 2.0, 1e-12);
  EXPECT_NEAR(r.mean_word_rank, word_total / 2.0, 1e-12);
  EXPECT_NEAR(r.precision_at_k, prec_total / 2.0, 1e-12);
}

TEST(EvaluateFold, UninformativeScoresGiveMiddleRank) {
  const Toy t = toy(LinkKind::Exponential, {0.0, 0.0, 0.0}, -1.0);
  const auto r = evaluate_fold(t.params, t.state, t.corpus, t.split);
  EXPECT_DOUBLE_EQ(r.mean_link_rank, 2.0);
}

TEST(EvaluateFold, StrongModelRanksTrueLinkFirst) {
  const Toy t = toy(LinkKind::Exponential, {-0.01, -0.01, -0.01}, -8.0);
  auto good = t;
  good.params.link = {LinkKind::Exponential, {7.0, 7.0, 7.0}, -8.0};
  const auto r = evaluate_fold(good.params, good.state, good.corpus, good.split);
  // doc 3 links only to doc 1, its single topic match
  EXPECT_DOUBLE_EQ(r.rows[0].link_rank, 1.0);
  EXPECT_LT(r.mean_link_rank, 2.0);
}

TEST(EvaluateFold, DocumentsWithoutLinksCounted) {
  std::vector<Document> docs{make_document({{0, 2}}), make_document({{1, 2}}),
                             make_document({{0, 1}})};
  Corpus c(fixtures::vocab(2), docs, {{0, 1}});
  FoldPlan plan{2, 0, {0, 0, 1}};
  const auto split = make_fold_split(c, plan, 1);
  const auto p = fixtures::model({{0.9, 0.1}, {0.1, 0.9}}, {0.5, 0.5},
                                 {LinkKind::Exponential, {1.0, 1.0}, -3.0});
  const auto s = infer_posteriors(split.train, p, 0);
  const auto r = evaluate_fold(p, s, c, split);
  EXPECT_EQ(r.docs_without_links, 1u);
  EXPECT_TRUE(std::isnan(r.mean_link_rank));
}

TEST(CrossValidation, PlantedModelBeatsShuffledLinks) {
  SyntheticConfig cfg;
  cfg.num_topics = 2;
  cfg.vocab_size = 20;
  cfg.num_docs = 60;
  cfg.doc_length = 40;
  cfg.alpha = {0.2, 0.2};
  cfg.link = {LinkKind::Exponential, {3.5, 3.5}, -4.5};
  cfg.seed = 4;
  const auto [c, truth] = generate_synthetic(cfg);
  // same degree count, endpoints chosen at random
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> pick(0, c.num_docs() - 1);
  std::vector<Link> shuffled;
  while (shuffled.size() < c.num_links()) {
    const auto a = pick(rng), b = pick(rng);
    if (a != b) shuffled.push_back(make_link(a, b));
  }
  const Corpus control(c.vocab(), c.docs(), shuffled);
  FitConfig fc;
  fc.num_topics = 2;
  CrossValidationOptions o;
  o.include_baselines = false;
  const auto real = cross_validate(c, fc, o);
  const auto fake = cross_validate(control, fc, o);
  EXPECT_LT(real.mean("rtm", &RankReport::mean_link_rank),
            fake.mean("rtm", &RankReport::mean_link_rank));
}
