// Apache License, Version 2.0, refer to LICENSE.txt

#include <gtest/gtest.h>

#include <boost/math/tools/minima.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "rtm/inference.hpp"
#include "rtm/prediction.hpp"

using namespace rtm;

namespace {

Corpus two_docs(bool linked, std::vector<Document> docs = {}) {
  if (docs.empty()) docs = {make_document({{0, 1}}), make_document({{1, 1}})};
  return Corpus(fixtures::vocab(2), docs, linked ? std::vector<Link>{{0, 1}} : std::vector<Link>{});
}

void set_phi(const Corpus& c, VariationalState& s, std::size_t d, std::size_t t,
             const std::vector<double>& phi) {
  std::copy(phi.begin(), phi.end(), s.phi_of(d, t).begin());
  refresh_moments(c, s, d);
}

oracle::TinyInstance tiny(double eta0, double eta1, double nu) {
  oracle::TinyInstance in;
  in.alpha = {0.7, 1.3};
  in.beta = {{{0.8, 0.2}, {0.35, 0.65}}};
  in.eta = {eta0, eta1};
  in.nu = nu;
  in.gamma = {{{1.4, 2.1}, {0.9, 1.6}}};
  in.phi = {{{0.3, 0.7}, {0.55, 0.45}}};
  in.word = {0, 1};
  return in;
}

VariationalState tiny_state(const Corpus& c, const oracle::TinyInstance& in) {
  auto s = init_state(c, 2, std::vector<double>{in.alpha[0], in.alpha[1]}, 0);
  for (std::size_t d = 0; d < 2; ++d) {
    s.gamma(d, 0) = in.gamma[d][0];
    s.gamma(d, 1) = in.gamma[d][1];
    set_phi(c, s, d, 0, {in.phi[d][0], in.phi[d][1]});
  }
  return s;
}

ModelParams tiny_model(const oracle::TinyInstance& in) {
  return fixtures::model({{in.beta[0][0], in.beta[0][1]}, {in.beta[1][0], in.beta[1][1]}},
                         {in.alpha[0], in.alpha[1]},
                         {LinkKind::Exponential, {in.eta[0], in.eta[1]}, in.nu});
}

}  // namespace

TEST(InitState, Examples) {
  const Corpus c(fixtures::vocab(2), {make_document({{0, 3}, {1, 1}})}, {});
  const std::vector<double> alpha{0.5, 0.5};
  const auto s = init_state(c, 2, alpha, 1);
  EXPECT_DOUBLE_EQ(s.gamma(0, 0), 2.5);
  EXPECT_DOUBLE_EQ(s.gamma(0, 1), 2.5);
  const auto flat = init_state(c, 2, alpha, 1, 0.0);
  for (double p : flat.phi[0]) EXPECT_EQ(p, 0.5);
  EXPECT_EQ(init_state(c, 2, alpha, 7), init_state(c, 2, alpha, 7));
  EXPECT_NE(init_state(c, 2, alpha, 7).phi, init_state(c, 2, alpha, 8).phi);
  for (std::size_t t = 0; t < 2; ++t) EXPECT_NEAR(sum(s.phi_of(0, t)), 1.0, 1e-12);
}

TEST(UpdatePhi, SingleTopicIsOne) {
  const Corpus c = two_docs(false);
  const auto p = fixtures::model({{0.5, 0.5}}, {1.0}, {LinkKind::Exponential, {0.0}, -1.0});
  const auto s = init_state(c, 1, p.alpha, 0);
  EXPECT_EQ(update_phi(0, 0, s, p, c), std::vector<double>{1.0});
}

TEST(UpdatePhi, NoLinksIsLdaUpdate) {
  const Corpus c = two_docs(false);
  const auto p = fixtures::model({{0.8, 0.2}, {0.3, 0.7}}, {0.5, 0.5},
                                 {LinkKind::Exponential, {-0.1, -0.2}, -0.5});
  auto s = init_state(c, 2, p.alpha, 3);
  s.gamma(0, 0) = 1.2;
  s.gamma(0, 1) = 0.7;
  const double dsum = digamma(1.9);
  double e0 = std::exp(digamma(1.2) - dsum) * 0.8, e1 = std::exp(digamma(0.7) - dsum) * 0.3;
  const auto phi = update_phi(0, 0, s, p, c);
  EXPECT_NEAR(phi[0], e0 / (e0 + e1), 1e-14);
  EXPECT_NEAR(phi[1], e1 / (e0 + e1), 1e-14);
}

// With the exponential link the update is the exact maximiser of the
// objective over this phi with everything else fixed.
TEST(UpdatePhi, ExponentialMaximisesCoordinate) {
  const Corpus c = two_docs(true, {make_document({{0, 2}, {1, 1}}), make_document({{1, 3}})});
  const auto p = fixtures::model({{0.6, 0.4}, {0.2, 0.8}}, {0.5, 0.5},
                                 {LinkKind::Exponential, {-0.2, -1.5}, -0.4});
  auto s = init_state(c, 2, p.alpha, 5);
  set_phi(c, s, 1, 0, {0.9, 0.1});
  const auto phi = update_phi(0, 0, s, p, c);

  auto probe = s;
  const auto neg = [&](double x) {
    set_phi(c, probe, 0, 0, {x, 1.0 - x});
    return -elbo(c, p, probe).total;
  };
  const auto [best, val] = boost::math::tools::brent_find_minima(neg, 1e-9, 1.0 - 1e-9, 40);
  EXPECT_NEAR(phi[0], best, 1e-7);
}

TEST(UpdatePhi, DeadColumnRejected) {
  const Corpus c = two_docs(false);
  auto p = fixtures::model({{1.0, 0.0}, {1.0, 0.0}}, {0.5, 0.5},
                           {LinkKind::Exponential, {0.0, 0.0}, 0.0});
  const auto s = init_state(c, 2, p.alpha, 0);
  EXPECT_NO_THROW(update_phi(0, 0, s, p, c));
  try {
    update_phi(1, 0, s, p, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("smoothing"), std::string::npos);
  }
}

TEST(UpdateGamma, Examples) {
  const Corpus c(fixtures::vocab(2), {make_document({{0, 1}, {1, 1}})}, {});
  auto s = init_state(c, 2, std::vector<double>{0.5, 0.5}, 0);
  set_phi(c, s, 0, 0, {1.0, 0.0});
  set_phi(c, s, 0, 1, {0.0, 1.0});
  EXPECT_EQ(update_gamma(c, 0, s, std::vector<double>{0.5, 0.5}),
            (std::vector<double>{1.5, 1.5}));

  const Corpus twice(fixtures::vocab(2), {make_document({{0, 2}, {1, 1}})}, {});
  auto t = init_state(twice, 2, std::vector<double>{0.5, 0.5}, 0);
  set_phi(twice, t, 0, 0, {1.0, 0.0});
  set_phi(twice, t, 0, 1, {0.0, 1.0});
  EXPECT_EQ(update_gamma(twice, 0, t, std::vector<double>{0.5, 0.5}),
            (std::vector<double>{2.5, 1.5}));
}

TEST(Elbo, TinyInstanceMatchesOracle) {
  const auto in = tiny(-0.3, -1.1, -0.6);
  const Corpus c = two_docs(true);
  const auto b = elbo(c, tiny_model(in), tiny_state(c, in));
  EXPECT_NEAR(b.total, oracle::tiny_elbo(in), 1e-6);
  EXPECT_NEAR(b.total,
              b.link_term + b.z_given_theta_term + b.word_term + b.theta_prior_term +
                  b.entropy_term,
              1e-10 * std::abs(b.total));
}

TEST(Elbo, NoLinksIsLdaBound) {
  const auto in = tiny(0.0, 0.0, 0.0);
  const Corpus c = two_docs(false);
  auto p = tiny_model(in);
  p.link.eta = {-0.5, -0.9};
  p.link.nu = -0.7;
  const auto b = elbo(c, p, tiny_state(c, in));
  EXPECT_EQ(b.link_term, 0.0);
  EXPECT_NEAR(b.total, oracle::tiny_elbo(in), 1e-6);
}

TEST(Elbo, EntropyNonNegativeAtUniform) {
  const Corpus c = two_docs(false);
  auto s = init_state(c, 2, std::vector<double>{1.0, 1.0}, 0, 0.0);
  for (std::size_t d = 0; d < 2; ++d) s.gamma(d, 0) = s.gamma(d, 1) = 1.0;
  const auto p = fixtures::model({{0.5, 0.5}, {0.5, 0.5}}, {1.0, 1.0},
                                 {LinkKind::Exponential, {0.0, 0.0}, 0.0});
  EXPECT_GE(elbo(c, p, s).entropy_term, 0.0);
}

TEST(EStep, ExponentialTraceNondecreasing) {
  const auto [c, truth] = fixtures::synthetic50(LinkKind::Exponential);
  ModelParams p = fixtures::model({}, truth.alpha, truth.link);
  p.log_beta = log_of(truth.beta);
  for (double& x : p.log_beta.data()) x = std::max(x, -30.0);
  auto s = init_state(c, 3, p.alpha, 1);
  const auto r = run_e_step(c, p, s);
  double prev = r.initial_elbo;
  for (double v : r.elbo_trace) {
    EXPECT_GE(v, prev - 1e-8 * std::abs(prev));
    prev = v;
  }
  EXPECT_TRUE(r.converged);
}

TEST(EStep, ConvergedStateStopsAfterOneSweep) {
  const auto [c, truth] = fixtures::synthetic50(LinkKind::Exponential);
  ModelParams p = fixtures::model({}, truth.alpha, truth.link);
  p.log_beta = log_of(truth.beta);
  for (double& x : p.log_beta.data()) x = std::max(x, -30.0);
  auto s = init_state(c, 3, p.alpha, 1);
  EStepOptions tight;
  tight.tol = 1e-12;
  tight.max_sweeps = 500;
  run_e_step(c, p, s, tight);
  const auto r = run_e_step(c, p, s);
  EXPECT_EQ(r.sweeps, 1);
  EXPECT_TRUE(r.converged);
}

TEST(EStep, SingleTopic) {
  const Corpus c = two_docs(true, {make_document({{0, 2}, {1, 1}}), make_document({{1, 3}})});
  const auto p = fixtures::model({{0.4, 0.6}}, {0.8}, {LinkKind::Exponential, {-0.2}, -0.3});
  auto s = init_state(c, 1, p.alpha, 0);
  const auto r = run_e_step(c, p, s);
  EXPECT_LE(r.sweeps, 2);
  for (const auto& phi : s.phi)
    for (double x : phi) EXPECT_EQ(x, 1.0);
  EXPECT_DOUBLE_EQ(s.gamma(0, 0), 3.8);
  EXPECT_DOUBLE_EQ(s.gamma(1, 0), 3.8);
}

TEST(EStep, InvariantsHoldForEveryKind) {
  for (auto kind : {LinkKind::Sigmoid, LinkKind::Exponential, LinkKind::Probit,
                    LinkKind::Gaussian}) {
    const auto [c, truth] = fixtures::synthetic50(kind);
    ModelParams p = fixtures::model({}, truth.alpha, truth.link);
    p.log_beta = log_of(truth.beta);
    for (double& x : p.log_beta.data()) x = std::max(x, -30.0);
    auto s = init_state(c, 3, p.alpha, 2);
    const auto r = run_e_step(c, p, s);
    double prev = r.initial_elbo;
    for (double v : r.elbo_trace) {
      EXPECT_GE(v, prev - 1e-8 * std::abs(prev)) << to_string(kind);
      prev = v;
    }
    for (std::size_t d = 0; d < c.num_docs(); ++d) {
      for (std::size_t t = 0; t < c.doc(d).terms.size(); ++t) {
        const auto phi = s.phi_of(d, t);
        EXPECT_NEAR(sum(phi), 1.0, 1e-12);
        for (double x : phi) EXPECT_GE(x, 0.0);
      }
      for (std::size_t i = 0; i < 3; ++i) EXPECT_GT(s.gamma(d, i), 0.0);
      auto check = s;
      refresh_moments(c, check, d);
      for (std::size_t i = 0; i < 3; ++i)
        EXPECT_NEAR(check.phi_bar(d, i), s.phi_bar(d, i), 1e-12);
    }
  }
}

TEST(EStep, PairEvaluationsEqualLinkCount) {
  const auto [c, truth] = fixtures::synthetic50(LinkKind::Sigmoid);
  ModelParams p = fixtures::model({}, truth.alpha, truth.link);
  p.log_beta = log_of(truth.beta);
  for (double& x : p.log_beta.data()) x = std::max(x, -30.0);
  auto s = init_state(c, 3, p.alpha, 2);
  const auto r = run_e_step(c, p, s);
  for (auto n : r.pair_evaluations) EXPECT_EQ(n, c.num_links());
  for (auto n : r.neighbor_visits) EXPECT_GT(n, 0u);
}

TEST(EStep, ParallelModeAgreesWithinTolerance) {
  const auto [c, truth] = fixtures::synthetic50(LinkKind::Exponential);
  ModelParams p = fixtures::model({}, truth.alpha, truth.link);
  p.log_beta = log_of(truth.beta);
  for (double& x : p.log_beta.data()) x = std::max(x, -30.0);
  auto seq = init_state(c, 3, p.alpha, 3), par = seq;
  EStepOptions o;
  o.tol = 1e-10;
  o.max_sweeps = 300;
  const auto a = run_e_step(c, p, seq, o);
  o.threads = 4;
  const auto b = run_e_step(c, p, par, o);
  EXPECT_NEAR(a.elbo_trace.back(), b.elbo_trace.back(), 1e-6 * std::abs(a.elbo_trace.back()));
}

TEST(EStep, RejectsNonPositiveTolerance) {
  const Corpus c = two_docs(false);
  const auto p = fixtures::model({{0.5, 0.5}}, {1.0}, {LinkKind::Exponential, {0.0}, -1.0});
  auto s = init_state(c, 1, p.alpha, 0);
  EStepOptions o;
  o.tol = 0.0;
  EXPECT_THROW(run_e_step(c, p, s, o), Error);
}

// Tokens of one term share a phi. Fixed points coincide with an uncollapsed
// per-token ascent, for the exponential and the gaussian link.
TEST(Collapsing, MatchesPerTokenFixedPoint) {
  const std::vector<std::vector<double>> beta{{0.5, 0.3, 0.2}, {0.1, 0.3, 0.6}};
  std::vector<std::vector<double>> log_beta = beta;
  for (auto& r : log_beta)
    for (double& x : r) x = std::log(x);
  const std::vector<double> alpha{0.4, 0.6};
  const std::vector<std::vector<double>> nb{{0.8, 0.2}, {0.35, 0.65}};
  const std::vector<double> nb_var{0.01, 0.01};
  const std::vector<int> words{0, 0, 0, 1, 2, 2};
  const Document doc = make_document({{0, 3}, {1, 1}, {2, 2}});

  for (auto kind : {LinkKind::Exponential, LinkKind::Gaussian}) {
    const std::vector<double> eta =
        kind == LinkKind::Exponential ? std::vector<double>{-0.5, -2.0} : std::vector<double>{3.0, 1.5};
    const auto p = fixtures::model(beta, alpha, {kind, eta, kind == LinkKind::Exponential ? -0.1 : 0.2});
    std::vector<NeighborStats> nbrs;
    for (const auto& m : nb) nbrs.push_back({m, nb_var});
    HeldoutOptions o;
    o.tol = 1e-14;
    o.max_iterations = 5000;
    const auto h =
        detail::run_local(p, doc.terms, true, nbrs, Evidence::WordsOnly, o);
    const auto ref = oracle::per_token_ascent(static_cast<oracle::Kind>(static_cast<int>(kind)),
                                              words, log_beta, alpha, eta, nb, 5000);
    const std::size_t token_of_term[] = {0, 3, 4};
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t i = 0; i < 2; ++i)
        EXPECT_NEAR(h.phi[t * 2 + i], ref.phi[token_of_term[t]][i], 1e-8) << to_string(kind);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(h.gamma[i], ref.gamma[i], 1e-7);
    // same-term tokens agree in the uncollapsed run
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_NEAR(ref.phi[0][i], ref.phi[2][i], 1e-8);
      EXPECT_NEAR(ref.phi[4][i], ref.phi[5][i], 1e-8);
    }
  }
}
