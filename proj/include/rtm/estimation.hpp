// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

// M-step estimators and the variational EM driver.
//
// Only positive links are observed, so the link parameters are fitted as a
// one-class problem. Negative evidence enters through rho pseudo
// observations of y = 0 placed at pi_alpha, the expected Hadamard product of
// two documents under the Dirichlet prior, and optionally an l2 penalty on
// eta.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "rtm/corpus.hpp"
#include "rtm/inference.hpp"
#include "rtm/linkfn.hpp"
#include "rtm/matrix.hpp"
#include "rtm/model.hpp"

namespace rtm {

struct RegularizationConfig {
  double rho = -1.0;  // pseudo non-links; negative means "one per observed link"
  double lambda = 0.0;
  double smoothing = 0.01;

  double rho_for(std::size_t num_links) const {
    return rho < 0.0 ? static_cast<double>(num_links) : rho;
  }
};

struct SufficientStats {
  double num_links = 0.0;             // M
  std::vector<double> pi_bar_sum;     // sum over links of phibar_d o phibar_d'
  std::vector<double> pi_alpha;       // (alpha/|alpha|) o (alpha/|alpha|)
  std::vector<double> sq_diff_sum;    // sum over links of (phibar_d - phibar_d')^2
  std::vector<double> var_sum;        // sum over links of Var(zbar_d) + Var(zbar_d')
};

inline std::vector<double> prior_pi(std::span<const double> alpha) {
  const double total = sum(alpha);
  std::vector<double> out(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) out[i] = (alpha[i] / total) * (alpha[i] / total);
  return out;
}

inline SufficientStats sufficient_stats(const Corpus& corpus, const VariationalState& state,
                                        std::span<const double> alpha) {
  const std::size_t k = state.num_topics();
  SufficientStats s;
  s.num_links = static_cast<double>(corpus.num_links());
  s.pi_bar_sum.assign(k, 0.0);
  s.sq_diff_sum.assign(k, 0.0);
  s.var_sum.assign(k, 0.0);
  s.pi_alpha = prior_pi(alpha);
  for (const auto& l : corpus.links()) {
    const auto a = state.phi_bar.row(l.first), b = state.phi_bar.row(l.second);
    const auto va = state.var_bar.row(l.first), vb = state.var_bar.row(l.second);
    for (std::size_t i = 0; i < k; ++i) {
      s.pi_bar_sum[i] += a[i] * b[i];
      s.sq_diff_sum[i] += (a[i] - b[i]) * (a[i] - b[i]);
      s.var_sum[i] += va[i] + vb[i];
    }
  }
  return s;
}

// pi_bar for every observed link, one row per link in corpus order.
inline Matrix link_pi_bars(const Corpus& corpus, const VariationalState& state) {
  const std::size_t k = state.num_topics();
  Matrix out(corpus.num_links(), k);
  for (std::size_t j = 0; j < corpus.num_links(); ++j) {
    const auto& l = corpus.links()[j];
    for (std::size_t i = 0; i < k; ++i)
      out(j, i) = state.phi_bar(l.first, i) * state.phi_bar(l.second, i);
  }
  return out;
}

// beta_kw proportional to s + sum_d sum_n 1(w_dn = w) phi_dnk
inline Matrix update_beta(const Corpus& corpus, const VariationalState& state,
                          double smoothing) {
  const std::size_t k = state.num_topics(), v = corpus.vocab_size();
  Matrix beta(k, v, smoothing);
  for (std::size_t d = 0; d < corpus.num_docs(); ++d) {
    const auto& terms = corpus.doc(d).terms;
    for (std::size_t t = 0; t < terms.size(); ++t) {
      const auto p = state.phi_of(d, t);
      for (std::size_t i = 0; i < k; ++i) beta(i, terms[t].term) += terms[t].count * p[i];
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    auto row = beta.row(i);
    const double total = sum(row);
    for (double& x : row) x /= total;
  }
  return beta;
}

// s * sum log beta: the log density (up to a constant) of the symmetric
// Dirichlet prior that pseudocount smoothing corresponds to.
inline double topic_log_prior(const ModelParams& params) {
  if (params.smoothing == 0.0) return 0.0;
  double s = 0.0;
  for (double x : params.log_beta.data()) s += x;
  return params.smoothing * s;
}

// ---------------------------------------------------------------------------
// sigmoid / probit: gradient ascent on the regularised objective
//
//   sum_links log f(eta' pi + nu) + rho log(1 - f(eta' pi_alpha + nu)) - lambda |eta|^2

struct LinkObjective {
  LinkKind kind = LinkKind::Sigmoid;
  const Matrix* pis = nullptr;  // M x K
  std::vector<double> pi_alpha;
  double rho = 0.0;
  double lambda = 0.0;

  double log_f(double x) const {
    return kind == LinkKind::Sigmoid ? log_sigmoid(x) : log_normal_cdf(x);
  }
  double dlog_f(double x) const {
    return kind == LinkKind::Sigmoid ? 1.0 - sigmoid(x) : normal_hazard_ratio(x);
  }

  // The pseudo non-link part plus the penalty.
  double regularizer(std::span<const double> eta, double nu) const {
    double r = -lambda * dot(eta, eta);
    if (rho > 0.0) r += rho * log_f(-(dot(eta, pi_alpha) + nu));
    return r;
  }

  double value(std::span<const double> eta, double nu) const {
    double v = regularizer(eta, nu);
    for (std::size_t j = 0; j < pis->rows(); ++j) v += log_f(dot(eta, pis->row(j)) + nu);
    return v;
  }

  // Gradient with respect to (eta, nu), nu last.
  std::vector<double> gradient(std::span<const double> eta, double nu) const {
    const std::size_t k = eta.size();
    std::vector<double> g(k + 1, 0.0);
    for (std::size_t j = 0; j < pis->rows(); ++j) {
      const auto pi = pis->row(j);
      const double c = dlog_f(dot(eta, pi) + nu);
      for (std::size_t i = 0; i < k; ++i) g[i] += c * pi[i];
      g[k] += c;
    }
    if (rho > 0.0) {
      // d/dx log f(-x) = -f'(-x)/f(-x); for the sigmoid this is -sigma(x)
      const double c = rho * dlog_f(-(dot(eta, pi_alpha) + nu));
      for (std::size_t i = 0; i < k; ++i) g[i] -= c * pi_alpha[i];
      g[k] -= c;
    }
    for (std::size_t i = 0; i < k; ++i) g[i] -= 2.0 * lambda * eta[i];
    return g;
  }
};

struct AscentOptions {
  double initial_step = 0.1;
  double grad_tol = 1e-6;
  int max_iterations = 500;
};

inline LinkParams fit_link_sigmoid_probit(LinkKind kind, const Matrix& pis, double rho,
                                          double lambda, std::span<const double> alpha,
                                          const LinkParams& start,
                                          const AscentOptions& opt = {}) {
  if (kind != LinkKind::Sigmoid && kind != LinkKind::Probit)
    throw Error("fit_link_sigmoid_probit: kind must be sigmoid or probit");
  if (!(rho > 0.0) && !(lambda > 0.0))
    throw Error("one-class link estimation needs rho > 0 or lambda > 0");
  const std::size_t k = alpha.size();
  LinkObjective obj{kind, &pis, prior_pi(alpha), rho, lambda};

  std::vector<double> eta = start.eta.size() == k ? start.eta : std::vector<double>(k, 0.0);
  double nu = std::isfinite(start.nu) ? start.nu : 0.0;
  double f = obj.value(eta, nu);
  if (!std::isfinite(f)) throw Error("fit_link_sigmoid_probit: non-finite objective");

  std::vector<double> trial(k);
  for (int it = 0; it < opt.max_iterations; ++it) {
    const auto g = obj.gradient(eta, nu);
    double gmax = 0.0, gsq = 0.0;
    for (double x : g) {
      gmax = std::max(gmax, std::abs(x));
      gsq += x * x;
    }
    if (gmax < opt.grad_tol) break;
    double step = opt.initial_step;
    bool moved = false;
    for (int halving = 0; halving < 60; ++halving, step *= 0.5) {
      for (std::size_t i = 0; i < k; ++i) trial[i] = eta[i] + step * g[i];
      const double trial_nu = nu + step * g[k];
      const double ft = obj.value(trial, trial_nu);
      if (std::isfinite(ft) && ft >= f + 1e-4 * step * gsq) {
        eta = trial;
        nu = trial_nu;
        f = ft;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  return LinkParams{kind, eta, nu};
}

// ---------------------------------------------------------------------------
// exponential: closed form under the linear approximation of log(1 - psi_e)
// that is exact at pi = 0 and at max pi = 1.

inline constexpr double kStatFloor = 1e-10;

inline LinkParams fit_link_exponential(const SufficientStats& s, double rho) {
  if (!(s.num_links > 0.0)) throw Error("fit_link_exponential: no observed links");
  const std::size_t k = s.pi_bar_sum.size();
  std::vector<double> pi_sum(k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    pi_sum[i] = std::max(s.pi_bar_sum[i], kStatFloor);
    total += s.pi_bar_sum[i];
  }
  const double slack = std::max(s.num_links - total, kStatFloor);
  const double alpha_mass = sum(s.pi_alpha);
  LinkParams p{LinkKind::Exponential, std::vector<double>(k), 0.0};
  p.nu = std::log(slack) - std::log(rho * (1.0 - alpha_mass) + slack);
  for (std::size_t i = 0; i < k; ++i)
    p.eta[i] = std::log(pi_sum[i]) - std::log(pi_sum[i] + rho * s.pi_alpha[i]) - p.nu;
  return p;
}

// rho (eta'' pi_alpha + nu'') with nu'' = log(1 - e^nu),
// eta''_i = log(1 - e^(eta_i + nu)) - nu''. Zero-weight terms are dropped.
inline double exponential_regularizer(const LinkParams& p, std::span<const double> pi_alpha,
                                      double rho) {
  if (rho == 0.0) return 0.0;
  double r = 0.0;
  const double rest = 1.0 - sum(pi_alpha);
  if (rest > 0.0) r += rest * std::log(-std::expm1(p.nu));
  for (std::size_t i = 0; i < pi_alpha.size(); ++i)
    if (pi_alpha[i] > 0.0) r += pi_alpha[i] * std::log(-std::expm1(p.eta[i] + p.nu));
  return rho * r;
}

// ---------------------------------------------------------------------------
// gaussian: eta from the observed spread of linked documents, nu from the
// normalising constant, floored at zero.

inline constexpr double kEtaFloor = 1e-8;

inline double gaussian_nu_bound(std::span<const double> eta, double num_links, double rho) {
  const double k = static_cast<double>(eta.size());
  double log_eta = 0.0;
  for (double e : eta) log_eta += std::log(e);
  return std::log(0.5 * std::pow(std::numbers::pi, k / 2.0)) + std::log(rho + num_links) -
         std::log(num_links) - 0.5 * log_eta;
}

inline LinkParams fit_link_gaussian(const SufficientStats& s, double rho, std::size_t k) {
  if (!(s.num_links > 0.0)) throw Error("fit_link_gaussian: no observed links");
  LinkParams p{LinkKind::Gaussian, std::vector<double>(k), 0.0};
  for (std::size_t i = 0; i < k; ++i) {
    const double spread =
        std::max(s.sq_diff_sum[i] + (s.var_sum.empty() ? 0.0 : s.var_sum[i]), 1e-300);
    p.eta[i] = std::max(s.num_links / (2.0 * spread), kEtaFloor);
  }
  p.nu = std::max(0.0, gaussian_nu_bound(p.eta, s.num_links, rho));
  return p;
}

// The gaussian fit treats psi_N as a normalised density over the document
// difference; its M-step objective is the link term plus M/2 sum log eta,
// with nu held above the normalisation bound.
inline double gaussian_link_objective(const LinkParams& p, const SufficientStats& s) {
  double v = -s.num_links * p.nu;
  for (std::size_t i = 0; i < p.eta.size(); ++i)
    v += -p.eta[i] * (s.sq_diff_sum[i] + s.var_sum[i]) + 0.5 * s.num_links * std::log(p.eta[i]);
  return v;
}

inline bool gaussian_feasible(const LinkParams& p, const SufficientStats& s, double rho) {
  if (!is_admissible(p)) return false;
  for (double e : p.eta)
    if (!(e > 0.0)) return false;
  return p.nu >= gaussian_nu_bound(p.eta, s.num_links, rho) - 1e-12;
}

// ---------------------------------------------------------------------------
// EM driver

struct FitConfig {
  std::size_t num_topics = 10;
  double alpha_total = 1.0;
  LinkKind link_kind = LinkKind::Exponential;
  bool model_links = true;  // false fits plain LDA
  RegularizationConfig reg;
  std::uint64_t seed = 42;
  int em_iterations = 50;
  double tol = 1e-5;
  EStepOptions estep;
  double init_noise = 0.1;
  AscentOptions ascent;
  std::ostream* trace = nullptr;  // objective after each EM iteration
};

struct FittedModel {
  ModelParams params;
  FitConfig config;
  std::uint64_t seed = 0;
  VariationalState state;               // training posteriors
  std::vector<double> elbo_trace;       // after each EM iteration
  std::vector<double> objective_trace;  // ELBO plus priors and link regulariser
  std::vector<std::vector<double>> estep_traces;
  int iterations = 0;
  bool converged = false;
};

// Regularisation terms added to the ELBO to form the objective that the EM
// iterations ascend. They depend on the model parameters only.
inline double link_regularization(const ModelParams& params, const SufficientStats& stats,
                                  const RegularizationConfig& reg) {
  if (!params.links_in_inference() || stats.num_links == 0.0) return 0.0;
  const double rho = reg.rho_for(static_cast<std::size_t>(stats.num_links));
  switch (params.link.kind) {
    case LinkKind::Exponential: return exponential_regularizer(params.link, stats.pi_alpha, rho);
    case LinkKind::Gaussian: {
      double v = 0.0;
      for (double e : params.link.eta) v += std::log(e);
      return 0.5 * stats.num_links * v;
    }
    default: {
      Matrix none;
      LinkObjective obj{params.link.kind, &none, stats.pi_alpha, rho, reg.lambda};
      return obj.regularizer(params.link.eta, params.link.nu);
    }
  }
}

inline double em_objective(const Corpus& corpus, const ModelParams& params,
                           const VariationalState& state, const RegularizationConfig& reg) {
  const auto stats = sufficient_stats(corpus, state, params.alpha);
  return elbo(corpus, params, state).total + topic_log_prior(params) +
         link_regularization(params, stats, reg);
}

// Farthest-first seeding: the first topic copies a random document, each
// further topic the document least similar (cosine) to the seeds so far.
inline Matrix seed_topics(const Corpus& corpus, std::size_t k, std::uint64_t seed) {
  const std::size_t v = corpus.vocab_size(), d = corpus.num_docs();
  auto dense = [&](std::size_t doc) {
    std::vector<double> x(v, 0.0);
    for (const auto& t : corpus.doc(doc).terms) x[t.term] = t.count;
    const double n = std::sqrt(dot(x, x));
    for (double& e : x) e /= n;
    return x;
  };
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> seeds{std::uniform_int_distribution<std::size_t>(0, d - 1)(rng)};
  std::vector<double> closest(d, -1.0);
  while (seeds.size() < k) {
    const auto last = dense(seeds.back());
    std::size_t best = 0;
    double best_sim = 2.0;
    for (std::size_t doc = 0; doc < d; ++doc) {
      closest[doc] = std::max(closest[doc], dot(last, dense(doc)));
      if (closest[doc] < best_sim) {
        best_sim = closest[doc];
        best = doc;
      }
    }
    seeds.push_back(best);
  }
  Matrix beta(k, v, 1.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (const auto& t : corpus.doc(seeds[i]).terms) beta(i, t.term) += t.count;
    auto row = beta.row(i);
    const double total = sum(row);
    for (double& x : row) x /= total;
  }
  return beta;
}

inline LinkParams initial_link(LinkKind kind, std::size_t k) {
  LinkParams p{kind, std::vector<double>(k, 0.0), 0.0};
  if (kind == LinkKind::Gaussian) std::fill(p.eta.begin(), p.eta.end(), 1.0);
  return p;
}

// Updates beta and the link parameters from the current posteriors.
inline void m_step(const Corpus& corpus, const VariationalState& state, ModelParams& params,
                   const RegularizationConfig& reg, const AscentOptions& ascent) {
  params.log_beta = log_of(update_beta(corpus, state, reg.smoothing));
  if (!params.links_in_inference() || corpus.num_links() == 0) return;
  const auto stats = sufficient_stats(corpus, state, params.alpha);
  const double rho = reg.rho_for(corpus.num_links());
  switch (params.link.kind) {
    case LinkKind::Exponential: params.link = fit_link_exponential(stats, rho); break;
    case LinkKind::Gaussian: {
      auto next = fit_link_gaussian(stats, rho, params.num_topics());
      // keep the previous parameters when the closed form would lose ground
      if (!gaussian_feasible(params.link, stats, rho) ||
          gaussian_link_objective(next, stats) >= gaussian_link_objective(params.link, stats))
        params.link = std::move(next);
      break;
    }
    default:
      params.link = fit_link_sigmoid_probit(params.link.kind, link_pi_bars(corpus, state), rho,
                                            reg.lambda, params.alpha, params.link, ascent);
  }
}

// Variational EM: alternate the E-step and the M-step until the relative
// change of the objective drops below tol.
inline FittedModel fit(const Corpus& corpus, const FitConfig& cfg) {
  if (cfg.num_topics < 1) throw Error("fit: need at least one topic");
  if (!(cfg.alpha_total > 0.0)) throw Error("fit: alpha total must be positive");
  if (!(cfg.reg.smoothing > 0.0)) throw Error("fit: smoothing must be positive");
  if (cfg.em_iterations < 1) throw Error("fit: need at least one EM iteration");
  if (corpus.num_docs() == 0) throw Error("fit: empty corpus");
  if (cfg.model_links && corpus.num_links() > 0 &&
      (cfg.link_kind == LinkKind::Sigmoid || cfg.link_kind == LinkKind::Probit) &&
      !(cfg.reg.rho_for(corpus.num_links()) > 0.0) && !(cfg.reg.lambda > 0.0))
    throw Error("one-class link estimation needs rho > 0 or lambda > 0");

  const std::size_t k = cfg.num_topics;
  FittedModel out;
  out.config = cfg;
  out.seed = cfg.seed;
  ModelParams& params = out.params;
  params.model = cfg.model_links ? ModelKind::Rtm : ModelKind::Lda;
  params.alpha = symmetric_alpha(k, cfg.alpha_total);
  params.smoothing = cfg.reg.smoothing;
  params.link = initial_link(cfg.link_kind, k);
  params.log_beta = log_of(seed_topics(corpus, k, cfg.seed));
  out.state = init_state(corpus, k, params.alpha, cfg.seed, cfg.init_noise);

  double prev = 0.0;
  for (int it = 0; it < cfg.em_iterations; ++it) {
    auto e = run_e_step(corpus, params, out.state, cfg.estep);
    out.estep_traces.push_back(std::move(e.elbo_trace));
    m_step(corpus, out.state, params, cfg.reg, cfg.ascent);
    const double bound = elbo(corpus, params, out.state).total;
    const double objective = em_objective(corpus, params, out.state, cfg.reg);
    if (!std::isfinite(objective))
      throw Error("fit: non-finite objective at EM iteration " + std::to_string(it + 1));
    out.elbo_trace.push_back(bound);
    out.objective_trace.push_back(objective);
    if (cfg.trace) *cfg.trace << std::setprecision(17) << objective << '\n';
    ++out.iterations;
    if (it > 0 && std::abs(objective - prev) / std::max(std::abs(prev), 1e-300) < cfg.tol) {
      out.converged = true;
      break;
    }
    prev = objective;
  }
  return out;
}

// Posteriors of the documents of `corpus` under fixed parameters.
inline VariationalState infer_posteriors(const Corpus& corpus, const ModelParams& params,
                                         std::uint64_t seed, const EStepOptions& opt = {}) {
  auto state = init_state(corpus, params.num_topics(), params.alpha, seed);
  run_e_step(corpus, params, state, opt);
  return state;
}

}  // namespace rtm
