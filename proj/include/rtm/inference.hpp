// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

// Mean-field variational inference for the relational topic model.
//
// q(theta, z) = prod_d Dir(theta_d | gamma_d) prod_n Mult(z_dn | phi_dn)
//
// Tokens of the same term in a document share one phi vector, so phi is
// stored per (document, distinct term). Link terms are summed over observed
// links only; unobserved pairs never enter the objective.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <iomanip>
#include <ostream>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

#include "rtm/corpus.hpp"
#include "rtm/linkfn.hpp"
#include "rtm/matrix.hpp"
#include "rtm/model.hpp"

namespace rtm {

inline double digamma(double x) { return boost::math::digamma(x); }

struct VariationalState {
  Matrix gamma;                          // D x K
  std::vector<std::vector<double>> phi;  // per document: terms x K, row major
  Matrix phi_bar;                        // D x K, (1/N_d) sum_n phi_dn
  Matrix var_bar;                        // D x K, Var(zbar_d,i)

  std::size_t num_topics() const { return gamma.cols(); }

  std::span<double> phi_of(std::size_t d, std::size_t t) {
    const std::size_t k = num_topics();
    return {phi[d].data() + t * k, k};
  }
  std::span<const double> phi_of(std::size_t d, std::size_t t) const {
    const std::size_t k = num_topics();
    return {phi[d].data() + t * k, k};
  }

  bool operator==(const VariationalState&) const = default;
};

struct ElboBreakdown {
  double link_term = 0.0;
  double z_given_theta_term = 0.0;
  double word_term = 0.0;
  double theta_prior_term = 0.0;
  double entropy_term = 0.0;
  double total = 0.0;
};

// Work counters. pair_evaluations counts link-term evaluations in the
// objective; neighbor_visits counts link contributions made while updating
// phi. Both are proportional to the number of observed links.
struct InferenceCounters {
  std::size_t pair_evaluations = 0;
  std::size_t neighbor_visits = 0;
  std::size_t backtracks = 0;

  InferenceCounters& operator+=(const InferenceCounters& o) {
    pair_evaluations += o.pair_evaluations;
    neighbor_visits += o.neighbor_visits;
    backtracks += o.backtracks;
    return *this;
  }
};

// Mean and variance of one document's zbar, as seen by its neighbours.
struct NeighborStats {
  std::span<const double> mean;
  std::span<const double> var;
};

// E_q[log theta] = digamma(gamma) - digamma(sum gamma)
inline std::vector<double> expected_log_theta(std::span<const double> gamma) {
  const double dsum = digamma(sum(gamma));
  std::vector<double> out(gamma.size());
  for (std::size_t k = 0; k < gamma.size(); ++k) out[k] = digamma(gamma[k]) - dsum;
  return out;
}

// Recomputes mean and variance of zbar from a document's phi.
inline void document_moments(std::span<const TermCount> terms, std::span<const double> phi,
                             std::size_t k, std::span<double> mean, std::span<double> var) {
  std::fill(mean.begin(), mean.end(), 0.0);
  std::fill(var.begin(), var.end(), 0.0);
  double n = 0.0;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    const double c = terms[t].count;
    n += c;
    for (std::size_t i = 0; i < k; ++i) {
      const double p = phi[t * k + i];
      mean[i] += c * p;
      var[i] += c * p * (1.0 - p);
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    mean[i] /= n;
    var[i] /= n * n;
  }
}

inline void refresh_moments(const Corpus& corpus, VariationalState& s, std::size_t d) {
  document_moments(corpus.doc(d).terms, s.phi[d], s.num_topics(), s.phi_bar.row(d),
                   s.var_bar.row(d));
}

// gamma_d = alpha + N_d / K; phi uniform perturbed by seeded noise.
inline VariationalState init_state(const Corpus& corpus, std::size_t num_topics,
                                   std::span<const double> alpha, std::uint64_t seed,
                                   double noise = 0.1) {
  if (num_topics < 1) throw Error("init_state: need at least one topic");
  if (alpha.size() != num_topics) throw Error("init_state: alpha must have K entries");
  const std::size_t k = num_topics, d = corpus.num_docs();
  VariationalState s;
  s.gamma = Matrix(d, k);
  s.phi.resize(d);
  s.phi_bar = Matrix(d, k);
  s.var_bar = Matrix(d, k);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t doc = 0; doc < d; ++doc) {
    const auto& terms = corpus.doc(doc).terms;
    const double n = corpus.doc(doc).length();
    for (std::size_t i = 0; i < k; ++i)
      s.gamma(doc, i) = alpha[i] + n / static_cast<double>(k);
    s.phi[doc].resize(terms.size() * k);
    for (std::size_t t = 0; t < terms.size(); ++t) {
      auto p = s.phi_of(doc, t);
      double total = 0.0;
      for (double& v : p) {
        v = 1.0 + noise * u(rng);
        total += v;
      }
      for (double& v : p) v /= total;
    }
    refresh_moments(corpus, s, doc);
  }
  return s;
}

namespace detail {

inline void softmax_inplace(std::span<double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (double& v : x) {
    v = std::exp(v - m);
    total += v;
  }
  for (double& v : x) v /= total;
}

inline double neg_entropy(std::span<const double> p) {
  double s = 0.0;
  for (double v : p)
    if (v > 0.0) s += v * std::log(v);
  return s;
}

inline bool column_is_dead(const ModelParams& params, std::size_t w) {
  for (std::size_t i = 0; i < params.num_topics(); ++i)
    if (std::isfinite(params.log_beta(i, w))) return false;
  return true;
}

// Everything the coordinate updates of one document need to see.
struct LocalDocument {
  std::span<const TermCount> terms;
  bool word_evidence = true;  // false for the links-only pseudo-token
  std::span<double> phi;      // terms x K
  std::span<double> gamma;
  std::span<double> mean;
  std::span<double> var;
  double length = 0.0;
};

// Sum of E_q[log psi] over the neighbours, with this document's moments.
inline double local_link_sum(const LinkParams& link, std::span<const double> mean,
                             std::span<const double> var,
                             const std::vector<NeighborStats>& nbrs, InferenceCounters& ctr) {
  double s = 0.0;
  for (const auto& nb : nbrs) {
    s += expected_log_link(link, PairStat{mean, nb.mean, var, nb.var});
    ++ctr.neighbor_visits;
  }
  return s;
}

// Unnormalised log of the phi update for term t: link gradient plus
// E[log theta] plus log beta column.
inline std::vector<double> phi_exponent(const ModelParams& params, const LocalDocument& doc,
                                        std::size_t t, std::span<const double> elog_theta,
                                        const std::vector<NeighborStats>& nbrs,
                                        InferenceCounters& ctr) {
  const std::size_t k = params.num_topics();
  std::vector<double> e(elog_theta.begin(), elog_theta.end());
  if (doc.word_evidence) {
    const std::size_t w = doc.terms[t].term;
    if (column_is_dead(params, w))
      throw Error("topic matrix column " + std::to_string(w) +
                  " is all zero; the topics need pseudocount smoothing");
    for (std::size_t i = 0; i < k; ++i) e[i] += params.log_beta(i, w);
  }
  if (nbrs.empty()) return e;

  const LinkParams& link = params.link;
  const double inv_n = 1.0 / doc.length;
  if (depends_on_hadamard(link.kind)) {
    for (const auto& nb : nbrs) {
      const double c = grad_pi_scale(link, linear_predictor(link, doc.mean, nb.mean));
      for (std::size_t i = 0; i < k; ++i) e[i] += c * link.eta[i] * nb.mean[i] * inv_n;
      ++ctr.neighbor_visits;
    }
  } else {
    std::vector<double> without(k);
    for (std::size_t i = 0; i < k; ++i) without[i] = doc.mean[i] - doc.phi[t * k + i] * inv_n;
    for (const auto& nb : nbrs) {
      const auto g = grad_phi_gaussian(link, nb.mean, without, doc.length);
      for (std::size_t i = 0; i < k; ++i) e[i] += g[i];
      ++ctr.neighbor_visits;
    }
  }
  return e;
}

// Terms of the objective that depend on the shared phi of term t, given the
// document moments with that term's contribution removed.
inline double term_objective(const ModelParams& params, const LocalDocument& doc,
                             std::size_t t, std::span<const double> candidate,
                             std::span<const double> elog_theta,
                             std::span<const double> base_mean, std::span<const double> base_var,
                             const std::vector<NeighborStats>& nbrs, InferenceCounters& ctr) {
  const std::size_t k = params.num_topics();
  const double c = doc.terms[t].count;
  double f = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (candidate[i] <= 0.0) continue;
    double lin = elog_theta[i] - std::log(candidate[i]);
    if (doc.word_evidence) lin += params.log_beta(i, doc.terms[t].term);
    f += c * candidate[i] * lin;
  }
  if (!nbrs.empty()) {
    std::vector<double> mean(k), var(k);
    const double inv_n = 1.0 / doc.length;
    for (std::size_t i = 0; i < k; ++i) {
      mean[i] = base_mean[i] + c * candidate[i] * inv_n;
      var[i] = base_var[i] + c * candidate[i] * (1.0 - candidate[i]) * inv_n * inv_n;
    }
    f += local_link_sum(params.link, mean, var, nbrs, ctr);
  }
  return f;
}

// Whether the fixed-point phi update is an exact coordinate maximiser.
// It is for the exponential kind, and for the gaussian kind when a term
// occurs once; otherwise the step is safeguarded by backtracking.
inline bool update_is_exact(const ModelParams& params, const LocalDocument& doc, std::size_t t,
                            bool has_neighbors) {
  if (!has_neighbors) return true;
  switch (params.link.kind) {
    case LinkKind::Exponential: return true;
    case LinkKind::Gaussian: return doc.terms[t].count == 1;
    default: return false;
  }
}

// One pass over the terms of a document followed by the gamma update.
// Returns the largest relative change in gamma.
inline double sweep_document(const ModelParams& params, std::span<const double> alpha,
                             LocalDocument& doc, const std::vector<NeighborStats>& nbrs,
                             InferenceCounters& ctr) {
  const std::size_t k = params.num_topics();
  const auto elog_theta = expected_log_theta(doc.gamma);
  const double inv_n = 1.0 / doc.length;
  std::vector<double> base_mean(k), base_var(k), old(k), trial(k);

  for (std::size_t t = 0; t < doc.terms.size(); ++t) {
    std::span<double> phi_t = doc.phi.subspan(t * k, k);
    std::copy(phi_t.begin(), phi_t.end(), old.begin());
    auto fresh = phi_exponent(params, doc, t, elog_theta, nbrs, ctr);
    softmax_inplace(fresh);

    const double c = doc.terms[t].count;
    for (std::size_t i = 0; i < k; ++i) {
      base_mean[i] = doc.mean[i] - c * old[i] * inv_n;
      base_var[i] = doc.var[i] - c * old[i] * (1.0 - old[i]) * inv_n * inv_n;
    }

    std::span<const double> accepted = fresh;
    if (!update_is_exact(params, doc, t, !nbrs.empty())) {
      const double f_old =
          term_objective(params, doc, t, old, elog_theta, base_mean, base_var, nbrs, ctr);
      double f_new =
          term_objective(params, doc, t, fresh, elog_theta, base_mean, base_var, nbrs, ctr);
      double step = 1.0;
      while (!(f_new >= f_old) && step > 1e-10) {
        step *= 0.5;
        ++ctr.backtracks;
        for (std::size_t i = 0; i < k; ++i) trial[i] = old[i] + step * (fresh[i] - old[i]);
        f_new = term_objective(params, doc, t, trial, elog_theta, base_mean, base_var, nbrs,
                               ctr);
        accepted = trial;
      }
      if (!(f_new >= f_old)) accepted = old;
    }

    std::copy(accepted.begin(), accepted.end(), phi_t.begin());
    for (std::size_t i = 0; i < k; ++i) {
      doc.mean[i] = base_mean[i] + c * phi_t[i] * inv_n;
      doc.var[i] = base_var[i] + c * phi_t[i] * (1.0 - phi_t[i]) * inv_n * inv_n;
    }
  }
  // incremental updates drift; recompute exactly
  document_moments(doc.terms, doc.phi, k, doc.mean, doc.var);

  double change = 0.0, total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double g = alpha[i];
    for (std::size_t t = 0; t < doc.terms.size(); ++t)
      g += doc.terms[t].count * doc.phi[t * k + i];
    change = std::max(change, std::abs(g - doc.gamma[i]));
    doc.gamma[i] = g;
    total += g;
  }
  return change / total;
}

inline LocalDocument local_view(const Corpus& corpus, VariationalState& s, std::size_t d) {
  return LocalDocument{corpus.doc(d).terms, true, s.phi[d], s.gamma.row(d), s.phi_bar.row(d),
                       s.var_bar.row(d), static_cast<double>(corpus.doc(d).length())};
}

inline std::vector<NeighborStats> neighbor_stats(const Corpus& corpus, const Matrix& means,
                                                 const Matrix& vars, std::size_t d) {
  std::vector<NeighborStats> out;
  out.reserve(corpus.neighbors(d).size());
  for (std::size_t nb : corpus.neighbors(d)) out.push_back({means.row(nb), vars.row(nb)});
  return out;
}

}  // namespace detail

// The phi update for term index t (position within the document's term
// list) of document d, evaluated against the current state. Does not
// modify the state.
inline std::vector<double> update_phi(std::size_t d, std::size_t t,
                                      const VariationalState& state,
                                      const ModelParams& params, const Corpus& corpus) {
  std::vector<double> phi = state.phi[d];
  std::vector<double> gamma(state.gamma.row(d).begin(), state.gamma.row(d).end());
  std::vector<double> mean(state.phi_bar.row(d).begin(), state.phi_bar.row(d).end());
  std::vector<double> var(state.var_bar.row(d).begin(), state.var_bar.row(d).end());
  const detail::LocalDocument doc{corpus.doc(d).terms, true, phi, gamma, mean, var,
                                  static_cast<double>(corpus.doc(d).length())};
  const auto nbrs = params.links_in_inference()
                        ? detail::neighbor_stats(corpus, state.phi_bar, state.var_bar, d)
                        : std::vector<NeighborStats>{};
  const auto elog_theta = expected_log_theta(state.gamma.row(d));
  InferenceCounters ctr;
  auto e = detail::phi_exponent(params, doc, t, elog_theta, nbrs, ctr);
  detail::softmax_inplace(e);
  return e;
}

// gamma_d = alpha + sum_n phi_dn
inline std::vector<double> update_gamma(const Corpus& corpus, std::size_t d,
                                        const VariationalState& state,
                                        std::span<const double> alpha) {
  const std::size_t k = state.num_topics();
  std::vector<double> g(alpha.begin(), alpha.end());
  const auto& terms = corpus.doc(d).terms;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    const auto p = state.phi_of(d, t);
    for (std::size_t i = 0; i < k; ++i) g[i] += terms[t].count * p[i];
  }
  return g;
}

inline double log_gamma(double x) { return std::lgamma(x); }

// Entropy of Dir(gamma).
inline double dirichlet_entropy(std::span<const double> gamma) {
  const double g0 = sum(gamma);
  const double dsum = digamma(g0);
  double h = -log_gamma(g0);
  for (double g : gamma) h += log_gamma(g) - (g - 1.0) * (digamma(g) - dsum);
  return h;
}

// E_q[log Dir(theta | alpha)] under q = Dir(gamma).
inline double expected_log_dirichlet(std::span<const double> alpha,
                                     std::span<const double> gamma) {
  const auto elog = expected_log_theta(gamma);
  double s = log_gamma(sum(alpha));
  for (std::size_t i = 0; i < alpha.size(); ++i)
    s += -log_gamma(alpha[i]) + (alpha[i] - 1.0) * elog[i];
  return s;
}

// Evidence lower bound. For the sigmoid and probit links the link term is
// the first-order surrogate, so the total is the surrogate objective.
inline ElboBreakdown elbo(const Corpus& corpus, const ModelParams& params,
                          const VariationalState& state, InferenceCounters* counters = nullptr) {
  const std::size_t k = params.num_topics();
  ElboBreakdown b;
  if (params.links_in_inference()) {
    for (const auto& l : corpus.links()) {
      b.link_term += expected_log_link(
          params.link, PairStat{state.phi_bar.row(l.first), state.phi_bar.row(l.second),
                                state.var_bar.row(l.first), state.var_bar.row(l.second)});
      if (counters) ++counters->pair_evaluations;
    }
  }
  for (std::size_t d = 0; d < corpus.num_docs(); ++d) {
    const auto gamma = state.gamma.row(d);
    const auto elog = expected_log_theta(gamma);
    const auto& terms = corpus.doc(d).terms;
    for (std::size_t t = 0; t < terms.size(); ++t) {
      const double c = terms[t].count;
      const auto p = state.phi_of(d, t);
      for (std::size_t i = 0; i < k; ++i) {
        if (p[i] <= 0.0) continue;
        b.z_given_theta_term += c * p[i] * elog[i];
        b.word_term += c * p[i] * params.log_beta(i, terms[t].term);
      }
      b.entropy_term -= c * detail::neg_entropy(p);
    }
    b.theta_prior_term += expected_log_dirichlet(params.alpha, gamma);
    b.entropy_term += dirichlet_entropy(gamma);
  }
  b.total = b.link_term + b.z_given_theta_term + b.word_term + b.theta_prior_term +
            b.entropy_term;
  return b;
}

struct EStepOptions {
  double tol = 1e-6;
  int max_sweeps = 100;
  int max_doc_iterations = 25;
  // >1 switches to the Jacobi-style parallel sweep: every document is
  // updated against a snapshot of its neighbours from the previous sweep.
  // Results can differ from the sequential sweep within the tolerance and
  // the per-sweep ascent guarantee no longer holds.
  int threads = 1;
  std::ostream* trace = nullptr;  // ELBO per sweep, one value per line
};

struct EStepResult {
  double initial_elbo = 0.0;
  std::vector<double> elbo_trace;  // after each sweep
  std::vector<std::size_t> pair_evaluations;  // per sweep
  std::vector<std::size_t> neighbor_visits;   // per sweep
  int sweeps = 0;
  bool converged = false;
};

namespace detail {

inline void update_document(const Corpus& corpus, const ModelParams& params,
                            VariationalState& state, std::size_t d, const Matrix& nb_means,
                            const Matrix& nb_vars, int max_iters, double tol,
                            InferenceCounters& ctr) {
  auto doc = local_view(corpus, state, d);
  const auto nbrs = params.links_in_inference() ? neighbor_stats(corpus, nb_means, nb_vars, d)
                                                : std::vector<NeighborStats>{};
  for (int it = 0; it < max_iters; ++it)
    if (sweep_document(params, params.alpha, doc, nbrs, ctr) < tol) break;
}

}  // namespace detail

// Coordinate ascent over the variational parameters with the model fixed.
// Documents are visited in index order and terms in term-id order; within a
// document phi and gamma alternate until gamma settles. Stops once the
// relative change of the objective falls below tol.
inline EStepResult run_e_step(const Corpus& corpus, const ModelParams& params,
                              VariationalState& state, const EStepOptions& opt = {}) {
  if (!(opt.tol > 0.0)) throw Error("run_e_step: tol must be positive");
  EStepResult res;
  res.initial_elbo = elbo(corpus, params, state).total;
  double prev = res.initial_elbo;
  const std::size_t num_docs = corpus.num_docs();

  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    InferenceCounters ctr;
    if (opt.threads <= 1) {
      for (std::size_t d = 0; d < num_docs; ++d)
        detail::update_document(corpus, params, state, d, state.phi_bar, state.var_bar,
                                opt.max_doc_iterations, opt.tol, ctr);
    } else {
      const Matrix means = state.phi_bar, vars = state.var_bar;
      const std::size_t nt = static_cast<std::size_t>(opt.threads);
      std::vector<InferenceCounters> local(nt);
      std::vector<std::thread> workers;
      std::vector<std::exception_ptr> errors(nt);
      for (std::size_t w = 0; w < nt; ++w) {
        workers.emplace_back([&, w] {
          try {
            for (std::size_t d = w; d < num_docs; d += nt)
              detail::update_document(corpus, params, state, d, means, vars,
                                      opt.max_doc_iterations, opt.tol, local[w]);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (auto& t : workers) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
      for (const auto& c : local) ctr += c;
    }

    const double cur = elbo(corpus, params, state, &ctr).total;
    if (!std::isfinite(cur))
      throw Error("run_e_step: non-finite objective after sweep " + std::to_string(sweep + 1));
    res.elbo_trace.push_back(cur);
    res.pair_evaluations.push_back(ctr.pair_evaluations);
    res.neighbor_visits.push_back(ctr.neighbor_visits);
    if (opt.trace) *opt.trace << std::setprecision(17) << cur << '\n';
    ++res.sweeps;
    const double rel = std::abs(cur - prev) / std::max(std::abs(prev), 1e-300);
    prev = cur;
    if (rel < opt.tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace rtm
