// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

// Link probability functions. Each maps the mean topic assignments of two
// documents to the probability that a link between them is observed.
//
//   sigmoid      psi = sigma(eta' (zd o zd') + nu)
//   exponential  psi = exp(eta' (zd o zd') + nu)
//   probit       psi = Phi(eta' (zd o zd') + nu)
//   gaussian     psi = exp(-eta' (zd - zd') o (zd - zd') - nu)
//
// The first three depend on the Hadamard product pi = zd o zd' only; under
// the variational distribution pi is replaced by phibar_d o phibar_d'
// (exact for the exponential kind, first order for sigmoid and probit).
// The gaussian expectation is exact and needs per-document variances of
// the mean assignment vector.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rtm/matrix.hpp"

namespace rtm {

enum class LinkKind { Sigmoid, Exponential, Probit, Gaussian };

inline std::string_view to_string(LinkKind kind) {
  switch (kind) {
    case LinkKind::Sigmoid: return "sigmoid";
    case LinkKind::Exponential: return "exponential";
    case LinkKind::Probit: return "probit";
    case LinkKind::Gaussian: return "gaussian";
  }
  return "?";
}

inline LinkKind parse_link_kind(std::string_view s) {
  if (s == "sigmoid") return LinkKind::Sigmoid;
  if (s == "exponential") return LinkKind::Exponential;
  if (s == "probit") return LinkKind::Probit;
  if (s == "gaussian") return LinkKind::Gaussian;
  throw Error("unknown link function '" + std::string(s) +
              "' (expected sigmoid|exponential|probit|gaussian)");
}

// True for the kinds whose expected log depends on pi = phibar o phibar'.
inline bool depends_on_hadamard(LinkKind kind) { return kind != LinkKind::Gaussian; }

struct LinkParams {
  LinkKind kind = LinkKind::Exponential;
  std::vector<double> eta;
  double nu = 0.0;

  bool operator==(const LinkParams&) const = default;
};

// Sufficient conditions for 0 <= psi <= 1 over the reachable domain.
// exponential: nu <= 0 and eta_i + nu <= 0; gaussian: eta >= 0, nu >= 0.
inline bool is_admissible(const LinkParams& p) {
  if (!std::isfinite(p.nu)) return false;
  for (double e : p.eta)
    if (!std::isfinite(e)) return false;
  switch (p.kind) {
    case LinkKind::Exponential:
      if (p.nu > 0.0) return false;
      for (double e : p.eta)
        if (e + p.nu > 0.0) return false;
      return true;
    case LinkKind::Gaussian:
      if (p.nu < 0.0) return false;
      for (double e : p.eta)
        if (e < 0.0) return false;
      return true;
    default:
      return true;
  }
}

inline void check_admissible(const LinkParams& p) {
  if (!is_admissible(p))
    throw Error("inadmissible " + std::string(to_string(p.kind)) +
                " link parameters (link probability would leave [0,1])");
}

namespace detail {

// Terms of the asymptotic series Phi(x) ~ phi(x)/(-x) * S(x), x -> -inf.
inline double mills_series(double x) {
  const double inv = 1.0 / (x * x);
  double term = 1.0, s = 1.0;
  for (int n = 1; n <= 10; ++n) {
    term *= -(2.0 * n - 1.0) * inv;
    s += term;
  }
  return s;
}

inline constexpr double kProbitTailCut = -8.0;

}  // namespace detail

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double log_normal_cdf(double x) {
  if (x < detail::kProbitTailCut) {
    return -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(-x) +
           std::log(detail::mills_series(x));
  }
  return std::log(normal_cdf(x));
}

// Phi'(x) / Phi(x), the derivative of log Phi.
inline double normal_hazard_ratio(double x) {
  if (x < detail::kProbitTailCut) return -x / detail::mills_series(x);
  return normal_pdf(x) / normal_cdf(x);
}

inline double linear_predictor(const LinkParams& p, std::span<const double> pi) {
  return dot(p.eta, pi) + p.nu;
}

// eta' (a o b) + nu without materialising the product.
inline double linear_predictor(const LinkParams& p, std::span<const double> a,
                               std::span<const double> b) {
  double s = p.nu;
  for (std::size_t i = 0; i < a.size(); ++i) s += p.eta[i] * a[i] * b[i];
  return s;
}

inline double weighted_sq_distance(std::span<const double> eta, std::span<const double> a,
                                   std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += eta[i] * d * d;
  }
  return s;
}

// Link probability for two mean topic-assignment vectors.
inline double link_probability(const LinkParams& p, std::span<const double> zbar_a,
                               std::span<const double> zbar_b) {
  check_admissible(p);
  switch (p.kind) {
    case LinkKind::Sigmoid: return sigmoid(linear_predictor(p, zbar_a, zbar_b));
    case LinkKind::Exponential: return std::exp(linear_predictor(p, zbar_a, zbar_b));
    case LinkKind::Probit: return normal_cdf(linear_predictor(p, zbar_a, zbar_b));
    case LinkKind::Gaussian:
      return std::exp(-weighted_sq_distance(p.eta, zbar_a, zbar_b) - p.nu);
  }
  return 0.0;
}

// Variational statistics of one document pair. The variance views are only
// needed by the gaussian kind and may be left empty otherwise.
struct PairStat {
  std::span<const double> mean_a;
  std::span<const double> mean_b;
  std::span<const double> var_a;
  std::span<const double> var_b;

  std::vector<double> pi_bar() const {
    std::vector<double> pi(mean_a.size());
    for (std::size_t i = 0; i < pi.size(); ++i) pi[i] = mean_a[i] * mean_b[i];
    return pi;
  }
};

// E_q[log psi] for the hadamard kinds, as a function of pi directly.
inline double expected_log_link_pi(const LinkParams& p, std::span<const double> pi) {
  const double x = linear_predictor(p, pi);
  switch (p.kind) {
    case LinkKind::Sigmoid: return log_sigmoid(x);
    case LinkKind::Exponential: return x;
    case LinkKind::Probit: return log_normal_cdf(x);
    case LinkKind::Gaussian: break;
  }
  throw Error("expected_log_link_pi: gaussian link does not depend on pi alone");
}

inline double expected_log_link(const LinkParams& p, const PairStat& s) {
  if (p.kind != LinkKind::Gaussian) {
    const double x = linear_predictor(p, s.mean_a, s.mean_b);
    switch (p.kind) {
      case LinkKind::Sigmoid: return log_sigmoid(x);
      case LinkKind::Probit: return log_normal_cdf(x);
      default: return x;
    }
  }
  const std::size_t k = s.mean_a.size();
  if (s.var_a.size() != k || s.var_b.size() != k)
    throw Error("expected_log_link: gaussian link requires variance vectors");
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double d = s.mean_a[i] - s.mean_b[i];
    acc += p.eta[i] * (d * d + s.var_a[i] + s.var_b[i]);
  }
  return -p.nu - acc;
}

// Scalar factor c such that grad_pi = c * eta.
inline double grad_pi_scale(const LinkParams& p, double x) {
  switch (p.kind) {
    case LinkKind::Sigmoid: return 1.0 - sigmoid(x);
    case LinkKind::Exponential: return 1.0;
    case LinkKind::Probit: return normal_hazard_ratio(x);
    case LinkKind::Gaussian: break;
  }
  throw Error("grad_pi: undefined for the gaussian link");
}

// Gradient of E_q[log psi] with respect to pi.
inline std::vector<double> grad_pi(const LinkParams& p, std::span<const double> pi) {
  const double c = grad_pi_scale(p, linear_predictor(p, pi));
  std::vector<double> g(p.eta.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = c * p.eta[i];
  return g;
}

// Gradient of the gaussian E_q[log psi] with respect to one token's phi,
// given the neighbour mean, this document's mean without the token and N_d:
//   (2/N_d) eta o (phibar_d' - phibar_{d,-n} - 1/(2 N_d)).
// The 1/(2 N_d) offset comes from d/dphi of Var(zbar) + phibar^2.
inline std::vector<double> grad_phi_gaussian(const LinkParams& p,
                                             std::span<const double> neighbor_mean,
                                             std::span<const double> self_mean_without_token,
                                             double doc_length) {
  if (!(doc_length > 0.0)) throw Error("grad_phi_gaussian: document length must be positive");
  std::vector<double> g(p.eta.size());
  const double inv_n = 1.0 / doc_length;
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = 2.0 * inv_n * p.eta[i] *
           (neighbor_mean[i] - self_mean_without_token[i] - 0.5 * inv_n);
  return g;
}

}  // namespace rtm
