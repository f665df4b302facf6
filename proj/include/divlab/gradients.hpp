#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "divlab/distributions.hpp"
#include "divlab/objectives.hpp"

namespace divlab {

/// Per-logit derivative of an objective composed with softmax. Entries sum
/// to 0: the softmax Jacobian annihilates the all-ones direction.
using GradVector = std::vector<double>;

/// Target-logit derivative of rkl split into its two mechanisms. All fields
/// are scalars at the target coordinate; nrkl_value is the unweighted tail
/// divergence KL(q-hat || p-hat).
struct TargetGradReport {
  double trkl_grad;
  double nrkl_grad;
  double combined;
  double q_m;
  double p_m;
  double nrkl_value;
};

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
  return s;
}

/// grad_j = q_j * (g_j - sum_k q_k g_k), the softmax chain rule applied to a
/// distribution-space derivative g.
inline GradVector chain_through_softmax(const ProbVector& q,
                                        const std::vector<double>& g) {
  const double qg = dot(q.probs(), g);
  GradVector out(q.size());
  for (std::size_t j = 0; j < q.size(); ++j) out[j] = q[j] * (g[j] - qg);
  return out;
}

}  // namespace detail

inline GradVector grad_fkl(const ProbVector& p, const ProbVector& q) {
  detail::check_pair(p, q);
  GradVector out(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) out[j] = q[j] - p[j];
  return out;
}

inline GradVector grad_rkl(const ProbVector& p, const ProbVector& q) {
  detail::check_pair(p, q);
  const double total = rkl(p, q);
  GradVector out(p.size());
  for (std::size_t j = 0; j < p.size(); ++j)
    out[j] = q[j] * (std::log(q[j] / p[j]) - total);
  return out;
}

inline TargetGradReport grad_target_decomposed(const ProbVector& p,
                                               const ProbVector& q,
                                               std::size_t m) {
  detail::check_pair(p, q);
  detail::check_target(p, static_cast<int>(m));
  const double qm = q[m];
  const double pm = p[m];
  const double a = std::log(qm / pm);
  const double b = std::log((1.0 - qm) / (1.0 - pm));
  const double dhat = detail::tail_kl(p.probs(), q.probs(), m);
  const double scale = qm * (1.0 - qm);
  const double t = scale * (a - b);
  const double n = -scale * dhat;
  return TargetGradReport{t, n, t + n, qm, pm, dhat};
}

/// Full logit gradient of the binary target term alone.
inline GradVector grad_trkl(const ProbVector& p, const ProbVector& q,
                            std::size_t m) {
  detail::check_pair(p, q);
  detail::check_target(p, static_cast<int>(m));
  const double qm = q[m];
  const double ab = std::log(q[m] / p[m]) -
                    std::log((1.0 - q[m]) / (1.0 - p[m]));
  GradVector out(p.size());
  for (std::size_t j = 0; j < p.size(); ++j)
    out[j] = (j == m) ? qm * (1.0 - qm) * ab : -q[j] * qm * ab;
  return out;
}

/// Full logit gradient of the weighted tail term (1 - q_m) * KL(q-hat||p-hat).
inline GradVector grad_nrkl(const ProbVector& p, const ProbVector& q,
                            std::size_t m) {
  detail::check_pair(p, q);
  detail::check_target(p, static_cast<int>(m));
  const double qm = q[m];
  const double prest = 1.0 - p[m];
  const double qrest = 1.0 - qm;
  const double dhat = detail::tail_kl(p.probs(), q.probs(), m);
  GradVector out(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (j == m) {
      out[j] = -qm * qrest * dhat;
    } else {
      const double lr = std::log((q[j] / qrest) / (p[j] / prest));
      out[j] = q[j] * (lr - qrest * dhat);
    }
  }
  return out;
}

/// Logit gradient of trkl + gamma * tail. The target entry carries only the
/// binary term: the renormalized tail has zero derivative along z_m.
inline GradVector grad_drkl(const ProbVector& p, const ProbVector& q,
                            std::size_t m, double gamma) {
  detail::check_pair(p, q);
  detail::check_target(p, static_cast<int>(m));
  if (!(gamma > 0.0))
    throw std::invalid_argument("grad_drkl gamma must be positive");
  const double qm = q[m];
  const double prest = 1.0 - p[m];
  const double qrest = 1.0 - qm;
  const double ab = std::log(qm / p[m]) - std::log(qrest / prest);
  const double dhat = detail::tail_kl(p.probs(), q.probs(), m);
  GradVector out(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (j == m) {
      out[j] = qm * qrest * ab;
    } else {
      const double qh = q[j] / qrest;
      const double lr = std::log(qh / (p[j] / prest));
      out[j] = -q[j] * qm * ab + gamma * qh * (lr - dhat);
    }
  }
  return out;
}

/// Derivative of the objective with respect to the raw probabilities q_j,
/// before any softmax chain. Feeds parameterizations whose Jacobian onto the
/// simplex is not softmax (the grid toy's location/scale student).
inline std::vector<double> dloss_dq(const ObjectiveSpec& spec,
                                    const ProbVector& p, const ProbVector& q,
                                    int m = -1) {
  validate(spec);
  detail::check_pair(p, q);
  if (needs_target(spec.kind)) detail::check_target(p, m);
  const std::size_t V = p.size();
  std::vector<double> g(V);
  switch (spec.kind) {
    case ObjectiveKind::fkl:
      for (std::size_t j = 0; j < V; ++j) g[j] = -p[j] / q[j];
      return g;
    case ObjectiveKind::rkl:
      for (std::size_t j = 0; j < V; ++j) g[j] = std::log(q[j] / p[j]) + 1.0;
      return g;
    case ObjectiveKind::sym_kl:
      for (std::size_t j = 0; j < V; ++j)
        g[j] = spec.alpha * (-p[j] / q[j]) +
               (1.0 - spec.alpha) * (std::log(q[j] / p[j]) + 1.0);
      return g;
    case ObjectiveKind::js:
      for (std::size_t j = 0; j < V; ++j) {
        const double mix = spec.beta_js * p[j] + (1.0 - spec.beta_js) * q[j];
        g[j] = (1.0 - spec.beta_js) * std::log(q[j] / mix);
      }
      return g;
    case ObjectiveKind::sfkl:
      for (std::size_t j = 0; j < V; ++j) {
        const double r =
            spec.lambda_skew * p[j] + (1.0 - spec.lambda_skew) * q[j];
        g[j] = -(1.0 - spec.lambda_skew) * p[j] / r;
      }
      return g;
    case ObjectiveKind::srkl:
      for (std::size_t j = 0; j < V; ++j) {
        const double s =
            (1.0 - spec.lambda_skew) * p[j] + spec.lambda_skew * q[j];
        g[j] = std::log(q[j] / s) + 1.0 - spec.lambda_skew * q[j] / s;
      }
      return g;
    case ObjectiveKind::trkl: {
      const auto mm = static_cast<std::size_t>(m);
      const double rest = std::log((1.0 - q[mm]) / (1.0 - p[mm])) + 1.0;
      for (std::size_t j = 0; j < V; ++j) g[j] = rest;
      g[mm] = std::log(q[mm] / p[mm]) + 1.0;
      return g;
    }
    case ObjectiveKind::nrkl: {
      const auto mm = static_cast<std::size_t>(m);
      const double prest = 1.0 - p[mm];
      const double qrest = 1.0 - q[mm];
      for (std::size_t j = 0; j < V; ++j)
        g[j] = (j == mm)
                   ? 0.0
                   : std::log((q[j] / qrest) / (p[j] / prest));
      return g;
    }
    case ObjectiveKind::drkl: {
      const auto mm = static_cast<std::size_t>(m);
      const double prest = 1.0 - p[mm];
      const double qrest = 1.0 - q[mm];
      const double dhat = detail::tail_kl(p.probs(), q.probs(), mm);
      const double rest = std::log(qrest / prest) + 1.0;
      for (std::size_t j = 0; j < V; ++j) {
        if (j == mm) {
          g[j] = std::log(q[mm] / p[mm]) + 1.0;
        } else {
          const double lr = std::log((q[j] / qrest) / (p[j] / prest));
          g[j] = rest + (spec.gamma / qrest) * (lr - dhat);
        }
      }
      return g;
    }
  }
  throw std::invalid_argument("dloss_dq: unknown objective kind");
}

/// Analytic logit gradient for any kind. No finite-difference fallback.
inline GradVector grad_any(const ObjectiveSpec& spec, const ProbVector& p,
                           const ProbVector& q, int m = -1) {
  validate(spec);
  detail::check_pair(p, q);
  if (needs_target(spec.kind)) detail::check_target(p, m);
  switch (spec.kind) {
    case ObjectiveKind::fkl:
      return grad_fkl(p, q);
    case ObjectiveKind::rkl:
      return grad_rkl(p, q);
    case ObjectiveKind::sym_kl: {
      const auto gf = grad_fkl(p, q);
      const auto gr = grad_rkl(p, q);
      GradVector out(p.size());
      for (std::size_t j = 0; j < p.size(); ++j)
        out[j] = spec.alpha * gf[j] + (1.0 - spec.alpha) * gr[j];
      return out;
    }
    case ObjectiveKind::js:
    case ObjectiveKind::sfkl:
    case ObjectiveKind::srkl:
      return detail::chain_through_softmax(q, dloss_dq(spec, p, q, m));
    case ObjectiveKind::trkl:
      return grad_trkl(p, q, static_cast<std::size_t>(m));
    case ObjectiveKind::nrkl:
      return grad_nrkl(p, q, static_cast<std::size_t>(m));
    case ObjectiveKind::drkl:
      return grad_drkl(p, q, static_cast<std::size_t>(m), spec.gamma);
  }
  throw std::invalid_argument("grad_any: unknown objective kind");
}

/// Central differences of evaluate(spec, p, softmax(z), m) per logit. Runs
/// at extended precision so round-off stays well below the h^2 truncation
/// term near zero-gradient coordinates.
inline GradVector fd_gradient(const ObjectiveSpec& spec, const ProbVector& p,
                              const LogitVector& z, int m = -1,
                              double h = 1e-5) {
  validate(spec);
  if (!(h >= 1e-8 && h <= 1e-3))
    throw std::invalid_argument("fd_gradient step must lie in [1e-8, 1e-3]");
  if (p.size() != z.size())
    throw std::invalid_argument("fd_gradient: teacher/logit length mismatch");
  if (needs_target(spec.kind)) detail::check_target(p, m);
  using Real = long double;
  std::vector<Real> pl(p.begin(), p.end());
  std::vector<Real> zl(z.begin(), z.end());
  const Real hl = static_cast<Real>(h);
  const Real floor = static_cast<Real>(kProbFloor);
  GradVector out(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) {
    const Real zj = zl[j];
    zl[j] = zj + hl;
    const Real fp = detail::eval_generic<Real>(
        spec, pl, detail::softmax_impl<Real>(zl, Real(1), floor), m);
    zl[j] = zj - hl;
    const Real fm = detail::eval_generic<Real>(
        spec, pl, detail::softmax_impl<Real>(zl, Real(1), floor), m);
    zl[j] = zj;
    out[j] = static_cast<double>((fp - fm) / (2 * hl));
  }
  return out;
}

/// rho = ||grad_rkl||_2 / ||grad_fkl||_2.
inline double grad_norm_ratio(const ProbVector& p, const ProbVector& q) {
  detail::check_pair(p, q);
  const auto gf = grad_fkl(p, q);
  const auto gr = grad_rkl(p, q);
  const double nf = std::sqrt(detail::dot(gf, gf));
  const double nr = std::sqrt(detail::dot(gr, gr));
  if (nf <= 1e-12)
    throw std::domain_error(
        "grad_norm_ratio undefined: forward gradient norm is zero");
  return nr / nf;
}

}  // namespace divlab
