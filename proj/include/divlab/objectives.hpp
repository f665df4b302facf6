#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "divlab/distributions.hpp"

namespace divlab {

enum class ObjectiveKind { fkl, rkl, sym_kl, js, sfkl, srkl, trkl, nrkl, drkl };

inline const char* kind_name(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::fkl: return "fkl";
    case ObjectiveKind::rkl: return "rkl";
    case ObjectiveKind::sym_kl: return "sym_kl";
    case ObjectiveKind::js: return "js";
    case ObjectiveKind::sfkl: return "sfkl";
    case ObjectiveKind::srkl: return "srkl";
    case ObjectiveKind::trkl: return "trkl";
    case ObjectiveKind::nrkl: return "nrkl";
    case ObjectiveKind::drkl: return "drkl";
  }
  throw std::invalid_argument("kind_name: unknown objective kind");
}

inline ObjectiveKind kind_from_name(const std::string& name) {
  if (name == "fkl") return ObjectiveKind::fkl;
  if (name == "rkl") return ObjectiveKind::rkl;
  if (name == "sym_kl") return ObjectiveKind::sym_kl;
  if (name == "js") return ObjectiveKind::js;
  if (name == "sfkl") return ObjectiveKind::sfkl;
  if (name == "srkl") return ObjectiveKind::srkl;
  if (name == "trkl") return ObjectiveKind::trkl;
  if (name == "nrkl") return ObjectiveKind::nrkl;
  if (name == "drkl") return ObjectiveKind::drkl;
  throw std::invalid_argument("unknown objective kind: " + name);
}

/// Objective selector plus every knob any kind consumes. Unused knobs are
/// ignored by kinds that do not read them.
struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::fkl;
  double alpha = 0.5;        // sym_kl: weight on the forward term
  double lambda_skew = 0.1;  // sfkl / srkl: skew toward the first argument
  double beta_js = 0.5;      // js: mixture weight on the teacher
  double gamma = 1.0;        // drkl: weight on the renormalized tail term
};

inline bool needs_target(ObjectiveKind k) {
  return k == ObjectiveKind::trkl || k == ObjectiveKind::nrkl ||
         k == ObjectiveKind::drkl;
}

inline void validate(const ObjectiveSpec& spec) {
  if (!(spec.alpha >= 0.0 && spec.alpha <= 1.0))
    throw std::invalid_argument("objective alpha must lie in [0,1]");
  if (!(spec.lambda_skew >= 0.0 && spec.lambda_skew < 1.0))
    throw std::invalid_argument("objective lambda must lie in [0,1)");
  if (!(spec.beta_js > 0.0 && spec.beta_js < 1.0))
    throw std::invalid_argument("objective beta must lie in (0,1)");
  if (!(spec.gamma > 0.0))
    throw std::invalid_argument("objective gamma must be positive");
}

namespace detail {

inline void check_pair(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("distributions differ in length");
}

inline void check_target(const ProbVector& p, int m) {
  if (m < 0) throw std::invalid_argument("objective requires a target index");
  if (static_cast<std::size_t>(m) >= p.size())
    throw std::out_of_range("target index out of range");
}

template <typename Real>
Real kl_sum(const std::vector<Real>& a, const std::vector<Real>& b) {
  Real s = 0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * std::log(a[j] / b[j]);
  return s;
}

template <typename Real>
Real binary_kl(Real a, Real b) {
  return a * std::log(a / b) +
         (Real(1) - a) * std::log((Real(1) - a) / (Real(1) - b));
}

/// Renormalized tail divergence KL(q-hat || p-hat), unweighted.
template <typename Real>
Real tail_kl(const std::vector<Real>& p, const std::vector<Real>& q,
             std::size_t m) {
  const Real prest = Real(1) - p[m];
  const Real qrest = Real(1) - q[m];
  Real s = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (k == m) continue;
    const Real qh = q[k] / qrest;
    const Real ph = p[k] / prest;
    s += qh * std::log(qh / ph);
  }
  // A KL is nonnegative; a negative sum is rounding noise near q-hat = p-hat.
  return std::max(s, Real(0));
}

/// One evaluator shared by evaluate() and the finite-difference oracle, so
/// the oracle can run at extended precision without duplicating formulas.
template <typename Real>
Real eval_generic(const ObjectiveSpec& spec, const std::vector<Real>& p,
                  const std::vector<Real>& q, int m) {
  const std::size_t V = p.size();
  const auto mix_eval = [&](Real wp) {
    // KL of each side against wp*p + (1-wp)*q, combined with weight wp on
    // the p side.
    Real s = 0;
    for (std::size_t j = 0; j < V; ++j) {
      const Real r = wp * p[j] + (Real(1) - wp) * q[j];
      s += wp * p[j] * std::log(p[j] / r) +
           (Real(1) - wp) * q[j] * std::log(q[j] / r);
    }
    return s;
  };
  switch (spec.kind) {
    case ObjectiveKind::fkl:
      return kl_sum(p, q);
    case ObjectiveKind::rkl:
      return kl_sum(q, p);
    case ObjectiveKind::sym_kl: {
      const Real a = static_cast<Real>(spec.alpha);
      return a * kl_sum(p, q) + (Real(1) - a) * kl_sum(q, p);
    }
    case ObjectiveKind::js:
      return mix_eval(static_cast<Real>(spec.beta_js));
    case ObjectiveKind::sfkl: {
      const Real lam = static_cast<Real>(spec.lambda_skew);
      Real s = 0;
      for (std::size_t j = 0; j < V; ++j) {
        const Real r = lam * p[j] + (Real(1) - lam) * q[j];
        s += p[j] * std::log(p[j] / r);
      }
      return s;
    }
    case ObjectiveKind::srkl: {
      const Real lam = static_cast<Real>(spec.lambda_skew);
      Real s = 0;
      for (std::size_t j = 0; j < V; ++j) {
        const Real r = (Real(1) - lam) * p[j] + lam * q[j];
        s += q[j] * std::log(q[j] / r);
      }
      return s;
    }
    case ObjectiveKind::trkl: {
      const auto mm = static_cast<std::size_t>(m);
      return binary_kl(q[mm], p[mm]);
    }
    case ObjectiveKind::nrkl: {
      const auto mm = static_cast<std::size_t>(m);
      return (Real(1) - q[mm]) * tail_kl(p, q, mm);
    }
    case ObjectiveKind::drkl: {
      const auto mm = static_cast<std::size_t>(m);
      return binary_kl(q[mm], p[mm]) +
             static_cast<Real>(spec.gamma) * tail_kl(p, q, mm);
    }
  }
  throw std::invalid_argument("evaluate: unknown objective kind");
}

}  // namespace detail

/// Mass-covering direction: sum over p of ln(p/q), in nats.
inline double fkl(const ProbVector& p, const ProbVector& q) {
  detail::check_pair(p, q);
  return detail::kl_sum(p.probs(), q.probs());
}

/// Mode-seeking direction: sum over q of ln(q/p), in nats.
inline double rkl(const ProbVector& p, const ProbVector& q) {
  detail::check_pair(p, q);
  return detail::kl_sum(q.probs(), p.probs());
}

/// alpha * fkl + (1 - alpha) * rkl.
inline double sym_kl(const ProbVector& p, const ProbVector& q, double alpha) {
  detail::check_pair(p, q);
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("sym_kl alpha must lie in [0,1]");
  return alpha * fkl(p, q) + (1.0 - alpha) * rkl(p, q);
}

/// beta * KL(p||mix) + (1-beta) * KL(q||mix) with mix = beta*p + (1-beta)*q.
inline double js(const ProbVector& p, const ProbVector& q, double beta) {
  detail::check_pair(p, q);
  if (!(beta > 0.0 && beta < 1.0))
    throw std::invalid_argument("js beta must lie in (0,1)");
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::js;
  spec.beta_js = beta;
  return detail::eval_generic<double>(spec, p.probs(), q.probs(), -1);
}

/// KL(p || lambda*p + (1-lambda)*q); recovers fkl as lambda -> 0.
inline double sfkl(const ProbVector& p, const ProbVector& q, double lambda) {
  detail::check_pair(p, q);
  if (!(lambda >= 0.0 && lambda < 1.0))
    throw std::invalid_argument("sfkl lambda must lie in [0,1)");
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::sfkl;
  spec.lambda_skew = lambda;
  return detail::eval_generic<double>(spec, p.probs(), q.probs(), -1);
}

/// KL(q || (1-lambda)*p + lambda*q); recovers rkl as lambda -> 0.
inline double srkl(const ProbVector& p, const ProbVector& q, double lambda) {
  detail::check_pair(p, q);
  if (!(lambda >= 0.0 && lambda < 1.0))
    throw std::invalid_argument("srkl lambda must lie in [0,1)");
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::srkl;
  spec.lambda_skew = lambda;
  return detail::eval_generic<double>(spec, p.probs(), q.probs(), -1);
}

/// Exact split of rkl at a target class: total = trkl + weight * nrkl.
/// nrkl is stored unweighted; weight = 1 - q_m.
struct Decomposition {
  double trkl;
  double nrkl;
  double weight;
  double total_rkl;
};

inline Decomposition decompose(const ProbVector& p, const ProbVector& q,
                               std::size_t m) {
  detail::check_pair(p, q);
  detail::check_target(p, static_cast<int>(m));
  const double t = detail::binary_kl(q[m], p[m]);
  const double n = detail::tail_kl(p.probs(), q.probs(), m);
  const double w = 1.0 - q[m];
  return Decomposition{t, n, w, t + w * n};
}

/// Binary target divergence plus gamma times the renormalized tail
/// divergence; gamma = 1 - q_m recovers rkl exactly.
inline double drkl(const ProbVector& p, const ProbVector& q, std::size_t m,
                   double gamma) {
  detail::check_pair(p, q);
  detail::check_target(p, static_cast<int>(m));
  if (!(gamma > 0.0)) throw std::invalid_argument("drkl gamma must be positive");
  const auto d = decompose(p, q, m);
  return d.trkl + gamma * d.nrkl;
}

/// Uniform dispatch. m is consulted only by the target-split kinds (trkl,
/// nrkl, drkl); pass -1 otherwise. nrkl evaluates the weighted term
/// (1 - q_m) * KL(q-hat || p-hat), matching its gradient.
inline double evaluate(const ObjectiveSpec& spec, const ProbVector& p,
                       const ProbVector& q, int m = -1) {
  validate(spec);
  detail::check_pair(p, q);
  if (needs_target(spec.kind)) detail::check_target(p, m);
  return detail::eval_generic<double>(spec, p.probs(), q.probs(), m);
}

}  // namespace divlab
