#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "divlab/distributions.hpp"
#include "divlab/gradients.hpp"
#include "divlab/objectives.hpp"

namespace divlab {

enum class InitKind { zero_logits, gaussian };

struct InitSpec {
  InitKind kind = InitKind::zero_logits;
  double stddev = 1.0;
  std::uint64_t seed = 0;
};

/// Full description of one logit-space fitting run. target_index -1 selects
/// the teacher argmax.
struct RunConfig {
  TeacherSpec teacher;
  ObjectiveSpec objective;
  int target_index = -1;
  int steps = 300;
  double learning_rate = 0.5;
  InitSpec init;
  int record_every = 1;
  double active_set_threshold = 1e-3;
};

struct TrajectoryRow {
  int step;
  double loss;
  double trkl;
  double nrkl;
  double one_minus_qm;
  double entropy;
  double confidence;
  int active_set_size;
  double grad_norm;
  /// Absent when grad_norm_ratio is undefined at this state (p = q).
  std::optional<double> grad_ratio_rho;
};

struct Trajectory {
  RunConfig config;
  std::vector<TrajectoryRow> rows;
  ProbVector final_student;
  bool diverged = false;
  std::vector<std::string> warnings;
};

/// Raised when a run produces a non-finite loss or gradient. Carries the
/// rows recorded before the failure and the last valid student state.
class RunDiverged : public std::runtime_error {
 public:
  RunDiverged(const std::string& msg, Trajectory partial)
      : std::runtime_error(msg), partial_(std::move(partial)) {}
  const Trajectory& partial() const { return partial_; }

 private:
  Trajectory partial_;
};

/// Called at every optimizer step with (step, logits, student).
using StepObserver =
    std::function<void(int, const LogitVector&, const ProbVector&)>;

namespace detail {

inline void validate_run_config(const RunConfig& c, std::size_t V) {
  validate(c.objective);
  if (c.steps < 1) throw std::invalid_argument("run config: steps must be >= 1");
  if (!(c.learning_rate > 0.0))
    throw std::invalid_argument("run config: learning_rate must be positive");
  if (c.record_every < 1)
    throw std::invalid_argument("run config: record_every must be >= 1");
  if (!(c.active_set_threshold > 0.0 && c.active_set_threshold < 1.0))
    throw std::invalid_argument(
        "run config: active_set_threshold must lie in (0,1)");
  if (c.init.kind == InitKind::gaussian && !(c.init.stddev > 0.0))
    throw std::invalid_argument("run config: init stddev must be positive");
  if (c.target_index >= 0 && static_cast<std::size_t>(c.target_index) >= V)
    throw std::out_of_range("run config: target_index out of range");
}

/// Box-Muller normals from explicit mt19937_64 bits, so draws do not depend
/// on the standard library's normal_distribution implementation.
inline LogitVector gaussian_logits(std::size_t n, double stddev,
                                   std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const auto uniform01 = [&gen]() {
    return (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53;
  };
  LogitVector z(n);
  for (std::size_t j = 0; j < n; j += 2) {
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    z[j] = stddev * r * std::cos(2.0 * std::numbers::pi * u2);
    if (j + 1 < n) z[j + 1] = stddev * r * std::sin(2.0 * std::numbers::pi * u2);
  }
  return z;
}

inline LogitVector initial_logits(const InitSpec& init, std::size_t V) {
  if (init.kind == InitKind::zero_logits) return LogitVector(V, 0.0);
  return gaussian_logits(V, init.stddev, init.seed);
}

inline double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline std::optional<double> try_rho(const ProbVector& p, const ProbVector& q) {
  try {
    return grad_norm_ratio(p, q);
  } catch (const std::domain_error&) {
    return std::nullopt;
  }
}

inline TrajectoryRow make_row(int step, double loss, const ProbVector& p,
                              const ProbVector& q, std::size_t m,
                              double threshold, double gnorm) {
  const auto d = decompose(p, q, m);
  return TrajectoryRow{step,
                       loss,
                       d.trkl,
                       d.nrkl,
                       d.weight,
                       entropy(q),
                       confidence(q),
                       active_set_size(q, threshold),
                       gnorm,
                       try_rho(p, q)};
}

}  // namespace detail

/// Full-batch gradient descent on student logits against a fixed teacher.
/// Records state every record_every steps plus the final step. Deterministic
/// given the config.
inline Trajectory run_fit(const RunConfig& config,
                          const StepObserver& observer = {}) {
  const ProbVector p = make_teacher(config.teacher);
  const std::size_t V = p.size();
  detail::validate_run_config(config, V);
  const std::size_t m = config.target_index >= 0
                            ? static_cast<std::size_t>(config.target_index)
                            : p.argmax();
  LogitVector z = detail::initial_logits(config.init, V);
  std::vector<TrajectoryRow> rows;
  ProbVector q = softmax(z);
  const auto diverge = [&](int t) {
    ProbVector last = q;
    Trajectory partial{config, std::move(rows), std::move(last), true, {}};
    throw RunDiverged("run diverged at step " + std::to_string(t), partial);
  };
  for (int t = 0; t <= config.steps; ++t) {
    for (double v : z)
      if (!std::isfinite(v)) diverge(t);
    q = softmax(z);
    const double loss =
        evaluate(config.objective, p, q, static_cast<int>(m));
    const GradVector grad =
        grad_any(config.objective, p, q, static_cast<int>(m));
    const double gnorm = detail::norm2(grad);
    if (!std::isfinite(loss) || !std::isfinite(gnorm)) diverge(t);
    if (t % config.record_every == 0 || t == config.steps) {
      if (rows.empty() || rows.back().step != t)
        rows.push_back(detail::make_row(t, loss, p, q, m,
                                        config.active_set_threshold, gnorm));
    }
    if (observer) observer(t, z, q);
    if (t < config.steps)
      for (std::size_t j = 0; j < V; ++j)
        z[j] -= config.learning_rate * grad[j];
  }
  return Trajectory{config, std::move(rows), q, false, {}};
}

/// One run per spec, all from the identical initialization and schedule. A
/// diverging run is kept as its partial trajectory (diverged = true) and the
/// remaining specs still execute.
inline std::vector<Trajectory> compare_objectives(
    const std::vector<ObjectiveSpec>& specs, RunConfig shared) {
  if (specs.empty())
    throw std::invalid_argument("compare_objectives: no objectives given");
  std::vector<Trajectory> out;
  out.reserve(specs.size());
  for (const auto& spec : specs) {
    shared.objective = spec;
    try {
      out.push_back(run_fit(shared));
    } catch (const RunDiverged& e) {
      out.push_back(e.partial());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grid toy: two-parameter Gaussian student fit to a binned mixture teacher.

struct MixtureRunConfig {
  MixtureGridTeacher teacher;
  ObjectiveSpec objective;
  int target_index = -1;
  int steps = 400;
  double learning_rate = 0.05;
  double init_mean = 0.0;
  double init_stddev = 2.0;
  int record_every = 1;
  double active_set_threshold = 1e-3;
};

struct MixtureResult {
  Trajectory trajectory;
  double mean;
  double stddev;
};

namespace detail {

struct GaussianBinGrads {
  std::vector<double> q;         // raw masses / Z, before flooring
  std::vector<double> dq_dmean;  // d q_j / d mean
  std::vector<double> dq_dls;    // d q_j / d log-std
};

/// Derivatives of the renormalized bin-integrated Gaussian with respect to
/// its mean and log-std, by the quotient rule through the normalizer.
inline GaussianBinGrads gaussian_bin_grads(const Grid& g, double mean,
                                           double log_std) {
  const double std = std::exp(log_std);
  const int B = g.bins;
  std::vector<double> u(static_cast<std::size_t>(B) + 1);
  std::vector<double> phi(static_cast<std::size_t>(B) + 1);
  std::vector<double> cdf(static_cast<std::size_t>(B) + 1);
  for (int j = 0; j <= B; ++j) {
    u[j] = (g.edge(j) - mean) / std;
    phi[j] = normal_pdf(u[j]);
    cdf[j] = normal_cdf(u[j]);
  }
  GaussianBinGrads out;
  out.q.resize(static_cast<std::size_t>(B));
  out.dq_dmean.resize(static_cast<std::size_t>(B));
  out.dq_dls.resize(static_cast<std::size_t>(B));
  double Z = 0.0, dZm = 0.0, dZs = 0.0;
  std::vector<double> raw(static_cast<std::size_t>(B));
  std::vector<double> drm(static_cast<std::size_t>(B));
  std::vector<double> drs(static_cast<std::size_t>(B));
  for (int j = 0; j < B; ++j) {
    raw[j] = cdf[j + 1] - cdf[j];
    drm[j] = -(phi[j + 1] - phi[j]) / std;
    drs[j] = -(u[j + 1] * phi[j + 1] - u[j] * phi[j]);  // d/d log-std
    Z += raw[j];
    dZm += drm[j];
    dZs += drs[j];
  }
  for (int j = 0; j < B; ++j) {
    out.q[j] = raw[j] / Z;
    out.dq_dmean[j] = (drm[j] - out.q[j] * dZm) / Z;
    out.dq_dls[j] = (drs[j] - out.q[j] * dZs) / Z;
  }
  return out;
}

}  // namespace detail

/// Gradient descent on (mean, log-std) of a bin-integrated Gaussian student.
/// A std falling below one bin width is clamped back with a recorded
/// warning. grad_norm reports the two-parameter gradient norm.
inline MixtureResult mixture_toy_run(const MixtureRunConfig& config) {
  validate(config.objective);
  if (config.steps < 1)
    throw std::invalid_argument("mixture config: steps must be >= 1");
  if (!(config.learning_rate > 0.0))
    throw std::invalid_argument("mixture config: learning_rate must be positive");
  if (config.record_every < 1)
    throw std::invalid_argument("mixture config: record_every must be >= 1");
  if (!(config.init_stddev > 0.0))
    throw std::invalid_argument("mixture config: init stddev must be positive");
  const ProbVector p = make_teacher(config.teacher);
  const Grid g{config.teacher.lo, config.teacher.hi, config.teacher.bins};
  const double min_std = g.width();
  const std::size_t m = config.target_index >= 0
                            ? static_cast<std::size_t>(config.target_index)
                            : p.argmax();
  if (m >= p.size())
    throw std::out_of_range("mixture config: target_index out of range");
  double mean = config.init_mean;
  double ls = std::log(config.init_stddev);
  std::vector<TrajectoryRow> rows;
  std::vector<std::string> warnings;
  bool warned = false;
  ProbVector q = ProbVector(std::vector<double>{0.5, 0.5});
  const auto diverge = [&](int t) {
    RunConfig rc{config.teacher, config.objective,
                 static_cast<int>(m),   config.steps,
                 config.learning_rate,  InitSpec{},
                 config.record_every,   config.active_set_threshold};
    Trajectory partial{rc, std::move(rows), q, true, warnings};
    throw RunDiverged("mixture run diverged at step " + std::to_string(t),
                      partial);
  };
  for (int t = 0; t <= config.steps; ++t) {
    const auto bg = detail::gaussian_bin_grads(g, mean, ls);
    // A student escaping the grid underflows the normalizer to zero; the
    // masses turn non-finite before any loss is computable.
    for (const double v : bg.q)
      if (!std::isfinite(v)) diverge(t);
    q = ProbVector(bg.q);
    const double loss =
        evaluate(config.objective, p, q, static_cast<int>(m));
    const auto dldq = dloss_dq(config.objective, p, q, static_cast<int>(m));
    double gm = 0.0, gs = 0.0;
    for (std::size_t j = 0; j < bg.q.size(); ++j) {
      gm += dldq[j] * bg.dq_dmean[j];
      gs += dldq[j] * bg.dq_dls[j];
    }
    const double gnorm = std::sqrt(gm * gm + gs * gs);
    if (!std::isfinite(loss) || !std::isfinite(gnorm)) diverge(t);
    if (t % config.record_every == 0 || t == config.steps) {
      if (rows.empty() || rows.back().step != t)
        rows.push_back(detail::make_row(t, loss, p, q, m,
                                        config.active_set_threshold, gnorm));
    }
    if (t < config.steps) {
      mean -= config.learning_rate * gm;
      ls -= config.learning_rate * gs;
      if (std::exp(ls) < min_std) {
        ls = std::log(min_std);
        if (!warned) {
          warnings.push_back("student std clamped to bin width at step " +
                             std::to_string(t + 1));
          warned = true;
        }
      }
    }
  }
  RunConfig rc{config.teacher, config.objective,
               static_cast<int>(m),   config.steps,
               config.learning_rate,  InitSpec{},
               config.record_every,   config.active_set_threshold};
  Trajectory traj{rc, std::move(rows), q, false, warnings};
  return MixtureResult{std::move(traj), mean, std::exp(ls)};
}

/// One grid-toy run per objective, shared teacher and schedule.
inline std::vector<MixtureResult> mixture_toy(
    const std::vector<ObjectiveSpec>& specs, MixtureRunConfig shared) {
  if (specs.empty())
    throw std::invalid_argument("mixture_toy: no objectives given");
  std::vector<MixtureResult> out;
  out.reserve(specs.size());
  for (const auto& spec : specs) {
    shared.objective = spec;
    out.push_back(mixture_toy_run(shared));
  }
  return out;
}

struct RhoPoint {
  int step;
  double rho;
};

/// Runs the reverse objective and measures the gradient-norm ratio at every
/// recorded step. An undefined ratio (student equals teacher) propagates as
/// the underlying error.
inline std::vector<RhoPoint> rho_probe(RunConfig config) {
  config.objective = ObjectiveSpec{};
  config.objective.kind = ObjectiveKind::rkl;
  const ProbVector p = make_teacher(config.teacher);
  std::vector<RhoPoint> series;
  const int every = config.record_every;
  const int last = config.steps;
  run_fit(config, [&](int t, const LogitVector&, const ProbVector& q) {
    if (t % every == 0 || t == last) {
      if (series.empty() || series.back().step != t)
        series.push_back(RhoPoint{t, grad_norm_ratio(p, q)});
    }
  });
  return series;
}

/// First recorded index whose relative loss decrease stays below rel for
/// hold consecutive rows; nullopt when the series never flattens.
inline std::optional<int> steps_to_plateau(const std::vector<double>& losses,
                                           double rel = 1e-4, int hold = 10) {
  int n = 0;
  for (std::size_t t = 1; t < losses.size(); ++t) {
    const double d = (losses[t - 1] - losses[t]) /
                     std::max(std::abs(losses[t - 1]), 1e-300);
    n = d < rel ? n + 1 : 0;
    if (n >= hold) return static_cast<int>(t) - hold + 1;
  }
  return std::nullopt;
}

}  // namespace divlab
