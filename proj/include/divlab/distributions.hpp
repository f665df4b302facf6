#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace divlab {

/// Floor applied to every probability entry before renormalization. Keeps
/// log ratios finite; configurable per call site.
inline constexpr double kProbFloor = 1e-12;

using LogitVector = std::vector<double>;

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <typename Real>
std::vector<Real> softmax_impl(const std::vector<Real>& z, Real temperature,
                               Real floor) {
  const Real zmax = *std::max_element(z.begin(), z.end());
  std::vector<Real> out(z.size());
  Real sum = 0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    out[j] = std::exp((z[j] - zmax) / temperature);
    sum += out[j];
  }
  Real fsum = 0;
  for (auto& v : out) {
    v = std::max(v / sum, floor);
    fsum += v;
  }
  for (auto& v : out) v /= fsum;
  return out;
}

}  // namespace detail

/// A strictly positive categorical distribution over V >= 2 classes.
/// Construction clamps entries to `floor` and renormalizes, so every entry
/// lands in (0,1) and the total is 1 up to rounding.
class ProbVector {
 public:
  explicit ProbVector(std::vector<double> weights, double floor = kProbFloor) {
    detail::require(weights.size() >= 2, "ProbVector needs at least 2 classes");
    detail::require(floor > 0.0 && floor < 1.0 / static_cast<double>(weights.size()),
                    "ProbVector floor out of range");
    double sum = 0.0;
    for (double w : weights) {
      detail::require(std::isfinite(w), "ProbVector entry not finite");
      detail::require(w >= 0.0, "ProbVector entry negative");
      sum += w;
    }
    detail::require(sum > 0.0, "ProbVector weights sum to zero");
    for (auto& w : weights) w = std::max(w / sum, floor);
    double fsum = 0.0;
    for (double w : weights) fsum += w;
    for (auto& w : weights) w /= fsum;
    probs_ = std::move(weights);
  }

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t j) const { return probs_[j]; }
  const std::vector<double>& probs() const { return probs_; }
  auto begin() const { return probs_.begin(); }
  auto end() const { return probs_.end(); }

  std::size_t argmax() const {
    return static_cast<std::size_t>(
        std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
  }

 private:
  std::vector<double> probs_;
};

inline ProbVector softmax(const LogitVector& z, double temperature = 1.0,
                          double floor = kProbFloor) {
  detail::require(z.size() >= 2, "softmax needs at least 2 logits");
  detail::require(temperature > 0.0, "softmax temperature must be positive");
  for (double v : z)
    detail::require(std::isfinite(v), "softmax logit not finite");
  return ProbVector(detail::softmax_impl<double>(z, temperature, floor), floor);
}

/// Two-point marginal (target mass, remaining mass).
struct BinaryMarginal {
  double target;
  double rest;
};

/// The non-target classes renormalized to sum to 1, original order with the
/// target index removed.
struct NonTargetDist {
  std::vector<double> probs;
  std::size_t target_index;
};

inline std::pair<BinaryMarginal, NonTargetDist> split_target(
    const ProbVector& p, std::size_t m) {
  if (m >= p.size()) throw std::out_of_range("split_target: index out of range");
  const double pm = p[m];
  const double rest = 1.0 - pm;
  NonTargetDist hat;
  hat.target_index = m;
  hat.probs.reserve(p.size() - 1);
  for (std::size_t k = 0; k < p.size(); ++k)
    if (k != m) hat.probs.push_back(p[k] / rest);
  return {BinaryMarginal{pm, rest}, std::move(hat)};
}

/// Shannon entropy in nats.
inline double entropy(const ProbVector& p) {
  double h = 0.0;
  for (double v : p) h -= v * std::log(v);
  return h;
}

/// Largest probability mass (the plotted prediction-confidence statistic).
inline double confidence(const ProbVector& p) { return p[p.argmax()]; }

/// Number of classes whose mass strictly exceeds the threshold.
inline int active_set_size(const ProbVector& q, double threshold) {
  detail::require(threshold > 0.0 && threshold < 1.0,
                  "active_set_size threshold must lie in (0,1)");
  int n = 0;
  for (double v : q)
    if (v > threshold) ++n;
  return n;
}

// ---------------------------------------------------------------------------
// Teacher generators

/// Rank-frequency teacher: p_j proportional to rank^(-exponent), ranks
/// assigned by a seeded permutation (identity when permute is false).
struct ZipfTeacher {
  int vocab_size = 2;
  double exponent = 1.0;
  std::uint64_t seed = 0;
  bool permute = true;
};

/// Two designated classes carry the given mass fractions; the remainder is
/// spread uniformly. first_mass = second_mass = 1/V yields the exact uniform
/// distribution.
struct TwoSpikeTeacher {
  int vocab_size = 3;
  double first_mass = 0.5;
  double second_mass = 0.25;
};

/// Gaussian mixture integrated over a uniform grid of bins and renormalized.
struct MixtureGridTeacher {
  std::vector<double> means;
  std::vector<double> stds;
  std::vector<double> weights;
  double lo = -8.0;
  double hi = 8.0;
  int bins = 512;
};

using TeacherSpec = std::variant<ZipfTeacher, TwoSpikeTeacher, MixtureGridTeacher>;

/// Uniform bin layout shared by the mixture teacher and the grid toy.
struct Grid {
  double lo;
  double hi;
  int bins;

  double edge(int j) const {
    return lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(bins);
  }
  double center(int j) const { return 0.5 * (edge(j) + edge(j + 1)); }
  double width() const { return (hi - lo) / static_cast<double>(bins); }
};

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// Unnormalized per-bin mass of N(mean, std) on the grid.
inline std::vector<double> discretize_gaussian(const Grid& g, double mean,
                                               double stddev) {
  detail::require(stddev > 0.0, "discretize_gaussian: stddev must be positive");
  std::vector<double> raw(static_cast<std::size_t>(g.bins));
  double prev = normal_cdf((g.edge(0) - mean) / stddev);
  for (int j = 0; j < g.bins; ++j) {
    const double next = normal_cdf((g.edge(j + 1) - mean) / stddev);
    raw[static_cast<std::size_t>(j)] = next - prev;
    prev = next;
  }
  return raw;
}

namespace detail {

// Explicit Fisher-Yates so permutations stay stable across standard
// libraries.
inline std::vector<std::size_t> seeded_permutation(std::size_t n,
                                                   std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 gen(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(gen() % (i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

}  // namespace detail

inline ProbVector make_teacher(const ZipfTeacher& t) {
  detail::require(t.vocab_size >= 2, "zipf teacher needs vocab_size >= 2");
  detail::require(t.exponent > 0.0, "zipf exponent must be positive");
  const auto V = static_cast<std::size_t>(t.vocab_size);
  std::vector<double> w(V);
  for (std::size_t r = 0; r < V; ++r)
    w[r] = std::pow(static_cast<double>(r + 1), -t.exponent);
  if (t.permute) {
    const auto perm = detail::seeded_permutation(V, t.seed);
    std::vector<double> shuffled(V);
    for (std::size_t r = 0; r < V; ++r) shuffled[perm[r]] = w[r];
    w = std::move(shuffled);
  }
  return ProbVector(std::move(w));
}

inline ProbVector make_teacher(const TwoSpikeTeacher& t) {
  detail::require(t.vocab_size >= 3, "two_spike teacher needs vocab_size >= 3");
  detail::require(t.first_mass > 0.0 && t.second_mass > 0.0,
                  "two_spike masses must be positive");
  detail::require(t.first_mass + t.second_mass < 1.0,
                  "two_spike masses must leave room for the tail");
  const auto V = static_cast<std::size_t>(t.vocab_size);
  const double tail =
      (1.0 - t.first_mass - t.second_mass) / static_cast<double>(V - 2);
  std::vector<double> w(V, tail);
  w[0] = t.first_mass;
  w[1] = t.second_mass;
  return ProbVector(std::move(w));
}

inline ProbVector make_teacher(const MixtureGridTeacher& t) {
  detail::require(!t.means.empty(), "mixture teacher needs components");
  detail::require(t.means.size() == t.stds.size() &&
                      t.means.size() == t.weights.size(),
                  "mixture component lists must have equal length");
  detail::require(t.bins >= 2, "mixture grid needs at least 2 bins");
  detail::require(t.lo < t.hi, "mixture grid bounds out of order");
  double wsum = 0.0;
  for (double w : t.weights) {
    detail::require(w > 0.0, "mixture weights must be positive");
    wsum += w;
  }
  detail::require(std::abs(wsum - 1.0) <= 1e-9, "mixture weights must sum to 1");
  const Grid g{t.lo, t.hi, t.bins};
  std::vector<double> raw(static_cast<std::size_t>(t.bins), 0.0);
  for (std::size_t c = 0; c < t.means.size(); ++c) {
    const auto part = discretize_gaussian(g, t.means[c], t.stds[c]);
    for (std::size_t j = 0; j < raw.size(); ++j)
      raw[j] += t.weights[c] * part[j];
  }
  return ProbVector(std::move(raw));
}

inline ProbVector make_teacher(const TeacherSpec& spec) {
  return std::visit([](const auto& t) { return make_teacher(t); }, spec);
}

inline int teacher_size(const TeacherSpec& spec) {
  if (const auto* z = std::get_if<ZipfTeacher>(&spec)) return z->vocab_size;
  if (const auto* s = std::get_if<TwoSpikeTeacher>(&spec)) return s->vocab_size;
  return std::get<MixtureGridTeacher>(spec).bins;
}

}  // namespace divlab
