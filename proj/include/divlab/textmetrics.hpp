#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

namespace divlab {

/// Pre-tokenized sequence; tokens are opaque strings (integer ids arrive as
/// their decimal spelling).
using TokenSeq = std::vector<std::string>;

struct PromptRecord {
  std::string prompt_id;
  TokenSeq reference;
  std::vector<TokenSeq> candidates;
  /// Empty, or one list per candidate with one value per token, each in (0,1].
  std::vector<std::vector<double>> confidences;
};

struct GenerationSet {
  std::vector<PromptRecord> prompts;
};

namespace detail {

inline std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// n-gram keys joined by a separator no real token contains.
inline std::string ngram_key(const TokenSeq& s, std::size_t start,
                             std::size_t n) {
  std::string key = s[start];
  for (std::size_t i = 1; i < n; ++i) {
    key.push_back('\x1f');
    key += s[start + i];
  }
  return key;
}

inline std::unordered_map<std::string, std::size_t> ngram_counts(
    const TokenSeq& s, std::size_t n) {
  std::unordered_map<std::string, std::size_t> counts;
  if (s.size() >= n)
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[ngram_key(s, i, n)];
  return counts;
}

}  // namespace detail

/// LCS-based F1: P = LCS/|cand|, R = LCS/|ref|, 0 when the LCS is empty.
inline double rouge_l(const TokenSeq& reference, const TokenSeq& candidate) {
  if (reference.empty() || candidate.empty())
    throw std::invalid_argument("rouge_l: empty token sequence");
  const auto lcs = static_cast<double>(detail::lcs_length(reference, candidate));
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(candidate.size());
  const double recall = lcs / static_cast<double>(reference.size());
  return 2.0 * precision * recall / (precision + recall);
}

/// Unique n-grams over total n-gram occurrences, pooled across candidates.
inline double distinct_n(const std::vector<TokenSeq>& candidates, int n) {
  if (n < 1) throw std::invalid_argument("distinct_n: n must be >= 1");
  std::unordered_set<std::string> unique;
  std::size_t total = 0;
  const auto un = static_cast<std::size_t>(n);
  for (const auto& cand : candidates) {
    if (cand.size() < un) continue;
    for (std::size_t i = 0; i + un <= cand.size(); ++i) {
      unique.insert(detail::ngram_key(cand, i, un));
      ++total;
    }
  }
  if (total == 0)
    throw std::domain_error(
        "distinct_n undefined: every candidate is shorter than n");
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

namespace detail {

/// BLEU with uniform weights up to max_n, add-eps smoothed precisions, and
/// the closest-reference-length brevity penalty (ties resolved toward the
/// shorter reference). Orders with no candidate n-grams contribute a neutral
/// precision of 1.
inline double bleu(const TokenSeq& candidate,
                   const std::vector<const TokenSeq*>& references, int max_n,
                   double eps) {
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto un = static_cast<std::size_t>(n);
    if (candidate.size() < un) continue;
    const auto cand_counts = ngram_counts(candidate, un);
    std::size_t total = candidate.size() - un + 1;
    std::size_t clipped = 0;
    for (const auto& [gram, count] : cand_counts) {
      std::size_t best = 0;
      for (const auto* ref : references) {
        const auto rc = ngram_counts(*ref, un);
        const auto it = rc.find(gram);
        if (it != rc.end()) best = std::max(best, it->second);
      }
      clipped += std::min(count, best);
    }
    log_sum += std::log((static_cast<double>(clipped) + eps) /
                        (static_cast<double>(total) + eps));
  }
  const double geo = std::exp(log_sum / static_cast<double>(max_n));
  const auto c = candidate.size();
  std::size_t r = references.front()->size();
  for (const auto* ref : references) {
    const auto len = ref->size();
    const auto dist = [&](std::size_t l) {
      return l > c ? l - c : c - l;
    };
    if (dist(len) < dist(r) || (dist(len) == dist(r) && len < r)) r = len;
  }
  const double bp = c > r ? 1.0
                          : std::exp(1.0 - static_cast<double>(r) /
                                               static_cast<double>(c));
  return bp * geo;
}

}  // namespace detail

/// Mean leave-one-out BLEU across the candidate set.
inline double self_bleu(const std::vector<TokenSeq>& candidates, int max_n = 4,
                        double eps = 1e-9) {
  if (candidates.size() < 2)
    throw std::invalid_argument("self_bleu needs at least 2 candidates");
  if (max_n < 1) throw std::invalid_argument("self_bleu: max_n must be >= 1");
  for (const auto& cand : candidates)
    if (cand.empty())
      throw std::invalid_argument("self_bleu: empty token sequence");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    std::vector<const TokenSeq*> refs;
    refs.reserve(candidates.size() - 1);
    for (std::size_t j = 0; j < candidates.size(); ++j)
      if (j != i) refs.push_back(&candidates[j]);
    sum += detail::bleu(candidates[i], refs, max_n, eps);
  }
  return sum / static_cast<double>(candidates.size());
}

struct ConfidenceSummary {
  double mean;
  double median;
  double p90;
};

/// Order statistics over the pooled per-token confidences of every candidate
/// in the set. median averages the middle pair on even counts; p90 is
/// nearest-rank, sorted[floor(0.9 n)].
inline ConfidenceSummary confidence_summary(const GenerationSet& gens) {
  std::vector<double> pool;
  for (const auto& rec : gens.prompts)
    for (const auto& list : rec.confidences)
      pool.insert(pool.end(), list.begin(), list.end());
  if (pool.empty())
    throw std::invalid_argument(
        "confidence_summary: no confidence data present");
  std::sort(pool.begin(), pool.end());
  double mean = 0.0;
  for (double v : pool) mean += v;
  mean /= static_cast<double>(pool.size());
  const std::size_t n = pool.size();
  const double median =
      n % 2 == 1 ? pool[n / 2] : 0.5 * (pool[n / 2 - 1] + pool[n / 2]);
  const auto rank = std::min(
      n - 1, static_cast<std::size_t>(std::floor(0.9 * static_cast<double>(n))));
  return ConfidenceSummary{mean, median, pool[rank]};
}

// ---------------------------------------------------------------------------
// Loading: one JSON object per line.
// {"prompt_id": ..., "reference": [...], "candidates": [[...], ...],
//  "confidences": [[...], ...]}   (confidences optional)

namespace detail {

inline std::string token_from_json(const nlohmann::json& v,
                                   const std::string& where) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw std::invalid_argument(where + ": tokens must be strings or integers");
}

inline TokenSeq tokens_from_json(const nlohmann::json& v,
                                 const std::string& where) {
  if (!v.is_array() || v.empty())
    throw std::invalid_argument(where + ": expected a non-empty token array");
  TokenSeq out;
  out.reserve(v.size());
  for (const auto& t : v) out.push_back(token_from_json(t, where));
  return out;
}

}  // namespace detail

inline GenerationSet load_generation_set(std::istream& in,
                                         const std::string& name = "input") {
  GenerationSet set;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = name + ":" + std::to_string(lineno);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::invalid_argument(where + ": " + e.what());
    }
    if (!rec.is_object())
      throw std::invalid_argument(where + ": expected a JSON object");
    for (const auto& [key, _] : rec.items())
      if (key != "prompt_id" && key != "reference" && key != "candidates" &&
          key != "confidences")
        throw std::invalid_argument(where + ": unknown field '" + key + "'");
    PromptRecord pr;
    if (!rec.contains("prompt_id"))
      throw std::invalid_argument(where + ": missing prompt_id");
    pr.prompt_id = detail::token_from_json(rec["prompt_id"], where);
    if (!rec.contains("reference"))
      throw std::invalid_argument(where + ": missing reference");
    pr.reference = detail::tokens_from_json(rec["reference"], where);
    if (!rec.contains("candidates") || !rec["candidates"].is_array() ||
        rec["candidates"].empty())
      throw std::invalid_argument(where +
                                  ": candidates must be a non-empty array");
    for (const auto& c : rec["candidates"])
      pr.candidates.push_back(detail::tokens_from_json(c, where));
    if (rec.contains("confidences")) {
      const auto& conf = rec["confidences"];
      if (!conf.is_array() || conf.size() != pr.candidates.size())
        throw std::invalid_argument(
            where + ": confidences must hold one list per candidate");
      for (std::size_t i = 0; i < conf.size(); ++i) {
        if (!conf[i].is_array() ||
            conf[i].size() != pr.candidates[i].size())
          throw std::invalid_argument(
              where + ": confidence list length must match its candidate");
        std::vector<double> vals;
        for (const auto& v : conf[i]) {
          if (!v.is_number())
            throw std::invalid_argument(where +
                                        ": confidences must be numbers");
          const double d = v.get<double>();
          if (!(d > 0.0 && d <= 1.0))
            throw std::invalid_argument(where +
                                        ": confidences must lie in (0,1]");
          vals.push_back(d);
        }
        pr.confidences.push_back(std::move(vals));
      }
    }
    set.prompts.push_back(std::move(pr));
  }
  return set;
}

inline GenerationSet load_generation_set_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open input file: " + path);
  return load_generation_set(in, path);
}

}  // namespace divlab
