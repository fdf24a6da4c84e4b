#pragma once

// Ranking metrics, bootstrap intervals, paired permutation tests and
// prevalence tiers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "glori/error.hpp"
#include "glori/rng.hpp"

namespace glori {

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

namespace detail {

using ScoredLabel = std::pair<double, std::uint8_t>;

inline std::pair<std::size_t, std::size_t> count_classes(std::span<const ScoredLabel> v) {
  std::size_t pos = 0;
  for (const auto& [s, y] : v) pos += y ? 1 : 0;
  return {pos, v.size() - pos};
}

// Sorts `v` in place.
inline double auroc_sorted(std::vector<ScoredLabel>& v, std::size_t pos, std::size_t neg) {
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double concordant = 0.0, neg_below = 0.0;
  for (std::size_t i = 0; i < v.size();) {
    double pos_g = 0.0, neg_g = 0.0;
    const double s = v[i].first;
    for (; i < v.size() && v[i].first == s; ++i) (v[i].second ? pos_g : neg_g) += 1.0;
    concordant += pos_g * neg_below + 0.5 * pos_g * neg_g;
    neg_below += neg_g;
  }
  return concordant / (static_cast<double>(pos) * static_cast<double>(neg));
}

inline double auprc_sorted(std::vector<ScoredLabel>& v, std::size_t pos) {
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  double tp = 0.0, fp = 0.0, ap = 0.0;
  for (std::size_t i = 0; i < v.size();) {
    double pos_g = 0.0;
    const double s = v[i].first;
    for (; i < v.size() && v[i].first == s; ++i) (v[i].second ? pos_g : fp) += 1.0;
    tp += pos_g;
    if (pos_g > 0.0) ap += pos_g * (tp / (tp + fp));
  }
  return ap / static_cast<double>(pos);
}

inline std::vector<ScoredLabel> zip_checked(std::span<const double> scores,
                                            std::span<const std::uint8_t> labels, const char* op) {
  if (scores.size() != labels.size()) {
    throw ShapeError(std::string(op) + ": " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(labels.size()) + " labels");
  }
  std::vector<ScoredLabel> v(scores.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (labels[i] > 1) throw UsageError(std::string(op) + ": labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw NumericError(std::string(op) + ": non-finite score");
    v[i] = {scores[i], labels[i]};
  }
  return v;
}

}  // namespace detail

// P(score_pos > score_neg) + 0.5 P(tie).
inline double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  auto v = detail::zip_checked(scores, labels, "auroc");
  const auto [pos, neg] = detail::count_classes(v);
  if (pos == 0 || neg == 0) throw UsageError("auroc: labels contain a single class");
  return detail::auroc_sorted(v, pos, neg);
}

// Average precision; tied scores form a single threshold step.
inline double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  auto v = detail::zip_checked(scores, labels, "auprc");
  const auto [pos, neg] = detail::count_classes(v);
  if (pos == 0) throw UsageError("auprc: no positive labels");
  return detail::auprc_sorted(v, pos);
}

inline double macro_average(std::span<const double> per_finding, const std::vector<bool>& included) {
  if (per_finding.size() != included.size()) throw ShapeError("macro_average: mask size mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t m = 0; m < per_finding.size(); ++m) {
    if (included[m]) {
      sum += per_finding[m];
      ++n;
    }
  }
  if (n == 0) throw UsageError("macro_average: no included findings");
  return sum / static_cast<double>(n);
}

// Mean over the non-NaN entries, NaN when there are none.
inline double mean_defined(std::span<const double> values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : values) {
    if (!std::isnan(v)) {
      sum += v;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : kUndefined;
}

// ---------------------------------------------------------------------------

enum class Metric { auroc, auprc };

inline const char* to_string(Metric m) { return m == Metric::auroc ? "auroc" : "auprc"; }

struct ScoreMatrix {
  std::vector<std::uint64_t> image_ids;
  std::size_t n_findings = 0;
  std::vector<double> scores;        // [n, n_findings]
  std::vector<std::uint8_t> labels;  // [n, n_findings]

  std::size_t rows() const { return image_ids.size(); }
  double score(std::size_t i, std::size_t m) const { return scores[i * n_findings + m]; }
  std::uint8_t label(std::size_t i, std::size_t m) const { return labels[i * n_findings + m]; }

  void validate() const {
    if (scores.size() != rows() * n_findings || labels.size() != rows() * n_findings) {
      throw ShapeError("ScoreMatrix: scores/labels do not match image count x findings");
    }
  }
};

// Metric of finding m over the given rows (repeats allowed); NaN when the
// rows hold a single class.
inline double finding_metric(const ScoreMatrix& sm, std::span<const std::size_t> rows,
                             std::size_t m, Metric metric) {
  std::vector<detail::ScoredLabel> v(rows.size());
  std::size_t pos = 0;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    v[j] = {sm.score(rows[j], m), sm.label(rows[j], m)};
    pos += v[j].second;
  }
  const std::size_t neg = v.size() - pos;
  if (pos == 0 || neg == 0) return kUndefined;
  return metric == Metric::auroc ? detail::auroc_sorted(v, pos, neg) : detail::auprc_sorted(v, pos);
}

inline std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = i;
  return r;
}

inline std::vector<double> per_finding_metric(const ScoreMatrix& sm,
                                              std::span<const std::size_t> rows, Metric metric) {
  std::vector<double> out(sm.n_findings);
  for (std::size_t m = 0; m < sm.n_findings; ++m) out[m] = finding_metric(sm, rows, m, metric);
  return out;
}

// Macro metric over all rows; undefined findings are excluded.
inline double macro_metric(const ScoreMatrix& sm, Metric metric) {
  const auto rows = all_rows(sm.rows());
  const auto per = per_finding_metric(sm, rows, metric);
  const double v = mean_defined(per);
  if (std::isnan(v)) throw UsageError(std::string("macro ") + to_string(metric) + ": every finding is undefined");
  return v;
}

// ---------------------------------------------------------------------------
// Resampling

// A vector of statistics evaluated on a row multiset; NaN marks undefined.
using Statistic =
    std::function<std::vector<double>(const ScoreMatrix&, std::span<const std::size_t> rows)>;

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results must be written
// to per-index slots so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(jobs);
  for (std::size_t j = 0; j < jobs; ++j) {
    pool.emplace_back([&, j] {
      try {
        for (std::size_t i = j; i < n; i += jobs) fn(i);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Percentile with linear interpolation between order statistics.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw UsageError("percentile of empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct Interval {
  double observed = kUndefined;  // statistic on the original rows
  double mean = kUndefined;      // mean over defined resamples
  double lo95 = kUndefined;
  double hi95 = kUndefined;
  std::size_t resamples = 0;  // resamples where the statistic was defined

  bool defined() const { return resamples > 0; }
};

// Image-level percentile bootstrap of every component of `stat`. Resample b
// draws from substream(seed, "bootstrap", b). Components undefined in every
// resample come back with resamples == 0.
inline std::vector<Interval> bootstrap(const Statistic& stat, const ScoreMatrix& sm, std::size_t B,
                                       std::uint64_t seed, std::size_t jobs = 1) {
  sm.validate();
  if (B < 1) throw UsageError("bootstrap: B must be >= 1");
  if (sm.rows() == 0) throw UsageError("bootstrap: empty score matrix");
  const std::size_t n = sm.rows();
  const std::vector<double> observed = stat(sm, all_rows(n));
  std::vector<std::vector<double>> draws(B);
  parallel_for(B, jobs, [&](std::size_t b) {
    Engine eng = substream(seed, "bootstrap", b);
    std::vector<std::size_t> rows(n);
    for (auto& r : rows) r = static_cast<std::size_t>(uniform_index(eng, n));
    draws[b] = stat(sm, rows);
    if (draws[b].size() != observed.size()) throw UsageError("bootstrap: statistic size varies");
  });
  std::vector<Interval> out(observed.size());
  for (std::size_t k = 0; k < observed.size(); ++k) {
    std::vector<double> sample;
    sample.reserve(B);
    for (const auto& d : draws) {
      if (!std::isnan(d[k])) sample.push_back(d[k]);
    }
    Interval& iv = out[k];
    iv.observed = observed[k];
    iv.resamples = sample.size();
    if (sample.empty()) continue;
    double s = 0.0;
    for (double x : sample) s += x;
    iv.mean = s / static_cast<double>(sample.size());
    iv.lo95 = percentile(sample, 0.025);
    iv.hi95 = percentile(std::move(sample), 0.975);
  }
  return out;
}

using MatrixMetric = std::function<double(const ScoreMatrix&, std::span<const std::size_t> rows)>;

// Single-statistic form; throws when the metric is undefined in all resamples.
inline Interval bootstrap_ci(const MatrixMetric& metric, const ScoreMatrix& sm, std::size_t B,
                             std::uint64_t seed, std::size_t jobs = 1) {
  const Statistic stat = [&](const ScoreMatrix& s, std::span<const std::size_t> rows) {
    return std::vector<double>{metric(s, rows)};
  };
  Interval iv = bootstrap(stat, sm, B, seed, jobs).front();
  if (!iv.defined()) throw NumericError("bootstrap_ci: metric undefined in all resamples");
  return iv;
}

inline MatrixMetric macro(Metric metric) {
  return [metric](const ScoreMatrix& sm, std::span<const std::size_t> rows) {
    return mean_defined(per_finding_metric(sm, rows, metric));
  };
}

inline void check_paired(const ScoreMatrix& a, const ScoreMatrix& b) {
  a.validate();
  b.validate();
  if (a.image_ids != b.image_ids) throw UsageError("permutation test: image ids are not aligned");
  if (a.n_findings != b.n_findings || a.labels != b.labels) {
    throw UsageError("permutation test: label matrices differ");
  }
}

// Two-sided paired permutation test of stat(A) - stat(B), one p-value per
// component. Permutation p swaps the two models' score rows per image with
// probability 1/2, drawing from substream(seed, "permutation", p).
// Components whose observed difference is undefined get NaN.
inline std::vector<double> permutation_test(const Statistic& stat, const ScoreMatrix& a,
                                            const ScoreMatrix& b, std::size_t P, std::uint64_t seed,
                                            std::size_t jobs = 1) {
  check_paired(a, b);
  if (P < 1) throw UsageError("permutation test: P must be >= 1");
  const std::size_t n = a.rows(), M = a.n_findings;
  const auto rows = all_rows(n);
  const auto sa = stat(a, rows), sb = stat(b, rows);
  std::vector<double> delta(sa.size());
  for (std::size_t k = 0; k < sa.size(); ++k) delta[k] = sa[k] - sb[k];

  std::vector<std::vector<double>> perm_delta(P);
  parallel_for(P, jobs, [&](std::size_t p) {
    Engine eng = substream(seed, "permutation", p);
    ScoreMatrix pa = a, pb = b;
    for (std::size_t i = 0; i < n; ++i) {
      if (uniform01(eng) < 0.5) {
        std::swap_ranges(pa.scores.begin() + static_cast<std::ptrdiff_t>(i * M),
                         pa.scores.begin() + static_cast<std::ptrdiff_t>((i + 1) * M),
                         pb.scores.begin() + static_cast<std::ptrdiff_t>(i * M));
      }
    }
    const auto xa = stat(pa, rows), xb = stat(pb, rows);
    perm_delta[p].resize(xa.size());
    for (std::size_t k = 0; k < xa.size(); ++k) perm_delta[p][k] = xa[k] - xb[k];
  });

  std::vector<double> pvals(delta.size(), kUndefined);
  for (std::size_t k = 0; k < delta.size(); ++k) {
    if (std::isnan(delta[k])) continue;
    const double obs = std::abs(delta[k]);
    const double slack = 1e-12 * std::max(1.0, obs);
    std::size_t extreme = 0;
    for (const auto& d : perm_delta) {
      if (!std::isnan(d[k]) && std::abs(d[k]) >= obs - slack) ++extreme;
    }
    pvals[k] = static_cast<double>(1 + extreme) / static_cast<double>(1 + P);
  }
  return pvals;
}

inline double permutation_test(const MatrixMetric& metric, const ScoreMatrix& a,
                               const ScoreMatrix& b, std::size_t P, std::uint64_t seed,
                               std::size_t jobs = 1) {
  const Statistic stat = [&](const ScoreMatrix& s, std::span<const std::size_t> rows) {
    return std::vector<double>{metric(s, rows)};
  };
  const double p = permutation_test(stat, a, b, P, seed, jobs).front();
  if (std::isnan(p)) throw UsageError("permutation test: metric undefined on the observed data");
  return p;
}

// ---------------------------------------------------------------------------
// Prevalence tiers

enum class Tier { low, medium, high };

inline const char* to_string(Tier t) {
  switch (t) {
    case Tier::low: return "low";
    case Tier::medium: return "medium";
    default: return "high";
  }
}

struct TierCuts {
  double low_hi = 0.01;  // prevalence < low_hi is low
  double med_hi = 0.10;  // low_hi <= prevalence < med_hi is medium
};

inline Tier tier_of(double prevalence, TierCuts cuts = {}) {
  if (prevalence < cuts.low_hi) return Tier::low;
  if (prevalence < cuts.med_hi) return Tier::medium;
  return Tier::high;
}

inline std::vector<double> prevalences(std::span<const std::uint8_t> labels, std::size_t n_findings) {
  if (n_findings == 0 || labels.size() % n_findings) throw ShapeError("prevalences: ragged labels");
  const std::size_t n = labels.size() / n_findings;
  if (n == 0) throw UsageError("prevalences: no images");
  std::vector<double> p(n_findings, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < n_findings; ++m) p[m] += labels[i * n_findings + m];
  }
  for (double& v : p) v /= static_cast<double>(n);
  return p;
}

inline std::vector<Tier> stratify_prevalence(std::span<const std::uint8_t> labels,
                                             std::size_t n_findings, TierCuts cuts = {}) {
  std::vector<Tier> tiers;
  for (double p : prevalences(labels, n_findings)) tiers.push_back(tier_of(p, cuts));
  return tiers;
}

}  // namespace glori
