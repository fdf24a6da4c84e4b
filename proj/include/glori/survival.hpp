#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "glori/error.hpp"

namespace glori {

struct SurvivalRecord {
  std::uint64_t subject_id = 0;
  double time = 0.0;  // days
  bool event = false;
  double risk_score = 0.0;
};

// S(t) holds on [time, next time). The first point is always (0, 1).
struct KmPoint {
  double time = 0.0;
  double survival = 1.0;
  std::size_t at_risk = 0;
  std::size_t events = 0;
};

// Product-limit estimate. A step is emitted at every distinct event time;
// subjects censored at t are still at risk for events at t.
inline std::vector<KmPoint> kaplan_meier(std::span<const SurvivalRecord> records) {
  if (records.empty()) throw UsageError("kaplan_meier: no subjects");
  std::vector<std::pair<double, bool>> obs;
  obs.reserve(records.size());
  for (const auto& r : records) {
    if (!(r.time >= 0.0)) throw UsageError("kaplan_meier: negative time");
    obs.emplace_back(r.time, r.event);
  }
  std::sort(obs.begin(), obs.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<KmPoint> curve{{0.0, 1.0, obs.size(), 0}};
  double s = 1.0;
  std::size_t at_risk = obs.size();
  for (std::size_t i = 0; i < obs.size();) {
    const double t = obs[i].first;
    std::size_t d = 0, leaving = 0;
    for (; i < obs.size() && obs[i].first == t; ++i, ++leaving) d += obs[i].second ? 1 : 0;
    if (d > 0) {
      s *= static_cast<double>(at_risk - d) / static_cast<double>(at_risk);
      if (t == 0.0) {
        curve.front() = {0.0, s, at_risk, d};
      } else {
        curve.push_back({t, s, at_risk, d});
      }
    }
    at_risk -= leaving;
  }
  return curve;
}

// Step-function lookup: S at time t.
inline double survival_at(std::span<const KmPoint> curve, double t) {
  double s = 1.0;
  for (const auto& p : curve) {
    if (p.time > t) break;
    s = p.survival;
  }
  return s;
}

// P(X > x) for X ~ chi-square with one degree of freedom.
inline double chi_square1_upper_tail(double x) {
  if (x <= 0.0) return 1.0;
  return std::erfc(std::sqrt(x / 2.0));
}

struct LogRankResult {
  double chi_square = 0.0;
  double p_value = 1.0;
  double observed_a = 0.0;
  double expected_a = 0.0;
  double variance = 0.0;
};

// Mantel log-rank test with hypergeometric variance at each distinct event
// time across both groups.
inline LogRankResult log_rank(std::span<const SurvivalRecord> group_a,
                              std::span<const SurvivalRecord> group_b) {
  if (group_a.empty() || group_b.empty()) throw UsageError("log_rank: empty group");
  struct Obs {
    double time;
    bool event;
    bool in_a;
  };
  std::vector<Obs> all;
  for (const auto& r : group_a) all.push_back({r.time, r.event, true});
  for (const auto& r : group_b) all.push_back({r.time, r.event, false});
  for (const auto& o : all) {
    if (!(o.time >= 0.0)) throw UsageError("log_rank: negative time");
  }
  std::sort(all.begin(), all.end(), [](const Obs& x, const Obs& y) { return x.time < y.time; });

  LogRankResult res;
  double n_a = static_cast<double>(group_a.size());
  double n_b = static_cast<double>(group_b.size());
  std::size_t total_events = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double t = all[i].time;
    double d = 0, d_a = 0, leave_a = 0, leave_b = 0;
    for (; i < all.size() && all[i].time == t; ++i) {
      if (all[i].event) {
        d += 1;
        if (all[i].in_a) d_a += 1;
      }
      (all[i].in_a ? leave_a : leave_b) += 1;
    }
    if (d > 0) {
      const double n = n_a + n_b;
      res.observed_a += d_a;
      res.expected_a += d * n_a / n;
      if (n > 1) res.variance += n_a * n_b * d * (n - d) / (n * n * (n - 1));
      total_events += static_cast<std::size_t>(d);
    }
    n_a -= leave_a;
    n_b -= leave_b;
  }
  if (total_events == 0) throw NumericError("log_rank: no events in either group");
  const double diff = res.observed_a - res.expected_a;
  if (res.variance > 0.0) {
    res.chi_square = diff * diff / res.variance;
  } else if (std::abs(diff) > 0.0) {
    throw NumericError("log_rank: zero variance with non-zero O-E");
  }
  res.p_value = chi_square1_upper_tail(res.chi_square);
  return res;
}

struct RiskGroups {
  std::vector<SurvivalRecord> low;
  std::vector<SurvivalRecord> high;
  double threshold = 0.0;
};

// Split at the lower `quantile` order statistic of the risk scores; scores
// equal to the threshold go to the low group.
inline RiskGroups risk_groups(std::span<const SurvivalRecord> records, double quantile = 0.5) {
  if (records.empty()) throw UsageError("risk_groups: no subjects");
  if (!(quantile > 0.0 && quantile < 1.0)) throw UsageError("risk_groups: quantile must be in (0,1)");
  std::vector<double> scores;
  scores.reserve(records.size());
  for (const auto& r : records) scores.push_back(r.risk_score);
  std::sort(scores.begin(), scores.end());
  const auto rank = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(scores.size()) - 1e-9));
  RiskGroups g;
  g.threshold = scores[std::max<std::size_t>(rank, 1) - 1];
  for (const auto& r : records) (r.risk_score <= g.threshold ? g.low : g.high).push_back(r);
  return g;
}

}  // namespace glori
