#pragma once

// MetricsReport assembly and its JSON / CSV renderings, plus the KM curve CSV.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "glori/error.hpp"
#include "glori/metrics.hpp"
#include "glori/store.hpp"
#include "glori/survival.hpp"

namespace glori {

struct FindingReport {
  std::string name;
  double prevalence = 0.0;
  std::size_t n_positive = 0;
  Tier tier = Tier::high;
  bool defined = false;  // both classes present in the evaluated images
  Interval auroc, auprc;
  double p_auroc = kUndefined;
  double p_auprc = kUndefined;
};

struct TierReport {
  Tier tier = Tier::high;
  std::vector<std::string> findings;  // defined findings only
  Interval auroc, auprc;
};

struct Comparison {
  std::string model;
  Interval macro_auroc, macro_auprc;  // of the comparison model
  double delta_macro_auroc = kUndefined;
  double delta_macro_auprc = kUndefined;
  double p_macro_auroc = kUndefined;
  double p_macro_auprc = kUndefined;
};

struct ReportOptions {
  std::size_t bootstrap = 1000;
  std::size_t permutations = 1000;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  TierCuts cuts;
};

struct MetricsReport {
  std::string model;
  std::size_t n_images = 0;
  ReportOptions options;
  std::vector<FindingReport> findings;
  Interval macro_auroc, macro_auprc;
  std::vector<TierReport> tiers;  // low, medium, high; empty tiers omitted
  std::vector<std::string> undefined_findings;
  std::optional<Comparison> comparison;
};

namespace detail {

inline constexpr Tier kTiers[3] = {Tier::low, Tier::medium, Tier::high};

// Statistic layout: auroc[M] | auprc[M] | macro auroc | macro auprc |
// tier auroc[3] | tier auprc[3]. Macros use only findings in `included`
// that are defined on the given rows.
inline Statistic report_statistic(std::vector<bool> included, std::vector<Tier> tiers) {
  return [included = std::move(included), tiers = std::move(tiers)](
             const ScoreMatrix& sm, std::span<const std::size_t> rows) {
    const std::size_t M = sm.n_findings;
    std::vector<double> out(2 * M + 2 + 6, kUndefined);
    for (std::size_t m = 0; m < M; ++m) {
      if (!included[m]) continue;
      out[m] = finding_metric(sm, rows, m, Metric::auroc);
      out[M + m] = finding_metric(sm, rows, m, Metric::auprc);
    }
    out[2 * M] = mean_defined(std::span(out).subspan(0, M));
    out[2 * M + 1] = mean_defined(std::span(out).subspan(M, M));
    for (std::size_t t = 0; t < 3; ++t) {
      std::vector<double> a, p;
      for (std::size_t m = 0; m < M; ++m) {
        if (tiers[m] != kTiers[t]) continue;
        a.push_back(out[m]);
        p.push_back(out[M + m]);
      }
      out[2 * M + 2 + t] = mean_defined(a);
      out[2 * M + 5 + t] = mean_defined(p);
    }
    return out;
  };
}

}  // namespace detail

inline MetricsReport build_report(const std::string& model_name, const ScoreMatrix& a,
                                  const std::vector<std::string>& finding_names,
                                  const ReportOptions& opt,
                                  const ScoreMatrix* b = nullptr,
                                  const std::string& compare_name = "") {
  a.validate();
  const std::size_t M = a.n_findings;
  if (finding_names.size() != M) throw UsageError("report: finding names do not match score width");
  if (a.rows() == 0) throw UsageError("report: no images");
  if (b) check_paired(a, *b);

  MetricsReport r;
  r.model = model_name;
  r.n_images = a.rows();
  r.options = opt;
  const auto prev = prevalences(a.labels, M);
  std::vector<bool> included(M);
  std::vector<Tier> tiers(M);
  for (std::size_t m = 0; m < M; ++m) {
    FindingReport f;
    f.name = finding_names[m];
    f.prevalence = prev[m];
    f.n_positive = static_cast<std::size_t>(std::llround(prev[m] * static_cast<double>(a.rows())));
    f.tier = tier_of(prev[m], opt.cuts);
    f.defined = f.n_positive > 0 && f.n_positive < a.rows();
    included[m] = f.defined;
    tiers[m] = f.tier;
    if (!f.defined) r.undefined_findings.push_back(f.name);
    r.findings.push_back(std::move(f));
  }
  if (r.undefined_findings.size() == M) throw UsageError("report: every finding is undefined");

  const Statistic stat = detail::report_statistic(included, tiers);
  const auto ci = bootstrap(stat, a, opt.bootstrap, opt.seed, opt.jobs);
  for (std::size_t m = 0; m < M; ++m) {
    r.findings[m].auroc = ci[m];
    r.findings[m].auprc = ci[M + m];
  }
  r.macro_auroc = ci[2 * M];
  r.macro_auprc = ci[2 * M + 1];
  for (std::size_t t = 0; t < 3; ++t) {
    TierReport tr;
    tr.tier = detail::kTiers[t];
    for (std::size_t m = 0; m < M; ++m) {
      if (tiers[m] == tr.tier && included[m]) tr.findings.push_back(finding_names[m]);
    }
    if (tr.findings.empty()) continue;
    tr.auroc = ci[2 * M + 2 + t];
    tr.auprc = ci[2 * M + 5 + t];
    r.tiers.push_back(std::move(tr));
  }

  if (b) {
    Comparison c;
    c.model = compare_name;
    const auto cb = bootstrap(stat, *b, opt.bootstrap, opt.seed, opt.jobs);
    c.macro_auroc = cb[2 * M];
    c.macro_auprc = cb[2 * M + 1];
    c.delta_macro_auroc = r.macro_auroc.observed - c.macro_auroc.observed;
    c.delta_macro_auprc = r.macro_auprc.observed - c.macro_auprc.observed;
    const auto p = permutation_test(stat, a, *b, opt.permutations, opt.seed, opt.jobs);
    for (std::size_t m = 0; m < M; ++m) {
      r.findings[m].p_auroc = p[m];
      r.findings[m].p_auprc = p[M + m];
    }
    c.p_macro_auroc = p[2 * M];
    c.p_macro_auprc = p[2 * M + 1];
    r.comparison = std::move(c);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline nlohmann::ordered_json number_or_null(double v) {
  return std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
}

inline nlohmann::ordered_json interval_json(const Interval& iv) {
  nlohmann::ordered_json j;
  j["observed"] = number_or_null(iv.observed);
  j["mean"] = number_or_null(iv.mean);
  j["lo95"] = number_or_null(iv.lo95);
  j["hi95"] = number_or_null(iv.hi95);
  j["resamples"] = iv.resamples;
  return j;
}

inline std::string csv_number(double v) { return std::isnan(v) ? "" : format_double(v); }

}  // namespace detail

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  using detail::interval_json;
  using detail::number_or_null;
  nlohmann::ordered_json j;
  j["model"] = r.model;
  j["n_images"] = r.n_images;
  j["bootstrap"] = r.options.bootstrap;
  j["permutations"] = r.comparison ? nlohmann::ordered_json(r.options.permutations) : nullptr;
  j["seed"] = r.options.seed;
  j["tier_cuts"] = {{"low_below", r.options.cuts.low_hi}, {"medium_below", r.options.cuts.med_hi}};
  j["macro"] = {{"auroc", interval_json(r.macro_auroc)}, {"auprc", interval_json(r.macro_auprc)}};
  auto& fs = j["findings"] = nlohmann::ordered_json::array();
  for (const auto& f : r.findings) {
    nlohmann::ordered_json jf;
    jf["name"] = f.name;
    jf["prevalence"] = f.prevalence;
    jf["n_positive"] = f.n_positive;
    jf["tier"] = to_string(f.tier);
    jf["defined"] = f.defined;
    jf["auroc"] = interval_json(f.auroc);
    jf["auprc"] = interval_json(f.auprc);
    if (r.comparison) {
      jf["p_auroc"] = number_or_null(f.p_auroc);
      jf["p_auprc"] = number_or_null(f.p_auprc);
    }
    fs.push_back(std::move(jf));
  }
  auto& ts = j["tiers"] = nlohmann::ordered_json::array();
  for (const auto& t : r.tiers) {
    nlohmann::ordered_json jt;
    jt["tier"] = to_string(t.tier);
    jt["findings"] = t.findings;
    jt["auroc"] = interval_json(t.auroc);
    jt["auprc"] = interval_json(t.auprc);
    ts.push_back(std::move(jt));
  }
  j["undefined_findings"] = r.undefined_findings;
  if (r.comparison) {
    const Comparison& c = *r.comparison;
    j["comparison"] = {
        {"model", c.model},
        {"macro", {{"auroc", interval_json(c.macro_auroc)}, {"auprc", interval_json(c.macro_auprc)}}},
        {"delta_macro_auroc", number_or_null(c.delta_macro_auroc)},
        {"delta_macro_auprc", number_or_null(c.delta_macro_auprc)},
        {"p_macro_auroc", number_or_null(c.p_macro_auroc)},
        {"p_macro_auprc", number_or_null(c.p_macro_auprc)},
    };
  }
  return j;
}

inline std::string report_json_text(const MetricsReport& r) { return to_json(r).dump(2) + "\n"; }

// One row per finding.
inline std::string report_csv(const MetricsReport& r) {
  using detail::csv_number;
  std::string s =
      "finding,tier,prevalence,n_positive,auroc,auroc_mean,auroc_lo95,auroc_hi95,"
      "auprc,auprc_mean,auprc_lo95,auprc_hi95,p_auroc,p_auprc\n";
  for (const auto& f : r.findings) {
    s += f.name + "," + to_string(f.tier) + "," + csv_number(f.prevalence) + "," +
         std::to_string(f.n_positive);
    for (const Interval* iv : {&f.auroc, &f.auprc}) {
      s += "," + csv_number(iv->observed) + "," + csv_number(iv->mean) + "," +
           csv_number(iv->lo95) + "," + csv_number(iv->hi95);
    }
    s += "," + csv_number(f.p_auroc) + "," + csv_number(f.p_auprc) + "\n";
  }
  return s;
}

// Both curves evaluated at every time where either one steps.
inline std::string km_csv(std::span<const KmPoint> low, std::span<const KmPoint> high) {
  std::set<double> times{0.0};
  for (const auto& p : low) times.insert(p.time);
  for (const auto& p : high) times.insert(p.time);
  std::string s = "t,S_low,S_high\n";
  for (double t : times) {
    s += detail::format_double(t) + "," + detail::format_double(survival_at(low, t)) + "," +
         detail::format_double(survival_at(high, t)) + "\n";
  }
  return s;
}

}  // namespace glori
