#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "glori/glori.hpp"
#include "oracles.hpp"

using namespace glori;

namespace {

double au(const std::vector<double>& s, const std::vector<std::uint8_t>& y) { return auroc(s, y); }
double ap(const std::vector<double>& s, const std::vector<std::uint8_t>& y) { return auprc(s, y); }

// n images, m findings, labels Bernoulli(prev), scores N(shift * y, 1).
ScoreMatrix random_matrix(std::size_t n, std::size_t m, double prev, double shift, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(prev);
  std::normal_distribution<double> z;
  ScoreMatrix sm;
  sm.n_findings = m;
  for (std::size_t i = 0; i < n; ++i) {
    sm.image_ids.push_back(i + 1);
    for (std::size_t j = 0; j < m; ++j) {
      const std::uint8_t y = b(rng);
      sm.labels.push_back(y);
      sm.scores.push_back(z(rng) + shift * y);
    }
  }
  return sm;
}

}  // namespace

TEST(Auroc, Examples) {
  EXPECT_EQ(au({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 1.0);
  EXPECT_EQ(au({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}), 0.5);
  EXPECT_EQ(au({0.9, 0.8, 0.7, 0.1}, {1, 0, 1, 0}), 0.75);
}

TEST(Auroc, SingleClassAndBadInputThrow) {
  EXPECT_THROW(au({0.1, 0.2}, {1, 1}), UsageError);
  EXPECT_THROW(au({0.1, 0.2}, {0, 0}), UsageError);
  EXPECT_THROW(au({0.1}, {0, 1}), ShapeError);
  EXPECT_THROW(au({std::nan(""), 0.2}, {0, 1}), NumericError);
  EXPECT_THROW(au({0.1, 0.2}, {0, 2}), UsageError);
}

TEST(Auprc, Examples) {
  EXPECT_EQ(ap({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 1.0);
  EXPECT_NEAR(ap({0.9, 0.8, 0.7}, {1, 0, 1}), 5.0 / 6.0, 1e-15);
  EXPECT_THROW(ap({0.1, 0.2}, {0, 0}), UsageError);
}

TEST(Auprc, SinglePositiveAveragesReciprocalRank) {
  // Over all placements of one positive among 4 distinct scores, AP = 1/rank.
  double total = 0.0;
  for (std::size_t pos = 0; pos < 4; ++pos) {
    std::vector<std::uint8_t> y(4, 0);
    y[pos] = 1;
    total += ap({4, 3, 2, 1}, y);
  }
  EXPECT_NEAR(total / 4.0, (1.0 + 0.5 + 1.0 / 3.0 + 0.25) / 4.0, 1e-15);
}

TEST(Metrics, MatchBruteForceOracles) {
  std::mt19937_64 rng(77);
  for (int it = 0; it < 1000; ++it) {
    const std::size_t n = 2 + rng() % 19;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 6) / 5.0;
      y[i] = rng() % 2;
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_NEAR(au(s, y), oracle::auroc_pairs(s, y), 1e-12);
    EXPECT_NEAR(ap(s, y), oracle::auprc_sweep(s, y), 1e-12);
  }
}

TEST(Metrics, InvariantToMonotoneTransform) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  std::vector<double> s(50), t(50);
  std::vector<std::uint8_t> y(50);
  for (std::size_t i = 0; i < 50; ++i) {
    s[i] = z(rng);
    t[i] = std::exp(2.0 * s[i]) + 1.0;
    y[i] = i % 3 == 0;
  }
  EXPECT_DOUBLE_EQ(au(s, y), au(t, y));
  EXPECT_DOUBLE_EQ(ap(s, y), ap(t, y));
}

TEST(MacroAverage, Examples) {
  const std::vector<bool> all2{true, true};
  EXPECT_DOUBLE_EQ(macro_average(std::vector<double>{0.8, 0.6}, all2), 0.7);
  EXPECT_EQ(macro_average(std::vector<double>{0.9}, std::vector<bool>{true}), 0.9);
  EXPECT_DOUBLE_EQ(macro_average(std::vector<double>{0.8, 0.1, 0.6}, std::vector<bool>{true, false, true}), 0.7);
  EXPECT_THROW(macro_average(std::vector<double>{0.8}, std::vector<bool>{false}), UsageError);
}

TEST(Macro, UndefinedFindingExcluded) {
  ScoreMatrix sm;
  sm.n_findings = 2;
  sm.image_ids = {1, 2, 3, 4};
  sm.scores = {0.9, 0.1, 0.8, 0.2, 0.7, 0.3, 0.1, 0.4};
  sm.labels = {1, 0, 0, 0, 1, 0, 0, 0};
  const auto per = per_finding_metric(sm, all_rows(4), Metric::auroc);
  EXPECT_TRUE(std::isnan(per[1]));
  EXPECT_EQ(macro_metric(sm, Metric::auroc), per[0]);
}

TEST(Bootstrap, DeterministicAndConstantCase) {
  const ScoreMatrix sm = random_matrix(100, 2, 0.3, 1.0, 4);
  const Interval a = bootstrap_ci(macro(Metric::auroc), sm, 200, 5);
  const Interval b = bootstrap_ci(macro(Metric::auroc), sm, 200, 5);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.lo95, b.lo95);
  EXPECT_EQ(a.hi95, b.hi95);
  EXPECT_LE(a.lo95, a.observed);
  EXPECT_GE(a.hi95, a.observed);
  const Interval c = bootstrap_ci(macro(Metric::auroc), sm, 200, 5, 4);
  EXPECT_EQ(a.lo95, c.lo95);

  ScoreMatrix flat = sm;
  std::fill(flat.scores.begin(), flat.scores.end(), 0.25);
  const Interval f = bootstrap_ci(macro(Metric::auroc), flat, 100, 1);
  EXPECT_EQ(f.lo95, 0.5);
  EXPECT_EQ(f.mean, 0.5);
  EXPECT_EQ(f.hi95, 0.5);
}

TEST(Bootstrap, Percentile) {
  EXPECT_EQ(percentile({1, 2, 3, 4, 5}, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(percentile({0, 10}, 0.025), 0.25);
  EXPECT_THROW(percentile({}, 0.5), UsageError);
}

TEST(Permutation, IdenticalModelsGiveOne) {
  const ScoreMatrix sm = random_matrix(60, 3, 0.3, 1.0, 8);
  EXPECT_EQ(permutation_test(macro(Metric::auroc), sm, sm, 200, 1), 1.0);
  EXPECT_EQ(permutation_test(macro(Metric::auprc), sm, sm, 200, 1), 1.0);
}

TEST(Permutation, PerfectVersusRandomIsSignificant) {
  const ScoreMatrix a = random_matrix(200, 1, 0.4, 50.0, 9);
  ScoreMatrix b = a;
  std::mt19937_64 rng(10);
  std::normal_distribution<double> z;
  for (double& s : b.scores) s = z(rng);
  EXPECT_LE(permutation_test(macro(Metric::auroc), a, b, 500, 2), 0.01);
}

TEST(Permutation, DeterministicAndMisalignedRejected) {
  const ScoreMatrix a = random_matrix(80, 2, 0.3, 0.5, 11), b = random_matrix(80, 2, 0.3, 0.3, 11);
  EXPECT_EQ(permutation_test(macro(Metric::auroc), a, b, 100, 3),
            permutation_test(macro(Metric::auroc), a, b, 100, 3, 3));
  ScoreMatrix c = b;
  c.image_ids[0] = 999;
  EXPECT_THROW(permutation_test(macro(Metric::auroc), a, c, 10, 3), UsageError);
}

TEST(Tiers, Boundaries) {
  EXPECT_EQ(tier_of(0.005), Tier::low);
  EXPECT_EQ(tier_of(0.50), Tier::high);
  EXPECT_EQ(tier_of(0.01), Tier::medium);
  EXPECT_EQ(tier_of(0.10), Tier::high);
  const std::vector<std::uint8_t> labels{1, 0, 0, 0};
  EXPECT_EQ(stratify_prevalence(labels, 2), (std::vector<Tier>{Tier::high, Tier::low}));
}

TEST(Report, StructureAndRenderings) {
  ScoreMatrix a = random_matrix(120, 3, 0.3, 1.0, 12);
  for (std::size_t i = 0; i < a.rows(); ++i) a.labels[i * 3 + 2] = 0;  // undefined finding
  ReportOptions opt;
  opt.bootstrap = 50;
  opt.permutations = 50;
  const MetricsReport r = build_report("m", a, {"x", "y", "z"}, opt, &a, "m2");
  EXPECT_EQ(r.undefined_findings, (std::vector<std::string>{"z"}));
  EXPECT_FALSE(r.findings[2].defined);
  ASSERT_TRUE(r.comparison.has_value());
  EXPECT_EQ(r.comparison->p_macro_auroc, 1.0);
  EXPECT_EQ(r.comparison->delta_macro_auroc, 0.0);
  EXPECT_DOUBLE_EQ(r.macro_auroc.observed, (r.findings[0].auroc.observed + r.findings[1].auroc.observed) / 2);

  const auto j = nlohmann::json::parse(report_json_text(r));
  EXPECT_TRUE(j["findings"][2]["auroc"]["observed"].is_null());
  EXPECT_EQ(j["findings"][0]["p_auroc"], 1.0);
  const std::string csv = report_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(report_json_text(r), report_json_text(build_report("m", a, {"x", "y", "z"}, opt, &a, "m2")));
}

TEST(Report, AllUndefinedThrows) {
  ScoreMatrix a = random_matrix(10, 1, 0.3, 1.0, 1);
  std::fill(a.labels.begin(), a.labels.end(), 0);
  EXPECT_THROW(build_report("m", a, {"x"}, ReportOptions{}), UsageError);
}
