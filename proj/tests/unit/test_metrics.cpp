#include <gtest/gtest.h>

#include <boost/math/special_functions/beta.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "ecgx/errors.hpp"
#include "ecgx/metrics.hpp"
#include "support/published.hpp"

using namespace ecgx;

namespace {

ConfusionMatrix random_matrix(std::mt19937_64& rng, std::size_t records = 200) {
  std::uniform_int_distribution<int> cls(0, 3);
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < records; ++i) cm.add(cls(rng), cls(rng));
  return cm;
}

// p = I_{v/(v+t^2)}(v/2, 1/2) for a two-sided Student t test
double textbook_p(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double se = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
  const double t = mean / se, v = static_cast<double>(n - 1);
  return boost::math::ibeta(v / 2.0, 0.5, v / (v + t * t));
}

}  // namespace

TEST(Confusion, OrientationRowsArePredictions) {
  ConfusionMatrix cm;
  cm.add(/*truth=*/1, /*prediction=*/2);
  cm.add(1, 2);
  cm.add(0, 0);
  EXPECT_EQ(cm.at(2, 1), 2u);
  EXPECT_EQ(cm.at(1, 2), 0u);
  EXPECT_EQ(cm.truth_count(1), 2u);
  EXPECT_EQ(cm.predicted_count(2), 2u);
  EXPECT_EQ(cm.predicted_count(1), 0u);
  EXPECT_EQ(cm.total(), 3u);
  EXPECT_NEAR(f1_per_class(cm, 0), 1.0, 1e-15);
  EXPECT_THROW(cm.add(4, 0), std::out_of_range);
  auto rows = ConfusionMatrix::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(rows.at(0, 1), 2u);
  EXPECT_EQ(rows.truth_count(1), 6u);
}

TEST(Confusion, PublishedTablesReproducePrintedF1) {
  for (const auto& t : published::tables()) {
    auto cm = ConfusionMatrix::from_rows(t.rows);
    auto f1 = f1_all(cm);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(f1[c], t.f1[c], 0.01) << t.model << " class " << c;
    EXPECT_NEAR(overall_f1(f1), t.overall, 0.01) << t.model;
    EXPECT_EQ(cm.total(), 8528u) << t.model;
  }
}

TEST(Confusion, PublishedColumnTotalsMatchDatasetHistogram) {
  for (const auto& t : published::tables()) {
    auto cm = ConfusionMatrix::from_rows(t.rows);
    EXPECT_EQ(cm.truth_count(0), 758u) << t.model;
    EXPECT_EQ(cm.truth_count(1), 5076u) << t.model;
    EXPECT_EQ(cm.truth_count(2), 2415u) << t.model;
    EXPECT_EQ(cm.truth_count(3), 279u) << t.model;
  }
}

TEST(Confusion, F1IsEquivariantUnderClassRelabelling) {
  std::mt19937_64 rng(0);
  std::vector<std::size_t> perm{0, 1, 2, 3};
  for (int trial = 0; trial < 30; ++trial) {
    auto cm = random_matrix(rng);
    std::shuffle(perm.begin(), perm.end(), rng);
    ConfusionMatrix moved;
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t t = 0; t < 4; ++t) moved.at(perm[p], perm[t]) = cm.at(p, t);
    auto a = f1_all(cm), b = f1_all(moved);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(a[c], b[perm[c]]);
  }
}

TEST(Confusion, SummedFoldsEqualPooledPredictions) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> cls(0, 3);
  std::vector<ConfusionMatrix> folds(5);
  ConfusionMatrix pooled;
  for (auto& f : folds)
    for (int i = 0; i < 40; ++i) {
      const int t = cls(rng), p = cls(rng);
      f.add(t, p);
      pooled.add(t, p);
    }
  EXPECT_EQ(make_report(folds).summed, pooled);
}

TEST(Confusion, UndefinedF1WarnsAndIsZero) {
  std::vector<std::string> seen;
  set_warning_sink([&](std::string_view m) { seen.emplace_back(m); });
  ConfusionMatrix cm;
  cm.add(0, 0);
  cm.add(1, 1);
  EXPECT_EQ(f1_per_class(cm, 3), 0.0);
  set_warning_sink({});
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_NE(seen[0].find("class 3"), std::string::npos);
}

TEST(Report, MeanAndSampleStdAcrossFolds) {
  std::mt19937_64 rng(2);
  auto cm = random_matrix(rng);
  std::vector<ConfusionMatrix> same(4, cm);
  auto r = make_report(same);
  for (double s : r.class_std) EXPECT_EQ(s, 0.0);
  EXPECT_EQ(r.overall_std, 0.0);
  const auto f1 = f1_all(cm);
  EXPECT_DOUBLE_EQ(r.overall_mean, (f1[0] + f1[1] + f1[2]) / 3.0);

  std::vector<ConfusionMatrix> mixed{random_matrix(rng), random_matrix(rng), random_matrix(rng)};
  auto m = make_report(mixed);
  std::vector<double> af;
  for (const auto& f : mixed) af.push_back(f1_per_class(f, 0));
  const double mean = (af[0] + af[1] + af[2]) / 3.0;
  double ss = 0.0;
  for (double v : af) ss += (v - mean) * (v - mean);
  EXPECT_NEAR(m.class_mean[0], mean, 1e-15);
  EXPECT_NEAR(m.class_std[0], std::sqrt(ss / 2.0), 1e-15);
  EXPECT_THROW(make_report(std::span<const ConfusionMatrix>()), ConfigError);
}

TEST(Report, OverallExcludesNoisy) {
  const double f1[] = {0.5, 0.7, 0.9, 0.0};
  EXPECT_NEAR(overall_f1(f1), 0.7, 1e-15);
  const double few[] = {0.5, 0.7};
  EXPECT_THROW(overall_f1(few), ShapeError);
}

TEST(TTest, MatchesTextbookFormula) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + trial % 9;
    std::vector<double> a, b;
    for (std::size_t i = 0; i < n; ++i) {
      a.push_back(0.8 + 0.05 * g(rng));
      b.push_back(0.8 + 0.02 * trial / 40.0 + 0.05 * g(rng));
    }
    const double p = paired_t_test(a, b);
    EXPECT_NEAR(p, textbook_p(a, b), 1e-10) << trial;
    EXPECT_NEAR(p, paired_t_test(b, a), 1e-14);
  }
}

TEST(TTest, DegenerateCases) {
  const std::vector<double> a{0.5, 0.75, 1.0}, shifted{0.75, 1.0, 1.25};
  EXPECT_EQ(paired_t_test(a, a), 1.0);
  EXPECT_EQ(paired_t_test(a, shifted), 0.0);
  EXPECT_THROW(paired_t_test(std::vector<double>{1.0}, std::vector<double>{1.0}), ConfigError);
  EXPECT_THROW(paired_t_test(a, std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST(Output, JsonCarriesFoldsAndAggregate) {
  std::mt19937_64 rng(4);
  std::vector<ConfusionMatrix> folds{random_matrix(rng), random_matrix(rng)};
  auto r = make_report(folds);
  auto j = nlohmann::json::parse(report_json(r, "toy"));
  EXPECT_EQ(j["model"], "toy");
  ASSERT_EQ(j["folds"].size(), 2u);
  EXPECT_DOUBLE_EQ(j["folds"][1]["f1"]["O"].get<double>(), r.fold_class_f1[1][2]);
  EXPECT_EQ(j["folds"][0]["confusion"][2][1].get<std::size_t>(), folds[0].at(2, 1));
  EXPECT_DOUBLE_EQ(j["aggregate"]["overall_f1_mean"].get<double>(), r.overall_mean);
  EXPECT_EQ(j["aggregate"]["confusion_rows_prediction_cols_truth"][3][0].get<std::size_t>(), r.summed.at(3, 0));
}

TEST(Output, TablesPrintTotals) {
  auto cm = ConfusionMatrix::from_rows(published::tables()[0].rows);
  const std::vector<std::string> names{"AF", "N", "O", "~"};
  auto text = confusion_table(cm, names);
  EXPECT_NE(text.find("1015"), std::string::npos);  // first prediction row total
  EXPECT_NE(text.find("8528"), std::string::npos);
  auto r = make_report(std::vector<ConfusionMatrix>{cm});
  auto table = report_table(r, "7 layer CNN+GMP");
  EXPECT_NE(table.find("0.78±0.00"), std::string::npos);
  EXPECT_NE(table.find("Overall F1"), std::string::npos);
}
