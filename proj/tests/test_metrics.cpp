#include <gtest/gtest.h>

#include <cmath>

#include "error.hpp"
#include "metrics.hpp"
#include "numcore.hpp"

using namespace hoopseq;

namespace {

struct Instance {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Scores drawn from a coarse grid so ties across classes are common.
Instance random_instance(Rng& rng, std::size_t n) {
  Instance in;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = rng.bernoulli(0.3) ? std::floor(rng.uniform() * 10.0) / 10.0 : rng.uniform();
    in.scores.push_back(s);
    in.labels.push_back(rng.bernoulli(0.4 + 0.2 * s) ? 1 : 0);
  }
  in.labels[0] = 1;
  in.labels[1] = 0;
  return in;
}

}  // namespace

TEST(Confusion, SimpleCase) {
  const std::vector<double> s{0.9, 0.1};
  const std::vector<int> y{1, 0};
  EXPECT_EQ(confusion(s, y), (ConfusionCounts{1, 1, 0, 0}));
}

TEST(Confusion, HalfIsPositive) {
  const std::vector<double> s{0.5, 0.5};
  const std::vector<int> y{1, 0};
  EXPECT_EQ(confusion(s, y), (ConfusionCounts{1, 0, 1, 0}));
}

TEST(Confusion, MatchesIndependentRecount) {
  Rng rng(3);
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 1000; ++i) {
    s.push_back(rng.uniform());
    y.push_back(rng.bernoulli(0.5) ? 1 : 0);
  }
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const int p = s[i] < 0.5 ? 0 : 1;
    tp += p == 1 && y[i] == 1;
    tn += p == 0 && y[i] == 0;
    fp += p == 1 && y[i] == 0;
    fn += p == 0 && y[i] == 1;
  }
  const auto c = confusion(s, y);
  EXPECT_EQ(c, (ConfusionCounts{tp, tn, fp, fn}));
  EXPECT_EQ(c.total(), 1000u);
}

TEST(Confusion, InvalidInputs) {
  const std::vector<double> s{0.2, 0.3};
  const std::vector<int> one{1};
  const std::vector<int> bad{1, 2};
  const std::vector<int> ok{1, 0};
  EXPECT_THROW(confusion(s, one), ValidationError);
  EXPECT_THROW(confusion(s, bad), ValidationError);
  EXPECT_THROW(confusion(s, ok, 1.0), ValidationError);
  EXPECT_THROW(confusion(s, ok, 0.0), ValidationError);
}

TEST(Metrics, ClosedForms) {
  const ConfusionCounts c{3, 4, 2, 1};
  EXPECT_DOUBLE_EQ(*accuracy(c), 0.7);
  EXPECT_DOUBLE_EQ(*precision(c), 0.6);
  EXPECT_EQ(*accuracy(ConfusionCounts{5, 5, 0, 0}), 1.0);
}

TEST(Metrics, RandomCountsMatchArithmetic) {
  Rng rng(11);
  for (int i = 0; i < 10000; ++i) {
    const ConfusionCounts c{rng.below(50), rng.below(50), rng.below(50), rng.below(50)};
    const auto a = accuracy(c);
    const auto p = precision(c);
    const std::uint64_t total = c.tp + c.tn + c.fp + c.fn;
    if (total == 0) EXPECT_FALSE(a);
    else EXPECT_EQ(*a, static_cast<double>(c.tp + c.tn) / static_cast<double>(total));
    if (c.tp + c.fp == 0) EXPECT_FALSE(p);
    else EXPECT_EQ(*p, static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp));
  }
}

TEST(Metrics, UndefinedMarkers) {
  EXPECT_FALSE(precision(ConfusionCounts{0, 5, 0, 3}));
  EXPECT_FALSE(accuracy(ConfusionCounts{}));
  const std::vector<double> s{0.1, 0.2};
  const std::vector<int> y{1, 1};
  EXPECT_FALSE(auc_roc(s, y));
  EXPECT_FALSE(auc_oracle(s, y));
}

TEST(Auc, Examples) {
  auto auc = [](std::vector<double> s, std::vector<int> y) { return *auc_roc(s, y); };
  EXPECT_EQ(auc({0.9, 0.8, 0.3, 0.2}, {1, 1, 0, 0}), 1.0);
  EXPECT_EQ(auc({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0}), 0.5);
  EXPECT_EQ(auc({0.9, 0.2, 0.5}, {1, 1, 0}), 0.5);
  EXPECT_EQ(auc({0.3, 0.7}, {1, 0}), 0.0);
}

TEST(AucOracle, Examples) {
  auto auc = [](std::vector<double> s, std::vector<int> y) { return *auc_oracle(s, y); };
  EXPECT_EQ(auc({0.3, 0.7}, {1, 0}), 0.0);
  EXPECT_EQ(auc({0.5, 0.5}, {1, 0}), 0.5);
  EXPECT_EQ(auc({0.9, 0.2, 0.5}, {1, 1, 0}), 0.5);
}

TEST(Auc, MatchesOracleWithSymmetryAndMonotoneInvariance) {
  Rng rng(2024);
  for (int t = 0; t < 500; ++t) {
    const auto in = random_instance(rng, 200);
    const double fast = *auc_roc(in.scores, in.labels);
    ASSERT_NEAR(fast, *auc_oracle(in.scores, in.labels), 1e-12) << t;
    std::vector<double> flipped, warped;
    for (double s : in.scores) {
      flipped.push_back(1.0 - s);
      warped.push_back(std::exp(3.0 * s) - 7.0);
    }
    ASSERT_NEAR(*auc_roc(flipped, in.labels), 1.0 - fast, 1e-12) << t;
    ASSERT_NEAR(*auc_roc(warped, in.labels), fast, 1e-12) << t;
  }
}

TEST(Report, JsonRoundTrip) {
  const std::vector<double> s{0.9, 0.4, 0.6, 0.1};
  const std::vector<int> y{1, 1, 0, 0};
  auto r = make_report("mlp", s, y);
  r.fingerprint = "abc";
  r.seed = 5;
  const auto j = report_to_json(r);
  EXPECT_EQ(j["counts"]["tp"], 1);
  EXPECT_EQ(j["n"], 4);
  const auto back = report_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.counts, r.counts);
  EXPECT_EQ(back.accuracy, r.accuracy);
  EXPECT_EQ(back.auc_roc, r.auc_roc);
  EXPECT_EQ(back.seed, r.seed);
  EXPECT_EQ(report_to_json(back).dump(), j.dump());
}

TEST(Report, UndefinedWrittenAsNull) {
  const std::vector<double> s{0.1, 0.2};
  const std::vector<int> y{1, 0};
  const auto r = make_report("logreg", s, y);
  const auto j = report_to_json(r);
  EXPECT_TRUE(j["precision"].is_null());
  EXPECT_FALSE(report_from_json(nlohmann::json::parse(j.dump())).precision);
  const std::vector<EvalReport> one{r};
  EXPECT_NE(build_comparison(one).to_csv().find("logreg,0.5,NA,0,measured"), std::string::npos);
}

TEST(Report, TruncatedJsonRejected) {
  auto j = nlohmann::json::parse(report_to_json(make_report("x", std::vector<double>{0.7, 0.2},
                                                            std::vector<int>{1, 0}))
                                     .dump());
  j.erase("auc_roc");
  EXPECT_THROW(report_from_json(j), SchemaError);
}

TEST(Comparison, ReferenceRowsRoundTrip) {
  const auto paper = paper_reference_rows();
  ASSERT_EQ(paper.size(), 5u);
  EXPECT_EQ(paper[0].model, "lstm");
  EXPECT_EQ(*paper[0].accuracy, 0.7235);
  EXPECT_EQ(*paper[0].precision, 0.7315);
  EXPECT_EQ(*paper[0].auc_roc, 0.7613);
  EXPECT_EQ(*paper[1].accuracy, 0.7012);
  EXPECT_EQ(*paper[1].precision, 0.7066);
  EXPECT_EQ(*paper[1].auc_roc, 0.6985);
  for (std::size_t i = 2; i < 5; ++i) {
    EXPECT_FALSE(paper[i].accuracy);
    EXPECT_FALSE(paper[i].auc_roc);
  }
  for (const auto& r : paper) {
    EXPECT_EQ(r.source, "paper");
    const auto back = report_from_json(nlohmann::json::parse(report_to_json(r).dump()));
    EXPECT_EQ(back.accuracy, r.accuracy);
    EXPECT_EQ(back.precision, r.precision);
  }
}

TEST(Comparison, CsvLayoutAndPaperRows) {
  const std::vector<EvalReport> reports{
      make_report("lstm", std::vector<double>{0.8, 0.3, 0.6}, std::vector<int>{1, 0, 0})};
  const auto t = build_comparison(reports, true);
  EXPECT_EQ(t.to_csv(),
            "model,accuracy,precision,auc_roc,source\n"
            "lstm,0.6666666666666666,0.5,1,measured\n"
            "lstm,0.7235,0.7315,0.7613,paper\n"
            "logreg,0.7012,0.7066,0.6985,paper\n"
            "forest,NA,NA,NA,paper\n"
            "mlp,NA,NA,NA,paper\n"
            "cnn,NA,NA,NA,paper\n");
  EXPECT_EQ(t.to_json()["rows"].size(), 6u);
  EXPECT_EQ(t.to_json()["rows"][1]["source"], "paper");
}

TEST(Comparison, DuplicateModelRejected) {
  const auto r = make_report("forest", std::vector<double>{0.8, 0.3}, std::vector<int>{1, 0});
  const std::vector<EvalReport> reports{r, r};
  EXPECT_THROW(build_comparison(reports), ValidationError);
  EXPECT_THROW(build_comparison(std::span<const EvalReport>{}), ValidationError);
}

TEST(Comparison, ByteStable) {
  const std::vector<EvalReport> reports{
      make_report("cnn", std::vector<double>{0.55, 0.45, 0.35}, std::vector<int>{1, 1, 0})};
  const auto a = build_comparison(reports);
  const auto b = build_comparison(reports);
  EXPECT_EQ(a.rows.size(), 1u);
  EXPECT_EQ(a.to_csv(), b.to_csv());
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}
