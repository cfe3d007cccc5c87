#include <gtest/gtest.h>

#include <boost/math/distributions/beta.hpp>
#include <cmath>
#include <json.hpp>

#include "ipens/metrics.hpp"
#include "ipens/rng.hpp"

using namespace ipens;
using namespace ipens::metrics;

namespace {

ConfusionMatrix from_rows(std::vector<std::vector<std::size_t>> rows) {
    ConfusionMatrix cm{rows.size(), {}};
    for (const auto& r : rows) cm.counts.insert(cm.counts.end(), r.begin(), r.end());
    return cm;
}

ConfusionMatrix random_cm(std::size_t k, Rng& rng) {
    ConfusionMatrix cm{k, std::vector<std::size_t>(k * k)};
    for (auto& c : cm.counts) c = rng.below(20);
    cm.counts[0] += 1;
    return cm;
}

// All-pairs concordance with ties counted ½.
double brute_auc(const std::vector<double>& s, const std::vector<char>& pos) {
    double num = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (pos[i] && !pos[j]) {
                pairs += 1.0;
                num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
    return num / pairs;
}

Interval beta_oracle(std::size_t k, std::size_t n, double coverage) {
    const double a = (1.0 - coverage) / 2.0;
    Interval r;
    r.low = k == 0 ? 0.0 : boost::math::quantile(boost::math::beta_distribution<>(k, n - k + 1.0), a);
    r.high = k == n ? 1.0 : boost::math::quantile(boost::math::beta_distribution<>(k + 1.0, n - k), 1.0 - a);
    return r;
}

EvaluationData toy(std::size_t n, std::size_t k, std::uint64_t seed) {
    Rng rng(seed);
    EvaluationData d{Tensor64({n, k}), {}, {}};
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(rng.below(k));
        d.truth.push_back(y);
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c)
            s += d.scores[i * k + c] = rng.uniform() + (static_cast<int>(c) == y ? 0.8 : 0.0);
        int best = 0;
        for (std::size_t c = 0; c < k; ++c) {
            d.scores[i * k + c] /= s;
            if (d.scores[i * k + c] > d.scores[i * k + best]) best = static_cast<int>(c);
        }
        d.predicted.push_back(best);
    }
    return d;
}

}  // namespace

TEST(Confusion, Tally) {
    EXPECT_EQ(confusion(std::vector<int>{0, 0, 1}, std::vector<int>{0, 1, 1}, 2), from_rows({{1, 1}, {0, 1}}));
    EXPECT_EQ(confusion(std::vector<int>{0, 1, 2}, std::vector<int>{0, 1, 2}, 3), from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
    EXPECT_EQ(confusion({}, {}, 2), from_rows({{0, 0}, {0, 0}}));
    EXPECT_THROW(confusion(std::vector<int>{0, 3}, std::vector<int>{0, 1}, 2), MetricsError);
    EXPECT_THROW(confusion(std::vector<int>{0}, std::vector<int>{0, 1}, 2), DimensionError);
}

TEST(Classification, HandValues) {
    const auto perfect = classification_metrics(from_rows({{5, 0}, {0, 3}}));
    EXPECT_EQ(perfect.accuracy, 1.0);
    EXPECT_EQ(perfect.precision, 1.0);
    EXPECT_EQ(perfect.f_score, 1.0);
    const auto m = classification_metrics(from_rows({{4, 1}, {2, 3}}));
    EXPECT_NEAR(m.accuracy, 0.7, 1e-15);
    EXPECT_NEAR(m.sensitivity, 0.7, 1e-15);
    // precision: class0 4/6, class1 3/4, supports 5 and 5
    EXPECT_NEAR(m.precision, 0.5 * (4.0 / 6.0) + 0.5 * 0.75, 1e-15);
    EXPECT_THROW(classification_metrics(from_rows({{0, 0}, {0, 0}})), MetricsError);
}

TEST(Classification, WeightedRecallEqualsAccuracy) {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto m = classification_metrics(random_cm(2 + rng.below(4), rng));
        EXPECT_NEAR(m.sensitivity, m.accuracy, 1e-12);
    }
}

TEST(Classification, UnpredictedClassFlagged) {
    const auto m = classification_metrics(from_rows({{3, 0}, {2, 0}}));
    EXPECT_EQ(m.unpredicted_classes, (std::vector<std::size_t>{1}));
    EXPECT_EQ(m.precision_per_class[1], 0.0);
}

TEST(Mcc, HandValuesAndDegenerate) {
    EXPECT_EQ(mcc(from_rows({{5, 0, 0}, {0, 4, 0}, {0, 0, 2}})), 1.0);
    // TP=4 (class 1), TN=3, FP=1, FN=2
    EXPECT_NEAR(mcc(from_rows({{3, 1}, {2, 4}})), 10.0 / std::sqrt(600.0), 1e-12);
    EXPECT_EQ(mcc(from_rows({{0, 5}, {0, 7}})), 0.0);
}

TEST(Mcc, BinaryFormulaAgreesAndPermutationSymmetric) {
    Rng rng(2);
    for (int t = 0; t < 100; ++t) {
        const auto cm = random_cm(2, rng);
        const double tn = cm.at(0, 0), fp = cm.at(0, 1), fn = cm.at(1, 0), tp = cm.at(1, 1);
        const double den = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
        EXPECT_NEAR(mcc(cm), den > 0 ? (tp * tn - fp * fn) / den : 0.0, 1e-12);

        const auto m3 = random_cm(3, rng);
        const std::vector<std::size_t> perm{2, 0, 1};
        ConfusionMatrix p{3, std::vector<std::size_t>(9)};
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) p.counts[perm[i] * 3 + perm[j]] = m3.at(i, j);
        EXPECT_NEAR(mcc(p), mcc(m3), 1e-12);
        EXPECT_GE(mcc(m3), -1.0);
        EXPECT_LE(mcc(m3), 1.0);
    }
}

TEST(Auc, HandValues) {
    const std::vector<char> y{1, 1, 0, 0};
    EXPECT_EQ(*binary_auc(std::vector<double>{0.9, 0.8, 0.3, 0.1}, y), 1.0);
    EXPECT_EQ(*binary_auc(std::vector<double>{0.9, 0.3, 0.8, 0.1}, y), 0.75);
    EXPECT_EQ(*binary_auc(std::vector<double>{0.4, 0.4, 0.4, 0.4}, y), 0.5);
    EXPECT_FALSE(binary_auc(std::vector<double>{0.1, 0.2}, std::vector<char>{1, 1}));
}

TEST(Auc, MatchesAllPairsOracle) {
    Rng rng(3);
    for (int t = 0; t < 30; ++t) {
        const auto n = 2 + rng.below(199);
        std::vector<double> s(n);
        std::vector<char> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = std::round(rng.uniform() * 20.0) / 20.0;  // plenty of ties
            y[i] = rng.uniform() < 0.4;
        }
        y[0] = 1, y[1] = 0;
        EXPECT_NEAR(*binary_auc(s, y), brute_auc(s, y), 1e-12) << "n=" << n;
    }
}

TEST(Auc, MicroMacroAndCurves) {
    const auto d = toy(90, 3, 4);
    const auto r = roc_auc(d.scores, d.truth);
    double mean = 0.0;
    for (const auto& a : r.per_class) mean += *a;
    EXPECT_NEAR(*r.macro, mean / 3.0, 1e-15);
    for (const auto& c : r.curves) {
        EXPECT_EQ(c.fpr.front(), 0.0);
        EXPECT_EQ(c.fpr.back(), 1.0);
        EXPECT_EQ(c.tpr.back(), 1.0);
    }
    // perfect and constant scorers
    EXPECT_EQ(*roc_auc(Tensor64({3, 3}, 1.0 / 3.0), std::vector<int>{0, 1, 2}).micro, 0.5);
    Tensor64 perfect({3, 3});
    perfect[0] = perfect[4] = perfect[8] = 1.0;
    EXPECT_EQ(*roc_auc(perfect, std::vector<int>{0, 1, 2}).micro, 1.0);
    // class 2 absent → undefined
    const auto missing = roc_auc(perfect, std::vector<int>{0, 1, 1});
    EXPECT_FALSE(missing.per_class[2]);
    EXPECT_FALSE(missing.macro);
}

TEST(ClopperPearson, MatchesBetaQuantileOracle) {
    const double cov = adjusted_coverage(0.95);
    const auto iv = clopper_pearson(95, 100, cov);
    const auto ref = beta_oracle(95, 100, cov);
    EXPECT_NEAR(iv.low, ref.low, 1e-6);
    EXPECT_NEAR(iv.high, ref.high, 1e-6);
    for (std::size_t n : {1, 7, 30, 250})
        for (std::size_t k = 0; k <= n; k += std::max<std::size_t>(1, n / 9)) {
            const auto a = clopper_pearson(k, n, 0.95);
            const auto b = beta_oracle(k, n, 0.95);
            EXPECT_NEAR(a.low, b.low, 1e-6) << k << "/" << n;
            EXPECT_NEAR(a.high, b.high, 1e-6) << k << "/" << n;
        }
}

TEST(ClopperPearson, BoundariesAndMonotonicity) {
    EXPECT_EQ(clopper_pearson(0, 40, 0.95).low, 0.0);
    EXPECT_EQ(clopper_pearson(40, 40, 0.95).high, 1.0);
    Interval prev{-1.0, -1.0};
    for (std::size_t k = 0; k <= 60; ++k) {
        const auto iv = clopper_pearson(k, 60, 0.9747);
        EXPECT_LE(iv.low, k / 60.0);
        EXPECT_GE(iv.high, k / 60.0);
        EXPECT_GE(iv.low, prev.low);
        EXPECT_GE(iv.high, prev.high);
        prev = iv;
    }
    EXPECT_THROW(clopper_pearson(5, 4, 0.95), MetricsError);
    EXPECT_THROW(clopper_pearson(0, 0, 0.95), MetricsError);
}

TEST(MetricCi, ProportionModePerfectAccuracy) {
    auto d = toy(50, 3, 5);
    d.predicted = d.truth;
    const auto iv = metric_ci(MetricKind::Accuracy, d, {.method = CiMethod::ClopperPearson});
    EXPECT_EQ(iv.high, 1.0);
    EXPECT_GT(iv.low, 0.0);
    EXPECT_LT(iv.low, 1.0);
}

TEST(MetricCi, BootstrapSingleResampleIsDegenerate) {
    const auto d = toy(40, 3, 6);
    for (auto kind : {MetricKind::Accuracy, MetricKind::Mcc, MetricKind::FScore}) {
        const auto iv = metric_ci(kind, d, {.resamples = 1, .seed = 3});
        EXPECT_EQ(iv.low, iv.high);
    }
}

TEST(MetricCi, BootstrapDeterministicAndBracketing) {
    const auto d = toy(100, 3, 7);
    const CiConfig cfg{.resamples = 300, .seed = 11};
    const auto a = metric_ci(MetricKind::Auc, d, cfg);
    const auto b = metric_ci(MetricKind::Auc, d, cfg);
    EXPECT_EQ(a.low, b.low);
    EXPECT_EQ(a.high, b.high);
    const double point = *metric_value(MetricKind::Auc, d);
    EXPECT_LT(a.low, point);
    EXPECT_GT(a.high, point);
    EXPECT_THROW(metric_ci(MetricKind::Accuracy, EvaluationData{}, cfg), MetricsError);
}

TEST(Report, ColumnsAndJson) {
    const auto d = toy(60, 3, 8);
    const auto r = evaluate("weighted", {"normal", "bacterial", "covid"}, d, 1234, {.resamples = 50});
    EXPECT_EQ(tsv_header().substr(0, 40), "Model\tAcc.\tAUC\tSens.\tPrec.\tF\tMCC\tParam.\t");
    const auto row = tsv_row(r);
    EXPECT_EQ(row.substr(0, 9), "weighted\t");
    EXPECT_NE(row.find("\tbootstrap\t"), std::string::npos);
    const auto j = nlohmann::json::parse(to_json(r));
    EXPECT_EQ(j["parameters"], 1234);
    EXPECT_EQ(j["confusion"].size(), 3u);
    EXPECT_EQ(j["ci"]["method"], "bootstrap");
    EXPECT_NEAR(j["ci"]["per_interval_coverage"].get<double>(), std::sqrt(0.95), 1e-15);
    EXPECT_EQ(r.intervals.size(), 6u);
}
