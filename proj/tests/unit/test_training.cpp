#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ipens/training.hpp"

using namespace ipens;
using namespace ipens::train;

namespace {

data::DatasetManifest patients_manifest(std::size_t per_class, std::size_t samples, std::size_t classes) {
    data::DatasetManifest m;
    m.labels = data::default_class_names(classes);
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t p = 0; p < per_class; ++p)
            for (std::size_t s = 0; s < samples; ++s) {
                const auto pid = "p" + std::to_string(c) + "_" + std::to_string(p);
                m.samples.push_back({pid + "_" + std::to_string(s) + ".pgm", m.labels[c], pid, "", ""});
            }
    return m;
}

// Two Gaussian clouds in 4-D, separable along the first coordinate.
data::Dataset clouds(std::size_t n, std::uint64_t seed) {
    data::Dataset d;
    d.images = Tensor({n, 4});
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 2);
        d.labels.push_back(y);
        for (std::size_t j = 0; j < 4; ++j)
            d.images[i * 4 + j] = static_cast<float>(rng.normal() * 0.5 + (j == 0 ? (y ? 2.0 : -2.0) : 0.0));
    }
    d.vocabulary = {"a", "b"};
    return d;
}

}  // namespace

TEST(Sgd, SingleStepOnSquare) {
    std::vector<float> w{1.0f}, v{0.0f};
    const std::vector<float> g{2.0f * w[0]};
    sgd_step<float>(w, g, v, TrainConfig{.learning_rate = 0.1, .momentum = 0.0, .l2_decay = 0.0});
    EXPECT_FLOAT_EQ(w[0], 0.8f);
}

TEST(Sgd, TwoStepsWithMomentum) {
    const TrainConfig cfg{.learning_rate = 0.1, .momentum = 0.9, .l2_decay = 0.0};
    std::vector<double> w{1.0}, v{0.0};
    for (int i = 0; i < 2; ++i) {
        const std::vector<double> g{2.0 * w[0]};
        sgd_step<double>(w, g, v, cfg);
    }
    EXPECT_NEAR(w[0], 0.46, 1e-12);
}

TEST(Sgd, DecayTermAddsToGradient) {
    std::vector<double> w{2.0}, v{0.0};
    const std::vector<double> g{0.0};
    sgd_step<double>(w, g, v, TrainConfig{.learning_rate = 0.5, .momentum = 0.0, .l2_decay = 0.1});
    EXPECT_NEAR(w[0], 2.0 - 0.5 * 0.1 * 2.0, 1e-15);
    std::vector<double> bad{1.0, 2.0};
    EXPECT_THROW(sgd_step<double>(bad, g, v, TrainConfig{}), DimensionError);
}

TEST(ClassWeights, InverseFrequency) {
    const std::vector<int> y{0, 0, 0, 1, 2, 2};
    const auto w = class_weights(y, 3);
    EXPECT_NEAR(w[0], 6.0 / 9.0, 1e-15);
    EXPECT_NEAR(w[1], 2.0, 1e-15);
    EXPECT_NEAR(w[2], 1.0, 1e-15);
    // each class carries N/K total weight
    std::vector<double> mass(3, 0.0);
    for (int c : y) mass[c] += w[c];
    for (double m : mass) EXPECT_NEAR(m, 2.0, 1e-12);
    EXPECT_THROW(class_weights(std::vector<int>{0, 0}, 2), DataError);
    EXPECT_THROW(class_weights(std::vector<int>{0, 3}, 2), DataError);
}

TEST(WeightedCrossEntropy, HandValues) {
    Tensor64 p({2, 2});
    p[0] = 0.5, p[1] = 0.5, p[2] = 0.1, p[3] = 0.9;
    const std::vector<int> y{0, 1};
    const std::vector<double> w{2.0, 1.0};
    EXPECT_NEAR(weighted_cross_entropy(p, y, w), (2.0 * std::log(2.0) - std::log(0.9)) / 2.0, 1e-12);
    p[0] = 0.0, p[1] = 1.0;
    EXPECT_NEAR(weighted_cross_entropy(p, std::vector<int>{0, 1}, std::vector<double>{1.0, 1.0}),
                (-std::log(1e-12) - std::log(0.9)) / 2.0, 1e-9);
}

TEST(Split, PatientsNeverStraddlePartitions) {
    const auto m = patients_manifest(20, 5, 3);
    const auto s = split_patient_level(m, 0.8, 0.2, 7);
    EXPECT_EQ(s.train.samples.size() + s.validation.samples.size() + s.test.samples.size(), m.samples.size());
    std::map<std::string, std::string> where;
    for (const auto* part : {&s.train, &s.validation, &s.test})
        for (const auto& x : part->samples) {
            auto [it, fresh] = where.emplace(x.patient_id, x.split);
            EXPECT_EQ(it->second, x.split) << x.patient_id;
        }
    // stratified: 4 test and 3 val patients per class
    for (const auto& label : m.labels) {
        std::set<std::string> test_p, val_p;
        for (const auto& x : s.test.samples)
            if (x.label == label) test_p.insert(x.patient_id);
        for (const auto& x : s.validation.samples)
            if (x.label == label) val_p.insert(x.patient_id);
        EXPECT_EQ(test_p.size(), 4u);
        EXPECT_EQ(val_p.size(), 3u);
    }
}

TEST(Split, DeterministicAndReusableFromTags) {
    const auto m = patients_manifest(10, 3, 2);
    const auto a = split_patient_level(m, 0.7, 0.25, 11);
    const auto b = split_patient_level(m, 0.7, 0.25, 11);
    EXPECT_EQ(a.test.samples, b.test.samples);
    data::DatasetManifest tagged = m;
    tagged.samples.clear();
    for (const auto* part : {&a.train, &a.validation, &a.test})
        tagged.samples.insert(tagged.samples.end(), part->samples.begin(), part->samples.end());
    const auto c = split_from_tags(tagged);
    EXPECT_EQ(c.train.samples, a.train.samples);
    EXPECT_EQ(c.validation.samples, a.validation.samples);
    EXPECT_THROW(split_from_tags(m), DataError);
}

TEST(Split, ZeroValidationFraction) {
    const auto s = split_patient_level(patients_manifest(5, 2, 2), 0.8, 0.0, 1);
    EXPECT_TRUE(s.validation.samples.empty());
    EXPECT_FALSE(s.test.samples.empty());
    EXPECT_THROW(split_patient_level(patients_manifest(5, 2, 2), 1.0, 0.0, 1), UsageError);
    EXPECT_THROW(split_patient_level(patients_manifest(1, 2, 1), 0.5, 0.5, 1), DataError);
}

TEST(Train, RejectsZeroEpochs) {
    const auto d = clouds(16, 1);
    EXPECT_THROW(train::train(nn::build_mlp(4, 3, 2, 1), d, d, TrainConfig{.epochs = 0}), UsageError);
}

TEST(Train, NonFiniteLossAbortsWithDiagnostics) {
    auto model = nn::build_mlp(4, 3, 2, 1);
    for (std::size_t i = 0; i < model.size(); ++i)
        if (!model.weights(i).empty()) model.mutable_weights(i)[0][0] = std::numeric_limits<float>::quiet_NaN();
    try {
        train::train(model, clouds(16, 1), clouds(8, 2), TrainConfig{.epochs = 2, .batch_size = 8});
        FAIL();
    } catch (const TrainingError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("epoch 0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("layer"), std::string::npos) << msg;
    }
}

TEST(Train, BestCheckpointDominatesHistory) {
    const auto tr = clouds(64, 3);
    const auto va = clouds(32, 4);
    const TrainConfig cfg{.learning_rate = 0.05, .momentum = 0.9, .epochs = 8, .batch_size = 8, .seed = 5};
    const auto r = train::train(nn::build_mlp(4, 6, 2, 9), tr, va, cfg);
    ASSERT_EQ(r.history.size(), 8u);
    double best = 0.0;
    std::size_t arg = 0;
    for (const auto& h : r.history)
        if (h.val_accuracy > best) best = h.val_accuracy, arg = h.epoch;
    EXPECT_EQ(r.best.state.best_metric, best);
    EXPECT_EQ(r.best.state.epoch, static_cast<std::int64_t>(arg));
    EXPECT_EQ(evaluate(r.best.model, va).accuracy, best);
    EXPECT_GE(best, 0.95);
    EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
}

TEST(Train, Deterministic) {
    const auto tr = clouds(32, 3);
    const TrainConfig cfg{.learning_rate = 0.05, .epochs = 3, .batch_size = 8, .seed = 2};
    const auto a = train::train(nn::build_mlp(4, 6, 2, 9), tr, tr, cfg);
    const auto b = train::train(nn::build_mlp(4, 6, 2, 9), tr, tr, cfg);
    EXPECT_EQ(a.history, b.history);
    for (std::size_t i = 0; i < a.best.model.size(); ++i)
        for (std::size_t t = 0; t < a.best.model.weights(i).size(); ++t)
            EXPECT_TRUE(bitwise_equal(a.best.model.weights(i)[t], b.best.model.weights(i)[t]));
}

TEST(Search, LogUniformMedian) {
    const SearchDimension l2{"l2_decay", 1e-10, 1e-3, Scale::Log};
    Rng rng(17);
    std::vector<double> xs(10001);
    for (auto& x : xs) x = sample_dimension(l2, rng);
    std::nth_element(xs.begin(), xs.begin() + 5000, xs.end());
    const double median = xs[5000];
    EXPECT_GT(median, std::pow(10.0, -6.5) / 3.0);
    EXPECT_LT(median, std::pow(10.0, -6.5) * 3.0);
}

TEST(Search, SortedBoundedAndThreadInvariant) {
    const auto space = SearchSpace::sgd_defaults(12, 4);
    const Objective f = [](const TrialParams& p, std::uint64_t) { return p.at("momentum") - p.at("learning_rate"); };
    const auto serial = random_search(space, f, 1);
    const auto parallel = random_search(space, f, 3);
    ASSERT_EQ(serial.size(), 12u);
    for (std::size_t i = 1; i < serial.size(); ++i) EXPECT_GE(serial[i - 1].metric, serial[i].metric);
    for (std::size_t i = 0; i < serial.size(); ++i) {
        EXPECT_EQ(serial[i].index, parallel[i].index);
        EXPECT_EQ(serial[i].params, parallel[i].params);
        for (const auto& d : space.dimensions) {
            EXPECT_GE(serial[i].params.at(d.name), d.low);
            EXPECT_LE(serial[i].params.at(d.name), d.high);
        }
    }
    EXPECT_THROW(random_search(SearchSpace{{{"x", 0.0, 1.0, Scale::Log}}, 2, 0}, f), UsageError);
}

TEST(ClassWeights, TabulatedCounts) {
    auto expand = [](std::vector<std::size_t> counts) {
        std::vector<int> y;
        for (std::size_t c = 0; c < counts.size(); ++c) y.insert(y.end(), counts[c], static_cast<int>(c));
        return y;
    };
    EXPECT_EQ(class_weights(expand({20, 20}), 2), (std::vector<double>{1.0, 1.0}));
    const auto a = class_weights(expand({10, 30}), 2);
    EXPECT_NEAR(a[0], 2.0, 1e-12);
    EXPECT_NEAR(a[1], 0.6667, 1e-4);
    const auto b = class_weights(expand({1, 1, 98}), 3);
    EXPECT_NEAR(b[0], 33.33, 1e-2);
    EXPECT_NEAR(b[1], 33.33, 1e-2);
    EXPECT_NEAR(b[2], 0.3401, 1e-4);
}

TEST(WeightedCrossEntropy, PerfectUniformAndLinearity) {
    Tensor64 onehot({2, 3});
    onehot[1] = 1.0, onehot[3] = 1.0;
    const std::vector<int> y{1, 0};
    const std::vector<double> unit{1.0, 1.0, 1.0};
    EXPECT_EQ(weighted_cross_entropy(onehot, y, unit), 0.0);
    const Tensor64 uniform({2, 3}, 1.0 / 3.0);
    EXPECT_NEAR(weighted_cross_entropy(uniform, y, unit), 1.0986, 1e-4);
    const std::vector<int> only0{0, 0};
    const double base = weighted_cross_entropy(uniform, only0, unit);
    EXPECT_NEAR(weighted_cross_entropy(uniform, only0, std::vector<double>{2.0, 1.0, 1.0}), 2.0 * base, 1e-15);
}

TEST(Sgd, ZeroLearningRateLeavesParameters) {
    std::vector<float> w{1.5f, -2.0f}, v{0.0f, 0.0f};
    const std::vector<float> g{3.0f, 4.0f};
    sgd_step<float>(w, g, v, TrainConfig{.learning_rate = 0.0, .momentum = 0.9, .l2_decay = 0.1});
    EXPECT_EQ(w, (std::vector<float>{1.5f, -2.0f}));
}

TEST(Split, NinetyTenOnSinglePatients) {
    const auto s = split_patient_level(patients_manifest(10, 1, 1), 0.9, 0.0, 3);
    EXPECT_EQ(s.train.samples.size(), 9u);
    EXPECT_EQ(s.test.samples.size(), 1u);
}

TEST(Search, SingleTrialRunsOnce) {
    int calls = 0;
    const auto r = random_search(SearchSpace::sgd_defaults(1, 0), [&](const TrialParams&, std::uint64_t) {
        ++calls;
        return 0.5;
    });
    EXPECT_EQ(calls, 1);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].metric, 0.5);
}
