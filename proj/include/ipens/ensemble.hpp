#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ipens/graph.hpp"
#include "ipens/tensor.hpp"

namespace ipens::ensemble {

// One model's output on a labelled sample list. labels[i] = -1 when unknown.
struct Predictions {
    std::vector<std::string> ids;
    std::vector<std::string> classes;
    std::vector<int> labels;
    Tensor64 probs;  // N×K

    std::size_t size() const { return ids.size(); }
};

// CSV: header "id,label,<class0>,<class1>,..." with label empty when unknown.
void write_predictions(const std::filesystem::path& path, const Predictions& p);
Predictions read_predictions(const std::filesystem::path& path);

// Probability matrices from several models over the same samples and classes.
struct PredictionSet {
    std::vector<Tensor64> models;

    std::size_t samples() const;
    std::size_t classes() const;
    // Shapes agree and rows sum to 1 within 1e-6.
    void validate(std::size_t min_models = 2) const;
};

// Requires equal ids and classes across inputs.
PredictionSet align(const std::vector<Predictions>& inputs);

std::vector<int> argmax_rows(const Tensor64& probs);
Tensor64 one_hot(std::span<const int> labels, std::size_t classes);

// Most-voted class; ties go to the highest summed probability among the
// tied classes, then the lowest index.
std::vector<int> majority_vote(const PredictionSet& preds);
// Vote shares per class (rows sum to 1), used as scores for ROC analysis.
Tensor64 vote_fractions(const PredictionSet& preds);

Tensor64 average_probs(const PredictionSet& preds);
// Weights nonnegative, summing to 1 within 1e-9.
Tensor64 weighted_average(const PredictionSet& preds, std::span<const double> weights);

inline const std::vector<double> kDefaultWeights{0.5, 0.3, 0.2};

struct StackerSpec {
    std::size_t hidden = 9;
    std::size_t epochs = 300;
    std::size_t batch_size = 16;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 0;
};

// Concatenates each sample's model rows: N × (models·classes).
Tensor stack_features(const PredictionSet& preds);

// input(M·K) → dense(hidden, relu) → dense(K, softmax), trained on held-out predictions.
nn::ModelGraph train_stacker(const PredictionSet& val_preds, std::span<const int> val_labels,
                             const StackerSpec& spec, std::vector<std::string> class_names = {});
Tensor64 apply_stacker(const nn::ModelGraph& stacker, const PredictionSet& preds);

enum class Strategy { Majority, Average, Weighted, Stacking };

const char* to_string(Strategy s) noexcept;
Strategy strategy_from_string(const std::string& s);

}  // namespace ipens::ensemble
