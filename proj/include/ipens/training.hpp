#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ipens/checkpoint.hpp"
#include "ipens/data.hpp"
#include "ipens/graph.hpp"
#include "ipens/rng.hpp"

namespace ipens::train {

enum class CheckpointMetric { Accuracy, Loss };

const char* to_string(CheckpointMetric m) noexcept;
CheckpointMetric checkpoint_metric_from_string(const std::string& s);

struct TrainConfig {
    double learning_rate = 1e-3;
    double momentum = 0.95;
    double l2_decay = 1e-6;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    // Empty: inverse-frequency weights from the training labels.
    std::vector<double> class_weights;
    CheckpointMetric checkpoint_metric = CheckpointMetric::Accuracy;

    void validate() const;
};

// ---- splitting and weighting ----

struct Split {
    data::DatasetManifest train;
    data::DatasetManifest validation;
    data::DatasetManifest test;
};

// Patient-level split: every sample of a patient lands in one partition.
// Patients are stratified by the label of their first sample, then shuffled
// per stratum; within each stratum round((1-train_fraction)·P) patients go
// to test and round(val_fraction_of_train·rest) of the remainder to
// validation. val_fraction_of_train = 0 yields an empty validation set.
// Samples are tagged with their split.
Split split_patient_level(const data::DatasetManifest& manifest, double train_fraction, double val_fraction_of_train,
                          std::uint64_t seed);

// Uses each sample's split tag.
Split split_from_tags(const data::DatasetManifest& manifest);

// w_c = N / (K · n_c).
std::vector<double> class_weights(std::span<const int> labels, std::size_t classes);

// −mean_i w[y_i] · ln clamp(p_i[y_i], 1e-12, 1) over an N×K probability matrix.
double weighted_cross_entropy(const Tensor64& probabilities, std::span<const int> labels,
                              std::span<const double> class_weights);

// g' = g + l2·w;  v ← momentum·v − lr·g';  w ← w + v
template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, std::span<T> velocity, const TrainConfig& config) {
    if (params.size() != grads.size() || params.size() != velocity.size())
        throw DimensionError("parameters", "sgd_step operands differ in length");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = static_cast<double>(grads[i]) + config.l2_decay * params[i];
        velocity[i] = static_cast<T>(config.momentum * velocity[i] - config.learning_rate * g);
        params[i] += velocity[i];
    }
}

// ---- training ----

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
    nn::Checkpoint best;
    std::vector<EpochRecord> history;
};

struct Evaluation {
    double loss = 0.0;  // unweighted cross-entropy
    double accuracy = 0.0;
};

Evaluation evaluate(const nn::ModelGraph& model, const data::Dataset& dataset);

// Mini-batch SGD for a fixed number of epochs; returns the epoch-best model
// on the validation set (ties keep the earlier epoch).
TrainResult train(const nn::ModelGraph& model, const data::Dataset& train_set, const data::Dataset& val_set,
                  const TrainConfig& config);

// "epoch\ttrain_loss\tval_loss\tval_acc" lines with a header.
std::string format_history(const std::vector<EpochRecord>& history);

// ---- hyperparameter search ----

enum class Scale { Linear, Log };

struct SearchDimension {
    std::string name;
    double low = 0.0;
    double high = 1.0;
    Scale scale = Scale::Linear;
};

struct SearchSpace {
    std::vector<SearchDimension> dimensions;
    std::size_t trials = 10;
    std::uint64_t seed = 0;

    void validate() const;
    // momentum [0.85, 0.99] linear; l2_decay [1e-10, 1e-3] log; learning_rate [1e-9, 1e-2] log.
    static SearchSpace sgd_defaults(std::size_t trials, std::uint64_t seed);
};

using TrialParams = std::map<std::string, double>;

struct Trial {
    std::size_t index = 0;
    TrialParams params;
    std::uint64_t seed = 0;
    double metric = 0.0;
};

// Returns a validation metric to maximize.
using Objective = std::function<double(const TrialParams&, std::uint64_t seed)>;

double sample_dimension(const SearchDimension& dim, Rng& rng);

// All configurations are drawn up front from one stream, so results do not
// depend on `threads`. Output is sorted by metric, descending (ties by index).
std::vector<Trial> random_search(const SearchSpace& space, const Objective& objective, std::size_t threads = 1);

std::string format_trials(const std::vector<Trial>& trials);

}  // namespace ipens::train
