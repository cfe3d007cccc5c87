#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ipens/checkpoint.hpp"
#include "ipens/data.hpp"
#include "ipens/graph.hpp"
#include "ipens/training.hpp"

namespace ipens::prune {

// Fraction of post-relu zeros (|v| <= 1e-12) per filter of one conv layer.
struct ApozReport {
    std::size_t layer = 0;
    std::vector<double> apoz;
    std::size_t samples = 0;
    std::size_t positions = 0;  // spatial positions per sample
};

inline constexpr double kZeroTolerance = 1e-12;

ApozReport compute_apoz(const nn::ModelGraph& model, std::size_t layer_index, const Tensor& images,
                        std::size_t batch_size = 64);
// One report per conv layer, in layer order, from a single pass over `images`.
std::vector<ApozReport> compute_apoz_all(const nn::ModelGraph& model, const Tensor& images,
                                         std::size_t batch_size = 64);

// floor(t·P/100·original), capped so one filter survives.
std::size_t cumulative_target(std::size_t original_filters, double step_percent, std::size_t step);

// The `count` highest-APoZ filters; ties go to the lower index.
std::vector<std::size_t> rank_filters(const std::vector<double>& apoz, std::size_t count);

// Brings every reported layer to its cumulative target for `step`.
nn::ModelGraph prune_step(const nn::ModelGraph& model, const std::vector<ApozReport>& reports, std::size_t step,
                          double step_percent);

enum class Selection { Validation, Test };

const char* to_string(Selection s) noexcept;
Selection selection_from_string(const std::string& s);

struct PruneSchedule {
    double step_percent = 2.0;
    double max_percent = 50.0;
    // epochs = 0 skips retraining.
    train::TrainConfig retrain;
    Selection selection = Selection::Validation;

    std::size_t steps() const;
    void validate() const;
};

struct StepSummary {
    std::size_t step = 0;
    double percent = 0.0;  // share of original conv filters removed so far
    std::size_t parameters = 0;
    double selection_accuracy = 0.0;
};

struct PruneResult {
    std::vector<nn::Checkpoint> checkpoints;  // index 0 is the unpruned baseline
    std::vector<StepSummary> summary;
    std::size_t best = 0;
};

// APoZ is measured on the validation set. The best checkpoint has the highest
// selection-split accuracy; ties prefer fewer parameters, then the earlier step.
PruneResult iterative_prune(const nn::ModelGraph& baseline, const data::Dataset& train_set,
                            const data::Dataset& val_set, const data::Dataset& test_set,
                            const PruneSchedule& schedule,
                            const std::function<void(const StepSummary&)>& on_step = {});

double pruned_percent(const nn::ModelGraph& model);

std::string format_summary(const std::vector<StepSummary>& summary);

}  // namespace ipens::prune
