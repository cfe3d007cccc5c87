#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ipens::cli {

struct SplitOptions {
    double train_fraction = 0.9;
    double val_fraction = 0.1;  // of the training partition
};

struct ModelOptions {
    std::size_t image_size = 256;
    std::size_t depth = 4;
    std::size_t base_filters = 32;
    std::size_t kernel = 5;
    std::size_t stride = 2;
    double dropout = 0.5;
};

struct OptimOptions {
    double learning_rate = 1e-3;
    double momentum = 0.95;
    double l2_decay = 1e-6;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    std::string checkpoint_metric = "accuracy";
    std::vector<double> class_weights;
};

struct CiOptions {
    std::string method = "bootstrap";
    double coverage = 0.95;
    std::size_t resamples = 2000;
};

struct SynthArgs {
    std::filesystem::path out;
    std::size_t classes = 3;
    std::size_t patients_per_class = 20;
    std::size_t samples_per_patient = 5;
    std::size_t image_size = 64;
    std::uint64_t seed = 0;
};

struct TrainArgs {
    std::filesystem::path manifest;
    std::filesystem::path out;
    std::uint64_t seed = 0;
    SplitOptions split;
    ModelOptions model;
    OptimOptions optim;
};

struct FinetuneArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path manifest;
    std::filesystem::path out;
    std::uint64_t seed = 0;
    SplitOptions split;
    std::size_t head_filters = 1024;
    std::size_t head_kernel = 5;
    std::size_t head_stride = 2;
    std::size_t head_pad = 1;
    double head_dropout = 0.5;
    OptimOptions optim;
};

struct SearchArgs {
    TrainArgs base;
    std::size_t trials = 10;
    std::size_t threads = 1;
};

struct PruneArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path manifest;
    std::filesystem::path out;
    std::uint64_t seed = 0;
    SplitOptions split;
    double step_percent = 2.0;
    double max_percent = 50.0;
    std::string selection = "validation";
    OptimOptions optim;  // retraining; epochs = 0 disables it
};

struct EnsembleArgs {
    std::vector<std::filesystem::path> checkpoints;
    std::filesystem::path prune_dir;  // alternative: take the top-ranked checkpoints
    std::size_t top = 3;
    std::filesystem::path manifest;
    std::filesystem::path out;
    std::uint64_t seed = 0;
    std::string strategy = "weighted";
    std::vector<double> weights;
    std::string split = "test";
    std::size_t stacker_epochs = 300;
    CiOptions ci;
};

struct EvaluateArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path predictions;
    std::filesystem::path manifest;
    std::filesystem::path out;
    std::uint64_t seed = 0;
    std::string split = "test";
    CiOptions ci;
};

struct GradcamArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path manifest;
    std::filesystem::path out;
    std::vector<std::string> samples;
    std::size_t count = 4;
    std::string split = "test";
    int target_class = -1;  // -1: predicted class
    double alpha = 0.5;
};

void run_synth(const SynthArgs& a);
void run_train(const TrainArgs& a);
void run_finetune(const FinetuneArgs& a);
void run_search(const SearchArgs& a);
void run_prune(const PruneArgs& a);
void run_ensemble(const EnsembleArgs& a);
void run_evaluate(const EvaluateArgs& a);
void run_gradcam(const GradcamArgs& a);

}  // namespace ipens::cli
