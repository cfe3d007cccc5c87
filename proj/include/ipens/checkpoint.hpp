#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ipens/graph.hpp"

namespace ipens::nn {

// On-disk layout (all integers little-endian):
//   "IPEN" | u32 version | u32 header_bytes | header (JSON text) | f32 weights
// Weights follow layer order, and within a layer the LayerWeights order.
inline constexpr char kCheckpointMagic[4] = {'I', 'P', 'E', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainState {
    std::int64_t epoch = -1;
    double best_metric = 0.0;
    std::string metric = "accuracy";
    std::int64_t prune_step = -1;
    bool operator==(const TrainState&) const = default;
};

struct Checkpoint {
    ModelGraph model;
    TrainState state;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ipens::nn
