#pragma once

#include <cstddef>

#include "ipens/graph.hpp"
#include "ipens/tensor.hpp"

namespace ipens::explain {

struct SaliencyMap {
    Tensor heatmap;  // H×W in [0, 1]
    std::size_t target_class = 0;
    std::size_t layer = 0;
    bool all_zero = false;
};

// Grad-CAM over the deepest conv layer. `image` is H×W×C; the score is the
// class logit before softmax. The map is upsampled to H×W and max-normalized.
SaliencyMap grad_cam(const nn::ModelGraph& model, const Tensor& image, std::size_t class_index);

// Blue→cyan→green→yellow→red; v is clamped to [0, 1].
void colormap(double v, float rgb[3]);

// Grayscale (min-max scaled to [0,1]) blended with the colored heatmap:
// (1-alpha)·gray + alpha·color. Output H×W×3 in [0, 1].
Tensor overlay(const Tensor& image, const SaliencyMap& map, double alpha);

}  // namespace ipens::explain
