#pragma once

#include <cstddef>
#include <cstdint>

#include "ipens/tensor.hpp"

// Forward kernels for the layer vocabulary. Image tensors are H×W×C or
// N×H×W×C; rank-3 inputs produce rank-3 outputs. Reductions accumulate in
// double regardless of the storage type.
namespace ipens::ops {

enum class Padding { Same, Valid };

const char* to_string(Padding p) noexcept;
Padding padding_from_string(const std::string& s);

struct ConvGeometry {
    std::size_t out_h = 0;
    std::size_t out_w = 0;
    std::size_t pad_top = 0;
    std::size_t pad_left = 0;
};

// "same": out = ceil(in / stride), zero padding split evenly with the odd
// pixel on the bottom/right. "valid": out = (in - k) / stride + 1.
ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel, std::size_t stride,
                           Padding padding);

// Depthwise k×k convolution per input channel, then 1×1 pointwise mixing
// plus a bias on the pointwise output.
//   depthwise: k×k×Cin, pointwise: Cin×Cout, bias: Cout
template <typename T>
BasicTensor<T> separable_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& depthwise,
                                const BasicTensor<T>& pointwise, const BasicTensor<T>& bias, std::size_t stride,
                                Padding padding);

// Validates operand shapes for separable_conv2d on an N×H×W×C input.
void check_separable_shapes(const Shape& input, const Shape& depthwise, const Shape& pointwise, const Shape& bias,
                            std::size_t stride);

template <typename T>
BasicTensor<T> zero_pad2d(const BasicTensor<T>& input, std::size_t pad);

// H×W×C -> C, N×H×W×C -> N×C.
template <typename T>
BasicTensor<T> global_average_pool(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

// Normalizes over the last axis.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& input);

// x: Cin or N×Cin, weight: Cin×Cout, bias: Cout.
template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

// Inverted dropout. Returns the multiplicative mask (0 or 1/(1-rate)) used
// for each element; identical seeds give identical masks.
template <typename T>
BasicTensor<T> dropout_mask(const Shape& shape, double rate, std::uint64_t seed);

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& input, double rate, bool training, std::uint64_t seed);

}  // namespace ipens::ops
