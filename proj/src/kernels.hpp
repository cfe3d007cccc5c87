#pragma once

// Internal kernels shared by the forward ops and the tape's backward passes.
// All image operands here are rank 4 (N×H×W×C).

#include <vector>

#include "ipens/ops.hpp"

namespace ipens::ops::detail {

template <typename T>
BasicTensor<T> depthwise_forward(const BasicTensor<T>& input, const BasicTensor<T>& depthwise, std::size_t stride,
                                 const ConvGeometry& g);

template <typename T>
BasicTensor<T> pointwise_forward(const BasicTensor<T>& mid, const BasicTensor<T>& pointwise,
                                 const BasicTensor<T>& bias);

// Given d(out), accumulates into d(mid) (written fresh), d(pointwise), d(bias).
template <typename T>
void pointwise_backward(const BasicTensor<T>& mid, const BasicTensor<T>& pointwise, const BasicTensor<T>& grad_out,
                        BasicTensor<T>* grad_mid, BasicTensor<T>* grad_pointwise, BasicTensor<T>* grad_bias);

// Given d(mid), accumulates into d(input) and d(depthwise) when non-null.
template <typename T>
void depthwise_backward(const BasicTensor<T>& input, const BasicTensor<T>& depthwise, std::size_t stride,
                        const ConvGeometry& g, const BasicTensor<T>& grad_mid, BasicTensor<T>* grad_input,
                        BasicTensor<T>* grad_depthwise);

template <typename T>
BasicTensor<T> as_batch(const BasicTensor<T>& t) {
    if (t.rank() == 4) return t;
    if (t.rank() == 3) return t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)});
    throw DimensionError("rank", "expected H×W×C or N×H×W×C, got " + shape_string(t.shape()));
}

template <typename T>
BasicTensor<T> drop_batch(const BasicTensor<T>& t) {
    return t.reshaped({t.dim(1), t.dim(2), t.dim(3)});
}

}  // namespace ipens::ops::detail
