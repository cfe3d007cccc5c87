#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ipens/ops.hpp"
#include "ipens/tensor.hpp"

namespace ipens::ad {

// Handle to a node on a specific tape.
struct Var {
    std::uint64_t tape_id = 0;
    std::size_t index = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the node
// list is already a topological order and backward walks it in reverse.
// One tape is meant for one thread.
template <typename T>
class Tape {
public:
    using TensorT = BasicTensor<T>;
    // Called with the tape and the node's own index; reads grad(self) and
    // adds into the grad buffers of its inputs.
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape();

    Var leaf(TensorT value, bool requires_grad = true);
    Var record(std::string op, TensorT value, std::vector<Var> inputs, BackwardFn backward);

    const TensorT& value(Var v) const;
    // Gradient of the last backward() loss with respect to `v`.
    const TensorT& grad(Var v) const;
    bool requires_grad(Var v) const;
    const std::string& op(Var v) const;

    // Zeroes every accumulator, seeds d(loss)=1, and propagates.
    void backward(Var loss);

    std::size_t size() const noexcept { return nodes_.size(); }
    std::uint64_t id() const noexcept { return id_; }

    // For backward functions.
    const TensorT& value_at(std::size_t i) const { return nodes_[i].value; }
    const TensorT& grad_at(std::size_t i) const { return nodes_[i].grad; }
    TensorT& grad_buffer(std::size_t i) { return nodes_[i].grad; }
    bool needs_grad_at(std::size_t i) const { return nodes_[i].requires_grad; }
    std::size_t input_at(std::size_t node, std::size_t k) const { return nodes_[node].inputs[k]; }

private:
    struct Node {
        std::string op;
        TensorT value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        TensorT grad;
        bool requires_grad = false;
    };

    const Node& node(Var v) const;

    std::uint64_t id_;
    std::vector<Node> nodes_;
    bool have_grads_ = false;
};

// Tape-recorded ops. Image operands are N×H×W×C.
template <typename T>
Var separable_conv2d(Tape<T>& tape, Var input, Var depthwise, Var pointwise, Var bias, std::size_t stride,
                     ops::Padding padding);
template <typename T>
Var zero_pad2d(Tape<T>& tape, Var input, std::size_t pad);
template <typename T>
Var global_average_pool(Tape<T>& tape, Var input);
template <typename T>
Var relu(Tape<T>& tape, Var input);
template <typename T>
Var softmax(Tape<T>& tape, Var input);
template <typename T>
Var dense(Tape<T>& tape, Var input, Var weight, Var bias);
template <typename T>
Var dropout(Tape<T>& tape, Var input, double rate, bool training, std::uint64_t seed);

// −mean_i w[y_i]·ln(clamp(p_i[y_i], 1e-12, 1)) over rows of an N×K matrix.
template <typename T>
Var weighted_cross_entropy(Tape<T>& tape, Var probabilities, std::span<const int> labels,
                           std::span<const double> class_weights);

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);
template <typename T>
Var square(Tape<T>& tape, Var a);
template <typename T>
Var sum(Tape<T>& tape, Var a);
// Scalar element at a flat index.
template <typename T>
Var pick(Tape<T>& tape, Var a, std::size_t flat_index);

}  // namespace ipens::ad
