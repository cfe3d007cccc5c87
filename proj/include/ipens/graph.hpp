#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "ipens/autodiff.hpp"
#include "ipens/ops.hpp"
#include "ipens/tensor.hpp"

namespace ipens::nn {

enum class LayerKind { Input, ZeroPad, SeparableConv, Gap, Dropout, Dense };
enum class Activation { None, Relu, Softmax };

const char* to_string(LayerKind kind) noexcept;
const char* to_string(Activation act) noexcept;
LayerKind layer_kind_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);

// One layer of a linear stack. Only the fields relevant to `kind` are used.
struct LayerSpec {
    LayerKind kind = LayerKind::Input;
    Shape input_shape;                            // Input: H×W×C or D
    std::size_t pad = 0;                          // ZeroPad
    std::size_t filters = 0;                      // SeparableConv: output channels
    std::size_t original_filters = 0;             // SeparableConv: width before any pruning
    std::size_t kernel = 0;                       // SeparableConv
    std::size_t stride = 1;                       // SeparableConv
    ops::Padding padding = ops::Padding::Same;    // SeparableConv
    Activation activation = Activation::None;     // SeparableConv, Dense
    double rate = 0.0;                            // Dropout
    std::size_t units = 0;                        // Dense

    static LayerSpec input(Shape shape);
    static LayerSpec zero_pad(std::size_t pad);
    static LayerSpec separable_conv(std::size_t filters, std::size_t kernel, std::size_t stride,
                                    ops::Padding padding = ops::Padding::Same,
                                    Activation activation = Activation::Relu);
    static LayerSpec gap();
    static LayerSpec dropout(double rate);
    static LayerSpec dense(std::size_t units, Activation activation);

    bool has_params() const noexcept { return kind == LayerKind::SeparableConv || kind == LayerKind::Dense; }
    bool operator==(const LayerSpec&) const = default;
};

struct ModelMeta {
    std::string name = "model";
    std::string stage = "custom";
    std::uint64_t seed = 0;
    std::vector<std::string> labels;
    bool operator==(const ModelMeta&) const = default;
};

// Parameter tensors of one layer. Separable conv: {depthwise k×k×Cin,
// pointwise Cin×Cout, bias Cout}; dense: {weight Cin×Cout, bias Cout};
// other kinds: empty.
using LayerWeights = std::vector<Tensor>;

// A linear stack of layers plus their weights. The constructor validates
// shape composition and the single softmax output, so every instance is a
// well-formed model.
class ModelGraph {
public:
    // Weights freshly initialized from meta.seed.
    ModelGraph(std::vector<LayerSpec> layers, ModelMeta meta);
    // Explicit weights; shapes must match the layer specs.
    ModelGraph(std::vector<LayerSpec> layers, std::vector<LayerWeights> weights, ModelMeta meta);

    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
    const std::vector<LayerWeights>& weights() const noexcept { return weights_; }
    const LayerWeights& weights(std::size_t i) const { return weights_.at(i); }
    LayerWeights& mutable_weights(std::size_t i) { return weights_.at(i); }
    const ModelMeta& meta() const noexcept { return meta_; }
    ModelMeta& meta() noexcept { return meta_; }

    std::size_t size() const noexcept { return layers_.size(); }
    // Output shape of every layer (without the batch axis).
    const std::vector<Shape>& shapes() const noexcept { return shapes_; }
    const Shape& input_shape() const { return layers_.front().input_shape; }
    std::size_t classes() const { return layers_.back().units; }

    std::vector<std::size_t> conv_layers() const;
    // Index of the deepest separable conv; throws GraphError if none.
    std::size_t deepest_conv() const;

    // Count of stored weight values.
    std::size_t parameter_count() const;
    // Closed form: Σ (Cin·k² + Cin·Cout + Cout) over convs + Σ (Cin·Cout + Cout) over denses.
    std::size_t analytic_parameter_count() const;
    std::size_t layer_parameter_count(std::size_t i) const;

    bool operator==(const ModelGraph& other) const = default;

private:
    void validate();
    std::vector<LayerSpec> layers_;
    std::vector<LayerWeights> weights_;
    ModelMeta meta_;
    std::vector<Shape> shapes_;
};

// Bitwise equality of structure, metadata, and every weight.
bool bitwise_equal(const ModelGraph& a, const ModelGraph& b);

// He-style uniform init: U(-b, b) with b = sqrt(6 / fan_in); biases zero.
LayerWeights initialize_layer(const LayerSpec& spec, std::size_t input_channels, std::uint64_t seed,
                              std::size_t layer_index);

struct CustomCnnConfig {
    std::size_t depth = 4;
    std::size_t base_filters = 32;
    std::size_t kernel = 5;
    std::size_t stride = 2;
    ops::Padding padding = ops::Padding::Same;
    double dropout_rate = 0.5;
    std::size_t classes = 2;
    Shape input_shape{256, 256, 1};
    std::uint64_t seed = 0;
    std::vector<std::string> labels;  // defaults to "0".."K-1"
};

// input → depth × [separable conv (base·2^i filters, relu)] → GAP → dropout → dense softmax.
ModelGraph build_custom_cnn(const CustomCnnConfig& config);

struct TaskHeadConfig {
    std::size_t filters = 1024;
    std::size_t kernel = 5;
    std::size_t stride = 2;
    std::size_t pad = 1;
    double dropout_rate = 0.5;
    std::size_t classes = 3;
    std::vector<std::string> labels;
    std::string stage = "finetune";
};

// Truncates after the deepest conv layer and appends zero-pad → separable
// conv → GAP → dropout → dense softmax. Retained weights are copied as-is.
ModelGraph attach_task_head(const ModelGraph& model, const TaskHeadConfig& head);

// Removes output filters from the conv at `layer_index` and the matching
// input channels of the next parameterized layer.
ModelGraph remove_filters(const ModelGraph& model, std::size_t layer_index, const std::set<std::size_t>& filters);

// input(D) → dense(hidden, relu) → dense(classes, softmax).
ModelGraph build_mlp(std::size_t inputs, std::size_t hidden, std::size_t classes, std::uint64_t seed,
                     std::vector<std::string> labels = {});

struct ForwardOptions {
    bool training = false;
    std::uint64_t dropout_seed = 0;
    bool params_require_grad = false;
    bool input_requires_grad = false;
};

struct ForwardPass {
    ad::Var input;
    std::vector<ad::Var> outputs;              // post-activation output of every layer
    std::vector<std::vector<ad::Var>> params;  // per layer, parallel to ModelGraph::weights()
    ad::Var logits;                            // final dense output before softmax
    ad::Var probabilities;
};

// Records the model on `tape` for a batch (N × input_shape).
ForwardPass forward(const ModelGraph& model, ad::Tape<float>& tape, const Tensor& batch,
                    const ForwardOptions& options = {});

// Inference-mode class probabilities, N×K, evaluated in chunks of `batch_size`.
Tensor predict(const ModelGraph& model, const Tensor& images, std::size_t batch_size = 64);

// Rows [begin, end) along the leading axis.
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows);

}  // namespace ipens::nn
