#include "ipens/graph.hpp"

#include <algorithm>
#include <cmath>

#include "ipens/rng.hpp"

namespace ipens::nn {

const char* to_string(LayerKind kind) noexcept {
    switch (kind) {
        case LayerKind::Input: return "input";
        case LayerKind::ZeroPad: return "zero_pad";
        case LayerKind::SeparableConv: return "separable_conv";
        case LayerKind::Gap: return "gap";
        case LayerKind::Dropout: return "dropout";
        case LayerKind::Dense: return "dense";
    }
    return "?";
}

const char* to_string(Activation act) noexcept {
    switch (act) {
        case Activation::None: return "none";
        case Activation::Relu: return "relu";
        case Activation::Softmax: return "softmax";
    }
    return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
    for (auto k : {LayerKind::Input, LayerKind::ZeroPad, LayerKind::SeparableConv, LayerKind::Gap,
                   LayerKind::Dropout, LayerKind::Dense})
        if (s == to_string(k)) return k;
    throw GraphError("unknown layer kind '" + s + "'");
}

Activation activation_from_string(const std::string& s) {
    for (auto a : {Activation::None, Activation::Relu, Activation::Softmax})
        if (s == to_string(a)) return a;
    throw GraphError("unknown activation '" + s + "'");
}

LayerSpec LayerSpec::input(Shape shape) {
    LayerSpec s;
    s.kind = LayerKind::Input;
    s.input_shape = std::move(shape);
    return s;
}

LayerSpec LayerSpec::zero_pad(std::size_t pad) {
    LayerSpec s;
    s.kind = LayerKind::ZeroPad;
    s.pad = pad;
    return s;
}

LayerSpec LayerSpec::separable_conv(std::size_t filters, std::size_t kernel, std::size_t stride,
                                    ops::Padding padding, Activation activation) {
    LayerSpec s;
    s.kind = LayerKind::SeparableConv;
    s.filters = filters;
    s.original_filters = filters;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    s.activation = activation;
    return s;
}

LayerSpec LayerSpec::gap() {
    LayerSpec s;
    s.kind = LayerKind::Gap;
    return s;
}

LayerSpec LayerSpec::dropout(double rate) {
    LayerSpec s;
    s.kind = LayerKind::Dropout;
    s.rate = rate;
    return s;
}

LayerSpec LayerSpec::dense(std::size_t units, Activation activation) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.units = units;
    s.activation = activation;
    return s;
}

namespace {

std::string where(std::size_t i, const LayerSpec& s) {
    return "layer " + std::to_string(i) + " (" + to_string(s.kind) + ")";
}

// Output shape of `spec` applied to `in`, validating composition.
Shape infer_shape(std::size_t i, const LayerSpec& spec, const Shape& in) {
    switch (spec.kind) {
        case LayerKind::Input:
            throw GraphError(where(i, spec) + ": input layer only allowed at position 0");
        case LayerKind::ZeroPad:
            if (in.size() != 3) throw GraphError(where(i, spec) + ": needs an H×W×C input, got " + shape_string(in));
            return {in[0] + 2 * spec.pad, in[1] + 2 * spec.pad, in[2]};
        case LayerKind::SeparableConv: {
            if (in.size() != 3) throw GraphError(where(i, spec) + ": needs an H×W×C input, got " + shape_string(in));
            if (spec.filters < 1) throw GraphError(where(i, spec) + ": filter count must be >= 1");
            if (spec.kernel < 1 || spec.stride < 1) throw GraphError(where(i, spec) + ": kernel and stride must be >= 1");
            if (spec.activation == Activation::Softmax)
                throw GraphError(where(i, spec) + ": softmax is only valid on the output dense layer");
            if (spec.padding == ops::Padding::Valid && (in[0] < spec.kernel || in[1] < spec.kernel))
                throw GraphError(where(i, spec) + ": spatial extent " + shape_string(in) +
                                 " collapses below 1×1 with kernel " + std::to_string(spec.kernel));
            const auto g = ops::conv_geometry(in[0], in[1], spec.kernel, spec.stride, spec.padding);
            return {g.out_h, g.out_w, spec.filters};
        }
        case LayerKind::Gap:
            if (in.size() != 3) throw GraphError(where(i, spec) + ": needs an H×W×C input, got " + shape_string(in));
            return {in[2]};
        case LayerKind::Dropout:
            if (!(spec.rate >= 0.0 && spec.rate < 1.0)) throw GraphError(where(i, spec) + ": rate must lie in [0, 1)");
            return in;
        case LayerKind::Dense:
            if (in.size() != 1) throw GraphError(where(i, spec) + ": needs a flat input, got " + shape_string(in));
            if (spec.units < 1) throw GraphError(where(i, spec) + ": unit count must be >= 1");
            return {spec.units};
    }
    throw GraphError("unreachable layer kind");
}

std::size_t channels_of(const Shape& s) { return s.empty() ? 0 : s.back(); }

std::vector<Shape> weight_shapes(const LayerSpec& spec, std::size_t cin) {
    if (spec.kind == LayerKind::SeparableConv)
        return {{spec.kernel, spec.kernel, cin}, {cin, spec.filters}, {spec.filters}};
    if (spec.kind == LayerKind::Dense) return {{cin, spec.units}, {spec.units}};
    return {};
}

}  // namespace

LayerWeights initialize_layer(const LayerSpec& spec, std::size_t input_channels, std::uint64_t seed,
                              std::size_t layer_index) {
    LayerWeights w;
    const auto shapes = weight_shapes(spec, input_channels);
    Rng rng(derive_seed(seed, {layer_index, input_channels, spec.filters + spec.units}));
    auto uniform = [&rng](Shape shape, double fan_in) {
        Tensor t(std::move(shape));
        const double bound = std::sqrt(6.0 / fan_in);
        for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
        return t;
    };
    if (spec.kind == LayerKind::SeparableConv) {
        w.push_back(uniform(shapes[0], static_cast<double>(spec.kernel * spec.kernel)));
        w.push_back(uniform(shapes[1], static_cast<double>(input_channels)));
        w.emplace_back(shapes[2]);
    } else if (spec.kind == LayerKind::Dense) {
        w.push_back(uniform(shapes[0], static_cast<double>(input_channels)));
        w.emplace_back(shapes[1]);
    }
    return w;
}

ModelGraph::ModelGraph(std::vector<LayerSpec> layers, ModelMeta meta)
    : layers_(std::move(layers)), meta_(std::move(meta)) {
    weights_.assign(layers_.size(), {});
    validate();
    for (std::size_t i = 1; i < layers_.size(); ++i)
        weights_[i] = initialize_layer(layers_[i], channels_of(shapes_[i - 1]), meta_.seed, i);
}

ModelGraph::ModelGraph(std::vector<LayerSpec> layers, std::vector<LayerWeights> weights, ModelMeta meta)
    : layers_(std::move(layers)), weights_(std::move(weights)), meta_(std::move(meta)) {
    if (weights_.size() != layers_.size())
        throw GraphError("weights given for " + std::to_string(weights_.size()) + " layers, model has " +
                         std::to_string(layers_.size()));
    validate();
    for (std::size_t i = 1; i < layers_.size(); ++i) {
        const auto expected = weight_shapes(layers_[i], channels_of(shapes_[i - 1]));
        if (weights_[i].size() != expected.size())
            throw GraphError(where(i, layers_[i]) + ": expected " + std::to_string(expected.size()) +
                             " weight tensors, got " + std::to_string(weights_[i].size()));
        for (std::size_t k = 0; k < expected.size(); ++k)
            if (weights_[i][k].shape() != expected[k])
                throw GraphError(where(i, layers_[i]) + ": weight " + std::to_string(k) + " has shape " +
                                 shape_string(weights_[i][k].shape()) + ", expected " + shape_string(expected[k]));
    }
    if (!weights_.empty() && !weights_[0].empty()) throw GraphError("input layer cannot carry weights");
}

void ModelGraph::validate() {
    if (layers_.empty() || layers_.front().kind != LayerKind::Input)
        throw GraphError("model must start with an input layer");
    const auto& in = layers_.front().input_shape;
    if (in.empty() || in.size() == 2 || in.size() > 3 || shape_size(in) == 0)
        throw GraphError("input shape must be H×W×C or D, got " + shape_string(in));
    shapes_.clear();
    shapes_.push_back(in);
    std::size_t softmax_count = 0;
    for (std::size_t i = 1; i < layers_.size(); ++i) {
        shapes_.push_back(infer_shape(i, layers_[i], shapes_.back()));
        if (layers_[i].kind == LayerKind::Dense && layers_[i].activation == Activation::Softmax) ++softmax_count;
    }
    const auto& last = layers_.back();
    if (softmax_count != 1 || last.kind != LayerKind::Dense || last.activation != Activation::Softmax)
        throw GraphError("model must end in exactly one dense softmax layer");
    if (!meta_.labels.empty() && meta_.labels.size() != last.units)
        throw GraphError("label vocabulary has " + std::to_string(meta_.labels.size()) + " entries for " +
                         std::to_string(last.units) + " output classes");
}

std::vector<std::size_t> ModelGraph::conv_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].kind == LayerKind::SeparableConv) out.push_back(i);
    return out;
}

std::size_t ModelGraph::deepest_conv() const {
    const auto convs = conv_layers();
    if (convs.empty()) throw GraphError("model has no separable convolution layer");
    return convs.back();
}

std::size_t ModelGraph::parameter_count() const {
    std::size_t n = 0;
    for (const auto& lw : weights_)
        for (const auto& t : lw) n += t.size();
    return n;
}

std::size_t ModelGraph::layer_parameter_count(std::size_t i) const {
    const auto& s = layers_.at(i);
    if (i == 0) return 0;
    const auto cin = channels_of(shapes_[i - 1]);
    if (s.kind == LayerKind::SeparableConv) return cin * s.kernel * s.kernel + cin * s.filters + s.filters;
    if (s.kind == LayerKind::Dense) return cin * s.units + s.units;
    return 0;
}

std::size_t ModelGraph::analytic_parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) n += layer_parameter_count(i);
    return n;
}

bool bitwise_equal(const ModelGraph& a, const ModelGraph& b) {
    if (a.layers() != b.layers() || a.meta() != b.meta() || a.weights().size() != b.weights().size()) return false;
    for (std::size_t i = 0; i < a.weights().size(); ++i) {
        if (a.weights(i).size() != b.weights(i).size()) return false;
        for (std::size_t k = 0; k < a.weights(i).size(); ++k)
            if (!ipens::bitwise_equal(a.weights(i)[k], b.weights(i)[k])) return false;
    }
    return true;
}

namespace {

std::vector<std::string> default_labels(std::vector<std::string> labels, std::size_t classes) {
    if (!labels.empty()) return labels;
    for (std::size_t c = 0; c < classes; ++c) labels.push_back(std::to_string(c));
    return labels;
}

}  // namespace

ModelGraph build_custom_cnn(const CustomCnnConfig& config) {
    if (config.depth < 1) throw UsageError("custom CNN depth must be >= 1");
    if (config.base_filters < 1) throw UsageError("base filter count must be >= 1");
    if (config.classes < 1) throw UsageError("class count must be >= 1");
    std::vector<LayerSpec> layers{LayerSpec::input(config.input_shape)};
    for (std::size_t i = 0; i < config.depth; ++i)
        layers.push_back(
            LayerSpec::separable_conv(config.base_filters << i, config.kernel, config.stride, config.padding));
    layers.push_back(LayerSpec::gap());
    layers.push_back(LayerSpec::dropout(config.dropout_rate));
    layers.push_back(LayerSpec::dense(config.classes, Activation::Softmax));
    ModelMeta meta;
    meta.name = "custom_cnn";
    meta.stage = "custom";
    meta.seed = config.seed;
    meta.labels = default_labels(config.labels, config.classes);
    return ModelGraph(std::move(layers), std::move(meta));
}

ModelGraph attach_task_head(const ModelGraph& model, const TaskHeadConfig& head) {
    const auto deepest = model.deepest_conv();
    std::vector<LayerSpec> layers(model.layers().begin(), model.layers().begin() + deepest + 1);
    std::vector<LayerWeights> weights(model.weights().begin(), model.weights().begin() + deepest + 1);
    const std::vector<LayerSpec> tail{LayerSpec::zero_pad(head.pad),
                                      LayerSpec::separable_conv(head.filters, head.kernel, head.stride),
                                      LayerSpec::gap(), LayerSpec::dropout(head.dropout_rate),
                                      LayerSpec::dense(head.classes, Activation::Softmax)};
    layers.insert(layers.end(), tail.begin(), tail.end());
    weights.resize(layers.size());

    ModelMeta meta = model.meta();
    meta.stage = head.stage;
    meta.labels = default_labels(head.labels, head.classes);
    // Shape inference through a freshly initialized copy gives the head's
    // input widths; only the head weights are taken from it.
    ModelGraph fresh(layers, meta);
    for (std::size_t i = deepest + 1; i < layers.size(); ++i) weights[i] = fresh.weights(i);
    return ModelGraph(std::move(layers), std::move(weights), std::move(meta));
}

namespace {

// Copies `t` keeping only `keep` indices along `axis`.
Tensor select_axis(const Tensor& t, std::size_t axis, const std::vector<std::size_t>& keep) {
    Shape shape = t.shape();
    const std::size_t inner = shape_size(Shape(shape.begin() + axis + 1, shape.end()));
    const std::size_t outer = shape_size(Shape(shape.begin(), shape.begin() + axis));
    const std::size_t extent = shape[axis];
    shape[axis] = keep.size();
    Tensor out(shape);
    auto src = t.data();
    auto dst = out.data();
    std::size_t o = 0;
    for (std::size_t a = 0; a < outer; ++a)
        for (auto k : keep) {
            std::copy_n(src.begin() + (a * extent + k) * inner, inner, dst.begin() + o);
            o += inner;
        }
    return out;
}

}  // namespace

ModelGraph remove_filters(const ModelGraph& model, std::size_t layer_index, const std::set<std::size_t>& filters) {
    if (layer_index >= model.size() || model.layer(layer_index).kind != LayerKind::SeparableConv)
        throw GraphError("layer " + std::to_string(layer_index) + " is not a separable convolution");
    if (filters.empty()) return model;
    const auto width = model.layer(layer_index).filters;
    for (auto f : filters)
        if (f >= width)
            throw GraphError("filter index " + std::to_string(f) + " out of range for layer " +
                             std::to_string(layer_index) + " with " + std::to_string(width) + " filters");
    if (filters.size() >= width)
        throw GraphError("cannot remove all " + std::to_string(width) + " filters of layer " +
                         std::to_string(layer_index));

    std::vector<std::size_t> keep;
    for (std::size_t f = 0; f < width; ++f)
        if (!filters.contains(f)) keep.push_back(f);

    std::size_t consumer = layer_index + 1;
    while (consumer < model.size() && !model.layer(consumer).has_params()) ++consumer;
    if (consumer == model.size())
        throw GraphError("layer " + std::to_string(layer_index) + " has no downstream parameterized layer");

    auto layers = model.layers();
    auto weights = model.weights();
    layers[layer_index].filters = keep.size();
    auto& target = weights[layer_index];
    target[1] = select_axis(target[1], 1, keep);
    target[2] = select_axis(target[2], 0, keep);

    auto& next = weights[consumer];
    if (layers[consumer].kind == LayerKind::SeparableConv) {
        next[0] = select_axis(next[0], 2, keep);
        next[1] = select_axis(next[1], 0, keep);
    } else {
        // A dense consumer sees the channels through GAP, one row per channel.
        for (std::size_t i = layer_index + 1; i < consumer; ++i)
            if (layers[i].kind == LayerKind::Gap) {
                next[0] = select_axis(next[0], 0, keep);
                return ModelGraph(std::move(layers), std::move(weights), model.meta());
            }
        throw GraphError("dense layer " + std::to_string(consumer) + " is not fed through global average pooling");
    }
    return ModelGraph(std::move(layers), std::move(weights), model.meta());
}

ModelGraph build_mlp(std::size_t inputs, std::size_t hidden, std::size_t classes, std::uint64_t seed,
                     std::vector<std::string> labels) {
    ModelMeta meta;
    meta.name = "stacker";
    meta.stage = "stacking";
    meta.seed = seed;
    meta.labels = default_labels(std::move(labels), classes);
    return ModelGraph({LayerSpec::input({inputs}), LayerSpec::dense(hidden, Activation::Relu),
                       LayerSpec::dense(classes, Activation::Softmax)},
                      std::move(meta));
}

ForwardPass forward(const ModelGraph& model, ad::Tape<float>& tape, const Tensor& batch,
                    const ForwardOptions& options) {
    const auto& in_shape = model.input_shape();
    if (batch.rank() != in_shape.size() + 1 || !std::equal(in_shape.begin(), in_shape.end(), batch.shape().begin() + 1))
        throw DimensionError("input", "batch " + shape_string(batch.shape()) + " does not match model input " +
                                          shape_string(in_shape));
    ForwardPass pass;
    pass.input = tape.leaf(batch, options.input_requires_grad);
    pass.outputs.push_back(pass.input);
    pass.params.resize(model.size());
    ad::Var x = pass.input;
    for (std::size_t i = 1; i < model.size(); ++i) {
        const auto& spec = model.layer(i);
        for (const auto& w : model.weights(i)) pass.params[i].push_back(tape.leaf(w, options.params_require_grad));
        const auto& p = pass.params[i];
        switch (spec.kind) {
            case LayerKind::Input: break;
            case LayerKind::ZeroPad: x = ad::zero_pad2d(tape, x, spec.pad); break;
            case LayerKind::SeparableConv:
                x = ad::separable_conv2d(tape, x, p[0], p[1], p[2], spec.stride, spec.padding);
                if (spec.activation == Activation::Relu) x = ad::relu(tape, x);
                break;
            case LayerKind::Gap: x = ad::global_average_pool(tape, x); break;
            case LayerKind::Dropout:
                x = ad::dropout(tape, x, spec.rate, options.training, derive_seed(options.dropout_seed, {i}));
                break;
            case LayerKind::Dense:
                x = ad::dense(tape, x, p[0], p[1]);
                if (spec.activation == Activation::Softmax) {
                    pass.logits = x;
                    x = ad::softmax(tape, x);
                } else if (spec.activation == Activation::Relu) {
                    x = ad::relu(tape, x);
                }
                break;
        }
        pass.outputs.push_back(x);
    }
    pass.probabilities = x;
    return pass;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
    if (begin >= end || end > t.dim(0)) throw DimensionError("rows", "bad row range");
    Shape shape = t.shape();
    const auto row = t.size() / shape[0];
    shape[0] = end - begin;
    std::vector<float> data(t.data().begin() + begin * row, t.data().begin() + end * row);
    return Tensor(std::move(shape), std::move(data));
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
    if (rows.empty()) throw DimensionError("rows", "cannot gather zero rows");
    Shape shape = t.shape();
    const auto row = t.size() / shape[0];
    shape[0] = rows.size();
    std::vector<float> data;
    data.reserve(rows.size() * row);
    for (auto r : rows) {
        if (r >= t.dim(0)) throw DimensionError("rows", "row " + std::to_string(r) + " out of range");
        data.insert(data.end(), t.data().begin() + r * row, t.data().begin() + (r + 1) * row);
    }
    return Tensor(std::move(shape), std::move(data));
}

Tensor predict(const ModelGraph& model, const Tensor& images, std::size_t batch_size) {
    const auto n = images.dim(0);
    const auto k = model.classes();
    Tensor out({n, k});
    for (std::size_t b = 0; b < n; b += batch_size) {
        const auto e = std::min(n, b + batch_size);
        ad::Tape<float> tape;
        const auto pass = forward(model, tape, slice_rows(images, b, e));
        const auto& p = tape.value(pass.probabilities);
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + b * k);
    }
    return out;
}

}  // namespace ipens::nn
