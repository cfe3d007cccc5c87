#include "ipens/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "kernels.hpp"

namespace ipens::ad {

namespace {

std::atomic<std::uint64_t> next_tape_id{1};

}  // namespace

template <typename T>
Tape<T>::Tape() : id_(next_tape_id.fetch_add(1)) {}

template <typename T>
Var Tape<T>::leaf(TensorT value, bool requires_grad) {
    Node n;
    n.op = "leaf";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    have_grads_ = false;
    return Var{id_, nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(std::string op, TensorT value, std::vector<Var> inputs, BackwardFn backward) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.backward = std::move(backward);
    for (const auto& v : inputs) {
        node(v);
        n.inputs.push_back(v.index);
        n.requires_grad = n.requires_grad || nodes_[v.index].requires_grad;
    }
    nodes_.push_back(std::move(n));
    have_grads_ = false;
    return Var{id_, nodes_.size() - 1};
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
    if (v.tape_id != id_)
        throw AutodiffError("variable belongs to tape " + std::to_string(v.tape_id) + ", not tape " +
                            std::to_string(id_));
    if (v.index >= nodes_.size())
        throw AutodiffError("variable index " + std::to_string(v.index) + " is not on the tape");
    return nodes_[v.index];
}

template <typename T>
const typename Tape<T>::TensorT& Tape<T>::value(Var v) const {
    return node(v).value;
}

template <typename T>
const typename Tape<T>::TensorT& Tape<T>::grad(Var v) const {
    const auto& n = node(v);
    if (!have_grads_) throw AutodiffError("no gradients available; call backward() first");
    return n.grad;
}

template <typename T>
bool Tape<T>::requires_grad(Var v) const {
    return node(v).requires_grad;
}

template <typename T>
const std::string& Tape<T>::op(Var v) const {
    return node(v).op;
}

template <typename T>
void Tape<T>::backward(Var loss) {
    const auto& l = node(loss);
    if (l.value.size() != 1)
        throw AutodiffError("backward needs a scalar loss, got shape " + shape_string(l.value.shape()));
    for (auto& n : nodes_) n.grad = TensorT(n.value.shape());
    nodes_[loss.index].grad[0] = T{1};
    for (std::size_t i = loss.index + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (n.backward && n.requires_grad) n.backward(*this, i);
    }
    have_grads_ = true;
}

// ---------------------------------------------------------------------------

template <typename T>
Var separable_conv2d(Tape<T>& tape, Var input, Var depthwise, Var pointwise, Var bias, std::size_t stride,
                     ops::Padding padding) {
    const auto& x = tape.value(input);
    const auto& dw = tape.value(depthwise);
    const auto& pw = tape.value(pointwise);
    const auto& b = tape.value(bias);
    ops::check_separable_shapes(x.shape(), dw.shape(), pw.shape(), b.shape(), stride);
    const auto g = ops::conv_geometry(x.dim(1), x.dim(2), dw.dim(0), stride, padding);
    auto mid = ops::detail::depthwise_forward(x, dw, stride, g);
    auto out = ops::detail::pointwise_forward(mid, pw, b);
    return tape.record(
        "separable_conv2d", std::move(out), {input, depthwise, pointwise, bias},
        [mid = std::move(mid), stride, g](Tape<T>& t, std::size_t self) {
            const auto in = t.input_at(self, 0), dwi = t.input_at(self, 1), pwi = t.input_at(self, 2),
                       bi = t.input_at(self, 3);
            const bool need_mid = t.needs_grad_at(in) || t.needs_grad_at(dwi);
            BasicTensor<T> grad_mid(mid.shape());
            ops::detail::pointwise_backward(mid, t.value_at(pwi), t.grad_at(self), need_mid ? &grad_mid : nullptr,
                                            t.needs_grad_at(pwi) ? &t.grad_buffer(pwi) : nullptr,
                                            t.needs_grad_at(bi) ? &t.grad_buffer(bi) : nullptr);
            if (need_mid)
                ops::detail::depthwise_backward(t.value_at(in), t.value_at(dwi), stride, g, grad_mid,
                                                t.needs_grad_at(in) ? &t.grad_buffer(in) : nullptr,
                                                t.needs_grad_at(dwi) ? &t.grad_buffer(dwi) : nullptr);
        });
}

template <typename T>
Var zero_pad2d(Tape<T>& tape, Var input, std::size_t pad) {
    const auto& x = tape.value(input);
    if (x.rank() != 4) throw DimensionError("rank", "zero_pad2d expects N×H×W×C");
    return tape.record("zero_pad2d", ops::zero_pad2d(x, pad), {input}, [pad](Tape<T>& t, std::size_t self) {
        const auto in = t.input_at(self, 0);
        auto& gi = t.grad_buffer(in);
        const auto& go = t.grad_at(self);
        const auto n = gi.dim(0), h = gi.dim(1), w = gi.dim(2), c = gi.dim(3);
        const auto oh = h + 2 * pad, ow = w + 2 * pad;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t i = 0; i < w * c; ++i)
                    gi[(b * h + y) * w * c + i] += go[((b * oh + y + pad) * ow + pad) * c + i];
    });
}

template <typename T>
Var global_average_pool(Tape<T>& tape, Var input) {
    const auto& x = tape.value(input);
    if (x.rank() != 4) throw DimensionError("rank", "global_average_pool expects N×H×W×C");
    return tape.record("global_average_pool", ops::global_average_pool(x), {input}, [](Tape<T>& t, std::size_t self) {
        const auto in = t.input_at(self, 0);
        auto& gi = t.grad_buffer(in);
        const auto& go = t.grad_at(self);
        const auto n = gi.dim(0), c = gi.dim(3), positions = gi.dim(1) * gi.dim(2);
        const double scale = 1.0 / static_cast<double>(positions);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t p = 0; p < positions; ++p)
                for (std::size_t ch = 0; ch < c; ++ch)
                    gi[(b * positions + p) * c + ch] += static_cast<T>(go[b * c + ch] * scale);
    });
}

template <typename T>
Var relu(Tape<T>& tape, Var input) {
    return tape.record("relu", ops::relu(tape.value(input)), {input}, [](Tape<T>& t, std::size_t self) {
        const auto in = t.input_at(self, 0);
        auto& gi = t.grad_buffer(in);
        const auto& x = t.value_at(in);
        const auto& go = t.grad_at(self);
        for (std::size_t i = 0; i < gi.size(); ++i)
            if (x[i] > T{0}) gi[i] += go[i];
    });
}

template <typename T>
Var softmax(Tape<T>& tape, Var input) {
    return tape.record("softmax", ops::softmax(tape.value(input)), {input}, [](Tape<T>& t, std::size_t self) {
        const auto in = t.input_at(self, 0);
        auto& gi = t.grad_buffer(in);
        const auto& y = t.value_at(self);
        const auto& go = t.grad_at(self);
        const auto width = y.rank() == 0 ? 1 : y.shape().back();
        for (std::size_t r = 0; r < y.size() / width; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < width; ++j)
                dot += static_cast<double>(go[r * width + j]) * y[r * width + j];
            for (std::size_t j = 0; j < width; ++j) {
                const auto i = r * width + j;
                gi[i] += static_cast<T>(y[i] * (go[i] - dot));
            }
        }
    });
}

template <typename T>
Var dense(Tape<T>& tape, Var input, Var weight, Var bias) {
    auto out = ops::dense(tape.value(input), tape.value(weight), tape.value(bias));
    return tape.record("dense", std::move(out), {input, weight, bias}, [](Tape<T>& t, std::size_t self) {
        const auto in = t.input_at(self, 0), wi = t.input_at(self, 1), bi = t.input_at(self, 2);
        const auto& x = t.value_at(in);
        const auto& w = t.value_at(wi);
        const auto& go = t.grad_at(self);
        const auto cin = w.dim(0), cout = w.dim(1), rows = x.size() / cin;
        if (t.needs_grad_at(in)) {
            auto& gi = t.grad_buffer(in);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < cin; ++i) {
                    double s = 0.0;
                    for (std::size_t o = 0; o < cout; ++o)
                        s += static_cast<double>(go[r * cout + o]) * w[i * cout + o];
                    gi[r * cin + i] += static_cast<T>(s);
                }
        }
        if (t.needs_grad_at(wi)) {
            auto& gw = t.grad_buffer(wi);
            for (std::size_t i = 0; i < cin; ++i)
                for (std::size_t o = 0; o < cout; ++o) {
                    double s = 0.0;
                    for (std::size_t r = 0; r < rows; ++r)
                        s += static_cast<double>(x[r * cin + i]) * go[r * cout + o];
                    gw[i * cout + o] += static_cast<T>(s);
                }
        }
        if (t.needs_grad_at(bi)) {
            auto& gb = t.grad_buffer(bi);
            for (std::size_t o = 0; o < cout; ++o) {
                double s = 0.0;
                for (std::size_t r = 0; r < rows; ++r) s += go[r * cout + o];
                gb[o] += static_cast<T>(s);
            }
        }
    });
}

template <typename T>
Var dropout(Tape<T>& tape, Var input, double rate, bool training, std::uint64_t seed) {
    const auto& x = tape.value(input);
    if (!(rate >= 0.0 && rate < 1.0)) throw UsageError("dropout rate must lie in [0, 1)");
    if (!training) {
        return tape.record("dropout", x, {input}, [](Tape<T>& t, std::size_t self) {
            auto& gi = t.grad_buffer(t.input_at(self, 0));
            const auto& go = t.grad_at(self);
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
        });
    }
    auto mask = ops::dropout_mask<T>(x.shape(), rate, seed);
    auto out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return tape.record("dropout", std::move(out), {input}, [mask = std::move(mask)](Tape<T>& t, std::size_t self) {
        auto& gi = t.grad_buffer(t.input_at(self, 0));
        const auto& go = t.grad_at(self);
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i] * mask[i];
    });
}

namespace {

constexpr double kProbFloor = 1e-12;

}  // namespace

template <typename T>
Var weighted_cross_entropy(Tape<T>& tape, Var probabilities, std::span<const int> labels,
                           std::span<const double> class_weights) {
    const auto& p = tape.value(probabilities);
    if (p.rank() != 2) throw DimensionError("rank", "probabilities must be N×K");
    const auto n = p.dim(0), k = p.dim(1);
    if (labels.size() != n)
        throw DimensionError("samples", std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
    if (class_weights.size() != k)
        throw DimensionError("classes", std::to_string(class_weights.size()) + " class weights for " +
                                            std::to_string(k) + " classes");
    std::vector<int> y(labels.begin(), labels.end());
    std::vector<double> w(class_weights.begin(), class_weights.end());
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= k)
            throw DimensionError("classes", "label " + std::to_string(y[i]) + " outside [0, " + std::to_string(k) + ")");
        const double pi = std::clamp(static_cast<double>(p[i * k + y[i]]), kProbFloor, 1.0);
        loss -= w[y[i]] * std::log(pi);
    }
    loss /= static_cast<double>(n);
    return tape.record("weighted_cross_entropy", BasicTensor<T>::scalar(static_cast<T>(loss)), {probabilities},
                       [y = std::move(y), w = std::move(w), n, k](Tape<T>& t, std::size_t self) {
                           const auto in = t.input_at(self, 0);
                           const auto& pv = t.value_at(in);
                           auto& gi = t.grad_buffer(in);
                           const double go = t.grad_at(self)[0];
                           for (std::size_t i = 0; i < n; ++i) {
                               const auto idx = i * k + y[i];
                               const double pi = pv[idx];
                               if (pi > kProbFloor && pi <= 1.0)
                                   gi[idx] += static_cast<T>(-go * w[y[i]] / (static_cast<double>(n) * pi));
                           }
                       });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
    const auto& x = tape.value(a);
    const auto& y = tape.value(b);
    if (x.shape() != y.shape())
        throw DimensionError("shape", shape_string(x.shape()) + " vs " + shape_string(y.shape()));
    auto out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
    return tape.record("mul", std::move(out), {a, b}, [](Tape<T>& t, std::size_t self) {
        const auto ai = t.input_at(self, 0), bi = t.input_at(self, 1);
        const auto& go = t.grad_at(self);
        const auto& xa = t.value_at(ai);
        const auto& xb = t.value_at(bi);
        if (t.needs_grad_at(ai)) {
            auto& g = t.grad_buffer(ai);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * xb[i];
        }
        if (t.needs_grad_at(bi)) {
            auto& g = t.grad_buffer(bi);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * xa[i];
        }
    });
}

template <typename T>
Var square(Tape<T>& tape, Var a) {
    auto out = tape.value(a);
    for (auto& v : out.data()) v *= v;
    return tape.record("square", std::move(out), {a}, [](Tape<T>& t, std::size_t self) {
        const auto in = t.input_at(self, 0);
        auto& g = t.grad_buffer(in);
        const auto& x = t.value_at(in);
        const auto& go = t.grad_at(self);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += T{2} * x[i] * go[i];
    });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
    double s = 0.0;
    for (T v : tape.value(a).data()) s += v;
    return tape.record("sum", BasicTensor<T>::scalar(static_cast<T>(s)), {a}, [](Tape<T>& t, std::size_t self) {
        auto& g = t.grad_buffer(t.input_at(self, 0));
        const T go = t.grad_at(self)[0];
        for (auto& v : g.data()) v += go;
    });
}

template <typename T>
Var pick(Tape<T>& tape, Var a, std::size_t flat_index) {
    const auto& x = tape.value(a);
    if (flat_index >= x.size())
        throw DimensionError("index", std::to_string(flat_index) + " outside tensor of " + std::to_string(x.size()));
    return tape.record("pick", BasicTensor<T>::scalar(x[flat_index]), {a},
                       [flat_index](Tape<T>& t, std::size_t self) {
                           t.grad_buffer(t.input_at(self, 0))[flat_index] += t.grad_at(self)[0];
                       });
}

#define IPENS_INSTANTIATE_AD(T)                                                                                  \
    template class Tape<T>;                                                                                      \
    template Var separable_conv2d(Tape<T>&, Var, Var, Var, Var, std::size_t, ops::Padding);                    \
    template Var zero_pad2d(Tape<T>&, Var, std::size_t);                                                        \
    template Var global_average_pool(Tape<T>&, Var);                                                            \
    template Var relu(Tape<T>&, Var);                                                                           \
    template Var softmax(Tape<T>&, Var);                                                                        \
    template Var dense(Tape<T>&, Var, Var, Var);                                                                \
    template Var dropout(Tape<T>&, Var, double, bool, std::uint64_t);                                           \
    template Var weighted_cross_entropy(Tape<T>&, Var, std::span<const int>, std::span<const double>);          \
    template Var mul(Tape<T>&, Var, Var);                                                                       \
    template Var square(Tape<T>&, Var);                                                                         \
    template Var sum(Tape<T>&, Var);                                                                            \
    template Var pick(Tape<T>&, Var, std::size_t);

IPENS_INSTANTIATE_AD(float)
IPENS_INSTANTIATE_AD(double)

}  // namespace ipens::ad
