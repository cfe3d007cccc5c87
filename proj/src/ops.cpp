#include "ipens/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ipens/rng.hpp"
#include "kernels.hpp"

namespace ipens {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "×" : "") << shape[i];
    os << ']';
    return os.str();
}

}  // namespace ipens

namespace ipens::ops {

const char* to_string(Padding p) noexcept { return p == Padding::Same ? "same" : "valid"; }

Padding padding_from_string(const std::string& s) {
    if (s == "same") return Padding::Same;
    if (s == "valid") return Padding::Valid;
    throw UsageError("unknown padding '" + s + "' (expected same|valid)");
}

ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel, std::size_t stride,
                           Padding padding) {
    if (kernel < 1) throw DimensionError("kernel", "kernel size must be >= 1");
    if (stride < 1) throw DimensionError("stride", "stride must be >= 1");
    ConvGeometry g;
    if (padding == Padding::Same) {
        g.out_h = (in_h + stride - 1) / stride;
        g.out_w = (in_w + stride - 1) / stride;
        const auto need_h = (g.out_h - 1) * stride + kernel;
        const auto need_w = (g.out_w - 1) * stride + kernel;
        g.pad_top = need_h > in_h ? (need_h - in_h) / 2 : 0;
        g.pad_left = need_w > in_w ? (need_w - in_w) / 2 : 0;
    } else {
        if (in_h < kernel)
            throw DimensionError("height", "input height " + std::to_string(in_h) + " smaller than kernel " +
                                               std::to_string(kernel));
        if (in_w < kernel)
            throw DimensionError("width", "input width " + std::to_string(in_w) + " smaller than kernel " +
                                              std::to_string(kernel));
        g.out_h = (in_h - kernel) / stride + 1;
        g.out_w = (in_w - kernel) / stride + 1;
    }
    return g;
}

void check_separable_shapes(const Shape& input, const Shape& depthwise, const Shape& pointwise, const Shape& bias,
                            std::size_t stride) {
    if (input.size() != 4) throw DimensionError("rank", "input must be N×H×W×C, got " + shape_string(input));
    if (depthwise.size() != 3 || depthwise[0] != depthwise[1])
        throw DimensionError("depthwise", "depthwise kernel must be k×k×Cin, got " + shape_string(depthwise));
    if (depthwise[2] != input[3])
        throw DimensionError("channels", "input has " + std::to_string(input[3]) +
                                             " channels but depthwise kernel expects " + std::to_string(depthwise[2]));
    if (pointwise.size() != 2 || pointwise[0] != input[3])
        throw DimensionError("pointwise_in", "pointwise kernel must be Cin×Cout with Cin=" +
                                                 std::to_string(input[3]) + ", got " + shape_string(pointwise));
    if (bias.size() != 1 || bias[0] != pointwise[1])
        throw DimensionError("bias", "bias must have Cout=" + std::to_string(pointwise[1]) + " entries, got " +
                                         shape_string(bias));
    if (stride < 1) throw DimensionError("stride", "stride must be >= 1");
}

namespace detail {

template <typename T>
BasicTensor<T> depthwise_forward(const BasicTensor<T>& input, const BasicTensor<T>& depthwise, std::size_t stride,
                                 const ConvGeometry& g) {
    const auto n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
    const auto k = depthwise.dim(0);
    BasicTensor<T> mid({n, g.out_h, g.out_w, c});
    const T* in = input.data().data();
    const T* dw = depthwise.data().data();
    T* out = mid.data().data();
    std::vector<double> acc(c);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t oy = 0; oy < g.out_h; ++oy)
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::size_t ky = 0; ky < k; ++ky) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad_top);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad_left);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        const T* px = in + ((b * h + iy) * w + ix) * c;
                        const T* kw = dw + (ky * k + kx) * c;
                        for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += static_cast<double>(px[ch]) * kw[ch];
                    }
                }
                T* o = out + ((b * g.out_h + oy) * g.out_w + ox) * c;
                for (std::size_t ch = 0; ch < c; ++ch) o[ch] = static_cast<T>(acc[ch]);
            }
    return mid;
}

template <typename T>
BasicTensor<T> pointwise_forward(const BasicTensor<T>& mid, const BasicTensor<T>& pointwise,
                                 const BasicTensor<T>& bias) {
    const auto cin = pointwise.dim(0), cout = pointwise.dim(1);
    const auto positions = mid.size() / cin;
    BasicTensor<T> out({mid.dim(0), mid.dim(1), mid.dim(2), cout});
    const T* m = mid.data().data();
    const T* pw = pointwise.data().data();
    T* o = out.data().data();
    std::vector<double> acc(cout);
    for (std::size_t p = 0; p < positions; ++p) {
        for (std::size_t oc = 0; oc < cout; ++oc) acc[oc] = bias[oc];
        const T* row = m + p * cin;
        for (std::size_t ic = 0; ic < cin; ++ic) {
            const double a = row[ic];
            const T* wr = pw + ic * cout;
            for (std::size_t oc = 0; oc < cout; ++oc) acc[oc] += a * wr[oc];
        }
        T* orow = o + p * cout;
        for (std::size_t oc = 0; oc < cout; ++oc) orow[oc] = static_cast<T>(acc[oc]);
    }
    return out;
}

template <typename T>
void pointwise_backward(const BasicTensor<T>& mid, const BasicTensor<T>& pointwise, const BasicTensor<T>& grad_out,
                        BasicTensor<T>* grad_mid, BasicTensor<T>* grad_pointwise, BasicTensor<T>* grad_bias) {
    const auto cin = pointwise.dim(0), cout = pointwise.dim(1);
    const auto positions = mid.size() / cin;
    const T* m = mid.data().data();
    const T* pw = pointwise.data().data();
    const T* go = grad_out.data().data();
    std::vector<double> dpw(grad_pointwise ? cin * cout : 0);
    std::vector<double> db(grad_bias ? cout : 0);
    for (std::size_t p = 0; p < positions; ++p) {
        const T* grow = go + p * cout;
        const T* mrow = m + p * cin;
        if (grad_bias)
            for (std::size_t oc = 0; oc < cout; ++oc) db[oc] += grow[oc];
        if (grad_pointwise)
            for (std::size_t ic = 0; ic < cin; ++ic) {
                const double a = mrow[ic];
                double* d = dpw.data() + ic * cout;
                for (std::size_t oc = 0; oc < cout; ++oc) d[oc] += a * grow[oc];
            }
        if (grad_mid) {
            T* gm = grad_mid->data().data() + p * cin;
            for (std::size_t ic = 0; ic < cin; ++ic) {
                const T* wr = pw + ic * cout;
                double s = 0.0;
                for (std::size_t oc = 0; oc < cout; ++oc) s += static_cast<double>(grow[oc]) * wr[oc];
                gm[ic] = static_cast<T>(s);
            }
        }
    }
    if (grad_pointwise)
        for (std::size_t i = 0; i < dpw.size(); ++i) (*grad_pointwise)[i] += static_cast<T>(dpw[i]);
    if (grad_bias)
        for (std::size_t i = 0; i < db.size(); ++i) (*grad_bias)[i] += static_cast<T>(db[i]);
}

template <typename T>
void depthwise_backward(const BasicTensor<T>& input, const BasicTensor<T>& depthwise, std::size_t stride,
                        const ConvGeometry& g, const BasicTensor<T>& grad_mid, BasicTensor<T>* grad_input,
                        BasicTensor<T>* grad_depthwise) {
    const auto n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
    const auto k = depthwise.dim(0);
    const T* in = input.data().data();
    const T* dw = depthwise.data().data();
    const T* gm = grad_mid.data().data();
    std::vector<double> ddw(grad_depthwise ? k * k * c : 0);
    std::vector<double> din(grad_input ? input.size() : 0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t oy = 0; oy < g.out_h; ++oy)
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const T* gp = gm + ((b * g.out_h + oy) * g.out_w + ox) * c;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad_top);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad_left);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        const auto in_off = ((b * h + iy) * w + ix) * c;
                        const auto k_off = (ky * k + kx) * c;
                        if (grad_depthwise) {
                            const T* px = in + in_off;
                            double* d = ddw.data() + k_off;
                            for (std::size_t ch = 0; ch < c; ++ch) d[ch] += static_cast<double>(gp[ch]) * px[ch];
                        }
                        if (grad_input) {
                            const T* kw = dw + k_off;
                            double* d = din.data() + in_off;
                            for (std::size_t ch = 0; ch < c; ++ch) d[ch] += static_cast<double>(gp[ch]) * kw[ch];
                        }
                    }
                }
            }
    if (grad_depthwise)
        for (std::size_t i = 0; i < ddw.size(); ++i) (*grad_depthwise)[i] += static_cast<T>(ddw[i]);
    if (grad_input)
        for (std::size_t i = 0; i < din.size(); ++i) (*grad_input)[i] += static_cast<T>(din[i]);
}

}  // namespace detail

template <typename T>
BasicTensor<T> separable_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& depthwise,
                                const BasicTensor<T>& pointwise, const BasicTensor<T>& bias, std::size_t stride,
                                Padding padding) {
    const auto batch = detail::as_batch(input);
    check_separable_shapes(batch.shape(), depthwise.shape(), pointwise.shape(), bias.shape(), stride);
    const auto g = conv_geometry(batch.dim(1), batch.dim(2), depthwise.dim(0), stride, padding);
    auto out = detail::pointwise_forward(detail::depthwise_forward(batch, depthwise, stride, g), pointwise, bias);
    return input.rank() == 3 ? detail::drop_batch(out) : out;
}

template <typename T>
BasicTensor<T> zero_pad2d(const BasicTensor<T>& input, std::size_t pad) {
    const auto batch = detail::as_batch(input);
    const auto n = batch.dim(0), h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
    const auto oh = h + 2 * pad, ow = w + 2 * pad;
    BasicTensor<T> out({n, oh, ow, c});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t y = 0; y < h; ++y)
            std::copy_n(batch.data().data() + ((b * h + y) * w) * c, w * c,
                        out.data().data() + ((b * oh + y + pad) * ow + pad) * c);
    return input.rank() == 3 ? detail::drop_batch(out) : out;
}

template <typename T>
BasicTensor<T> global_average_pool(const BasicTensor<T>& input) {
    const auto batch = detail::as_batch(input);
    const auto n = batch.dim(0), c = batch.dim(3);
    const auto positions = batch.dim(1) * batch.dim(2);
    BasicTensor<T> out({n, c});
    std::vector<double> acc(c);
    for (std::size_t b = 0; b < n; ++b) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const T* p = batch.data().data() + b * positions * c;
        for (std::size_t i = 0; i < positions; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += p[i * c + ch];
        for (std::size_t ch = 0; ch < c; ++ch) out[b * c + ch] = static_cast<T>(acc[ch] / positions);
    }
    return input.rank() == 3 ? out.reshaped({c}) : out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
    auto out = input;
    for (auto& v : out.data()) v = v > T{0} ? v : T{0};
    return out;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& input) {
    if (input.rank() == 0) return BasicTensor<T>::scalar(T{1});
    const auto width = input.shape().back();
    const auto rows = input.size() / width;
    BasicTensor<T> out(input.shape());
    std::vector<double> e(width);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = input.data().data() + r * width;
        const double mx = *std::max_element(x, x + width);
        double s = 0.0;
        for (std::size_t j = 0; j < width; ++j) s += (e[j] = std::exp(static_cast<double>(x[j]) - mx));
        for (std::size_t j = 0; j < width; ++j) out[r * width + j] = static_cast<T>(e[j] / s);
    }
    return out;
}

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
    if (weight.rank() != 2) throw DimensionError("weight", "dense weight must be Cin×Cout");
    const auto cin = weight.dim(0), cout = weight.dim(1);
    if (input.rank() < 1 || input.rank() > 2 || input.shape().back() != cin)
        throw DimensionError("features", "dense input " + shape_string(input.shape()) + " does not end in Cin=" +
                                             std::to_string(cin));
    if (bias.rank() != 1 || bias.dim(0) != cout)
        throw DimensionError("bias", "dense bias must have " + std::to_string(cout) + " entries");
    const auto rows = input.size() / cin;
    BasicTensor<T> out(input.rank() == 1 ? Shape{cout} : Shape{rows, cout});
    std::vector<double> acc(cout);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < cout; ++o) acc[o] = bias[o];
        for (std::size_t i = 0; i < cin; ++i) {
            const double a = input[r * cin + i];
            for (std::size_t o = 0; o < cout; ++o) acc[o] += a * weight[i * cout + o];
        }
        for (std::size_t o = 0; o < cout; ++o) out[r * cout + o] = static_cast<T>(acc[o]);
    }
    return out;
}

template <typename T>
BasicTensor<T> dropout_mask(const Shape& shape, double rate, std::uint64_t seed) {
    if (!(rate >= 0.0 && rate < 1.0)) throw UsageError("dropout rate must lie in [0, 1)");
    BasicTensor<T> mask(shape);
    const T keep = static_cast<T>(1.0 / (1.0 - rate));
    Rng rng(seed);
    for (auto& m : mask.data()) m = rng.uniform() < rate ? T{0} : keep;
    return mask;
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& input, double rate, bool training, std::uint64_t seed) {
    if (!(rate >= 0.0 && rate < 1.0)) throw UsageError("dropout rate must lie in [0, 1)");
    if (!training || rate == 0.0) return input;
    auto out = input;
    const auto mask = dropout_mask<T>(input.shape(), rate, seed);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return out;
}

#define IPENS_INSTANTIATE_OPS(T)                                                                                   \
    template BasicTensor<T> separable_conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                             const BasicTensor<T>&, std::size_t, Padding);                        \
    template BasicTensor<T> zero_pad2d(const BasicTensor<T>&, std::size_t);                                       \
    template BasicTensor<T> global_average_pool(const BasicTensor<T>&);                                           \
    template BasicTensor<T> relu(const BasicTensor<T>&);                                                          \
    template BasicTensor<T> softmax(const BasicTensor<T>&);                                                       \
    template BasicTensor<T> dense(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);           \
    template BasicTensor<T> dropout_mask(const Shape&, double, std::uint64_t);                                    \
    template BasicTensor<T> dropout(const BasicTensor<T>&, double, bool, std::uint64_t);                          \
    template BasicTensor<T> detail::depthwise_forward(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t,  \
                                                      const ConvGeometry&);                                       \
    template BasicTensor<T> detail::pointwise_forward(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                                      const BasicTensor<T>&);                                     \
    template void detail::pointwise_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                             BasicTensor<T>*, BasicTensor<T>*, BasicTensor<T>*);                  \
    template void detail::depthwise_backward(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t,           \
                                             const ConvGeometry&, const BasicTensor<T>&, BasicTensor<T>*,         \
                                             BasicTensor<T>*);

IPENS_INSTANTIATE_OPS(float)
IPENS_INSTANTIATE_OPS(double)

}  // namespace ipens::ops
