#include "ipens/explain.hpp"

#include <algorithm>
#include <cmath>

#include "ipens/data.hpp"

namespace ipens::explain {

SaliencyMap grad_cam(const nn::ModelGraph& model, const Tensor& image, std::size_t class_index) {
    if (class_index >= model.classes())
        throw UsageError("class index " + std::to_string(class_index) + " outside [0, " +
                         std::to_string(model.classes()) + ")");
    if (image.rank() != 3) throw DimensionError("rank", "Grad-CAM expects one H×W×C image");
    const auto layer = model.deepest_conv();

    Shape batch_shape{1};
    batch_shape.insert(batch_shape.end(), image.shape().begin(), image.shape().end());
    ad::Tape<float> tape;
    nn::ForwardOptions opt;
    opt.input_requires_grad = true;
    const auto pass = nn::forward(model, tape, image.reshaped(batch_shape), opt);
    const auto score = ad::pick(tape, pass.logits, class_index);
    tape.backward(score);

    const auto& a = tape.value(pass.outputs[layer]);
    const auto& g = tape.grad(pass.outputs[layer]);
    const auto h = a.dim(1), w = a.dim(2), k = a.dim(3);
    std::vector<double> alpha(k, 0.0);
    for (std::size_t p = 0; p < h * w; ++p)
        for (std::size_t c = 0; c < k; ++c) alpha[c] += g[p * k + c];
    for (auto& v : alpha) v /= static_cast<double>(h * w);

    Tensor raw({h, w, 1});
    for (std::size_t p = 0; p < h * w; ++p) {
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) s += alpha[c] * a[p * k + c];
        raw[p] = static_cast<float>(std::max(0.0, s));
    }
    auto up = data::resize_bilinear(raw, image.dim(0), image.dim(1));
    SaliencyMap out;
    out.target_class = class_index;
    out.layer = layer;
    const float peak = *std::max_element(up.data().begin(), up.data().end());
    if (!(peak > 0.0f)) {
        up.fill(0.0f);
        out.all_zero = true;
    } else {
        for (auto& v : up.data()) v = std::clamp(v / peak, 0.0f, 1.0f);
    }
    out.heatmap = up.reshaped({image.dim(0), image.dim(1)});
    return out;
}

void colormap(double v, float rgb[3]) {
    v = std::clamp(v, 0.0, 1.0);
    static const float stops[5][3] = {{0, 0, 1}, {0, 1, 1}, {0, 1, 0}, {1, 1, 0}, {1, 0, 0}};
    const double x = v * 4.0;
    const auto i = std::min<std::size_t>(3, static_cast<std::size_t>(x));
    const double t = x - static_cast<double>(i);
    for (int c = 0; c < 3; ++c) rgb[c] = static_cast<float>(stops[i][c] + t * (stops[i + 1][c] - stops[i][c]));
}

Tensor overlay(const Tensor& image, const SaliencyMap& map, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("overlay alpha must lie in [0, 1]");
    if (image.rank() != 3 || image.dim(2) != 1) throw DimensionError("channels", "overlay expects an H×W×1 image");
    if (map.heatmap.rank() != 2 || map.heatmap.dim(0) != image.dim(0) || map.heatmap.dim(1) != image.dim(1))
        throw DimensionError("extent", "heatmap " + shape_string(map.heatmap.shape()) + " does not match image " +
                                           shape_string(image.shape()));
    const auto [lo, hi] = std::minmax_element(image.data().begin(), image.data().end());
    const float span = *hi - *lo;
    const auto n = image.dim(0) * image.dim(1);
    Tensor out({image.dim(0), image.dim(1), 3});
    for (std::size_t p = 0; p < n; ++p) {
        const double gray = span > 0.0f ? (image[p] - *lo) / span : 0.0;
        float rgb[3];
        colormap(map.heatmap[p], rgb);
        for (int c = 0; c < 3; ++c) out[p * 3 + c] = static_cast<float>((1.0 - alpha) * gray + alpha * rgb[c]);
    }
    return out;
}

}  // namespace ipens::explain
