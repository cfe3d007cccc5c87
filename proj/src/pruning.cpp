#include "ipens/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "ipens/rng.hpp"

namespace ipens::prune {

namespace {

void check_relu_conv(const nn::ModelGraph& model, std::size_t layer) {
    if (layer >= model.size()) throw GraphError("layer " + std::to_string(layer) + " out of range");
    const auto& spec = model.layers()[layer];
    if (spec.kind != nn::LayerKind::SeparableConv)
        throw GraphError("layer " + std::to_string(layer) + " is not a separable conv");
    if (spec.activation != nn::Activation::Relu)
        throw GraphError("layer " + std::to_string(layer) + " has no relu; APoZ is undefined");
}

}  // namespace

std::vector<ApozReport> compute_apoz_all(const nn::ModelGraph& model, const Tensor& images, std::size_t batch_size) {
    const auto convs = model.conv_layers();
    for (auto l : convs) check_relu_conv(model, l);
    if (images.rank() == 0 || images.dim(0) == 0) throw DataError("APoZ needs a non-empty probe set");
    if (batch_size == 0) throw UsageError("batch size must be positive");

    const auto n = images.dim(0);
    std::vector<std::vector<std::size_t>> zeros(convs.size());
    std::vector<ApozReport> reports(convs.size());
    for (std::size_t c = 0; c < convs.size(); ++c) {
        const auto& shape = model.shapes()[convs[c]];
        zeros[c].assign(shape.back(), 0);
        reports[c].layer = convs[c];
        reports[c].samples = n;
        reports[c].positions = shape_size(shape) / shape.back();
    }
    for (std::size_t b = 0; b < n; b += batch_size) {
        ad::Tape<float> tape;
        const auto pass = nn::forward(model, tape, nn::slice_rows(images, b, std::min(n, b + batch_size)), {});
        for (std::size_t c = 0; c < convs.size(); ++c) {
            const auto out = tape.value(pass.outputs[convs[c]]).data();
            const auto f = zeros[c].size();
            for (std::size_t i = 0; i < out.size(); ++i)
                if (std::fabs(out[i]) <= kZeroTolerance) ++zeros[c][i % f];
        }
    }
    for (std::size_t c = 0; c < convs.size(); ++c) {
        const double total = static_cast<double>(n) * static_cast<double>(reports[c].positions);
        for (auto z : zeros[c]) reports[c].apoz.push_back(static_cast<double>(z) / total);
    }
    return reports;
}

ApozReport compute_apoz(const nn::ModelGraph& model, std::size_t layer_index, const Tensor& images,
                        std::size_t batch_size) {
    check_relu_conv(model, layer_index);
    for (auto& r : compute_apoz_all(model, images, batch_size))
        if (r.layer == layer_index) return r;
    throw GraphError("layer " + std::to_string(layer_index) + " not found");
}

std::size_t cumulative_target(std::size_t original_filters, double step_percent, std::size_t step) {
    if (original_filters == 0) return 0;
    const double raw = static_cast<double>(step) * step_percent * static_cast<double>(original_filters) / 100.0;
    const auto target = static_cast<std::size_t>(std::floor(raw + 1e-9));
    return std::min(target, original_filters - 1);
}

std::vector<std::size_t> rank_filters(const std::vector<double>& apoz, std::size_t count) {
    std::vector<std::size_t> order(apoz.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return apoz[a] > apoz[b]; });
    order.resize(std::min(count, order.size()));
    return order;
}

nn::ModelGraph prune_step(const nn::ModelGraph& model, const std::vector<ApozReport>& reports, std::size_t step,
                          double step_percent) {
    nn::ModelGraph out = model;
    for (const auto& r : reports) {
        const auto& spec = out.layers().at(r.layer);
        if (spec.kind != nn::LayerKind::SeparableConv)
            throw GraphError("layer " + std::to_string(r.layer) + " is not a separable conv");
        if (r.apoz.size() != spec.filters)
            throw DimensionError("filters", "APoZ report for layer " + std::to_string(r.layer) + " has " +
                                                std::to_string(r.apoz.size()) + " entries, layer has " +
                                                std::to_string(spec.filters));
        const auto target = cumulative_target(spec.original_filters, step_percent, step);
        const auto already = spec.original_filters - spec.filters;
        if (target <= already) continue;
        const auto remove = rank_filters(r.apoz, target - already);
        if (remove.size() >= spec.filters)
            throw GraphError("pruning would empty layer " + std::to_string(r.layer));
        out = nn::remove_filters(out, r.layer, std::set<std::size_t>(remove.begin(), remove.end()));
    }
    return out;
}

const char* to_string(Selection s) noexcept { return s == Selection::Validation ? "validation" : "test"; }

Selection selection_from_string(const std::string& s) {
    if (s == "validation" || s == "val") return Selection::Validation;
    if (s == "test") return Selection::Test;
    throw UsageError("unknown selection split '" + s + "' (expected validation|test)");
}

std::size_t PruneSchedule::steps() const {
    return static_cast<std::size_t>(std::floor(max_percent / step_percent + 1e-9));
}

void PruneSchedule::validate() const {
    if (!(step_percent > 0.0 && step_percent <= max_percent && max_percent <= 90.0))
        throw UsageError("pruning schedule needs 0 < step <= max <= 90");
    if (retrain.epochs > 0) retrain.validate();
}

double pruned_percent(const nn::ModelGraph& model) {
    std::size_t orig = 0, now = 0;
    for (auto l : model.conv_layers()) {
        orig += model.layers()[l].original_filters;
        now += model.layers()[l].filters;
    }
    return orig == 0 ? 0.0 : 100.0 * static_cast<double>(orig - now) / static_cast<double>(orig);
}

PruneResult iterative_prune(const nn::ModelGraph& baseline, const data::Dataset& train_set,
                            const data::Dataset& val_set, const data::Dataset& test_set,
                            const PruneSchedule& schedule, const std::function<void(const StepSummary&)>& on_step) {
    schedule.validate();
    if (val_set.size() == 0) throw DataError("pruning needs a validation set for APoZ");
    const auto& select_set = schedule.selection == Selection::Validation ? val_set : test_set;
    if (select_set.size() == 0)
        throw DataError(std::string("selection split '") + to_string(schedule.selection) + "' is empty");

    PruneResult result;
    auto record = [&](const nn::ModelGraph& model, std::size_t step) {
        const double acc = train::evaluate(model, select_set).accuracy;
        const StepSummary s{step, pruned_percent(model), model.parameter_count(), acc};
        result.checkpoints.push_back(
            nn::Checkpoint{model, nn::TrainState{-1, acc, "accuracy", static_cast<std::int64_t>(step)}});
        result.summary.push_back(s);
        if (on_step) on_step(s);
    };

    nn::ModelGraph current = baseline;
    record(current, 0);
    for (std::size_t t = 1; t <= schedule.steps(); ++t) {
        try {
            const auto reports = compute_apoz_all(current, val_set.images);
            current = prune_step(current, reports, t, schedule.step_percent);
            if (schedule.retrain.epochs > 0) {
                auto cfg = schedule.retrain;
                cfg.seed = derive_seed(schedule.retrain.seed, {t});
                auto trained = train::train(current, train_set, val_set, cfg);
                current = std::move(trained.best.model);
            }
        } catch (const Error& e) {
            throw TrainingError("pruning step " + std::to_string(t) + ": " + e.what());
        }
        record(current, t);
    }

    for (std::size_t i = 1; i < result.summary.size(); ++i) {
        const auto& a = result.summary[i];
        const auto& b = result.summary[result.best];
        if (a.selection_accuracy > b.selection_accuracy ||
            (a.selection_accuracy == b.selection_accuracy && a.parameters < b.parameters))
            result.best = i;
    }
    return result;
}

std::string format_summary(const std::vector<StepSummary>& summary) {
    std::ostringstream os;
    os << "step\tpercent_pruned\tparams\tselection_acc\n" << std::setprecision(10);
    for (const auto& s : summary)
        os << s.step << '\t' << s.percent << '\t' << s.parameters << '\t' << s.selection_accuracy << '\n';
    return os.str();
}

}  // namespace ipens::prune
