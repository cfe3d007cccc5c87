#include "ipens/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ipens/training.hpp"

namespace ipens::ensemble {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

void write_predictions(const std::filesystem::path& path, const Predictions& p) {
    const auto k = p.classes.size();
    if (p.probs.rank() != 2 || p.probs.dim(0) != p.ids.size() || p.probs.dim(1) != k)
        throw DimensionError("predictions", "probability matrix does not match ids × classes");
    if (!p.labels.empty() && p.labels.size() != p.ids.size())
        throw DimensionError("labels", "label count differs from id count");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "id,label";
    for (const auto& c : p.classes) out << ',' << c;
    out << '\n' << std::setprecision(17);
    for (std::size_t i = 0; i < p.ids.size(); ++i) {
        out << p.ids[i] << ',';
        if (!p.labels.empty() && p.labels[i] >= 0) out << p.classes.at(p.labels[i]);
        for (std::size_t c = 0; c < k; ++c) out << ',' << p.probs[i * k + c];
        out << '\n';
    }
}

Predictions read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open predictions " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty predictions file");
    const auto header = split_csv(line);
    if (header.size() < 4 || header[0] != "id" || header[1] != "label")
        throw DataError(path.string() + ": expected header id,label,<classes...>");
    Predictions p;
    p.classes.assign(header.begin() + 2, header.end());
    const auto k = p.classes.size();
    std::vector<double> values;
    for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != k + 2)
            throw DataError(path.string() + ": line " + std::to_string(lineno) + " has " +
                            std::to_string(cells.size()) + " fields, expected " + std::to_string(k + 2));
        p.ids.push_back(cells[0]);
        int label = -1;
        if (!cells[1].empty()) {
            const auto it = std::find(p.classes.begin(), p.classes.end(), cells[1]);
            if (it == p.classes.end())
                throw DataError(path.string() + ": line " + std::to_string(lineno) + " unknown label '" + cells[1] +
                                "'");
            label = static_cast<int>(it - p.classes.begin());
        }
        p.labels.push_back(label);
        for (std::size_t c = 0; c < k; ++c) {
            try {
                values.push_back(std::stod(cells[2 + c]));
            } catch (const std::exception&) {
                throw DataError(path.string() + ": line " + std::to_string(lineno) + " bad probability '" +
                                cells[2 + c] + "'");
            }
        }
    }
    if (p.ids.empty()) throw DataError(path.string() + ": no prediction rows");
    p.probs = Tensor64({p.ids.size(), k});
    std::copy(values.begin(), values.end(), p.probs.data().begin());
    return p;
}

// ------------------------------------------------------------ prediction set

std::size_t PredictionSet::samples() const { return models.empty() ? 0 : models.front().dim(0); }
std::size_t PredictionSet::classes() const { return models.empty() ? 0 : models.front().dim(1); }

void PredictionSet::validate(std::size_t min_models) const {
    if (models.size() < min_models)
        throw UsageError("ensemble needs at least " + std::to_string(min_models) + " models, got " +
                         std::to_string(models.size()));
    for (std::size_t m = 0; m < models.size(); ++m) {
        const auto& p = models[m];
        if (p.rank() != 2) throw DimensionError("rank", "model " + std::to_string(m) + " predictions are not N×K");
        if (p.dim(0) != samples())
            throw DimensionError("samples", "model " + std::to_string(m) + " has " + std::to_string(p.dim(0)) +
                                                " samples, expected " + std::to_string(samples()));
        if (p.dim(1) != classes())
            throw DimensionError("classes", "model " + std::to_string(m) + " has " + std::to_string(p.dim(1)) +
                                                " classes, expected " + std::to_string(classes()));
        for (std::size_t i = 0; i < p.dim(0); ++i) {
            double s = 0.0;
            for (std::size_t c = 0; c < p.dim(1); ++c) s += p[i * p.dim(1) + c];
            if (!(std::fabs(s - 1.0) <= 1e-6))
                throw DataError("model " + std::to_string(m) + " row " + std::to_string(i) + " sums to " +
                                std::to_string(s));
        }
    }
}

PredictionSet align(const std::vector<Predictions>& inputs) {
    PredictionSet set;
    for (std::size_t m = 0; m < inputs.size(); ++m) {
        if (inputs[m].ids != inputs.front().ids)
            throw DataError("prediction file " + std::to_string(m) + " lists different samples");
        if (inputs[m].classes != inputs.front().classes)
            throw DataError("prediction file " + std::to_string(m) + " uses a different class order");
        set.models.push_back(inputs[m].probs);
    }
    return set;
}

std::vector<int> argmax_rows(const Tensor64& probs) {
    const auto n = probs.dim(0), k = probs.dim(1);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = probs.data().data() + i * k;
        out[i] = static_cast<int>(std::max_element(row, row + k) - row);
    }
    return out;
}

Tensor64 one_hot(std::span<const int> labels, std::size_t classes) {
    Tensor64 out({labels.size(), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw DataError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
        out[i * classes + labels[i]] = 1.0;
    }
    return out;
}

// ---------------------------------------------------------------- combiners

std::vector<int> majority_vote(const PredictionSet& preds) {
    preds.validate();
    const auto n = preds.samples(), k = preds.classes();
    std::vector<std::vector<int>> votes;
    for (const auto& m : preds.models) votes.push_back(argmax_rows(m));
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> count(k, 0);
        std::vector<double> mass(k, 0.0);
        for (std::size_t m = 0; m < votes.size(); ++m) {
            ++count[votes[m][i]];
            for (std::size_t c = 0; c < k; ++c) mass[c] += preds.models[m][i * k + c];
        }
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (count[c] > count[best] || (count[c] == count[best] && mass[c] > mass[best])) best = c;
        out[i] = static_cast<int>(best);
    }
    return out;
}

Tensor64 vote_fractions(const PredictionSet& preds) {
    preds.validate();
    const auto k = preds.classes();
    Tensor64 out({preds.samples(), k});
    const double share = 1.0 / static_cast<double>(preds.models.size());
    for (const auto& m : preds.models) {
        const auto votes = argmax_rows(m);
        for (std::size_t i = 0; i < votes.size(); ++i) out[i * k + votes[i]] += share;
    }
    return out;
}

Tensor64 average_probs(const PredictionSet& preds) {
    preds.validate();
    Tensor64 out(preds.models.front().shape());
    for (const auto& m : preds.models)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += m[i];
    for (auto& v : out.data()) v /= static_cast<double>(preds.models.size());
    return out;
}

Tensor64 weighted_average(const PredictionSet& preds, std::span<const double> weights) {
    preds.validate();
    if (weights.size() != preds.models.size())
        throw UsageError(std::to_string(weights.size()) + " weights for " + std::to_string(preds.models.size()) +
                         " models");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw UsageError("ensemble weights must be nonnegative");
        total += w;
    }
    if (std::fabs(total - 1.0) > 1e-9) throw UsageError("ensemble weights sum to " + std::to_string(total) + ", not 1");
    Tensor64 out(preds.models.front().shape());
    for (std::size_t m = 0; m < preds.models.size(); ++m) {
        if (weights[m] == 0.0) continue;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[m] * preds.models[m][i];
    }
    return out;
}

// ------------------------------------------------------------------ stacker

Tensor stack_features(const PredictionSet& preds) {
    const auto n = preds.samples(), k = preds.classes(), m = preds.models.size();
    Tensor out({n, m * k});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t c = 0; c < k; ++c)
                out[i * m * k + j * k + c] = static_cast<float>(preds.models[j][i * k + c]);
    return out;
}

nn::ModelGraph train_stacker(const PredictionSet& val_preds, std::span<const int> val_labels,
                             const StackerSpec& spec, std::vector<std::string> class_names) {
    val_preds.validate(1);
    if (val_labels.size() != val_preds.samples())
        throw DimensionError("labels", std::to_string(val_labels.size()) + " labels for " +
                                           std::to_string(val_preds.samples()) + " samples");
    const auto k = val_preds.classes();
    data::Dataset d;
    d.images = stack_features(val_preds);
    d.labels.assign(val_labels.begin(), val_labels.end());
    auto model = nn::build_mlp(d.images.dim(1), spec.hidden, k, spec.seed, std::move(class_names));
    model.meta().name = "stacker";
    model.meta().stage = "stacker";
    train::TrainConfig cfg;
    cfg.learning_rate = spec.learning_rate;
    cfg.momentum = spec.momentum;
    cfg.epochs = spec.epochs;
    cfg.batch_size = spec.batch_size;
    cfg.seed = spec.seed;
    // uniform weights: a held-out set may miss a class entirely
    cfg.class_weights.assign(k, 1.0);
    return train::train(model, d, d, cfg).best.model;
}

Tensor64 apply_stacker(const nn::ModelGraph& stacker, const PredictionSet& preds) {
    preds.validate(1);
    const auto features = stack_features(preds);
    const auto& in = stacker.layers().front().input_shape;
    if (in.size() != 1 || in[0] != features.dim(1))
        throw DimensionError("stacker_input", "stacker expects width " + shape_string(in) + ", predictions give " +
                                                  std::to_string(features.dim(1)));
    if (stacker.classes() != preds.classes())
        throw DimensionError("classes", "stacker emits " + std::to_string(stacker.classes()) + " classes, inputs have " +
                                            std::to_string(preds.classes()));
    return nn::predict(stacker, features).cast<double>();
}

const char* to_string(Strategy s) noexcept {
    switch (s) {
        case Strategy::Majority: return "majority";
        case Strategy::Average: return "average";
        case Strategy::Weighted: return "weighted";
        case Strategy::Stacking: return "stacking";
    }
    return "?";
}

Strategy strategy_from_string(const std::string& s) {
    if (s == "majority") return Strategy::Majority;
    if (s == "average") return Strategy::Average;
    if (s == "weighted") return Strategy::Weighted;
    if (s == "stacking") return Strategy::Stacking;
    throw UsageError("unknown ensemble strategy '" + s + "' (expected majority|average|weighted|stacking)");
}

}  // namespace ipens::ensemble
