#include "ipens/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "ipens/rng.hpp"

namespace ipens::train {

const char* to_string(CheckpointMetric m) noexcept { return m == CheckpointMetric::Accuracy ? "accuracy" : "loss"; }

CheckpointMetric checkpoint_metric_from_string(const std::string& s) {
    if (s == "accuracy") return CheckpointMetric::Accuracy;
    if (s == "loss") return CheckpointMetric::Loss;
    throw UsageError("unknown checkpoint metric '" + s + "' (expected accuracy|loss)");
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw UsageError("learning rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must lie in [0, 1)");
    if (!(l2_decay >= 0.0)) throw UsageError("l2 decay must be >= 0");
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (batch_size < 1) throw UsageError("batch size must be >= 1");
    for (double w : class_weights)
        if (!(w > 0.0)) throw UsageError("class weights must be positive");
}

// ---------------------------------------------------------------- splitting

Split split_patient_level(const data::DatasetManifest& manifest, double train_fraction, double val_fraction_of_train,
                          std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw UsageError("train fraction must lie in (0, 1)");
    if (!(val_fraction_of_train >= 0.0 && val_fraction_of_train < 1.0))
        throw UsageError("validation fraction must lie in [0, 1)");
    const bool want_val = val_fraction_of_train > 0.0;

    // patient -> sample indices, in order of first appearance
    std::vector<std::string> patients;
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        const auto& pid = manifest.samples[i].patient_id;
        if (pid.empty()) throw DataError("sample '" + manifest.samples[i].path + "' has no patient id");
        auto& m = members[pid];
        if (m.empty()) patients.push_back(pid);
        m.push_back(i);
    }
    const std::size_t partitions = want_val ? 3 : 2;
    if (patients.size() < partitions)
        throw DataError("need at least " + std::to_string(partitions) + " patients to split, have " +
                        std::to_string(patients.size()));

    std::map<std::string, std::vector<std::string>> strata;
    for (const auto& pid : patients) strata[manifest.samples[members[pid].front()].label].push_back(pid);

    std::map<std::string, std::string> assignment;
    Rng rng(derive_seed(seed, {5}));
    for (auto& [label, group] : strata) {
        std::sort(group.begin(), group.end());
        rng.shuffle(group.begin(), group.end());
        const auto p = group.size();
        auto n_test = static_cast<std::size_t>(std::llround((1.0 - train_fraction) * p));
        n_test = std::min(n_test, p);
        const auto rest = p - n_test;
        auto n_val = want_val ? static_cast<std::size_t>(std::llround(val_fraction_of_train * rest)) : 0;
        n_val = std::min(n_val, rest);
        for (std::size_t i = 0; i < p; ++i)
            assignment[group[i]] = i < n_test ? "test" : (i < n_test + n_val ? "val" : "train");
    }

    // Small strata can round every patient into train; move one patient per
    // empty partition from the largest train pool so no partition is empty.
    auto count = [&](const std::string& split) {
        return std::count_if(assignment.begin(), assignment.end(), [&](auto& kv) { return kv.second == split; });
    };
    for (const char* needed : {"test", "val"}) {
        if (std::string(needed) == "val" && !want_val) continue;
        if (count(needed) > 0) continue;
        for (auto it = patients.rbegin(); it != patients.rend(); ++it)
            if (assignment[*it] == "train") {
                assignment[*it] = needed;
                break;
            }
    }
    if (count("train") == 0) throw DataError("split left the training partition empty");

    Split out;
    for (auto* part : {&out.train, &out.validation, &out.test}) {
        part->labels = manifest.labels;
        part->provenance = manifest.provenance;
        part->base_dir = manifest.base_dir;
    }
    for (auto s : manifest.samples) {
        s.split = assignment[s.patient_id];
        (s.split == "train" ? out.train : s.split == "val" ? out.validation : out.test).samples.push_back(std::move(s));
    }
    return out;
}

Split split_from_tags(const data::DatasetManifest& manifest) {
    if (!manifest.has_splits()) throw DataError("manifest samples lack split tags");
    return Split{manifest.subset("train"), manifest.subset("val"), manifest.subset("test")};
}

std::vector<double> class_weights(std::span<const int> labels, std::size_t classes) {
    if (classes == 0) throw UsageError("class count must be positive");
    std::vector<std::size_t> counts(classes, 0);
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
        ++counts[y];
    }
    std::vector<double> w(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        if (counts[c] == 0) throw DataError("class " + std::to_string(c) + " has no samples");
        w[c] = static_cast<double>(labels.size()) / (static_cast<double>(classes) * counts[c]);
    }
    return w;
}

double weighted_cross_entropy(const Tensor64& probabilities, std::span<const int> labels,
                              std::span<const double> class_weights) {
    ad::Tape<double> tape;
    return tape.value(ad::weighted_cross_entropy(tape, tape.leaf(probabilities, false), labels, class_weights))[0];
}

// ----------------------------------------------------------------- training

Evaluation evaluate(const nn::ModelGraph& model, const data::Dataset& dataset) {
    if (dataset.size() == 0) throw DataError("cannot evaluate on an empty dataset");
    const auto probs = nn::predict(model, dataset.images);
    const auto k = model.classes();
    Evaluation e;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const float* row = probs.data().data() + i * k;
        const auto pred = static_cast<int>(std::max_element(row, row + k) - row);
        correct += pred == dataset.labels[i] ? 1 : 0;
        e.loss -= std::log(std::clamp(static_cast<double>(row[dataset.labels[i]]), 1e-12, 1.0));
    }
    e.loss /= static_cast<double>(dataset.size());
    e.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
    return e;
}

namespace {

std::string layer_norms(const nn::ModelGraph& model) {
    std::ostringstream os;
    for (std::size_t i = 0; i < model.size(); ++i) {
        if (model.weights(i).empty()) continue;
        double s = 0.0;
        for (const auto& t : model.weights(i))
            for (float v : t.data()) s += static_cast<double>(v) * v;
        os << " layer" << i << "=" << std::sqrt(s);
    }
    return os.str();
}

bool improves(CheckpointMetric metric, const EpochRecord& rec, double best) {
    return metric == CheckpointMetric::Accuracy ? rec.val_accuracy > best : rec.val_loss < best;
}

}  // namespace

TrainResult train(const nn::ModelGraph& model, const data::Dataset& train_set, const data::Dataset& val_set,
                  const TrainConfig& config) {
    config.validate();
    if (train_set.size() == 0) throw DataError("training set is empty");
    if (val_set.size() == 0) throw DataError("validation set is empty");
    const auto k = model.classes();
    const auto weights = config.class_weights.empty() ? class_weights(train_set.labels, k) : config.class_weights;
    if (weights.size() != k)
        throw UsageError(std::to_string(weights.size()) + " class weights for " + std::to_string(k) + " classes");

    nn::ModelGraph current = model;
    std::vector<std::vector<Tensor>> velocity;
    for (const auto& lw : current.weights()) {
        velocity.emplace_back();
        for (const auto& t : lw) velocity.back().emplace_back(t.shape());
    }

    TrainResult result{nn::Checkpoint{current, {}}, {}};
    double best = config.checkpoint_metric == CheckpointMetric::Accuracy ? -1.0 : INFINITY;
    const auto n = train_set.size();
    std::vector<std::size_t> order(n);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(config.seed, {1, epoch}));
        rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        for (std::size_t b = 0, batch = 0; b < n; b += config.batch_size, ++batch) {
            const auto e = std::min(n, b + config.batch_size);
            const std::vector<std::size_t> rows(order.begin() + b, order.begin() + e);
            std::vector<int> labels;
            for (auto r : rows) labels.push_back(train_set.labels[r]);

            ad::Tape<float> tape;
            nn::ForwardOptions opt;
            opt.training = true;
            opt.params_require_grad = true;
            opt.dropout_seed = derive_seed(config.seed, {2, epoch, batch});
            const auto pass = nn::forward(current, tape, nn::gather_rows(train_set.images, rows), opt);
            const auto loss = ad::weighted_cross_entropy(tape, pass.probabilities, labels, weights);
            const double lv = tape.value(loss)[0];
            if (!std::isfinite(lv))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batch) + "; weight norms:" + layer_norms(current));
            tape.backward(loss);
            for (std::size_t i = 0; i < current.size(); ++i)
                for (std::size_t t = 0; t < pass.params[i].size(); ++t) {
                    auto& w = current.mutable_weights(i)[t];
                    const auto& g = tape.grad(pass.params[i][t]);
                    sgd_step<float>(w.data(), g.data(), velocity[i][t].data(), config);
                }
            loss_sum += lv * static_cast<double>(rows.size());
        }
        const auto val = evaluate(current, val_set);
        EpochRecord rec{epoch, loss_sum / static_cast<double>(n), val.loss, val.accuracy};
        if (!std::isfinite(rec.val_loss) && config.checkpoint_metric == CheckpointMetric::Loss)
            throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch) +
                                "; weight norms:" + layer_norms(current));
        result.history.push_back(rec);
        if (improves(config.checkpoint_metric, rec, best)) {
            best = config.checkpoint_metric == CheckpointMetric::Accuracy ? rec.val_accuracy : rec.val_loss;
            result.best = nn::Checkpoint{current, nn::TrainState{static_cast<std::int64_t>(epoch), best,
                                                                 to_string(config.checkpoint_metric), -1}};
        }
    }
    return result;
}

std::string format_history(const std::vector<EpochRecord>& history) {
    std::ostringstream os;
    os << "epoch\ttrain_loss\tval_loss\tval_acc\n" << std::setprecision(10);
    for (const auto& r : history)
        os << r.epoch << '\t' << r.train_loss << '\t' << r.val_loss << '\t' << r.val_accuracy << '\n';
    return os.str();
}

// ------------------------------------------------------------------- search

void SearchSpace::validate() const {
    if (trials < 1) throw UsageError("search needs at least one trial");
    if (dimensions.empty()) throw UsageError("search space has no dimensions");
    for (const auto& d : dimensions) {
        if (!(d.low < d.high)) throw UsageError("degenerate interval for '" + d.name + "'");
        if (d.scale == Scale::Log && !(d.low > 0.0))
            throw UsageError("log-scaled interval for '" + d.name + "' must be positive");
    }
}

SearchSpace SearchSpace::sgd_defaults(std::size_t trials, std::uint64_t seed) {
    return SearchSpace{{{"momentum", 0.85, 0.99, Scale::Linear},
                        {"l2_decay", 1e-10, 1e-3, Scale::Log},
                        {"learning_rate", 1e-9, 1e-2, Scale::Log}},
                       trials,
                       seed};
}

double sample_dimension(const SearchDimension& dim, Rng& rng) {
    if (dim.scale == Scale::Linear) return dim.low + (dim.high - dim.low) * rng.uniform();
    const double lo = std::log(dim.low), hi = std::log(dim.high);
    return std::clamp(std::exp(lo + (hi - lo) * rng.uniform()), dim.low, dim.high);
}

std::vector<Trial> random_search(const SearchSpace& space, const Objective& objective, std::size_t threads) {
    space.validate();
    std::vector<Trial> trials(space.trials);
    Rng rng(derive_seed(space.seed, {3}));
    for (std::size_t t = 0; t < space.trials; ++t) {
        trials[t].index = t;
        trials[t].seed = derive_seed(space.seed, {4, t});
        for (const auto& d : space.dimensions) trials[t].params[d.name] = sample_dimension(d, rng);
    }
    threads = std::clamp<std::size_t>(threads, 1, space.trials);
    if (threads == 1) {
        for (auto& t : trials) t.metric = objective(t.params, t.seed);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(space.trials);
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < threads; ++w)
            pool.emplace_back([&] {
                for (std::size_t i; (i = next.fetch_add(1)) < trials.size();) {
                    try {
                        trials[i].metric = objective(trials[i].params, trials[i].seed);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        pool.clear();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    std::stable_sort(trials.begin(), trials.end(), [](const Trial& a, const Trial& b) { return a.metric > b.metric; });
    return trials;
}

std::string format_trials(const std::vector<Trial>& trials) {
    std::ostringstream os;
    os << "rank\ttrial\tmetric";
    if (!trials.empty())
        for (const auto& [name, _] : trials.front().params) os << '\t' << name;
    os << '\n' << std::setprecision(10);
    for (std::size_t r = 0; r < trials.size(); ++r) {
        os << r + 1 << '\t' << trials[r].index << '\t' << trials[r].metric;
        for (const auto& [_, v] : trials[r].params) os << '\t' << v;
        os << '\n';
    }
    return os.str();
}

}  // namespace ipens::train
