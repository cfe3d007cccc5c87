#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "ipens/checkpoint.hpp"
#include "ipens/data.hpp"
#include "ipens/ensemble.hpp"
#include "ipens/explain.hpp"
#include "ipens/metrics.hpp"
#include "ipens/pruning.hpp"
#include "ipens/training.hpp"

namespace ipens::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

void prepare_out(const fs::path& out) {
    if (out.empty()) throw UsageError("--out is required");
    fs::create_directories(out);
}

train::TrainConfig to_config(const OptimOptions& o, std::uint64_t seed) {
    train::TrainConfig c;
    c.learning_rate = o.learning_rate;
    c.momentum = o.momentum;
    c.l2_decay = o.l2_decay;
    c.epochs = o.epochs;
    c.batch_size = o.batch_size;
    c.seed = seed;
    c.class_weights = o.class_weights;
    c.checkpoint_metric = train::checkpoint_metric_from_string(o.checkpoint_metric);
    return c;
}

// Manifest with every sample tagged train/val/test. Untagged manifests are
// split at patient level; the tagged copy is written to `out/split.csv`.
data::DatasetManifest tagged_manifest(const fs::path& path, const SplitOptions& split, std::uint64_t seed,
                                      const fs::path& out) {
    auto m = data::load_manifest(path);
    if (m.has_splits()) return m;
    const auto s = train::split_patient_level(m, split.train_fraction, split.val_fraction, seed);
    m.samples.clear();
    for (const auto* part : {&s.train, &s.validation, &s.test})
        m.samples.insert(m.samples.end(), part->samples.begin(), part->samples.end());
    if (!out.empty()) {
        data::write_manifest(m, out / "split.csv");
        std::printf("split: %zu train, %zu val, %zu test samples -> %s\n", s.train.samples.size(),
                    s.validation.samples.size(), s.test.samples.size(), (out / "split.csv").string().c_str());
    }
    return m;
}

data::Dataset load_part(const data::DatasetManifest& m, const std::string& split, const Shape& input) {
    const auto part = m.has_splits() ? m.subset(split) : m;
    if (part.samples.empty()) {
        data::Dataset empty;
        empty.vocabulary = m.labels;
        empty.images = Tensor({1, input[0], input[1], input[2]});
        return empty;
    }
    auto d = data::load_dataset(part, {.target_height = input[0], .target_width = input[1]});
    if (d.constant_images > 0) std::printf("note: %zu constant images in '%s'\n", d.constant_images, split.c_str());
    return d;
}

void check_labels(const nn::ModelGraph& model, const data::DatasetManifest& m) {
    if (model.meta().labels != m.labels) {
        std::string a, b;
        for (const auto& l : model.meta().labels) a += (a.empty() ? "" : ",") + l;
        for (const auto& l : m.labels) b += (b.empty() ? "" : ",") + l;
        throw DataError("model classes [" + a + "] differ from manifest classes [" + b + "]");
    }
}

void report_training(const train::TrainResult& r, const fs::path& out) {
    write_text(out / "history.tsv", train::format_history(r.history));
    nn::save_checkpoint(r.best, out / "model.ipen");
    std::printf("best epoch %lld, val %s %.4f, %zu parameters -> %s\n", static_cast<long long>(r.best.state.epoch),
                r.best.state.metric.c_str(), r.best.state.best_metric, r.best.model.parameter_count(),
                (out / "model.ipen").string().c_str());
}

metrics::CiConfig ci_config(const CiOptions& o, std::uint64_t seed) {
    metrics::CiConfig c;
    c.method = metrics::ci_method_from_string(o.method);
    c.overall_coverage = o.coverage;
    c.resamples = o.resamples;
    c.seed = seed;
    c.validate();
    return c;
}

ensemble::Predictions predictions_of(const nn::ModelGraph& model, const data::Dataset& d) {
    return {d.ids, d.vocabulary, d.labels, nn::predict(model, d.images).cast<double>()};
}

void write_report(const fs::path& out, const std::string& name, const ensemble::Predictions& p,
                  const std::vector<int>& predicted, std::size_t parameters, const metrics::CiConfig& ci) {
    if (std::find(p.labels.begin(), p.labels.end(), -1) != p.labels.end())
        throw DataError("predictions lack true labels; cannot evaluate");
    const metrics::EvaluationData data{p.probs, p.labels, predicted};
    const auto report = metrics::evaluate(name, p.classes, data, parameters, ci);
    write_text(out / "metrics.tsv", metrics::tsv_header() + metrics::tsv_row(report));
    write_text(out / "metrics.json", metrics::to_json(report));

    std::ostringstream cm;
    cm << "true\\pred";
    for (const auto& c : p.classes) cm << ',' << c;
    cm << '\n';
    for (std::size_t t = 0; t < p.classes.size(); ++t) {
        cm << p.classes[t];
        for (std::size_t q = 0; q < p.classes.size(); ++q) cm << ',' << report.confusion.at(t, q);
        cm << '\n';
    }
    write_text(out / "confusion.csv", cm.str());

    std::ostringstream roc;
    roc << "curve,fpr,tpr\n" << std::setprecision(17);
    auto emit = [&](const std::string& name, const metrics::RocCurve& c) {
        for (std::size_t i = 0; i < c.fpr.size(); ++i) roc << name << ',' << c.fpr[i] << ',' << c.tpr[i] << '\n';
    };
    for (std::size_t c = 0; c < report.auc.curves.size(); ++c) emit(p.classes[c], report.auc.curves[c]);
    emit("micro", report.auc.micro_curve);
    write_text(out / "roc.csv", roc.str());

    std::printf("%s%s", metrics::tsv_header().c_str(), metrics::tsv_row(report).c_str());
}

std::string stem_of(const std::string& id) {
    auto s = fs::path(id).stem().string();
    std::replace_if(s.begin(), s.end(), [](char c) { return !(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'); }, '_');
    return s;
}

}  // namespace

// ---------------------------------------------------------------- commands

void run_synth(const SynthArgs& a) {
    prepare_out(a.out);
    const auto m = data::synth_dataset({a.classes, a.patients_per_class, a.samples_per_patient, a.image_size, a.seed},
                                       a.out);
    std::printf("wrote %zu samples (%zu classes) -> %s\n", m.samples.size(), m.labels.size(),
                (a.out / "manifest.csv").string().c_str());
}

void run_train(const TrainArgs& a) {
    const auto cfg = to_config(a.optim, a.seed);
    cfg.validate();
    prepare_out(a.out);
    const auto m = tagged_manifest(a.manifest, a.split, a.seed, a.out);
    const Shape input{a.model.image_size, a.model.image_size, 1};
    const auto tr = load_part(m, "train", input);
    const auto va = load_part(m, "val", input);
    if (tr.size() == 0 || va.size() == 0) throw DataError("training needs non-empty train and val splits");

    nn::CustomCnnConfig mc;
    mc.depth = a.model.depth;
    mc.base_filters = a.model.base_filters;
    mc.kernel = a.model.kernel;
    mc.stride = a.model.stride;
    mc.dropout_rate = a.model.dropout;
    mc.classes = m.labels.size();
    mc.input_shape = input;
    mc.seed = a.seed;
    mc.labels = m.labels;
    const auto model = nn::build_custom_cnn(mc);
    std::printf("training %zu-class model (%zu parameters) on %zu samples\n", mc.classes, model.parameter_count(),
                tr.size());
    report_training(train::train(model, tr, va, cfg), a.out);
}

void run_finetune(const FinetuneArgs& a) {
    const auto cfg = to_config(a.optim, a.seed);
    cfg.validate();
    prepare_out(a.out);
    const auto base = nn::load_checkpoint(a.checkpoint).model;
    const auto m = tagged_manifest(a.manifest, a.split, a.seed, a.out);
    nn::TaskHeadConfig head;
    head.filters = a.head_filters;
    head.kernel = a.head_kernel;
    head.stride = a.head_stride;
    head.pad = a.head_pad;
    head.dropout_rate = a.head_dropout;
    head.classes = m.labels.size();
    head.labels = m.labels;
    const auto model = nn::attach_task_head(base, head);
    const auto& input = model.layers().front().input_shape;
    const auto tr = load_part(m, "train", input);
    const auto va = load_part(m, "val", input);
    if (tr.size() == 0 || va.size() == 0) throw DataError("fine-tuning needs non-empty train and val splits");
    std::printf("fine-tuning %zu-class head (%zu parameters)\n", head.classes, model.parameter_count());
    report_training(train::train(model, tr, va, cfg), a.out);
}

void run_search(const SearchArgs& a) {
    const auto& b = a.base;
    to_config(b.optim, b.seed).validate();
    prepare_out(b.out);
    const auto m = tagged_manifest(b.manifest, b.split, b.seed, b.out);
    const Shape input{b.model.image_size, b.model.image_size, 1};
    const auto tr = load_part(m, "train", input);
    const auto va = load_part(m, "val", input);
    if (tr.size() == 0 || va.size() == 0) throw DataError("search needs non-empty train and val splits");

    const auto space = train::SearchSpace::sgd_defaults(a.trials, b.seed);
    const train::Objective objective = [&](const train::TrialParams& p, std::uint64_t seed) {
        nn::CustomCnnConfig mc;
        mc.depth = b.model.depth;
        mc.base_filters = b.model.base_filters;
        mc.kernel = b.model.kernel;
        mc.stride = b.model.stride;
        mc.dropout_rate = b.model.dropout;
        mc.classes = m.labels.size();
        mc.input_shape = input;
        mc.seed = seed;
        mc.labels = m.labels;
        auto cfg = to_config(b.optim, seed);
        cfg.momentum = p.at("momentum");
        cfg.l2_decay = p.at("l2_decay");
        cfg.learning_rate = p.at("learning_rate");
        try {
            return train::train(nn::build_custom_cnn(mc), tr, va, cfg).best.state.best_metric;
        } catch (const TrainingError&) {
            return cfg.checkpoint_metric == train::CheckpointMetric::Accuracy ? 0.0 : -INFINITY;
        }
    };
    auto trials = train::random_search(space, objective, a.threads);
    // loss is minimized; the objective reports it as-is, so rank ascending
    if (to_config(b.optim, b.seed).checkpoint_metric == train::CheckpointMetric::Loss)
        std::stable_sort(trials.begin(), trials.end(), [](auto& x, auto& y) { return x.metric < y.metric; });
    write_text(b.out / "trials.tsv", train::format_trials(trials));
    std::printf("%s", train::format_trials(trials).c_str());
}

void run_prune(const PruneArgs& a) {
    prune::PruneSchedule s;
    s.step_percent = a.step_percent;
    s.max_percent = a.max_percent;
    s.retrain = to_config(a.optim, a.seed);
    s.selection = prune::selection_from_string(a.selection);
    s.validate();
    prepare_out(a.out);
    const auto base = nn::load_checkpoint(a.checkpoint).model;
    const auto m = tagged_manifest(a.manifest, a.split, a.seed, a.out);
    check_labels(base, m);
    const auto& input = base.layers().front().input_shape;
    const auto tr = load_part(m, "train", input);
    const auto va = load_part(m, "val", input);
    const auto te = load_part(m, "test", input);
    if (s.retrain.epochs > 0 && tr.size() == 0) throw DataError("retraining needs a non-empty train split");

    const auto result = prune::iterative_prune(base, tr, va, te, s, [](const prune::StepSummary& x) {
        std::printf("step %2zu  pruned %5.1f%%  params %8zu  selection acc %.4f\n", x.step, x.percent, x.parameters,
                    x.selection_accuracy);
    });
    std::vector<std::string> names;
    for (std::size_t i = 0; i < result.checkpoints.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "step_%02zu.ipen", i);
        nn::save_checkpoint(result.checkpoints[i], a.out / name);
        names.emplace_back(name);
    }
    write_text(a.out / "summary.tsv", prune::format_summary(result.summary));
    write_text(a.out / "best.txt", std::to_string(result.best) + "\t" + names[result.best] + "\n");

    // checkpoints ranked by selection accuracy, then fewer parameters
    std::vector<std::size_t> order(result.checkpoints.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        const auto &p = result.summary[x], &q = result.summary[y];
        if (p.selection_accuracy != q.selection_accuracy) return p.selection_accuracy > q.selection_accuracy;
        return p.parameters < q.parameters;
    });
    std::ostringstream rank;
    rank << "rank\tstep\tcheckpoint\tselection_acc\tparams\n" << std::setprecision(10);
    for (std::size_t r = 0; r < order.size(); ++r)
        rank << r + 1 << '\t' << order[r] << '\t' << names[order[r]] << '\t'
             << result.summary[order[r]].selection_accuracy << '\t' << result.summary[order[r]].parameters << '\n';
    write_text(a.out / "ranking.tsv", rank.str());
    std::printf("best checkpoint: %s\n", names[result.best].c_str());
}

namespace {

// Top-ranked pruned checkpoints (the unpruned baseline is skipped).
std::vector<fs::path> top_checkpoints(const fs::path& dir, std::size_t k) {
    std::ifstream in(dir / "ranking.tsv");
    if (!in) throw DataError("cannot open " + (dir / "ranking.tsv").string());
    std::string line;
    std::getline(in, line);
    std::vector<fs::path> out;
    while (out.size() < k && std::getline(in, line)) {
        std::istringstream row(line);
        std::string rank, step, name;
        row >> rank >> step >> name;
        if (step == "0") continue;
        out.push_back(dir / name);
    }
    if (out.size() < k)
        throw DataError(dir.string() + " ranks only " + std::to_string(out.size()) + " pruned checkpoints");
    return out;
}

}  // namespace

void run_ensemble(const EnsembleArgs& a) {
    const auto strategy = ensemble::strategy_from_string(a.strategy);
    const auto ci = ci_config(a.ci, a.seed);
    auto paths = a.checkpoints;
    if (!a.prune_dir.empty()) {
        if (!paths.empty()) throw UsageError("give either --checkpoints or --prune-dir, not both");
        paths = top_checkpoints(a.prune_dir, a.top);
    }
    if (paths.size() < 2) throw UsageError("ensemble needs at least two checkpoints");
    auto weights = a.weights;
    if (strategy == ensemble::Strategy::Weighted && weights.empty()) {
        if (paths.size() != ensemble::kDefaultWeights.size())
            throw UsageError("--weights is required unless exactly three checkpoints are given");
        weights = ensemble::kDefaultWeights;
    }
    if (strategy == ensemble::Strategy::Weighted && weights.size() != paths.size())
        throw UsageError(std::to_string(weights.size()) + " weights for " + std::to_string(paths.size()) +
                         " checkpoints");
    if (strategy == ensemble::Strategy::Weighted) {
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw UsageError("weights must be nonnegative");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-9) throw UsageError("weights sum to " + std::to_string(total) + ", not 1");
    }
    prepare_out(a.out);

    const auto m = data::load_manifest(a.manifest);
    std::vector<nn::ModelGraph> models;
    std::size_t params = 0;
    for (const auto& p : paths) {
        models.push_back(nn::load_checkpoint(p).model);
        check_labels(models.back(), m);
        params += models.back().parameter_count();
    }
    const auto& input = models.front().layers().front().input_shape;
    const auto target = load_part(m, a.split, input);
    if (target.size() == 0) throw DataError("split '" + a.split + "' is empty");

    ensemble::PredictionSet set;
    for (const auto& model : models) set.models.push_back(predictions_of(model, target).probs);
    Tensor64 combined;
    std::vector<int> predicted;
    switch (strategy) {
        case ensemble::Strategy::Majority:
            predicted = ensemble::majority_vote(set);
            combined = ensemble::vote_fractions(set);
            break;
        case ensemble::Strategy::Average: combined = ensemble::average_probs(set); break;
        case ensemble::Strategy::Weighted: combined = ensemble::weighted_average(set, weights); break;
        case ensemble::Strategy::Stacking: {
            const auto held_out = load_part(m, "val", input);
            if (held_out.size() == 0) throw DataError("stacking needs a non-empty val split");
            ensemble::PredictionSet val_set;
            for (const auto& model : models) val_set.models.push_back(predictions_of(model, held_out).probs);
            ensemble::StackerSpec spec;
            spec.epochs = a.stacker_epochs;
            spec.seed = a.seed;
            const auto stacker = ensemble::train_stacker(val_set, held_out.labels, spec, m.labels);
            nn::save_checkpoint(stacker, a.out / "stacker.ipen");
            params += stacker.parameter_count();
            combined = ensemble::apply_stacker(stacker, set);
            break;
        }
    }
    if (predicted.empty()) predicted = ensemble::argmax_rows(combined);
    const ensemble::Predictions out{target.ids, m.labels, target.labels, combined};
    ensemble::write_predictions(a.out / "predictions.csv", out);
    write_report(a.out, a.strategy, out, predicted, params, ci);
}

void run_evaluate(const EvaluateArgs& a) {
    if (a.checkpoint.empty() == a.predictions.empty())
        throw UsageError("give exactly one of --checkpoint or --predictions");
    const auto ci = ci_config(a.ci, a.seed);
    prepare_out(a.out);
    ensemble::Predictions p;
    std::size_t params = 0;
    std::string name;
    if (!a.checkpoint.empty()) {
        if (a.manifest.empty()) throw UsageError("--manifest is required with --checkpoint");
        const auto model = nn::load_checkpoint(a.checkpoint).model;
        const auto m = data::load_manifest(a.manifest);
        check_labels(model, m);
        const auto d = load_part(m, a.split, model.layers().front().input_shape);
        if (d.size() == 0) throw DataError("split '" + a.split + "' is empty");
        p = predictions_of(model, d);
        params = model.parameter_count();
        name = a.checkpoint.stem().string();
        ensemble::write_predictions(a.out / "predictions.csv", p);
    } else {
        p = ensemble::read_predictions(a.predictions);
        name = a.predictions.stem().string();
    }
    write_report(a.out, name, p, ensemble::argmax_rows(p.probs), params, ci);
}

void run_gradcam(const GradcamArgs& a) {
    if (!(a.alpha >= 0.0 && a.alpha <= 1.0)) throw UsageError("--alpha must lie in [0, 1]");
    prepare_out(a.out);
    const auto model = nn::load_checkpoint(a.checkpoint).model;
    auto m = data::load_manifest(a.manifest);
    check_labels(model, m);
    if (a.target_class >= static_cast<int>(model.classes()))
        throw UsageError("--class " + std::to_string(a.target_class) + " outside [0, " +
                         std::to_string(model.classes()) + ")");
    data::DatasetManifest chosen = m;
    chosen.samples.clear();
    if (!a.samples.empty()) {
        for (const auto& id : a.samples) {
            const auto it = std::find_if(m.samples.begin(), m.samples.end(), [&](auto& s) { return s.path == id; });
            if (it == m.samples.end()) throw DataError("sample '" + id + "' not in manifest");
            chosen.samples.push_back(*it);
        }
    } else {
        const auto pool = m.has_splits() ? m.subset(a.split) : m;
        for (std::size_t i = 0; i < std::min(a.count, pool.samples.size()); ++i)
            chosen.samples.push_back(pool.samples[i]);
    }
    if (chosen.samples.empty()) throw DataError("no samples selected for Grad-CAM");
    const auto& input = model.layers().front().input_shape;
    const auto d = data::load_dataset(chosen, {.target_height = input[0], .target_width = input[1]});
    const auto probs = nn::predict(model, d.images).cast<double>();
    const auto predicted = ensemble::argmax_rows(probs);
    const auto px = input[0] * input[1] * input[2];
    for (std::size_t i = 0; i < d.size(); ++i) {
        Tensor img({input[0], input[1], input[2]});
        std::copy(d.images.data().begin() + i * px, d.images.data().begin() + (i + 1) * px, img.data().begin());
        const auto cls = a.target_class >= 0 ? static_cast<std::size_t>(a.target_class)
                                              : static_cast<std::size_t>(predicted[i]);
        const auto map = explain::grad_cam(model, img, cls);
        const auto stem = stem_of(d.ids[i]);
        data::write_ppm(a.out / (stem + "_cam.ppm"), explain::overlay(img, map, a.alpha));
        Tensor heat = map.heatmap.reshaped({input[0], input[1], 1});
        for (auto& v : heat.data()) v *= 255.0f;
        data::write_pgm(a.out / (stem + "_heat.pgm"), heat);
        std::printf("%s: class %s (p=%.4f)%s\n", d.ids[i].c_str(), m.labels[cls].c_str(),
                    probs[i * model.classes() + cls], map.all_zero ? " [all-zero map]" : "");
    }
}

}  // namespace ipens::cli
