#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "commands.hpp"
#include "ipens/error.hpp"

using namespace ipens::cli;

namespace {

void add_split(CLI::App* sub, SplitOptions& s) {
    sub->add_option("--train-fraction", s.train_fraction, "Patients used for training + validation")
        ->check(CLI::Range(0.0, 1.0));
    sub->add_option("--val-fraction", s.val_fraction, "Validation share of the training patients")
        ->check(CLI::Range(0.0, 1.0));
}

void add_optim(CLI::App* sub, OptimOptions& o) {
    sub->add_option("--lr", o.learning_rate, "SGD learning rate");
    sub->add_option("--momentum", o.momentum, "SGD momentum");
    sub->add_option("--l2", o.l2_decay, "L2 weight decay");
    sub->add_option("--epochs", o.epochs, "Training epochs");
    sub->add_option("--batch", o.batch_size, "Minibatch size");
    sub->add_option("--checkpoint-metric", o.checkpoint_metric, "accuracy or loss")
        ->check(CLI::IsMember({"accuracy", "loss"}));
    sub->add_option("--class-weights", o.class_weights, "Per-class loss weights (default N/(K*n_c))");
}

void add_model(CLI::App* sub, ModelOptions& m) {
    sub->add_option("--image-size", m.image_size, "Input height and width");
    sub->add_option("--depth", m.depth, "Conv blocks");
    sub->add_option("--filters", m.base_filters, "Filters in the first block (doubled per block)");
    sub->add_option("--kernel", m.kernel, "Conv kernel size");
    sub->add_option("--stride", m.stride, "Conv stride");
    sub->add_option("--dropout", m.dropout, "Dropout rate")->check(CLI::Range(0.0, 1.0));
}

void add_ci(CLI::App* sub, CiOptions& c) {
    sub->add_option("--ci-method", c.method, "bootstrap or clopper_pearson_proportion")
        ->check(CLI::IsMember({"bootstrap", "clopper_pearson_proportion"}));
    sub->add_option("--ci-coverage", c.coverage, "Overall coverage, split over the two bounds");
    sub->add_option("--resamples", c.resamples, "Bootstrap resamples");
}

// Resolved options (defaults included) saved next to the outputs.
void save_config(const CLI::App* sub, const std::filesystem::path& out) {
    if (out.empty()) return;
    std::filesystem::create_directories(out);
    std::ofstream file(out / "config.ini");
    file << "[" << sub->get_name() << "]\n";
    std::istringstream lines(sub->config_to_str(true, false));
    // unset list options render as {} or "" and would not parse back
    for (std::string line; std::getline(lines, line);)
        if (!line.ends_with("=\"{}\"") && !line.ends_with("=\"\"")) file << line << '\n';
}

int fail(const char* kind, const std::string& message, int code) {
    nlohmann::json j{{"error", kind}, {"message", message}, {"exit", code}};
    std::cerr << j.dump() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Iteratively pruned CNN ensembles: train, prune, ensemble, evaluate, explain"};
    app.set_config("--config", "", "INI file with option values");
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Write a synthetic labelled image set with a manifest");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--classes", synth.classes, "Number of classes");
    s->add_option("--patients", synth.patients_per_class, "Patients per class");
    s->add_option("--samples", synth.samples_per_patient, "Images per patient");
    s->add_option("--image-size", synth.image_size, "Image height and width");
    s->add_option("--seed", synth.seed, "Random seed");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a custom CNN from scratch");
    t->add_option("--manifest", tr.manifest, "Dataset manifest CSV")->required();
    t->add_option("--out", tr.out, "Output directory")->required();
    t->add_option("--seed", tr.seed, "Random seed");
    add_split(t, tr.split);
    add_model(t, tr.model);
    add_optim(t, tr.optim);

    FinetuneArgs ft;
    auto* f = app.add_subcommand("finetune", "Replace the classifier of a trained model and retrain");
    f->add_option("--checkpoint", ft.checkpoint, "Source model")->required();
    f->add_option("--manifest", ft.manifest, "Dataset manifest CSV")->required();
    f->add_option("--out", ft.out, "Output directory")->required();
    f->add_option("--seed", ft.seed, "Random seed");
    f->add_option("--head-filters", ft.head_filters, "Filters in the added conv layer");
    f->add_option("--head-kernel", ft.head_kernel, "Kernel of the added conv layer");
    f->add_option("--head-stride", ft.head_stride, "Stride of the added conv");
    f->add_option("--head-pad", ft.head_pad, "Zero padding before the added conv");
    f->add_option("--head-dropout", ft.head_dropout, "Dropout rate of the new head");
    add_split(f, ft.split);
    add_optim(f, ft.optim);

    SearchArgs se;
    auto* h = app.add_subcommand("search", "Random search over SGD hyperparameters");
    h->add_option("--manifest", se.base.manifest, "Dataset manifest CSV")->required();
    h->add_option("--out", se.base.out, "Output directory")->required();
    h->add_option("--seed", se.base.seed, "Random seed");
    h->add_option("--trials", se.trials, "Configurations to try");
    h->add_option("--threads", se.threads, "Concurrent trials");
    add_split(h, se.base.split);
    add_model(h, se.base.model);
    add_optim(h, se.base.optim);

    PruneArgs pr;
    auto* p = app.add_subcommand("prune", "Iteratively prune filters by APoZ and retrain");
    p->add_option("--checkpoint", pr.checkpoint, "Baseline model")->required();
    p->add_option("--manifest", pr.manifest, "Dataset manifest CSV")->required();
    p->add_option("--out", pr.out, "Output directory")->required();
    p->add_option("--seed", pr.seed, "Random seed");
    p->add_option("--step", pr.step_percent, "Percent of original filters removed per step");
    p->add_option("--max", pr.max_percent, "Final percent of original filters removed");
    p->add_option("--selection", pr.selection, "Split used to pick the best step")
        ->check(CLI::IsMember({"validation", "test"}));
    add_split(p, pr.split);
    add_optim(p, pr.optim);

    EnsembleArgs en;
    auto* e = app.add_subcommand("ensemble", "Combine model predictions");
    e->add_option("--checkpoints", en.checkpoints, "Constituent models");
    e->add_option("--prune-dir", en.prune_dir, "Take the top-ranked checkpoints of a prune run");
    e->add_option("--top", en.top, "Checkpoints taken from --prune-dir");
    e->add_option("--manifest", en.manifest, "Dataset manifest CSV with split tags")->required();
    e->add_option("--out", en.out, "Output directory")->required();
    e->add_option("--seed", en.seed, "Random seed");
    e->add_option("--strategy", en.strategy, "majority, average, weighted or stacking")
        ->check(CLI::IsMember({"majority", "average", "weighted", "stacking"}));
    e->add_option("--weights", en.weights, "Weights for the weighted strategy (sum to 1)");
    e->add_option("--split", en.split, "Split to predict");
    e->add_option("--stacker-epochs", en.stacker_epochs, "Stacker training epochs");
    add_ci(e, en.ci);

    EvaluateArgs ev;
    auto* v = app.add_subcommand("evaluate", "Metrics with confidence intervals");
    v->add_option("--checkpoint", ev.checkpoint, "Model to evaluate");
    v->add_option("--predictions", ev.predictions, "Predictions CSV to evaluate");
    v->add_option("--manifest", ev.manifest, "Dataset manifest CSV");
    v->add_option("--out", ev.out, "Output directory")->required();
    v->add_option("--seed", ev.seed, "Random seed");
    v->add_option("--split", ev.split, "Split to evaluate");
    add_ci(v, ev.ci);

    GradcamArgs gc;
    auto* g = app.add_subcommand("gradcam", "Grad-CAM heatmaps and overlays");
    g->add_option("--checkpoint", gc.checkpoint, "Model")->required();
    g->add_option("--manifest", gc.manifest, "Dataset manifest CSV")->required();
    g->add_option("--out", gc.out, "Output directory")->required();
    g->add_option("--sample", gc.samples, "Sample paths as listed in the manifest");
    g->add_option("--count", gc.count, "Samples taken from --split when --sample is absent");
    g->add_option("--split", gc.split, "Split to draw samples from");
    g->add_option("--class", gc.target_class, "Target class index (default: predicted)");
    g->add_option("--alpha", gc.alpha, "Heatmap opacity");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        return fail("UsageError", ex.what(), 1);
    }

    try {
        if (s->parsed()) {
            save_config(s, synth.out);
            run_synth(synth);
        } else if (t->parsed()) {
            save_config(t, tr.out);
            run_train(tr);
        } else if (f->parsed()) {
            save_config(f, ft.out);
            run_finetune(ft);
        } else if (h->parsed()) {
            save_config(h, se.base.out);
            run_search(se);
        } else if (p->parsed()) {
            save_config(p, pr.out);
            run_prune(pr);
        } else if (e->parsed()) {
            save_config(e, en.out);
            run_ensemble(en);
        } else if (v->parsed()) {
            save_config(v, ev.out);
            run_evaluate(ev);
        } else if (g->parsed()) {
            save_config(g, gc.out);
            run_gradcam(gc);
        }
    } catch (const ipens::UsageError& ex) {
        return fail("UsageError", ex.what(), 1);
    } catch (const ipens::DataError& ex) {
        return fail("DataError", ex.what(), 2);
    } catch (const ipens::TrainingError& ex) {
        return fail("TrainingError", ex.what(), 2);
    } catch (const ipens::CheckpointError& ex) {
        return fail("CheckpointError", ex.what(), 2);
    } catch (const ipens::DimensionError& ex) {
        return fail("DimensionError", ex.what(), 2);
    } catch (const ipens::Error& ex) {
        return fail("Error", ex.what(), 2);
    } catch (const std::exception& ex) {
        return fail("InternalError", ex.what(), 2);
    }
    return 0;
}
