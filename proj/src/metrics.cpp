#include "ipens/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "ipens/rng.hpp"

namespace ipens::metrics {

using nlohmann::json;

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, std::size_t classes) {
    if (truth.size() != predicted.size())
        throw DimensionError("samples", std::to_string(truth.size()) + " true labels vs " +
                                            std::to_string(predicted.size()) + " predictions");
    if (classes == 0) throw UsageError("class count must be positive");
    ConfusionMatrix cm{classes, std::vector<std::size_t>(classes * classes, 0)};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        for (int v : {truth[i], predicted[i]})
            if (v < 0 || static_cast<std::size_t>(v) >= classes)
                throw MetricsError("label " + std::to_string(v) + " outside [0, " + std::to_string(classes) + ")");
        ++cm.counts[truth[i] * classes + predicted[i]];
    }
    return cm;
}

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm) {
    const auto n = cm.total();
    if (n == 0) throw MetricsError("confusion matrix is empty");
    const auto k = cm.classes;
    ClassificationMetrics m;
    std::size_t correct = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t support = 0, predicted = 0;
        for (std::size_t j = 0; j < k; ++j) {
            support += cm.at(c, j);
            predicted += cm.at(j, c);
        }
        const auto tp = cm.at(c, c);
        correct += tp;
        const double recall = support ? static_cast<double>(tp) / support : 0.0;
        const double precision = predicted ? static_cast<double>(tp) / predicted : 0.0;
        if (predicted == 0) m.unpredicted_classes.push_back(c);
        const double f = recall + precision > 0.0 ? 2.0 * recall * precision / (recall + precision) : 0.0;
        m.recall_per_class.push_back(recall);
        m.precision_per_class.push_back(precision);
        m.f_per_class.push_back(f);
        const double w = static_cast<double>(support) / static_cast<double>(n);
        m.sensitivity += w * recall;
        m.precision += w * precision;
        m.f_score += w * f;
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return m;
}

double mcc(const ConfusionMatrix& cm) {
    const auto k = cm.classes;
    double c = 0.0, s = 0.0, pt = 0.0, pp = 0.0, tt = 0.0;
    std::vector<double> p(k, 0.0), t(k, 0.0);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double v = static_cast<double>(cm.at(i, j));
            t[i] += v;
            p[j] += v;
            s += v;
            if (i == j) c += v;
        }
    for (std::size_t i = 0; i < k; ++i) {
        pt += p[i] * t[i];
        pp += p[i] * p[i];
        tt += t[i] * t[i];
    }
    const double den = std::sqrt((s * s - pp) * (s * s - tt));
    return den > 0.0 ? (c * s - pt) / den : 0.0;
}

// ---------------------------------------------------------------------- ROC

std::optional<double> binary_auc(std::span<const double> scores, std::span<const char> positive) {
    if (scores.size() != positive.size()) throw DimensionError("samples", "score and label counts differ");
    const auto n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t q = i; q < j; ++q)
            if (positive[order[q]]) {
                rank_sum += rank;
                ++pos;
            }
        i = j;
    }
    const auto neg = n - pos;
    if (pos == 0 || neg == 0) return std::nullopt;
    const double p = static_cast<double>(pos);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

RocCurve roc_curve(std::span<const double> scores, std::span<const char> positive) {
    const auto n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const auto pos = static_cast<double>(std::count(positive.begin(), positive.end(), 1));
    const auto neg = static_cast<double>(n) - pos;
    RocCurve r{{0.0}, {0.0}};
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        for (; j < n && scores[order[j]] == scores[order[i]]; ++j) (positive[order[j]] ? tp : fp) += 1.0;
        r.fpr.push_back(neg > 0 ? fp / neg : 0.0);
        r.tpr.push_back(pos > 0 ? tp / pos : 0.0);
        i = j;
    }
    return r;
}

AucResult roc_auc(const Tensor64& scores, std::span<const int> truth) {
    if (scores.rank() != 2 || scores.dim(0) != truth.size())
        throw DimensionError("samples", "scores must be N×K with one row per label");
    const auto n = scores.dim(0), k = scores.dim(1);
    AucResult r;
    std::vector<double> col(n), flat;
    std::vector<char> is_pos(n), flat_pos;
    bool all_defined = true;
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            col[i] = scores[i * k + c];
            is_pos[i] = truth[i] == static_cast<int>(c);
        }
        const auto auc = binary_auc(col, is_pos);
        r.per_class.push_back(auc);
        r.curves.push_back(roc_curve(col, is_pos));
        if (auc)
            sum += *auc;
        else
            all_defined = false;
        flat.insert(flat.end(), col.begin(), col.end());
        flat_pos.insert(flat_pos.end(), is_pos.begin(), is_pos.end());
    }
    r.micro = binary_auc(flat, flat_pos);
    r.micro_curve = roc_curve(flat, flat_pos);
    if (all_defined && k > 0) r.macro = sum / static_cast<double>(k);
    return r;
}

// ------------------------------------------------------------ Clopper-Pearson

namespace {

double log_binom_pmf(std::size_t i, std::size_t n, double p) {
    const double lc = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0);
    return lc + (i ? i * std::log(p) : 0.0) + (n - i ? (n - i) * std::log1p(-p) : 0.0);
}

// P(lo <= X <= hi) for X ~ Bin(n, p), summed in log space.
double binom_range(std::size_t lo, std::size_t hi, std::size_t n, double p) {
    if (p <= 0.0) return lo == 0 ? 1.0 : 0.0;
    if (p >= 1.0) return hi == n ? 1.0 : 0.0;
    double peak = -INFINITY;
    std::vector<double> terms;
    for (std::size_t i = lo; i <= hi; ++i) {
        terms.push_back(log_binom_pmf(i, n, p));
        peak = std::max(peak, terms.back());
    }
    double s = 0.0;
    for (double t : terms) s += std::exp(t - peak);
    return std::min(1.0, std::exp(peak) * s);
}

// Root of a monotone f on [0,1]; `increasing` gives the direction.
template <typename F>
double bisect(F f, double target, bool increasing) {
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        const bool below = f(mid) < target;
        if (below == increasing)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

Interval clopper_pearson(std::size_t successes, std::size_t trials, double coverage) {
    if (trials == 0) throw MetricsError("Clopper-Pearson needs at least one trial");
    if (successes > trials)
        throw MetricsError(std::to_string(successes) + " successes exceed " + std::to_string(trials) + " trials");
    if (!(coverage > 0.0 && coverage < 1.0)) throw UsageError("coverage must lie in (0, 1)");
    const double tail = (1.0 - coverage) / 2.0;
    const auto k = successes, n = trials;
    Interval r;
    // lower: P(X >= k | p) = tail, increasing in p
    r.low = k == 0 ? 0.0 : bisect([&](double p) { return binom_range(k, n, n, p); }, tail, true);
    // upper: P(X <= k | p) = tail, decreasing in p
    r.high = k == n ? 1.0 : bisect([&](double p) { return binom_range(0, k, n, p); }, tail, false);
    return r;
}

// ---------------------------------------------------------------------- CIs

const char* to_string(MetricKind k) noexcept {
    switch (k) {
        case MetricKind::Accuracy: return "accuracy";
        case MetricKind::Sensitivity: return "sensitivity";
        case MetricKind::Precision: return "precision";
        case MetricKind::FScore: return "f_score";
        case MetricKind::Mcc: return "mcc";
        case MetricKind::Auc: return "auc";
    }
    return "?";
}

const char* to_string(CiMethod m) noexcept {
    return m == CiMethod::ClopperPearson ? "clopper_pearson_proportion" : "bootstrap";
}

CiMethod ci_method_from_string(const std::string& s) {
    if (s == "clopper_pearson_proportion" || s == "clopper_pearson" || s == "cp") return CiMethod::ClopperPearson;
    if (s == "bootstrap") return CiMethod::Bootstrap;
    throw UsageError("unknown CI method '" + s + "' (expected bootstrap|clopper_pearson_proportion)");
}

void CiConfig::validate() const {
    if (!(overall_coverage > 0.0 && overall_coverage < 1.0)) throw UsageError("coverage must lie in (0, 1)");
    if (method == CiMethod::Bootstrap && resamples == 0) throw UsageError("bootstrap needs at least one resample");
}

namespace {

std::size_t class_count(const EvaluationData& d) { return d.scores.rank() == 2 ? d.scores.dim(1) : 0; }

}  // namespace

std::optional<double> metric_value(MetricKind kind, const EvaluationData& data) {
    const auto k = class_count(data);
    if (kind == MetricKind::Auc) return roc_auc(data.scores, data.truth).macro;
    const auto cm = confusion(data.truth, data.predicted, k);
    if (kind == MetricKind::Mcc) return mcc(cm);
    const auto m = classification_metrics(cm);
    switch (kind) {
        case MetricKind::Accuracy: return m.accuracy;
        case MetricKind::Sensitivity: return m.sensitivity;
        case MetricKind::Precision: return m.precision;
        case MetricKind::FScore: return m.f_score;
        default: return std::nullopt;
    }
}

Interval metric_ci(MetricKind kind, const EvaluationData& data, const CiConfig& config) {
    config.validate();
    const auto n = data.truth.size();
    if (n == 0) throw MetricsError("confidence interval needs at least one sample");
    if (data.predicted.size() != n || data.scores.rank() != 2 || data.scores.dim(0) != n)
        throw DimensionError("samples", "evaluation data columns disagree in length");

    if (config.method == CiMethod::ClopperPearson) {
        const auto v = metric_value(kind, data);
        if (!v) throw MetricsError(std::string(to_string(kind)) + " is undefined on this data");
        const bool signed_metric = kind == MetricKind::Mcc;
        const double prop = std::clamp(signed_metric ? (*v + 1.0) / 2.0 : *v, 0.0, 1.0);
        const auto successes = static_cast<std::size_t>(std::llround(prop * static_cast<double>(n)));
        auto iv = clopper_pearson(successes, n, config.coverage());
        if (signed_metric) iv = {2.0 * iv.low - 1.0, 2.0 * iv.high - 1.0};
        return iv;
    }

    const auto k = class_count(data);
    std::vector<double> values;
    EvaluationData sample{Tensor64({n, k}), std::vector<int>(n), std::vector<int>(n)};
    for (std::size_t r = 0; r < config.resamples; ++r) {
        Rng rng(derive_seed(config.seed, {r}));
        for (std::size_t i = 0; i < n; ++i) {
            const auto j = rng.below(n);
            sample.truth[i] = data.truth[j];
            sample.predicted[i] = data.predicted[j];
            for (std::size_t c = 0; c < k; ++c) sample.scores[i * k + c] = data.scores[j * k + c];
        }
        if (const auto v = metric_value(kind, sample)) values.push_back(*v);
    }
    if (values.empty()) throw MetricsError(std::string(to_string(kind)) + " undefined on every bootstrap resample");
    std::sort(values.begin(), values.end());
    const double tail = (1.0 - config.coverage()) / 2.0;
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(values.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, values.size() - 1);
        return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
    };
    return {quantile(tail), quantile(1.0 - tail)};
}

// ------------------------------------------------------------------- report

MetricsReport evaluate(const std::string& model, const std::vector<std::string>& classes, const EvaluationData& data,
                       std::size_t parameters, const CiConfig& ci) {
    MetricsReport r;
    r.model = model;
    r.classes = classes;
    r.samples = data.truth.size();
    r.parameters = parameters;
    r.confusion = confusion(data.truth, data.predicted, class_count(data));
    r.scores = classification_metrics(r.confusion);
    r.mcc = mcc(r.confusion);
    r.auc = roc_auc(data.scores, data.truth);
    r.ci = ci;
    for (auto kind : {MetricKind::Accuracy, MetricKind::Auc, MetricKind::Sensitivity, MetricKind::Precision,
                      MetricKind::FScore, MetricKind::Mcc}) {
        if (kind == MetricKind::Auc && !r.auc.macro) continue;
        r.intervals.emplace_back(kind, metric_ci(kind, data, ci));
    }
    return r;
}

namespace {

const std::vector<std::pair<MetricKind, const char*>> kColumns{
    {MetricKind::Accuracy, "Acc."}, {MetricKind::Auc, "AUC"}, {MetricKind::Sensitivity, "Sens."},
    {MetricKind::Precision, "Prec."}, {MetricKind::FScore, "F"}, {MetricKind::Mcc, "MCC"}};

std::optional<double> point(const MetricsReport& r, MetricKind k) {
    switch (k) {
        case MetricKind::Accuracy: return r.scores.accuracy;
        case MetricKind::Auc: return r.auc.macro;
        case MetricKind::Sensitivity: return r.scores.sensitivity;
        case MetricKind::Precision: return r.scores.precision;
        case MetricKind::FScore: return r.scores.f_score;
        case MetricKind::Mcc: return r.mcc;
    }
    return std::nullopt;
}

std::optional<Interval> interval(const MetricsReport& r, MetricKind k) {
    for (const auto& [kind, iv] : r.intervals)
        if (kind == k) return iv;
    return std::nullopt;
}

std::string fmt(std::optional<double> v) {
    if (!v) return "NA";
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << *v;
    return os.str();
}

json opt_json(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string tsv_header() {
    std::string h = "Model";
    for (const auto& [_, name] : kColumns) h += std::string("\t") + name;
    h += "\tParam.";
    for (const auto& [_, name] : kColumns) h += std::string("\t") + name + " low\t" + name + " high";
    return h + "\tCI method\tCI coverage\n";
}

std::string tsv_row(const MetricsReport& r) {
    std::ostringstream os;
    os << r.model;
    for (const auto& [kind, _] : kColumns) os << '\t' << fmt(point(r, kind));
    os << '\t' << r.parameters;
    for (const auto& [kind, _] : kColumns) {
        const auto iv = interval(r, kind);
        os << '\t' << fmt(iv ? std::optional(iv->low) : std::nullopt) << '\t'
           << fmt(iv ? std::optional(iv->high) : std::nullopt);
    }
    os << '\t' << to_string(r.ci.method) << '\t' << std::setprecision(6) << r.ci.coverage() << '\n';
    return os.str();
}

std::string to_json(const MetricsReport& r) {
    json j;
    j["model"] = r.model;
    j["classes"] = r.classes;
    j["samples"] = r.samples;
    j["parameters"] = r.parameters;
    j["accuracy"] = r.scores.accuracy;
    j["sensitivity"] = r.scores.sensitivity;
    j["precision"] = r.scores.precision;
    j["f_score"] = r.scores.f_score;
    j["mcc"] = r.mcc;
    j["unpredicted_classes"] = r.scores.unpredicted_classes;
    json per_class = json::array();
    for (std::size_t c = 0; c < r.confusion.classes; ++c)
        per_class.push_back({{"class", c < r.classes.size() ? r.classes[c] : std::to_string(c)},
                             {"recall", r.scores.recall_per_class[c]},
                             {"precision", r.scores.precision_per_class[c]},
                             {"f_score", r.scores.f_per_class[c]},
                             {"auc", opt_json(r.auc.per_class[c])}});
    j["per_class"] = per_class;
    j["auc"] = {{"micro", opt_json(r.auc.micro)}, {"macro", opt_json(r.auc.macro)}};
    json cm = json::array();
    for (std::size_t t = 0; t < r.confusion.classes; ++t) {
        json row = json::array();
        for (std::size_t p = 0; p < r.confusion.classes; ++p) row.push_back(r.confusion.at(t, p));
        cm.push_back(row);
    }
    j["confusion"] = cm;
    json ci;
    for (const auto& [kind, iv] : r.intervals) ci[to_string(kind)] = {{"low", iv.low}, {"high", iv.high}};
    j["ci"] = {{"method", to_string(r.ci.method)},
               {"overall_coverage", r.ci.overall_coverage},
               {"per_interval_coverage", r.ci.coverage()},
               {"resamples", r.ci.method == CiMethod::Bootstrap ? json(r.ci.resamples) : json(nullptr)},
               {"seed", r.ci.seed},
               {"bounds", ci}};
    json roc = json::array();
    for (std::size_t c = 0; c < r.auc.curves.size(); ++c)
        roc.push_back({{"class", c < r.classes.size() ? r.classes[c] : std::to_string(c)},
                       {"fpr", r.auc.curves[c].fpr},
                       {"tpr", r.auc.curves[c].tpr}});
    roc.push_back({{"class", "micro"}, {"fpr", r.auc.micro_curve.fpr}, {"tpr", r.auc.micro_curve.tpr}});
    j["roc"] = roc;
    return j.dump(2) + "\n";
}

}  // namespace ipens::metrics
