#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ipens/tensor.hpp"

namespace ipens::metrics {

// Rows are true classes, columns predictions.
struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::size_t> counts;  // classes × classes

    std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }
    std::size_t total() const;
    bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, std::size_t classes);

struct ClassificationMetrics {
    double accuracy = 0.0;
    double sensitivity = 0.0;  // support-weighted recall
    double precision = 0.0;    // support-weighted
    double f_score = 0.0;      // support-weighted
    std::vector<double> recall_per_class;
    std::vector<double> precision_per_class;
    std::vector<double> f_per_class;
    std::vector<std::size_t> unpredicted_classes;  // zero predicted positives; precision counted as 0
};

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm);

// Multiclass R_K statistic; 0 when the denominator vanishes.
double mcc(const ConfusionMatrix& cm);

struct RocCurve {
    std::vector<double> fpr;
    std::vector<double> tpr;
};

// Mann–Whitney AUC with ties counted ½; nullopt without both positives and negatives.
std::optional<double> binary_auc(std::span<const double> scores, std::span<const char> positive);
RocCurve roc_curve(std::span<const double> scores, std::span<const char> positive);

struct AucResult {
    std::vector<std::optional<double>> per_class;
    std::optional<double> micro;
    std::optional<double> macro;  // unweighted mean; nullopt if any class is undefined
    std::vector<RocCurve> curves;
    RocCurve micro_curve;
};

// scores: N×K class probabilities.
AucResult roc_auc(const Tensor64& scores, std::span<const int> truth);

struct Interval {
    double low = 0.0;
    double high = 1.0;
};

// Exact binomial interval with coverage `coverage` (tails of (1-coverage)/2 each),
// found by bisection on the binomial CDF.
Interval clopper_pearson(std::size_t successes, std::size_t trials, double coverage);

// Overall 0.95 split across two simultaneous intervals: 0.95^(1/2) each.
inline double adjusted_coverage(double overall) { return std::sqrt(overall); }

enum class MetricKind { Accuracy, Sensitivity, Precision, FScore, Mcc, Auc };
enum class CiMethod { ClopperPearson, Bootstrap };

const char* to_string(MetricKind k) noexcept;
const char* to_string(CiMethod m) noexcept;
CiMethod ci_method_from_string(const std::string& s);

struct CiConfig {
    double overall_coverage = 0.95;
    CiMethod method = CiMethod::Bootstrap;
    std::size_t resamples = 2000;
    std::uint64_t seed = 0;

    double coverage() const { return adjusted_coverage(overall_coverage); }
    void validate() const;
};

struct EvaluationData {
    Tensor64 scores;  // N×K
    std::vector<int> truth;
    std::vector<int> predicted;
};

// Point value of a metric; AUC is macro-averaged. nullopt when undefined.
std::optional<double> metric_value(MetricKind kind, const EvaluationData& data);

// Proportion mode treats the metric as k/n over the n test samples (MCC is
// mapped through (m+1)/2 and back). Bootstrap mode resamples samples with
// replacement and reports percentile bounds; resamples where the metric is
// undefined are skipped.
Interval metric_ci(MetricKind kind, const EvaluationData& data, const CiConfig& config);

struct MetricsReport {
    std::string model;
    std::vector<std::string> classes;
    std::size_t samples = 0;
    std::size_t parameters = 0;
    ConfusionMatrix confusion;
    ClassificationMetrics scores;
    double mcc = 0.0;
    AucResult auc;
    CiConfig ci;
    std::vector<std::pair<MetricKind, Interval>> intervals;
};

MetricsReport evaluate(const std::string& model, const std::vector<std::string>& classes, const EvaluationData& data,
                       std::size_t parameters, const CiConfig& ci);

// Columns: Model, Acc., AUC, Sens., Prec., F, MCC, Param., per-metric CI bounds, CI method.
std::string tsv_header();
std::string tsv_row(const MetricsReport& r);
std::string to_json(const MetricsReport& r);

}  // namespace ipens::metrics
