#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ecgnoise/detect.hpp"

namespace ecgnoise {

/// One evaluated sample: `noisiness` is the negated detector score (higher =
/// noisier) and is_noisy the ground truth.
struct ScoredSample {
    double noisiness = 0.0;
    bool is_noisy = false;
};

/// Mann-Whitney AUROC via mid-rank sums (ties count 1/2). Throws on
/// single-class input ("undefined metric").
double auroc(std::span<const ScoredSample> samples);

/// Average precision with descending thresholds; tied scores are processed
/// as a single threshold group. Throws when there are no positives.
double auprc(std::span<const ScoredSample> samples);

/// Mean and 2 centering directions of a 2-component PCA.
struct PcaModel {
    std::vector<double> mean;                // d
    std::vector<double> components;          // 2 x d, orthonormal rows
    std::vector<double> explained_variance;  // 2, nonincreasing
};

/// Centers the data and takes the top-2 principal directions; the sign of
/// each component is fixed so its largest-magnitude entry is positive.
/// Requires n >= 2 and d >= 2.
PcaModel pca_fit(const FeatureMatrix& features);
FeatureMatrix pca_project(const PcaModel& model, const FeatureMatrix& features);

struct MetricStats {
    double mean = 0.0;
    double stddev = 0.0;
};

/// One (method, level) cell of the evaluation report.
struct EvalCell {
    std::string method;
    int level = 0;  // 2 or 3
    MetricStats auroc;
    MetricStats auprc;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::vector<std::uint64_t> seeds;
};

struct EvalReport {
    std::vector<std::string> header;  // provenance lines echoed into outputs
    std::vector<EvalCell> cells;
};

/// Balanced evaluation of one score set: per seed, the larger side is
/// downsampled to the size of the smaller one (seeded choice), noisiness is
/// the negated score, and AUROC/AUPRC are aggregated as mean +- std across
/// seeds.
EvalCell evaluate_scores(std::span<const double> clean_scores,
                         std::span<const double> noisy_scores,
                         std::span<const std::uint64_t> seeds);

/// Plain-text table, one row per (method, level).
std::string format_report(const EvalReport& report);

/// CSV rows `method,level,metric,mean,std,seeds` (seeds joined by ';').
std::string report_to_csv(const EvalReport& report);

}  // namespace ecgnoise
