#include "ecgnoise/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ecgnoise {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

MetricStats stats_of(std::span<const double> values) {
    MetricStats stats;
    for (double v : values) stats.mean += v;
    stats.mean /= double(values.size());
    double var = 0.0;
    for (double v : values) var += (v - stats.mean) * (v - stats.mean);
    stats.stddev = std::sqrt(var / double(values.size()));
    return stats;
}

/// Jacobi eigendecomposition of a symmetric matrix; eigenvectors land in the
/// columns of `vectors`.
void jacobi_eigen(std::vector<double> a, std::size_t d, std::vector<double>& values,
                  std::vector<double>& vectors) {
    vectors.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) vectors[i * d + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = r + 1; c < d; ++c) off += a[r * d + c] * a[r * d + c];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) {
                const double apq = a[p * d + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < d; ++i) {
                    const double aip = a[i * d + p];
                    const double aiq = a[i * d + q];
                    a[i * d + p] = c * aip - s * aiq;
                    a[i * d + q] = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    const double api = a[p * d + i];
                    const double aqi = a[q * d + i];
                    a[p * d + i] = c * api - s * aqi;
                    a[q * d + i] = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    const double vip = vectors[i * d + p];
                    const double viq = vectors[i * d + q];
                    vectors[i * d + p] = c * vip - s * viq;
                    vectors[i * d + q] = s * vip + c * viq;
                }
            }
        }
    }
    values.resize(d);
    for (std::size_t i = 0; i < d; ++i) values[i] = a[i * d + i];
}

}  // namespace

double auroc(std::span<const ScoredSample> samples) {
    std::size_t positives = 0;
    for (const auto& s : samples) positives += s.is_noisy ? 1 : 0;
    const std::size_t negatives = samples.size() - positives;
    if (positives == 0 || negatives == 0) {
        throw std::invalid_argument("auroc: undefined metric for single-class input");
    }

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return samples[a].noisiness < samples[b].noisiness;
    });

    // Mid-rank sum over positives, ties sharing the average rank.
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() &&
               samples[order[j]].noisiness == samples[order[i]].noisiness) {
            ++j;
        }
        const double mid_rank = 0.5 * double(i + 1 + j);  // average of ranks i+1..j
        for (std::size_t t = i; t < j; ++t) {
            if (samples[order[t]].is_noisy) rank_sum += mid_rank;
        }
        i = j;
    }
    const double p = double(positives);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * double(negatives));
}

double auprc(std::span<const ScoredSample> samples) {
    std::size_t positives = 0;
    for (const auto& s : samples) positives += s.is_noisy ? 1 : 0;
    if (positives == 0) throw std::invalid_argument("auprc: no positive samples");

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return samples[a].noisiness > samples[b].noisiness;
    });

    double ap = 0.0;
    double prev_recall = 0.0;
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() &&
               samples[order[j]].noisiness == samples[order[i]].noisiness) {
            if (samples[order[j]].is_noisy) {
                ++tp;
            } else {
                ++fp;
            }
            ++j;
        }
        const double recall = double(tp) / double(positives);
        const double precision = double(tp) / double(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

PcaModel pca_fit(const FeatureMatrix& features) {
    const std::size_t n = features.rows;
    const std::size_t d = features.cols;
    if (n < 2) throw std::invalid_argument("pca_fit: need at least 2 samples");
    if (d < 2) throw std::invalid_argument("pca_fit: need at least 2 dimensions");

    PcaModel model;
    model.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = features.row(i);
        for (std::size_t j = 0; j < d; ++j) model.mean[j] += row[j];
    }
    for (double& m : model.mean) m /= double(n);

    // Covariance with denominator n-1 so eigenvalues equal squared singular
    // values of the centered matrix over n-1.
    std::vector<double> cov(d * d, 0.0);
    std::vector<double> diff(d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = features.row(i);
        for (std::size_t j = 0; j < d; ++j) diff[j] = row[j] - model.mean[j];
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = r; c < d; ++c) cov[r * d + c] += diff[r] * diff[c];
    }
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = r; c < d; ++c) {
            cov[r * d + c] /= double(n - 1);
            cov[c * d + r] = cov[r * d + c];
        }
    }

    std::vector<double> values, vectors;
    jacobi_eigen(cov, d, values, vectors);
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return values[a] > values[b];
    });

    model.components.assign(2 * d, 0.0);
    model.explained_variance.assign(2, 0.0);
    for (std::size_t comp = 0; comp < 2; ++comp) {
        const std::size_t col = order[comp];
        model.explained_variance[comp] = std::max(0.0, values[col]);
        double* out = &model.components[comp * d];
        for (std::size_t j = 0; j < d; ++j) out[j] = vectors[j * d + col];
        // Fix the sign: largest-magnitude entry positive.
        std::size_t peak = 0;
        for (std::size_t j = 1; j < d; ++j) {
            if (std::abs(out[j]) > std::abs(out[peak])) peak = j;
        }
        if (out[peak] < 0.0) {
            for (std::size_t j = 0; j < d; ++j) out[j] = -out[j];
        }
    }
    return model;
}

FeatureMatrix pca_project(const PcaModel& model, const FeatureMatrix& features) {
    const std::size_t d = model.mean.size();
    if (features.cols != d) throw std::invalid_argument("pca_project: dimension mismatch");
    FeatureMatrix projected(features.rows, 2);
    for (std::size_t i = 0; i < features.rows; ++i) {
        const auto row = features.row(i);
        for (std::size_t comp = 0; comp < 2; ++comp) {
            const double* axis = &model.components[comp * d];
            double sum = 0.0;
            for (std::size_t j = 0; j < d; ++j) sum += (row[j] - model.mean[j]) * axis[j];
            projected.row(i)[comp] = sum;
        }
    }
    return projected;
}

EvalCell evaluate_scores(std::span<const double> clean_scores,
                         std::span<const double> noisy_scores,
                         std::span<const std::uint64_t> seeds) {
    if (clean_scores.empty() || noisy_scores.empty()) {
        throw std::invalid_argument("evaluate_scores: empty input sets");
    }
    if (seeds.empty()) throw std::invalid_argument("evaluate_scores: need at least one seed");

    const std::size_t balanced = std::min(clean_scores.size(), noisy_scores.size());
    auto pick = [&](std::span<const double> scores, std::uint64_t seed) {
        std::vector<std::size_t> idx(scores.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (scores.size() > balanced) {
            std::mt19937_64 rng(seed);
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(balanced);
        }
        return idx;
    };

    std::vector<double> aurocs, auprcs;
    for (std::uint64_t seed : seeds) {
        std::vector<ScoredSample> samples;
        samples.reserve(2 * balanced);
        for (std::size_t i : pick(clean_scores, splitmix64(seed))) {
            samples.push_back({-clean_scores[i], false});
        }
        for (std::size_t i : pick(noisy_scores, splitmix64(seed ^ 0x5eedULL))) {
            samples.push_back({-noisy_scores[i], true});
        }
        aurocs.push_back(auroc(samples));
        auprcs.push_back(auprc(samples));
    }

    EvalCell cell;
    cell.auroc = stats_of(aurocs);
    cell.auprc = stats_of(auprcs);
    cell.positives = balanced;
    cell.negatives = balanced;
    cell.seeds.assign(seeds.begin(), seeds.end());
    return cell;
}

std::string format_report(const EvalReport& report) {
    std::ostringstream out;
    for (const auto& line : report.header) out << "# " << line << "\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-18s %-6s %-18s %-18s %s\n", "method", "level", "auroc",
                  "auprc", "n(pos/neg)");
    out << buf;
    for (const auto& cell : report.cells) {
        char auroc_text[40], auprc_text[40];
        std::snprintf(auroc_text, sizeof(auroc_text), "%.4f +- %.4f", cell.auroc.mean,
                      cell.auroc.stddev);
        std::snprintf(auprc_text, sizeof(auprc_text), "%.4f +- %.4f", cell.auprc.mean,
                      cell.auprc.stddev);
        std::snprintf(buf, sizeof(buf), "%-18s %-6d %-18s %-18s %zu/%zu\n", cell.method.c_str(),
                      cell.level, auroc_text, auprc_text, cell.positives, cell.negatives);
        out << buf;
    }
    return out.str();
}

std::string report_to_csv(const EvalReport& report) {
    std::ostringstream out;
    for (const auto& line : report.header) out << "# " << line << "\n";
    out << "method,level,metric,mean,std,seeds\n";
    char buf[64];
    auto emit = [&](const EvalCell& cell, const char* metric, const MetricStats& stats) {
        out << cell.method << ',' << cell.level << ',' << metric << ',';
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,", stats.mean, stats.stddev);
        out << buf;
        for (std::size_t i = 0; i < cell.seeds.size(); ++i) {
            if (i) out << ';';
            out << cell.seeds[i];
        }
        out << "\n";
    };
    for (const auto& cell : report.cells) {
        emit(cell, "auroc", cell.auroc);
        emit(cell, "auprc", cell.auprc);
    }
    return out.str();
}

}  // namespace ecgnoise
