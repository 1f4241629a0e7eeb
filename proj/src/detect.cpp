#include "ecgnoise/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace ecgnoise {

namespace {

constexpr char kMagic[4] = {'D', 'E', 'T', '1'};
constexpr std::uint16_t kVersion = 1;
constexpr double kEmRegEps = 1e-6;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Sigma + reg*tr(Sigma)/d*I, or Sigma + reg*I when the trace vanishes.
void regularize_covariance(std::vector<double>& cov, std::size_t d, double reg_eps) {
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += cov[i * d + i];
    const double bump = trace > 0.0 ? reg_eps * trace / double(d) : reg_eps;
    for (std::size_t i = 0; i < d; ++i) cov[i * d + i] += bump;
}

/// In-place lower Cholesky factor; returns false if the matrix is not PD.
bool cholesky(std::span<const double> a, std::size_t d, std::vector<double>& lower) {
    lower.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = a[i * d + j];
            for (std::size_t p = 0; p < j; ++p) sum -= lower[i * d + p] * lower[j * d + p];
            if (i == j) {
                if (sum <= 0.0) return false;
                lower[i * d + i] = std::sqrt(sum);
            } else {
                lower[i * d + j] = sum / lower[j * d + j];
            }
        }
    }
    return true;
}

/// Cholesky with escalating diagonal jitter; used only as a numerical
/// backstop when the usual regularization is not enough.
std::vector<double> cholesky_robust(std::vector<double> matrix, std::size_t d) {
    std::vector<double> lower;
    double jitter = kEmRegEps;
    for (int attempt = 0; attempt < 12; ++attempt) {
        if (cholesky(matrix, d, lower)) return lower;
        for (std::size_t i = 0; i < d; ++i) matrix[i * d + i] += jitter;
        jitter *= 10.0;
    }
    throw std::runtime_error("covariance matrix is not positive definite even after jitter");
}

/// Solves L L^T x = b given the lower factor.
void chol_solve(std::span<const double> lower, std::size_t d, std::span<const double> b,
                std::span<double> x) {
    for (std::size_t i = 0; i < d; ++i) {
        double sum = b[i];
        for (std::size_t j = 0; j < i; ++j) sum -= lower[i * d + j] * x[j];
        x[i] = sum / lower[i * d + i];
    }
    for (std::size_t ii = d; ii-- > 0;) {
        double sum = x[ii];
        for (std::size_t j = ii + 1; j < d; ++j) sum -= lower[j * d + ii] * x[j];
        x[ii] = sum / lower[ii * d + ii];
    }
}

double chol_logdet(std::span<const double> lower, std::size_t d) {
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) sum += std::log(lower[i * d + i]);
    return 2.0 * sum;
}

std::vector<double> chol_inverse(std::span<const double> lower, std::size_t d) {
    std::vector<double> inverse(d * d, 0.0);
    std::vector<double> unit(d, 0.0), column(d, 0.0);
    for (std::size_t c = 0; c < d; ++c) {
        std::fill(unit.begin(), unit.end(), 0.0);
        unit[c] = 1.0;
        chol_solve(lower, d, unit, column);
        for (std::size_t r = 0; r < d; ++r) inverse[r * d + c] = column[r];
    }
    // Symmetrize away the last-ulp asymmetry of the column solves.
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = r + 1; c < d; ++c) {
            const double v = 0.5 * (inverse[r * d + c] + inverse[c * d + r]);
            inverse[r * d + c] = v;
            inverse[c * d + r] = v;
        }
    }
    return inverse;
}

std::vector<double> column_means(const FeatureMatrix& features) {
    std::vector<double> mean(features.cols, 0.0);
    for (std::size_t i = 0; i < features.rows; ++i) {
        const auto row = features.row(i);
        for (std::size_t j = 0; j < features.cols; ++j) mean[j] += row[j];
    }
    for (double& m : mean) m /= double(features.rows);
    return mean;
}

/// Population covariance (denominator n) of the given rows about `mean`.
std::vector<double> covariance_about(const FeatureMatrix& features,
                                     std::span<const std::size_t> rows,
                                     std::span<const double> mean) {
    const std::size_t d = features.cols;
    std::vector<double> cov(d * d, 0.0);
    std::vector<double> diff(d);
    for (std::size_t idx : rows) {
        const auto row = features.row(idx);
        for (std::size_t j = 0; j < d; ++j) diff[j] = row[j] - mean[j];
        for (std::size_t r = 0; r < d; ++r) {
            for (std::size_t c = r; c < d; ++c) cov[r * d + c] += diff[r] * diff[c];
        }
    }
    const double n = double(rows.size());
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = r; c < d; ++c) {
            cov[r * d + c] /= n;
            cov[c * d + r] = cov[r * d + c];
        }
    }
    return cov;
}

struct ComponentDensity {
    std::vector<double> lower;  // Cholesky factor of the covariance
    double log_norm = 0.0;      // -0.5*(d*log(2pi) + logdet)
};

ComponentDensity prepare_density(std::span<const double> cov, std::size_t d) {
    ComponentDensity density;
    density.lower = cholesky_robust(std::vector<double>(cov.begin(), cov.end()), d);
    density.log_norm = -0.5 * (double(d) * std::log(2.0 * M_PI) + chol_logdet(density.lower, d));
    return density;
}

double log_gaussian(const ComponentDensity& density, std::span<const double> mean,
                    std::span<const double> x, std::vector<double>& diff,
                    std::vector<double>& solved) {
    const std::size_t d = mean.size();
    for (std::size_t j = 0; j < d; ++j) diff[j] = x[j] - mean[j];
    chol_solve(density.lower, d, diff, solved);
    double quad = 0.0;
    for (std::size_t j = 0; j < d; ++j) quad += diff[j] * solved[j];
    return density.log_norm - 0.5 * quad;
}

/// Seeded k-means++ center selection; returns row indices.
std::vector<std::size_t> kmeanspp_centers(const FeatureMatrix& features, int k,
                                          std::mt19937_64& rng) {
    const std::size_t n = features.rows;
    std::vector<std::size_t> centers;
    centers.reserve(k);
    std::uniform_int_distribution<std::size_t> uniform_row(0, n - 1);
    centers.push_back(uniform_row(rng));

    std::vector<double> dist2(n, 0.0);
    auto sq_distance = [&](std::size_t a, std::size_t b) {
        const auto ra = features.row(a);
        const auto rb = features.row(b);
        double sum = 0.0;
        for (std::size_t j = 0; j < features.cols; ++j) {
            const double diff = ra[j] - rb[j];
            sum += diff * diff;
        }
        return sum;
    };
    for (std::size_t i = 0; i < n; ++i) dist2[i] = sq_distance(i, centers[0]);

    while (centers.size() < std::size_t(k)) {
        const double total = std::accumulate(dist2.begin(), dist2.end(), 0.0);
        std::size_t chosen;
        if (total <= 0.0) {
            chosen = uniform_row(rng);
        } else {
            std::uniform_real_distribution<double> pick(0.0, total);
            double r = pick(rng);
            chosen = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                r -= dist2[i];
                if (r <= 0.0) {
                    chosen = i;
                    break;
                }
            }
        }
        centers.push_back(chosen);
        for (std::size_t i = 0; i < n; ++i) dist2[i] = std::min(dist2[i], sq_distance(i, chosen));
    }
    return centers;
}

/// Posterior log-responsibilities (unnormalized) of every row under the model.
void component_log_joint(const GmmModel& gmm, const FeatureMatrix& features,
                         std::vector<double>& log_joint) {
    const std::size_t n = features.rows;
    const std::size_t d = features.cols;
    log_joint.assign(n * gmm.k, 0.0);
    std::vector<double> diff(d), solved(d);
    for (int j = 0; j < gmm.k; ++j) {
        const ComponentDensity density =
            prepare_density({gmm.covariances.data() + std::size_t(j) * d * d, d * d}, d);
        const double log_w = gmm.weights[j] > 0.0 ? std::log(gmm.weights[j])
                                                  : -std::numeric_limits<double>::infinity();
        const std::span<const double> mean{gmm.means.data() + std::size_t(j) * d, d};
        for (std::size_t i = 0; i < n; ++i) {
            log_joint[i * gmm.k + j] = log_w + log_gaussian(density, mean, features.row(i), diff, solved);
        }
    }
}

}  // namespace

GmmModel fit_gmm(const FeatureMatrix& features, int k, std::uint64_t seed, int max_iter,
                 double tol) {
    const std::size_t n = features.rows;
    const std::size_t d = features.cols;
    if (k < 1) throw std::invalid_argument("fit_gmm: k must be >= 1");
    if (d < 1) throw std::invalid_argument("fit_gmm: feature dimension must be >= 1");
    if (n < std::size_t(k)) {
        throw std::invalid_argument("fit_gmm: need at least k=" + std::to_string(k) + " samples, got " +
                                    std::to_string(n));
    }

    GmmModel gmm;
    gmm.k = k;
    gmm.dim = d;
    gmm.weights.assign(k, 1.0 / double(k));
    gmm.means.resize(std::size_t(k) * d);
    gmm.covariances.resize(std::size_t(k) * d * d);

    std::mt19937_64 rng(seed);
    const auto centers = kmeanspp_centers(features, k, rng);
    for (int j = 0; j < k; ++j) {
        const auto row = features.row(centers[j]);
        std::copy(row.begin(), row.end(), gmm.means.begin() + std::size_t(j) * d);
    }
    std::vector<std::size_t> all_rows(n);
    std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});
    std::vector<double> pooled = covariance_about(features, all_rows, column_means(features));
    double pooled_trace = 0.0;
    for (std::size_t j = 0; j < d; ++j) pooled_trace += pooled[j * d + j];
    regularize_covariance(pooled, d, kEmRegEps);
    for (int j = 0; j < k; ++j) {
        std::copy(pooled.begin(), pooled.end(), gmm.covariances.begin() + std::size_t(j) * d * d);
    }

    // Components collapsing onto single points drive their variance to zero
    // and destabilize the E step; the diagonal bump is floored at the data
    // scale so the trace stays monotone.
    auto em_regularize = [&](double* cov) {
        double trace = 0.0;
        for (std::size_t j = 0; j < d; ++j) trace += cov[j * d + j];
        double bump = kEmRegEps * std::max(trace, pooled_trace) / double(d);
        if (bump <= 0.0) bump = kEmRegEps;
        for (std::size_t j = 0; j < d; ++j) cov[j * d + j] += bump;
    };

    std::vector<double> log_joint;
    std::vector<double> resp(n * std::size_t(k));
    double prev_ll = -std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < max_iter; ++iter) {
        // E step.
        component_log_joint(gmm, features, log_joint);
        double total_ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = &log_joint[i * k];
            double peak = row[0];
            for (int j = 1; j < k; ++j) peak = std::max(peak, row[j]);
            double sum = 0.0;
            for (int j = 0; j < k; ++j) sum += std::exp(row[j] - peak);
            const double lse = peak + std::log(sum);
            total_ll += lse;
            for (int j = 0; j < k; ++j) resp[i * k + j] = std::exp(row[j] - lse);
        }
        const double mean_ll = total_ll / double(n);
        gmm.log_likelihood_trace.push_back(mean_ll);
        if (iter > 0 && mean_ll - prev_ll < tol) break;
        prev_ll = mean_ll;

        // M step.
        for (int j = 0; j < k; ++j) {
            double weight_sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) weight_sum += resp[i * k + j];
            gmm.weights[j] = weight_sum / double(n);
            if (weight_sum < 1e-12) continue;  // starved component keeps its parameters

            double* mean = &gmm.means[std::size_t(j) * d];
            std::fill(mean, mean + d, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp[i * k + j];
                const auto row = features.row(i);
                for (std::size_t c = 0; c < d; ++c) mean[c] += r * row[c];
            }
            for (std::size_t c = 0; c < d; ++c) mean[c] /= weight_sum;

            double* cov = &gmm.covariances[std::size_t(j) * d * d];
            std::fill(cov, cov + d * d, 0.0);
            std::vector<double> diff(d);
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp[i * k + j];
                const auto row = features.row(i);
                for (std::size_t c = 0; c < d; ++c) diff[c] = row[c] - mean[c];
                for (std::size_t a = 0; a < d; ++a) {
                    for (std::size_t b = a; b < d; ++b) cov[a * d + b] += r * diff[a] * diff[b];
                }
            }
            for (std::size_t a = 0; a < d; ++a) {
                for (std::size_t b = a; b < d; ++b) {
                    cov[a * d + b] /= weight_sum;
                    cov[b * d + a] = cov[a * d + b];
                }
            }
            em_regularize(cov);
        }
    }
    return gmm;
}

std::vector<int> hard_assign(const GmmModel& gmm, const FeatureMatrix& features) {
    if (features.cols != gmm.dim) {
        throw std::invalid_argument("hard_assign: feature dimension mismatch");
    }
    std::vector<double> log_joint;
    component_log_joint(gmm, features, log_joint);
    std::vector<int> labels(features.rows, 0);
    for (std::size_t i = 0; i < features.rows; ++i) {
        const double* row = &log_joint[i * gmm.k];
        int best = 0;
        for (int j = 1; j < gmm.k; ++j) {
            if (row[j] > row[best]) best = j;  // ties keep the lowest index
        }
        labels[i] = best;
    }
    return labels;
}

ClusterDetector build_detector(const FeatureMatrix& features, std::span<const int> labels, int k,
                               double reg_eps) {
    if (labels.size() != features.rows) {
        throw std::invalid_argument("build_detector: labels do not match feature rows");
    }
    if (k < 1) throw std::invalid_argument("build_detector: k must be >= 1");
    const std::size_t d = features.cols;

    ClusterDetector detector;
    detector.dim = d;
    for (int cluster = 0; cluster < k; ++cluster) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] < 0 || labels[i] >= k) {
                throw std::invalid_argument("build_detector: label out of range at row " +
                                            std::to_string(i));
            }
            if (labels[i] == cluster) rows.push_back(i);
        }
        if (rows.empty()) {
            std::fprintf(stderr, "warning: cluster %d is empty; dropping it from the detector\n",
                         cluster);
            continue;
        }
        std::vector<double> mean(d, 0.0);
        for (std::size_t idx : rows) {
            const auto row = features.row(idx);
            for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
        }
        for (double& m : mean) m /= double(rows.size());
        std::vector<double> cov = covariance_about(features, rows, mean);
        regularize_covariance(cov, d, reg_eps);
        const std::vector<double> lower = cholesky_robust(cov, d);
        std::vector<double> precision = chol_inverse(lower, d);
        detector.mus.insert(detector.mus.end(), mean.begin(), mean.end());
        detector.precisions.insert(detector.precisions.end(), precision.begin(), precision.end());
        detector.k += 1;
    }
    if (detector.k == 0) throw std::runtime_error("build_detector: every cluster is empty");
    return detector;
}

ClusterDetector build_detector_from_gmm(const GmmModel& gmm, double reg_eps) {
    const std::size_t d = gmm.dim;
    ClusterDetector detector;
    detector.k = gmm.k;
    detector.dim = d;
    detector.mus = gmm.means;
    detector.precisions.reserve(std::size_t(gmm.k) * d * d);
    for (int j = 0; j < gmm.k; ++j) {
        std::vector<double> cov(gmm.covariances.begin() + std::size_t(j) * d * d,
                                gmm.covariances.begin() + std::size_t(j + 1) * d * d);
        regularize_covariance(cov, d, reg_eps);
        const std::vector<double> lower = cholesky_robust(cov, d);
        const std::vector<double> precision = chol_inverse(lower, d);
        detector.precisions.insert(detector.precisions.end(), precision.begin(), precision.end());
    }
    return detector;
}

double noise_score(const ClusterDetector& detector, std::span<const double> feature) {
    if (feature.size() != detector.dim) {
        throw std::invalid_argument("noise_score: feature has dimension " +
                                    std::to_string(feature.size()) + ", detector expects " +
                                    std::to_string(detector.dim));
    }
    const std::size_t d = detector.dim;
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> diff(d);
    for (int cluster = 0; cluster < detector.k; ++cluster) {
        const double* mu = &detector.mus[std::size_t(cluster) * d];
        const double* prec = &detector.precisions[std::size_t(cluster) * d * d];
        for (std::size_t j = 0; j < d; ++j) diff[j] = feature[j] - mu[j];
        double quad = 0.0;
        for (std::size_t r = 0; r < d; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) acc += prec[r * d + c] * diff[c];
            quad += diff[r] * acc;
        }
        best = std::min(best, quad);
    }
    return -best;
}

double ensemble_score(const EnsembleDetector& ensemble, std::span<const double> feature,
                      bool standardize) {
    if (ensemble.members.empty()) throw std::invalid_argument("ensemble_score: empty ensemble");
    if (standardize && !ensemble.has_score_stats()) {
        throw std::invalid_argument(
            "ensemble_score: standardized averaging needs the training-score statistics, which "
            "detector files do not carry; refit in-process");
    }
    double sum = 0.0;
    for (std::size_t m = 0; m < ensemble.members.size(); ++m) {
        double score = noise_score(ensemble.members[m], feature);
        if (standardize) {
            score = (score - ensemble.score_means[m]) / ensemble.score_stddevs[m];
        }
        sum += score;
    }
    return sum / double(ensemble.members.size());
}

EnsembleDetector fit_ensemble(const FeatureMatrix& features, std::span<const int> ks,
                              std::uint64_t seed, double reg_eps, ClusterStats stats) {
    if (ks.empty()) throw std::invalid_argument("fit_ensemble: needs at least one cluster count");
    std::vector<int> sorted(ks.begin(), ks.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw std::invalid_argument("fit_ensemble: cluster counts must be distinct");
    }
    EnsembleDetector ensemble;
    ensemble.members.reserve(ks.size());
    for (int k : ks) {
        const std::uint64_t member_seed = splitmix64(seed + std::uint64_t(k));
        const GmmModel gmm = fit_gmm(features, k, member_seed);
        if (stats == ClusterStats::Gmm) {
            ensemble.members.push_back(build_detector_from_gmm(gmm, reg_eps));
        } else {
            const std::vector<int> labels = hard_assign(gmm, features);
            ensemble.members.push_back(build_detector(features, labels, k, reg_eps));
        }
    }
    for (const auto& member : ensemble.members) {
        double mean = 0.0;
        for (std::size_t i = 0; i < features.rows; ++i) {
            mean += noise_score(member, features.row(i));
        }
        mean /= double(features.rows);
        double var = 0.0;
        for (std::size_t i = 0; i < features.rows; ++i) {
            const double diff = noise_score(member, features.row(i)) - mean;
            var += diff * diff;
        }
        ensemble.score_means.push_back(mean);
        ensemble.score_stddevs.push_back(std::max(std::sqrt(var / double(features.rows)), 1e-12));
    }
    return ensemble;
}

std::vector<int> default_cluster_counts() {
    std::vector<int> ks(10);
    std::iota(ks.begin(), ks.end(), 1);
    return ks;
}

void save_detector(const EnsembleDetector& ensemble, const std::string& path) {
    if (ensemble.members.empty()) throw std::invalid_argument("save_detector: empty ensemble");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open file for writing");
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&kVersion), 2);
    const auto member_count = static_cast<std::uint32_t>(ensemble.members.size());
    out.write(reinterpret_cast<const char*>(&member_count), 4);
    auto write_array = [&](const std::vector<double>& values) {
        const auto count = static_cast<std::uint32_t>(values.size());
        out.write(reinterpret_cast<const char*>(&count), 4);
        for (double v : values) {
            const float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&f), 4);
        }
    };
    for (const auto& member : ensemble.members) {
        const auto k = static_cast<std::uint32_t>(member.k);
        const auto d = static_cast<std::uint32_t>(member.dim);
        out.write(reinterpret_cast<const char*>(&k), 4);
        out.write(reinterpret_cast<const char*>(&d), 4);
        write_array(member.mus);
        write_array(member.precisions);
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

EnsembleDetector load_detector(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open file");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error(path + ": bad magic (expected DET1)");
    }
    std::uint16_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 2);
    if (!in || version != kVersion) {
        throw std::runtime_error(path + ": unsupported detector version " + std::to_string(version));
    }
    std::uint32_t member_count = 0;
    in.read(reinterpret_cast<char*>(&member_count), 4);
    if (!in || member_count == 0) throw std::runtime_error(path + ": no detector members");

    auto read_array = [&](std::vector<double>& values, std::size_t expected, const char* name) {
        std::uint32_t count = 0;
        in.read(reinterpret_cast<char*>(&count), 4);
        if (!in) throw std::runtime_error(path + ": truncated file before " + std::string(name));
        if (count != expected) {
            throw std::runtime_error(path + ": " + name + " has " + std::to_string(count) +
                                     " values, expected " + std::to_string(expected));
        }
        values.resize(count);
        for (std::uint32_t i = 0; i < count; ++i) {
            float f = 0.0f;
            in.read(reinterpret_cast<char*>(&f), 4);
            if (!in) throw std::runtime_error(path + ": truncated " + std::string(name));
            values[i] = f;
        }
    };

    EnsembleDetector ensemble;
    ensemble.members.resize(member_count);
    for (auto& member : ensemble.members) {
        std::uint32_t k = 0, d = 0;
        in.read(reinterpret_cast<char*>(&k), 4);
        in.read(reinterpret_cast<char*>(&d), 4);
        if (!in || k == 0 || d == 0) throw std::runtime_error(path + ": bad member header");
        member.k = static_cast<int>(k);
        member.dim = d;
        read_array(member.mus, std::size_t(k) * d, "means");
        read_array(member.precisions, std::size_t(k) * d * d, "precisions");
    }
    in.peek();
    if (!in.eof()) throw std::runtime_error(path + ": trailing bytes after members");
    return ensemble;
}

}  // namespace ecgnoise
