#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ecgnoise {

/// Row-major n x d feature matrix.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t n, std::size_t d) : rows(n), cols(d), data(n * d, 0.0) {}

    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
};

/// Full-covariance Gaussian mixture fitted by EM.
struct GmmModel {
    int k = 0;
    std::size_t dim = 0;
    std::vector<double> weights;       // k, nonnegative, sums to 1
    std::vector<double> means;         // k x d
    std::vector<double> covariances;   // k x d x d, symmetric positive definite
    std::vector<double> log_likelihood_trace;  // mean log-likelihood per sample, per iteration
};

/// Per-cluster sample means and precomputed precision matrices of the
/// regularized sample covariances.
struct ClusterDetector {
    int k = 0;
    std::size_t dim = 0;
    std::vector<double> mus;         // k x d
    std::vector<double> precisions;  // k x d x d
};

/// Detectors for several cluster counts; scores are averaged at query time.
/// fit_ensemble also records each member's training-score mean/std so the
/// optional standardized averaging can rescale members; these statistics
/// live in memory only (the detector file format does not carry them).
struct EnsembleDetector {
    std::vector<ClusterDetector> members;
    std::vector<double> score_means;   // empty unless fitted in-process
    std::vector<double> score_stddevs;

    bool has_score_stats() const { return score_means.size() == members.size(); }
};

/// Which per-cluster statistics back the detector: empirical stats of the
/// hard-assigned points (default), or the GMM's own component parameters.
enum class ClusterStats { HardAssign, Gmm };

/// EM with full covariances. Initialization: seeded k-means++ centers,
/// uniform weights, pooled covariance. Stops when the mean log-likelihood
/// gain drops below tol or after max_iter iterations. Degenerate covariances
/// are regularized (never an error). Requires n >= k >= 1.
GmmModel fit_gmm(const FeatureMatrix& features, int k, std::uint64_t seed, int max_iter = 200,
                 double tol = 1e-6);

/// Argmax posterior responsibility per row; ties broken by lowest index.
std::vector<int> hard_assign(const GmmModel& gmm, const FeatureMatrix& features);

/// Empirical per-cluster mean and covariance (denominator n_c), regularized
/// as Sigma + reg_eps*tr(Sigma)/d*I (reg_eps*I when the trace is zero), then
/// inverted. Empty clusters are dropped with a warning on stderr; throws if
/// every cluster is empty.
ClusterDetector build_detector(const FeatureMatrix& features, std::span<const int> labels, int k,
                               double reg_eps = 1e-6);

/// Detector backed by the mixture's own component means and covariances
/// (regularized and inverted the same way).
ClusterDetector build_detector_from_gmm(const GmmModel& gmm, double reg_eps = 1e-6);

/// Noise detection score: s = -min_m (f - mu_m)^T Sigma_m^-1 (f - mu_m).
/// Always <= 0; equals 0 exactly at a cluster mean.
double noise_score(const ClusterDetector& detector, std::span<const double> feature);

/// Arithmetic mean of the member scores. With standardize each member score
/// is first rescaled by its training mean/std (requires in-process fit).
double ensemble_score(const EnsembleDetector& ensemble, std::span<const double> feature,
                      bool standardize = false);

/// fit_gmm -> cluster stats -> detector for every k in ks (distinct,
/// default 1..10). Deterministic given the seed.
EnsembleDetector fit_ensemble(const FeatureMatrix& features, std::span<const int> ks,
                              std::uint64_t seed, double reg_eps = 1e-6,
                              ClusterStats stats = ClusterStats::HardAssign);

std::vector<int> default_cluster_counts();  // 1..10

// Detector file "DET1", little-endian: magic `44 45 54 31`, u16 version,
// u32 member_count; per member u32 k, u32 d, then the f32 means and f32
// precision matrices, each u32-count-prefixed.
void save_detector(const EnsembleDetector& ensemble, const std::string& path);
EnsembleDetector load_detector(const std::string& path);

}  // namespace ecgnoise
