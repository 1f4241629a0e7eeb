// Acceptance suite: exercises the full pipeline end to end and prints one
// pass/fail line per criterion. Heavy stages run through the CLI binary
// (path in argv[1]) exactly as a user would invoke them.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ecgnoise/cae.hpp"
#include "ecgnoise/detect.hpp"
#include "ecgnoise/eval.hpp"
#include "ecgnoise/nn.hpp"
#include "ecgnoise/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ecgnoise;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;
std::string g_cli;
fs::path g_dir;

void report(const char* criterion, bool ok, const std::string& detail) {
    std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", criterion, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

int run_cli(const std::string& args, const fs::path& workdir = {}) {
    std::string cmd;
    if (!workdir.empty()) {
        fs::create_directories(workdir);
        cmd = "cd " + workdir.string() + " && ";
    }
    cmd += g_cli + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
}

std::string fmt(const char* pattern, ...) {
    char buf[512];
    va_list va;
    va_start(va, pattern);
    std::vsnprintf(buf, sizeof(buf), pattern, va);
    va_end(va);
    return buf;
}

// ---------------------------------------------------------------- criterion 1

void criterion1_caveat() {
    report("C1 paper-reproduction caveat", true,
           "Table I/II absolute values are not reproducible at desk scale (source data and "
           "preprocessing unavailable); acceptance rests on the property and ordering checks "
           "below");
}

// ---------------------------------------------------------------- criterion 2

/// Smallest |pre-activation| across all three ReLU sites. Central
/// differences over a piecewise-linear net are only meaningful when no
/// activation sits within the finite-difference shift of a kink.
double min_kink_margin(const CaeModel& model, const Tensor3& batch) {
    const Tensor3 z1 = conv1d_forward(batch, model.layers[0]);
    const Tensor3 z2 = conv1d_forward(relu(z1), model.layers[1]);
    const Tensor3 z3 = tconv1d_forward(relu(z2), model.layers[2]);
    double margin = std::numeric_limits<double>::infinity();
    for (const Tensor3* z : {&z1, &z2, &z3}) {
        for (double v : z->data) margin = std::min(margin, std::abs(v));
    }
    return margin;
}

void criterion2_gradients() {
    const auto start = Clock::now();
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> sample(-1.0, 1.0);
    double worst = 0.0;
    int built = 0;
    while (built < 20) {
        CaeConfig config;
        config.window_len = 12 + int(rng() % 21);  // up to 32
        config.encoder = {{{2 + int(rng() % 3), 3 + int(rng() % 3), 2 + int(rng() % 2)},
                           {2 + int(rng() % 4), 3 + int(rng() % 3), 2 + int(rng() % 2)}}};
        config.latent_channels = config.encoder[1].out_channels;
        config.seed = rng();
        CaeModel model;
        try {
            model = build_cae(config);
        } catch (const std::invalid_argument&) {
            continue;  // shape chain collapsed; draw another architecture
        }

        Tensor3 batch(2, 1, config.window_len);
        for (double& v : batch.data) v = sample(rng);
        // h = 1e-4 shifts any pre-activation by well under 1e-3 for these
        // weight/input scales; keep 2x headroom away from ReLU kinks.
        if (min_kink_margin(model, batch) < 2e-3) continue;
        ++built;

        std::vector<double> params = flatten_params(model);
        const std::vector<double> analytic = reconstruction_grad(model, batch);
        auto loss = [&](std::span<const double> p) {
            CaeModel probe = model;
            set_flat_params(probe, p);
            return reconstruction_loss(probe, batch);
        };
        worst = std::max(worst, grad_check(loss, params, analytic, 1e-4));
    }
    const double elapsed = seconds_since(start);
    report("C2 gradient correctness", worst < 1e-5 && elapsed < 30.0,
           fmt("max relative error %.3e (< 1e-5) over 20 random models, %.1f s (< 30 s)", worst,
               elapsed));
}

// ---------------------------------------------------------------- criterion 3

void criterion3_adjointness() {
    const auto start = Clock::now();
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> sample(-1.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int c_in = 1 + int(rng() % 3);
        const int c_out = 1 + int(rng() % 3);
        const int kernel = 1 + int(rng() % 5);
        const int stride = 1 + int(rng() % 3);
        const int padding = int(rng() % 2);
        const int t_in = kernel + int(rng() % 12);
        const int batch = 1 + int(rng() % 2);

        ConvLayer conv;
        conv.in_channels = c_in;
        conv.out_channels = c_out;
        conv.kernel = kernel;
        conv.stride = stride;
        conv.padding = padding;
        conv.weights.resize(conv.weight_count());
        conv.bias.assign(c_out, 0.0);
        for (double& w : conv.weights) w = sample(rng);

        ConvLayer tconv = conv;
        tconv.transposed = true;
        tconv.in_channels = c_out;
        tconv.out_channels = c_in;
        tconv.bias.assign(c_in, 0.0);
        tconv.output_padding = (t_in + 2 * padding - kernel) % stride;

        Tensor3 x(batch, c_in, t_in);
        for (double& v : x.data) v = sample(rng);
        const Tensor3 cx = conv1d_forward(x, conv);
        Tensor3 y(batch, c_out, cx.len);
        for (double& v : y.data) v = sample(rng);
        const Tensor3 ty = tconv1d_forward(y, tconv);

        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < cx.data.size(); ++i) lhs += cx.data[i] * y.data[i];
        for (std::size_t i = 0; i < x.data.size(); ++i) rhs += x.data[i] * ty.data[i];
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    const double elapsed = seconds_since(start);
    report("C3 conv/tconv adjointness", worst < 1e-10 && elapsed < 5.0,
           fmt("max inner-product mismatch %.3e (< 1e-10) over 100 tensors, %.2f s (< 5 s)",
               worst, elapsed));
}

// ---------------------------------------------------------------- criterion 4

void criterion4_em() {
    std::mt19937_64 rng(404);
    std::normal_distribution<double> unit(0.0, 1.0);
    double worst_drop = 0.0;
    double worst_k1 = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 1 + int(rng() % 5);
        const std::size_t d = 1 + rng() % 5;
        const std::size_t n = std::size_t(k) * (d + 2) + 20 + rng() % 60;
        FeatureMatrix features(n, d);
        for (double& v : features.data) v = unit(rng) * (1.0 + double(trial % 3));

        const GmmModel gmm = fit_gmm(features, k, rng());
        for (std::size_t i = 1; i < gmm.log_likelihood_trace.size(); ++i) {
            worst_drop = std::max(
                worst_drop, gmm.log_likelihood_trace[i - 1] - gmm.log_likelihood_trace[i]);
        }
        if (k == 1) {
            std::vector<double> mean(d, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < d; ++j) mean[j] += features.row(i)[j];
            }
            for (double& v : mean) v /= double(n);
            std::vector<double> cov(d * d, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t a = 0; a < d; ++a) {
                    for (std::size_t b = 0; b < d; ++b) {
                        cov[a * d + b] +=
                            (features.row(i)[a] - mean[a]) * (features.row(i)[b] - mean[b]);
                    }
                }
            }
            for (double& v : cov) v /= double(n);
            double trace = 0.0;
            for (std::size_t j = 0; j < d; ++j) trace += cov[j * d + j];
            const double bump = trace > 0.0 ? 1e-6 * trace / double(d) : 1e-6;
            for (std::size_t j = 0; j < d; ++j) cov[j * d + j] += bump;
            for (std::size_t j = 0; j < d; ++j) {
                worst_k1 = std::max(worst_k1, std::abs(gmm.means[j] - mean[j]));
            }
            for (std::size_t j = 0; j < d * d; ++j) {
                worst_k1 = std::max(worst_k1, std::abs(gmm.covariances[j] - cov[j]));
            }
        }
    }
    report("C4 EM monotonicity and k=1 closed form", worst_drop <= 1e-8 && worst_k1 < 1e-8,
           fmt("max log-likelihood drop %.3e (<= 1e-8), k=1 deviation %.3e (< 1e-8), 50 fits",
               worst_drop, worst_k1));
}

// ---------------------------------------------------------------- criterion 5

double oracle_noise_score(const FeatureMatrix& features, std::span<const int> labels, int k,
                          double reg_eps, std::span<const double> query) {
    const std::size_t d = features.cols;
    double best = std::numeric_limits<double>::infinity();
    for (int cluster = 0; cluster < k; ++cluster) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == cluster) rows.push_back(i);
        }
        if (rows.empty()) continue;
        std::vector<double> mean(d, 0.0);
        for (auto r : rows) {
            for (std::size_t j = 0; j < d; ++j) mean[j] += features.row(r)[j];
        }
        for (double& v : mean) v /= double(rows.size());
        std::vector<double> cov(d * d, 0.0);
        for (auto r : rows) {
            for (std::size_t a = 0; a < d; ++a) {
                for (std::size_t b = 0; b < d; ++b) {
                    cov[a * d + b] +=
                        (features.row(r)[a] - mean[a]) * (features.row(r)[b] - mean[b]);
                }
            }
        }
        for (double& v : cov) v /= double(rows.size());
        double trace = 0.0;
        for (std::size_t j = 0; j < d; ++j) trace += cov[j * d + j];
        const double bump = trace > 0.0 ? reg_eps * trace / double(d) : reg_eps;
        for (std::size_t j = 0; j < d; ++j) cov[j * d + j] += bump;

        std::vector<double> a = cov;
        std::vector<double> y(d);
        for (std::size_t j = 0; j < d; ++j) y[j] = query[j] - mean[j];
        const std::vector<double> diff = y;
        for (std::size_t col = 0; col < d; ++col) {
            std::size_t pivot = col;
            for (std::size_t r = col + 1; r < d; ++r) {
                if (std::abs(a[r * d + col]) > std::abs(a[pivot * d + col])) pivot = r;
            }
            for (std::size_t c = 0; c < d; ++c) std::swap(a[col * d + c], a[pivot * d + c]);
            std::swap(y[col], y[pivot]);
            for (std::size_t r = col + 1; r < d; ++r) {
                const double f = a[r * d + col] / a[col * d + col];
                for (std::size_t c = col; c < d; ++c) a[r * d + c] -= f * a[col * d + c];
                y[r] -= f * y[col];
            }
        }
        for (std::size_t col = d; col-- > 0;) {
            for (std::size_t c = col + 1; c < d; ++c) y[col] -= a[col * d + c] * y[c];
            y[col] /= a[col * d + col];
        }
        double quad = 0.0;
        for (std::size_t j = 0; j < d; ++j) quad += diff[j] * y[j];
        best = std::min(best, quad);
    }
    return -best;
}

void criterion5_oracles() {
    std::mt19937_64 rng(505);
    std::normal_distribution<double> unit(0.0, 1.0);

    double worst_score = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 1 + int(rng() % 4);
        const std::size_t d = 2 + rng() % 5;
        const std::size_t n = std::size_t(k) * (d + 2) + rng() % 40;
        FeatureMatrix features(n, d);
        for (double& v : features.data) v = unit(rng);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = int(rng() % k);
        for (int c = 0; c < k; ++c) labels[std::size_t(c)] = c;
        const ClusterDetector det = build_detector(features, labels, k, 1e-6);
        std::vector<double> query(d);
        for (double& v : query) v = 2.0 * unit(rng);
        const double got = noise_score(det, query);
        const double want = oracle_noise_score(features, labels, k, 1e-6, query);
        worst_score = std::max(worst_score,
                               std::abs(got - want) / std::max(1.0, std::abs(want)));
    }

    double worst_auroc = 0.0;
    double worst_auprc = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng() % 199;
        std::vector<ScoredSample> samples;
        bool pos = false, neg = false;
        for (std::size_t i = 0; i < n; ++i) {
            double v = unit(rng);
            if (trial % 2 == 0) v = std::round(v * 4.0) / 4.0;
            const bool noisy = rng() % 2 == 0;
            samples.push_back({v, noisy});
            pos |= noisy;
            neg |= !noisy;
        }
        if (!pos) samples.push_back({unit(rng), true});
        if (!neg) samples.push_back({unit(rng), false});

        // pairwise oracle
        double wins = 0.0;
        std::size_t pairs = 0;
        for (const auto& p : samples) {
            if (!p.is_noisy) continue;
            for (const auto& q : samples) {
                if (q.is_noisy) continue;
                ++pairs;
                wins += p.noisiness > q.noisiness ? 1.0 : (p.noisiness == q.noisiness ? 0.5 : 0.0);
            }
        }
        worst_auroc = std::max(worst_auroc, std::abs(auroc(samples) - wins / double(pairs)));

        // threshold-enumeration oracle
        std::set<double, std::greater<double>> thresholds;
        std::size_t positives = 0;
        for (const auto& s : samples) {
            thresholds.insert(s.noisiness);
            positives += s.is_noisy ? 1 : 0;
        }
        double ap = 0.0, prev_recall = 0.0;
        for (double threshold : thresholds) {
            std::size_t tp = 0, fp = 0;
            for (const auto& s : samples) {
                if (s.noisiness >= threshold) (s.is_noisy ? tp : fp) += 1;
            }
            const double recall = double(tp) / double(positives);
            ap += (recall - prev_recall) * (double(tp) / double(tp + fp));
            prev_recall = recall;
        }
        worst_auprc = std::max(worst_auprc, std::abs(auprc(samples) - ap));
    }

    report("C5 oracle equivalence",
           worst_score < 1e-8 && worst_auroc == 0.0 && worst_auprc < 1e-12,
           fmt("score vs solve %.3e (< 1e-8), AUROC vs pairwise %.3e (exact), AUPRC vs "
               "enumeration %.3e (< 1e-12)",
               worst_score, worst_auroc, worst_auprc));
}

// ------------------------------------------------------- criteria 6 through 9

struct ReportCells {
    std::map<std::pair<std::string, int>, double> auroc_mean;
};

ReportCells parse_report_csv(const fs::path& path) {
    ReportCells cells;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing report: " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("method,", 0) == 0) continue;
        std::stringstream row(line);
        std::string method, level, metric, mean;
        std::getline(row, method, ',');
        std::getline(row, level, ',');
        std::getline(row, metric, ',');
        std::getline(row, mean, ',');
        if (metric == "auroc") {
            cells.auroc_mean[{method, std::stoi(level)}] = std::stod(mean);
        }
    }
    return cells;
}

double repro_seconds = 0.0;

// Both repro runs use the same relative --out from different scratch
// directories so every provenance header (which echoes the flags) matches
// byte for byte.
fs::path repro_run_dir() { return g_dir / "site_a" / "run"; }

void criterion6_pipeline() {
    const fs::path run_dir = repro_run_dir();
    const auto start = Clock::now();
    const int rc = run_cli("repro-synthetic --out run", g_dir / "site_a");
    repro_seconds = seconds_since(start);
    if (rc != 0) {
        report("C6 synthetic pipeline ordering", false,
               fmt("repro-synthetic exited with %d", rc));
        return;
    }
    const ReportCells cells = parse_report_csv(run_dir / "report.csv");
    const double ens2 = cells.auroc_mean.at({"ensemble", 2});
    const double ens3 = cells.auroc_mean.at({"ensemble", 3});
    const double recon2 = cells.auroc_mean.at({"recon", 2});
    const bool ok = ens3 >= ens2 && ens3 >= 0.90 && ens2 >= 0.70 && ens2 >= recon2 - 0.02 &&
                    repro_seconds < 600.0;
    report("C6 synthetic pipeline ordering", ok,
           fmt("ensemble AUROC L3 %.4f >= L2 %.4f, L3 >= 0.90, L2 >= 0.70, ensemble >= recon "
               "(%.4f) - 0.02, %.0f s (< 600 s)",
               ens3, ens2, recon2, repro_seconds));
}

void criterion7_transfer() {
    const fs::path run_dir = repro_run_dir();
    const fs::path corpus_b = g_dir / "corpus_b";
    const fs::path sweep_dir = g_dir / "sweep";
    int rc = run_cli("gen --seed 2 --profile shifted --n1 800 --n2 200 --n3 200 --out " +
                     corpus_b.string());
    if (rc == 0) {
        rc = run_cli("finetune --checkpoint " + (run_dir / "cae.ckpt").string() + " --level1 " +
                     (corpus_b / "level1.ecgw").string() + " --level2 " +
                     (corpus_b / "level2.ecgw").string() + " --level3 " +
                     (corpus_b / "level3.ecgw").string() + " --epochs 8 --seed 2 --out " +
                     sweep_dir.string());
    }
    if (rc != 0) {
        report("C7 transfer sweep shape", false, fmt("CLI stage exited with %d", rc));
        return;
    }

    // sweep.csv rows: fraction,level,metric,mean,std
    std::ifstream in(sweep_dir / "sweep.csv");
    if (!in) {
        report("C7 transfer sweep shape", false, "sweep.csv missing");
        return;
    }
    std::map<std::pair<std::string, int>, std::map<std::string, double>> cells;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("fraction,", 0) == 0) continue;
        std::stringstream row(line);
        std::string fraction, level, metric, mean;
        std::getline(row, fraction, ',');
        std::getline(row, level, ',');
        std::getline(row, metric, ',');
        std::getline(row, mean, ',');
        cells[{fraction, std::stoi(level)}][metric] = std::stod(mean);
    }

    const std::vector<std::string> fractions{"0.20", "0.40", "0.60", "0.80", "1.00"};
    bool complete = true;
    for (const auto& fraction : fractions) {
        for (int level : {2, 3}) {
            auto it = cells.find({fraction, level});
            if (it == cells.end() || !it->second.count("auroc") || !it->second.count("auprc")) {
                complete = false;
            }
        }
    }
    if (!complete) {
        report("C7 transfer sweep shape", false, "sweep report is missing cells (need 5x2x2)");
        return;
    }

    double base = 0.0, later = 0.0;
    int later_count = 0;
    for (int level : {2, 3}) {
        base += cells[{"0.20", level}]["auroc"] / 2.0;
        for (const auto& fraction : {"0.40", "0.60", "0.80", "1.00"}) {
            later += cells[{fraction, level}]["auroc"];
            ++later_count;
        }
    }
    later /= double(later_count);
    report("C7 transfer sweep shape", later >= base - 0.02,
           fmt("all 20 cells present; mean ensemble AUROC over fractions >= 0.4 is %.4f vs "
               "%.4f - 0.02 at fraction 0.2",
               later, base));
}

void criterion8_pca() {
    const fs::path csv = repro_run_dir() / "pca.csv";
    std::ifstream in(csv);
    if (!in) {
        report("C8 PCA shift ordering", false, "pca.csv missing");
        return;
    }
    std::string line;
    std::getline(in, line);  // header
    std::map<int, std::vector<std::pair<double, double>>> points;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string pc1, pc2, level;
        std::getline(row, pc1, ',');
        std::getline(row, pc2, ',');
        std::getline(row, level, ',');
        points[std::stoi(level)].push_back({std::stod(pc1), std::stod(pc2)});
    }
    double cx = 0.0, cy = 0.0;
    for (const auto& [x, y] : points[1]) {
        cx += x;
        cy += y;
    }
    cx /= double(points[1].size());
    cy /= double(points[1].size());
    auto mean_dist = [&](int level) {
        double sum = 0.0;
        for (const auto& [x, y] : points[level]) sum += std::hypot(x - cx, y - cy);
        return sum / double(points[level].size());
    };
    const double d2 = mean_dist(2);
    const double d3 = mean_dist(3);
    report("C8 PCA shift ordering", d3 > d2,
           fmt("mean distance from Level-1 centroid: L3 %.4f > L2 %.4f", d3, d2));
}

void criterion9_determinism() {
    const fs::path run_a = repro_run_dir();
    const fs::path run_b = g_dir / "site_b" / "run";
    const int rc = run_cli("repro-synthetic --out run", g_dir / "site_b");
    if (rc != 0) {
        report("C9 determinism", false, fmt("second repro-synthetic exited with %d", rc));
        return;
    }
    auto same_bytes = [](const fs::path& a, const fs::path& b) {
        std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
        if (!fa || !fb) return false;
        const std::string ba{std::istreambuf_iterator<char>(fa), {}};
        const std::string bb{std::istreambuf_iterator<char>(fb), {}};
        return ba == bb;
    };
    bool ok = true;
    std::string mismatch;
    for (const char* name : {"cae.ckpt", "detector.det", "report.csv", "history.csv", "pca.csv",
                             "data/level1.ecgw", "data/level2.ecgw", "data/level3.ecgw"}) {
        if (!same_bytes(run_a / name, run_b / name)) {
            ok = false;
            mismatch += std::string(" ") + name;
        }
    }
    report("C9 determinism", ok,
           ok ? "two repro-synthetic runs produced byte-identical checkpoints, detectors and "
                "reports"
              : "byte mismatch in:" + mismatch);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: acceptance <path-to-ecgnoise-cli>\n");
        return 2;
    }
    g_cli = fs::absolute(argv[1]).string();
    g_dir = fs::current_path() / "acceptance_runs";
    fs::remove_all(g_dir);
    fs::create_directories(g_dir);

    criterion1_caveat();
    criterion2_gradients();
    criterion3_adjointness();
    criterion4_em();
    criterion5_oracles();
    criterion6_pipeline();
    criterion7_transfer();
    criterion8_pca();
    criterion9_determinism();

    if (g_failures) {
        std::printf("acceptance: %d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("acceptance: all criteria passed\n");
    return 0;
}
