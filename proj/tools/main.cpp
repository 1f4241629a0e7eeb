#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ecgnoise/cae.hpp"
#include "ecgnoise/detect.hpp"
#include "ecgnoise/eval.hpp"
#include "ecgnoise/pipeline.hpp"
#include "ecgnoise/signal_io.hpp"
#include "ecgnoise/synth.hpp"

namespace fs = std::filesystem;
using namespace ecgnoise;

namespace {

std::vector<int> parse_cluster_counts(const std::string& text) {
    std::vector<int> ks;
    const auto range_pos = text.find("..");
    if (range_pos != std::string::npos) {
        const int lo = std::stoi(text.substr(0, range_pos));
        const int hi = std::stoi(text.substr(range_pos + 2));
        if (lo < 1 || hi < lo) throw std::runtime_error("bad cluster-count range `" + text + "`");
        for (int k = lo; k <= hi; ++k) ks.push_back(k);
        return ks;
    }
    std::stringstream in(text);
    std::string cell;
    while (std::getline(in, cell, ',')) ks.push_back(std::stoi(cell));
    if (ks.empty()) throw std::runtime_error("empty cluster-count list");
    return ks;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& text) {
    std::vector<std::uint64_t> values;
    std::stringstream in(text);
    std::string cell;
    while (std::getline(in, cell, ',')) values.push_back(std::stoull(cell));
    if (values.empty()) throw std::runtime_error("empty list `" + text + "`");
    return values;
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> values;
    std::stringstream in(text);
    std::string cell;
    while (std::getline(in, cell, ',')) values.push_back(std::stod(cell));
    if (values.empty()) throw std::runtime_error("empty list `" + text + "`");
    return values;
}

SplitSpec parse_split(const std::string& text, std::uint64_t seed) {
    const auto fracs = parse_double_list(text);
    if (fracs.size() != 3) throw std::runtime_error("--split expects three fractions");
    SplitSpec spec{fracs[0], fracs[1], fracs[2], seed};
    validate_split_spec(spec);
    return spec;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open file for writing");
    out << content;
    if (!out) throw std::runtime_error(path + ": write failed");
}

/// Fills in options not given on the command line from a flat key=value
/// file. One file can describe the whole pipeline: keys that do not belong
/// to this subcommand are skipped.
void apply_flat_config(CLI::App& sub, const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open config file");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                     ": expected key=value");
        }
        const std::string key = line.substr(0, eq);
        if (key == "config") continue;
        CLI::Option* opt = sub.get_option_no_throw("--" + key);
        if (opt == nullptr || opt->count() > 0) continue;  // flags override the file
        opt->add_result(line.substr(eq + 1));
        opt->run_callback();
    }
}

/// Effective key=value lines of a parsed subcommand, echoed into report
/// headers for provenance.
std::vector<std::string> effective_config_lines(const CLI::App& sub) {
    std::vector<std::string> lines{"command=" + sub.get_name()};
    std::istringstream in(sub.config_to_str(true, false));
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

struct GenOptions {
    std::string config;
    std::uint64_t seed = 1;
    std::string out_dir;
    std::string profile = "default";
    std::size_t n1 = 2000, n2 = 400, n3 = 400;
    std::uint32_t window_len = 512;
    double sample_rate = 256.0;
};

BenchmarkSpec benchmark_spec_for(const GenOptions& opts) {
    BenchmarkSpec spec = opts.profile == "shifted" ? shifted_benchmark_spec() : BenchmarkSpec{};
    spec.level1_count = opts.n1;
    spec.level2_count = opts.n2;
    spec.level3_count = opts.n3;
    spec.window_len = opts.window_len;
    spec.sample_rate = opts.sample_rate;
    return spec;
}

void run_gen(const GenOptions& opts) {
    const auto [level1, level2, level3] = make_benchmark(opts.seed, benchmark_spec_for(opts));
    fs::create_directories(opts.out_dir);
    const std::string base = opts.out_dir + "/";
    save_dataset(level1, base + "level1.ecgw", DatasetFormat::Binary);
    save_dataset(level2, base + "level2.ecgw", DatasetFormat::Binary);
    save_dataset(level3, base + "level3.ecgw", DatasetFormat::Binary);
    std::cout << "wrote " << base << "level1.ecgw (" << level1.size() << " windows), level2.ecgw ("
              << level2.size() << "), level3.ecgw (" << level3.size() << ")\n";
}

struct TrainOptions {
    std::string config;
    std::string level1_path;
    std::string checkpoint_path;
    std::string history_path;
    std::string split = "0.8,0.1,0.1";
    int epochs = 100;
    int batch_size = 64;
    double lr = 1e-4;
    double weight_decay = 0.01;
    std::uint64_t seed = 1;
};

void write_history_csv(const std::string& path, const TrainHistory& history) {
    std::ostringstream out;
    out << "epoch,train_loss,val_loss\n";
    char buf[80];
    for (std::size_t e = 0; e < history.train_loss.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", e + 1, history.train_loss[e],
                      history.val_loss[e]);
        out << buf;
    }
    write_text_file(path, out.str());
}

CaeModel run_train(const TrainOptions& opts) {
    const Dataset level1 = load_dataset(opts.level1_path, DatasetFormat::Binary);
    const SplitSpec split = parse_split(opts.split, opts.seed);
    const auto [train_set, val_set, test_set] = split_dataset(level1, split);

    CaeConfig config;
    config.window_len = static_cast<int>(level1.window_len);
    config.epochs = opts.epochs;
    config.batch_size = opts.batch_size;
    config.lr = opts.lr;
    config.weight_decay = opts.weight_decay;
    config.seed = opts.seed;

    const CaeModel initial = build_cae(config);
    auto [model, history] = train_cae(initial, train_set, val_set, config);
    save_checkpoint(model, opts.checkpoint_path);
    if (!opts.history_path.empty()) write_history_csv(opts.history_path, history);
    std::cout << "wrote " << opts.checkpoint_path << " (" << history.train_loss.size()
              << " epochs)\n";
    return model;
}

struct FitOptions {
    std::string config;
    std::string checkpoint_path;
    std::string level1_path;
    std::string detector_path;
    std::string split = "0.8,0.1,0.1";
    std::string ks = "1..10";
    std::string stats = "hard";
    double reg_eps = 1e-6;
    std::uint64_t seed = 1;
};

void run_fit(const FitOptions& opts) {
    const CaeModel model = load_checkpoint(opts.checkpoint_path);
    const Dataset level1 = load_dataset(opts.level1_path, DatasetFormat::Binary);
    const SplitSpec split = parse_split(opts.split, opts.seed);
    const auto [train_set, val_set, test_set] = split_dataset(level1, split);
    const FeatureMatrix features = encode_dataset(model, train_set);
    const std::vector<int> ks = parse_cluster_counts(opts.ks);
    const ClusterStats stats =
        opts.stats == "gmm" ? ClusterStats::Gmm : ClusterStats::HardAssign;
    const EnsembleDetector ensemble = fit_ensemble(features, ks, opts.seed, opts.reg_eps, stats);
    save_detector(ensemble, opts.detector_path);
    std::cout << "wrote " << opts.detector_path << " (" << ensemble.members.size()
              << " members)\n";
}

struct ScoreOptions {
    std::string config;
    std::string checkpoint_path;
    std::string detector_path;
    std::string data_path;
    std::string method = "mahalanobis";
    std::string out_path;
};

void run_score(const ScoreOptions& opts) {
    const CaeModel model = load_checkpoint(opts.checkpoint_path);
    const Dataset dataset = load_dataset(opts.data_path, DatasetFormat::Binary);
    std::vector<double> scores;
    if (opts.method == "recon") {
        scores = recon_scores(model, dataset);
    } else {
        if (opts.detector_path.empty()) {
            throw std::runtime_error("method `mahalanobis` needs --detector");
        }
        const EnsembleDetector ensemble = load_detector(opts.detector_path);
        scores = ensemble_scores(ensemble, encode_dataset(model, dataset));
    }
    std::ostringstream out;
    out << "index,label,score,noisiness\n";
    char buf[96];
    for (std::size_t i = 0; i < scores.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%d,%.9g,%.9g\n", i, int(dataset.windows[i].label),
                      scores[i], -scores[i]);
        out << buf;
    }
    write_text_file(opts.out_path, out.str());
    std::cout << "wrote " << opts.out_path << " (" << scores.size() << " rows)\n";
}

struct EvalOptions {
    std::string config;
    std::string checkpoint_path;
    std::string detector_path;
    std::string level1_path;
    std::string level2_path;
    std::string level3_path;
    std::string split = "0.8,0.1,0.1";
    std::string seeds = "1,2,3,4,5";
    std::string report_path;
    std::string csv_path;
    std::uint64_t seed = 1;
};

EvalReport run_eval(const EvalOptions& opts, const std::vector<std::string>& header) {
    const CaeModel model = load_checkpoint(opts.checkpoint_path);
    const EnsembleDetector ensemble = load_detector(opts.detector_path);
    const Dataset level1 = load_dataset(opts.level1_path, DatasetFormat::Binary);
    const Dataset level2 = load_dataset(opts.level2_path, DatasetFormat::Binary);
    const Dataset level3 = load_dataset(opts.level3_path, DatasetFormat::Binary);
    const SplitSpec split = parse_split(opts.split, opts.seed);
    const auto [train_set, val_set, test_set] = split_dataset(level1, split);
    const auto seeds = parse_u64_list(opts.seeds);

    EvalReport report = evaluate_pipeline(model, ensemble, test_set, level2, level3, seeds);
    report.header = header;
    if (!opts.report_path.empty()) write_text_file(opts.report_path, format_report(report));
    if (!opts.csv_path.empty()) write_text_file(opts.csv_path, report_to_csv(report));
    std::cout << format_report(report);
    return report;
}

struct FinetuneOptions {
    std::string config;
    std::string checkpoint_path;
    std::string level1_path;
    std::string level2_path;
    std::string level3_path;
    std::string fractions = "0.2,0.4,0.6,0.8,1.0";
    std::string ks = "1..10";
    std::string seeds = "1,2,3,4,5";
    std::string split = "0.8,0.1,0.1";
    std::string out_dir;
    int epochs = 10;
    int batch_size = 64;
    double lr = 1e-4;
    double weight_decay = 0.01;
    double reg_eps = 1e-6;
    std::uint64_t seed = 1;
};

void run_finetune(const FinetuneOptions& opts, const std::vector<std::string>& header) {
    const CaeModel pretrained = load_checkpoint(opts.checkpoint_path);
    const Dataset level1 = load_dataset(opts.level1_path, DatasetFormat::Binary);
    const Dataset level2 = load_dataset(opts.level2_path, DatasetFormat::Binary);
    const Dataset level3 = load_dataset(opts.level3_path, DatasetFormat::Binary);
    const SplitSpec split = parse_split(opts.split, opts.seed);
    const auto [train_set, val_set, test_set] = split_dataset(level1, split);
    const auto fractions = parse_double_list(opts.fractions);
    const auto seeds = parse_u64_list(opts.seeds);
    const auto ks = parse_cluster_counts(opts.ks);
    fs::create_directories(opts.out_dir);

    CaeConfig config = pretrained.config;
    config.epochs = opts.epochs;
    config.batch_size = opts.batch_size;
    config.lr = opts.lr;
    config.weight_decay = opts.weight_decay;
    config.seed = opts.seed;

    std::ostringstream csv;
    for (const auto& line : header) csv << "# " << line << "\n";
    csv << "fraction,level,metric,mean,std\n";
    char buf[96];
    for (double fraction : fractions) {
        auto [tuned, history] = finetune_cae(pretrained, train_set, val_set, fraction, config);
        const int pct = int(std::lround(fraction * 100.0));
        save_checkpoint(tuned, opts.out_dir + "/finetune_" + std::to_string(pct) + ".ckpt");

        // Stage 2 refits on the same clean subset the finetuning saw.
        const Dataset subset = finetune_subset(train_set, fraction, config.seed);
        const FeatureMatrix features = encode_dataset(tuned, subset);
        const EnsembleDetector ensemble = fit_ensemble(features, ks, opts.seed, opts.reg_eps);

        const FeatureMatrix clean_features = encode_dataset(tuned, test_set);
        for (const auto& [level, dataset] :
             {std::pair<int, const Dataset*>{2, &level2}, {3, &level3}}) {
            const EvalCell cell =
                evaluate_scores(ensemble_scores(ensemble, clean_features),
                                ensemble_scores(ensemble, encode_dataset(tuned, *dataset)), seeds);
            std::snprintf(buf, sizeof(buf), "%.2f,%d,auroc,%.6f,%.6f\n", fraction, level,
                          cell.auroc.mean, cell.auroc.stddev);
            csv << buf;
            std::snprintf(buf, sizeof(buf), "%.2f,%d,auprc,%.6f,%.6f\n", fraction, level,
                          cell.auprc.mean, cell.auprc.stddev);
            csv << buf;
        }
        std::cout << "finetune fraction " << fraction << " done\n";
    }
    write_text_file(opts.out_dir + "/sweep.csv", csv.str());
    std::cout << "wrote " << opts.out_dir << "/sweep.csv\n";
}

struct PcaOptions {
    std::string config;
    std::string checkpoint_path;
    std::string level1_path;
    std::string level2_path;
    std::string level3_path;
    std::string out_path;
};

void run_pca(const PcaOptions& opts) {
    const CaeModel model = load_checkpoint(opts.checkpoint_path);
    const Dataset level1 = load_dataset(opts.level1_path, DatasetFormat::Binary);
    const FeatureMatrix level1_features = encode_dataset(model, level1);
    const PcaModel pca = pca_fit(level1_features);

    std::ostringstream out;
    out << "pc1,pc2,level\n";
    char buf[96];
    auto emit = [&](const FeatureMatrix& features, int level) {
        const FeatureMatrix projected = pca_project(pca, features);
        for (std::size_t i = 0; i < projected.rows; ++i) {
            std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%d\n", projected.row(i)[0],
                          projected.row(i)[1], level);
            out << buf;
        }
    };
    emit(level1_features, 1);
    if (!opts.level2_path.empty()) {
        emit(encode_dataset(model, load_dataset(opts.level2_path, DatasetFormat::Binary)), 2);
    }
    if (!opts.level3_path.empty()) {
        emit(encode_dataset(model, load_dataset(opts.level3_path, DatasetFormat::Binary)), 3);
    }
    write_text_file(opts.out_path, out.str());
    std::cout << "wrote " << opts.out_path << "\n";
}

struct ReproOptions {
    std::string config;
    std::string out_dir;
    std::uint64_t seed = 1;
    int epochs = 15;
    int batch_size = 64;
    double lr = 1e-4;
    double weight_decay = 0.01;
    std::string ks = "1..10";
    std::string seeds = "1,2,3,4,5";
};

int run_repro(const ReproOptions& opts, const std::vector<std::string>& header) {
    fs::create_directories(opts.out_dir + "/data");

    GenOptions gen;
    gen.seed = opts.seed;
    gen.out_dir = opts.out_dir + "/data";
    run_gen(gen);

    TrainOptions train;
    train.level1_path = opts.out_dir + "/data/level1.ecgw";
    train.checkpoint_path = opts.out_dir + "/cae.ckpt";
    train.history_path = opts.out_dir + "/history.csv";
    train.epochs = opts.epochs;
    train.batch_size = opts.batch_size;
    train.lr = opts.lr;
    train.weight_decay = opts.weight_decay;
    train.seed = opts.seed;
    run_train(train);

    FitOptions fit;
    fit.checkpoint_path = train.checkpoint_path;
    fit.level1_path = train.level1_path;
    fit.detector_path = opts.out_dir + "/detector.det";
    fit.ks = opts.ks;
    fit.seed = opts.seed;
    run_fit(fit);

    EvalOptions eval;
    eval.checkpoint_path = train.checkpoint_path;
    eval.detector_path = fit.detector_path;
    eval.level1_path = train.level1_path;
    eval.level2_path = opts.out_dir + "/data/level2.ecgw";
    eval.level3_path = opts.out_dir + "/data/level3.ecgw";
    eval.seeds = opts.seeds;
    eval.report_path = opts.out_dir + "/report.txt";
    eval.csv_path = opts.out_dir + "/report.csv";
    eval.seed = opts.seed;
    const EvalReport report = run_eval(eval, header);

    PcaOptions pca;
    pca.checkpoint_path = train.checkpoint_path;
    pca.level1_path = train.level1_path;
    pca.level2_path = eval.level2_path;
    pca.level3_path = eval.level3_path;
    pca.out_path = opts.out_dir + "/pca.csv";
    run_pca(pca);

    auto cell_mean = [&](const std::string& method, int level) {
        for (const auto& cell : report.cells) {
            if (cell.method == method && cell.level == level) return cell.auroc.mean;
        }
        throw std::runtime_error("report is missing cell " + method + "/" + std::to_string(level));
    };
    const double ens2 = cell_mean("ensemble", 2);
    const double ens3 = cell_mean("ensemble", 3);
    const double recon2 = cell_mean("recon", 2);

    struct Check {
        const char* name;
        bool ok;
        std::string detail;
    };
    char detail[128];
    std::vector<Check> checks;
    std::snprintf(detail, sizeof(detail), "%.4f vs %.4f", ens3, ens2);
    checks.push_back({"ensemble AUROC(L3) >= AUROC(L2)", ens3 >= ens2, detail});
    std::snprintf(detail, sizeof(detail), "%.4f", ens3);
    checks.push_back({"ensemble AUROC(L3) >= 0.90", ens3 >= 0.90, detail});
    std::snprintf(detail, sizeof(detail), "%.4f", ens2);
    checks.push_back({"ensemble AUROC(L2) >= 0.70", ens2 >= 0.70, detail});
    std::snprintf(detail, sizeof(detail), "%.4f vs %.4f - 0.02", ens2, recon2);
    checks.push_back({"ensemble >= recon baseline - 0.02 on L2", ens2 >= recon2 - 0.02, detail});

    int failures = 0;
    for (const auto& check : checks) {
        std::cout << (check.ok ? "[PASS] " : "[FAIL] ") << check.name << " (" << check.detail
                  << ")\n";
        failures += check.ok ? 0 : 1;
    }
    if (failures) {
        std::cerr << "error: repro-synthetic failed " << failures << " threshold check(s)\n";
        return 1;
    }
    std::cout << "repro-synthetic: all checks passed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Noisy-ECG detection: convolutional autoencoder + latent Mahalanobis scoring"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default(true);
    int exit_code = 0;

    GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate synthetic Level 1/2/3 corpora");
    gen_cmd->add_option("--config", gen.config, "Flat key=value defaults (flags override)");
    gen_cmd->add_option("--seed", gen.seed, "Corpus seed");
    gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();
    gen_cmd->add_option("--profile", gen.profile, "Morphology profile")
        ->check(CLI::IsMember({"default", "shifted"}));
    gen_cmd->add_option("--n1", gen.n1, "Level 1 window count");
    gen_cmd->add_option("--n2", gen.n2, "Level 2 window count");
    gen_cmd->add_option("--n3", gen.n3, "Level 3 window count");
    gen_cmd->add_option("--window-len", gen.window_len, "Samples per window");
    gen_cmd->add_option("--sample-rate", gen.sample_rate, "Sample rate in Hz");
    gen_cmd->callback([&] {
        apply_flat_config(*gen_cmd, gen.config);
        run_gen(gen);
    });

    TrainOptions train;
    auto* train_cmd = app.add_subcommand("train", "Train the autoencoder on Level 1 data");
    train_cmd->add_option("--config", train.config, "Flat key=value defaults (flags override)");
    train_cmd->add_option("--level1", train.level1_path, "Level 1 ECGW file")->required();
    train_cmd->add_option("--out", train.checkpoint_path, "Checkpoint output path")->required();
    train_cmd->add_option("--history", train.history_path, "Per-epoch loss CSV path");
    train_cmd->add_option("--split", train.split, "train,val,test fractions");
    train_cmd->add_option("--epochs", train.epochs, "Training epochs");
    train_cmd->add_option("--batch", train.batch_size, "Batch size");
    train_cmd->add_option("--lr", train.lr, "Learning rate");
    train_cmd->add_option("--weight-decay", train.weight_decay, "AdamW weight decay");
    train_cmd->add_option("--seed", train.seed, "Init/shuffle/split seed");
    train_cmd->callback([&] {
        apply_flat_config(*train_cmd, train.config);
        run_train(train);
    });

    FitOptions fit;
    auto* fit_cmd = app.add_subcommand("fit", "Fit the cluster-ensemble detector");
    fit_cmd->add_option("--config", fit.config, "Flat key=value defaults (flags override)");
    fit_cmd->add_option("--checkpoint", fit.checkpoint_path, "CAE checkpoint")->required();
    fit_cmd->add_option("--level1", fit.level1_path, "Level 1 ECGW file")->required();
    fit_cmd->add_option("--out", fit.detector_path, "Detector output path")->required();
    fit_cmd->add_option("--split", fit.split, "train,val,test fractions");
    fit_cmd->add_option("--ks", fit.ks, "Cluster counts (e.g. 1..10 or 2,4,8)");
    fit_cmd->add_option("--stats", fit.stats, "Per-cluster statistics source")
        ->check(CLI::IsMember({"hard", "gmm"}));
    fit_cmd->add_option("--reg-eps", fit.reg_eps, "Covariance regularization");
    fit_cmd->add_option("--seed", fit.seed, "GMM/split seed");
    fit_cmd->callback([&] {
        apply_flat_config(*fit_cmd, fit.config);
        run_fit(fit);
    });

    ScoreOptions score;
    auto* score_cmd = app.add_subcommand("score", "Score a dataset window by window");
    score_cmd->add_option("--config", score.config, "Flat key=value defaults (flags override)");
    score_cmd->add_option("--checkpoint", score.checkpoint_path, "CAE checkpoint")->required();
    score_cmd->add_option("--detector", score.detector_path, "Detector file");
    score_cmd->add_option("--data", score.data_path, "ECGW file to score")->required();
    score_cmd->add_option("--method", score.method, "mahalanobis or recon")
        ->check(CLI::IsMember({"mahalanobis", "recon"}));
    score_cmd->add_option("--out", score.out_path, "Scores CSV path")->required();
    score_cmd->callback([&] {
        apply_flat_config(*score_cmd, score.config);
        run_score(score);
    });

    EvalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate detection on Level 2/3 corpora");
    eval_cmd->add_option("--config", eval.config, "Flat key=value defaults (flags override)");
    eval_cmd->add_option("--checkpoint", eval.checkpoint_path, "CAE checkpoint")->required();
    eval_cmd->add_option("--detector", eval.detector_path, "Detector file")->required();
    eval_cmd->add_option("--level1", eval.level1_path, "Level 1 ECGW file")->required();
    eval_cmd->add_option("--level2", eval.level2_path, "Level 2 ECGW file")->required();
    eval_cmd->add_option("--level3", eval.level3_path, "Level 3 ECGW file")->required();
    eval_cmd->add_option("--split", eval.split, "train,val,test fractions");
    eval_cmd->add_option("--seeds", eval.seeds, "Evaluation seeds (comma list)");
    eval_cmd->add_option("--out-report", eval.report_path, "Report text path");
    eval_cmd->add_option("--out-csv", eval.csv_path, "Report CSV path");
    eval_cmd->add_option("--seed", eval.seed, "Split seed");
    eval_cmd->callback([&] {
        apply_flat_config(*eval_cmd, eval.config);
        run_eval(eval, effective_config_lines(*eval_cmd));
    });

    FinetuneOptions finetune;
    auto* finetune_cmd = app.add_subcommand("finetune", "Finetune on fractions of a new corpus");
    finetune_cmd->add_option("--config", finetune.config, "Flat key=value defaults (flags override)");
    finetune_cmd->add_option("--checkpoint", finetune.checkpoint_path, "Pretrained checkpoint")
        ->required();
    finetune_cmd->add_option("--level1", finetune.level1_path, "New Level 1 ECGW file")->required();
    finetune_cmd->add_option("--level2", finetune.level2_path, "New Level 2 ECGW file")->required();
    finetune_cmd->add_option("--level3", finetune.level3_path, "New Level 3 ECGW file")->required();
    finetune_cmd->add_option("--out", finetune.out_dir, "Output directory")->required();
    finetune_cmd->add_option("--fractions", finetune.fractions, "Finetuning fractions");
    finetune_cmd->add_option("--ks", finetune.ks, "Cluster counts");
    finetune_cmd->add_option("--seeds", finetune.seeds, "Evaluation seeds");
    finetune_cmd->add_option("--split", finetune.split, "train,val,test fractions");
    finetune_cmd->add_option("--epochs", finetune.epochs, "Finetuning epochs");
    finetune_cmd->add_option("--batch", finetune.batch_size, "Batch size");
    finetune_cmd->add_option("--lr", finetune.lr, "Learning rate");
    finetune_cmd->add_option("--weight-decay", finetune.weight_decay, "AdamW weight decay");
    finetune_cmd->add_option("--reg-eps", finetune.reg_eps, "Covariance regularization");
    finetune_cmd->add_option("--seed", finetune.seed, "Shuffle/GMM/split seed");
    finetune_cmd->callback([&] {
        apply_flat_config(*finetune_cmd, finetune.config);
        run_finetune(finetune, effective_config_lines(*finetune_cmd));
    });

    PcaOptions pca;
    auto* pca_cmd = app.add_subcommand("pca", "Project latent features onto Level 1 PCA axes");
    pca_cmd->add_option("--config", pca.config, "Flat key=value defaults (flags override)");
    pca_cmd->add_option("--checkpoint", pca.checkpoint_path, "CAE checkpoint")->required();
    pca_cmd->add_option("--level1", pca.level1_path, "Level 1 ECGW file")->required();
    pca_cmd->add_option("--level2", pca.level2_path, "Level 2 ECGW file");
    pca_cmd->add_option("--level3", pca.level3_path, "Level 3 ECGW file");
    pca_cmd->add_option("--out", pca.out_path, "Projection CSV path")->required();
    pca_cmd->callback([&] {
        apply_flat_config(*pca_cmd, pca.config);
        run_pca(pca);
    });

    ReproOptions repro;
    auto* repro_cmd =
        app.add_subcommand("repro-synthetic", "gen -> train -> fit -> eval -> pca, with checks");
    repro_cmd->add_option("--config", repro.config, "Flat key=value defaults (flags override)");
    repro_cmd->add_option("--out", repro.out_dir, "Run directory")->required();
    repro_cmd->add_option("--seed", repro.seed, "Pipeline seed");
    repro_cmd->add_option("--epochs", repro.epochs, "Training epochs");
    repro_cmd->add_option("--batch", repro.batch_size, "Batch size");
    repro_cmd->add_option("--lr", repro.lr, "Learning rate");
    repro_cmd->add_option("--weight-decay", repro.weight_decay, "AdamW weight decay");
    repro_cmd->add_option("--ks", repro.ks, "Cluster counts");
    repro_cmd->add_option("--seeds", repro.seeds, "Evaluation seeds");
    repro_cmd->callback([&] {
        apply_flat_config(*repro_cmd, repro.config);
        exit_code = run_repro(repro, effective_config_lines(*repro_cmd));
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return exit_code;
}
