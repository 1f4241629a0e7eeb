#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "ecgnoise/cae.hpp"
#include "ecgnoise/detect.hpp"
#include "ecgnoise/eval.hpp"
#include "ecgnoise/pipeline.hpp"
#include "ecgnoise/signal_io.hpp"
#include "ecgnoise/synth.hpp"

namespace py = pybind11;
using namespace ecgnoise;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Dataset dataset_from_numpy(const DoubleArray& samples, const IntArray& labels,
                           double sample_rate) {
    if (samples.ndim() != 2) throw std::invalid_argument("samples must be a 2-D array");
    if (labels.ndim() != 1 || labels.shape(0) != samples.shape(0)) {
        throw std::invalid_argument("labels must be 1-D with one entry per window");
    }
    Dataset dataset;
    dataset.window_len = static_cast<std::uint32_t>(samples.shape(1));
    dataset.sample_rate = sample_rate;
    const auto view = samples.unchecked<2>();
    const auto label_view = labels.unchecked<1>();
    dataset.windows.resize(samples.shape(0));
    for (py::ssize_t i = 0; i < samples.shape(0); ++i) {
        SignalWindow& window = dataset.windows[i];
        window.sample_rate = sample_rate;
        const int label = label_view(i);
        if (label < 0 || label > 3) throw std::invalid_argument("labels must lie in 0..3");
        window.label = static_cast<NoiseLabel>(label);
        window.samples.resize(samples.shape(1));
        for (py::ssize_t j = 0; j < samples.shape(1); ++j) {
            window.samples[j] = static_cast<float>(view(i, j));
        }
    }
    validate_dataset(dataset);
    return dataset;
}

py::tuple dataset_to_numpy(const Dataset& dataset) {
    py::array_t<double> samples({py::ssize_t(dataset.windows.size()),
                                 py::ssize_t(dataset.window_len)});
    py::array_t<int> labels(py::ssize_t(dataset.windows.size()));
    auto sample_view = samples.mutable_unchecked<2>();
    auto label_view = labels.mutable_unchecked<1>();
    for (std::size_t i = 0; i < dataset.windows.size(); ++i) {
        label_view(py::ssize_t(i)) = int(dataset.windows[i].label);
        for (std::size_t j = 0; j < dataset.window_len; ++j) {
            sample_view(py::ssize_t(i), py::ssize_t(j)) = dataset.windows[i].samples[j];
        }
    }
    return py::make_tuple(samples, labels, dataset.sample_rate);
}

FeatureMatrix features_from_numpy(const DoubleArray& array) {
    if (array.ndim() != 2) throw std::invalid_argument("features must be a 2-D array");
    FeatureMatrix features(array.shape(0), array.shape(1));
    std::memcpy(features.data.data(), array.data(), sizeof(double) * features.data.size());
    return features;
}

py::array_t<double> features_to_numpy(const FeatureMatrix& features) {
    py::array_t<double> out({py::ssize_t(features.rows), py::ssize_t(features.cols)});
    std::memcpy(out.mutable_data(), features.data.data(), sizeof(double) * features.data.size());
    return out;
}

std::vector<ScoredSample> samples_from_numpy(const DoubleArray& noisiness,
                                             const IntArray& is_noisy) {
    if (noisiness.ndim() != 1 || is_noisy.ndim() != 1 ||
        noisiness.shape(0) != is_noisy.shape(0)) {
        throw std::invalid_argument("noisiness and is_noisy must be 1-D arrays of equal length");
    }
    std::vector<ScoredSample> samples(noisiness.shape(0));
    const auto value_view = noisiness.unchecked<1>();
    const auto label_view = is_noisy.unchecked<1>();
    for (py::ssize_t i = 0; i < noisiness.shape(0); ++i) {
        samples[i] = {value_view(i), label_view(i) != 0};
    }
    return samples;
}

CaeConfig config_from_kwargs(int window_len, int epochs, int batch_size, double lr,
                             double weight_decay, std::uint64_t seed) {
    CaeConfig config;
    config.window_len = window_len;
    config.epochs = epochs;
    config.batch_size = batch_size;
    config.lr = lr;
    config.weight_decay = weight_decay;
    config.seed = seed;
    return config;
}

}  // namespace

PYBIND11_MODULE(_ecgnoise, m) {
    m.doc() = "Noisy-ECG detection: convolutional autoencoder + latent Mahalanobis scoring";

    py::class_<CaeModel>(m, "CaeModel")
        .def_property_readonly("window_len",
                               [](const CaeModel& model) { return model.config.window_len; })
        .def_property_readonly("latent_dim", &CaeModel::latent_dim);

    py::class_<EnsembleDetector>(m, "EnsembleDetector")
        .def_property_readonly("member_count", [](const EnsembleDetector& ensemble) {
            return ensemble.members.size();
        });

    py::class_<PcaModel>(m, "PcaModel")
        .def_property_readonly("mean",
                               [](const PcaModel& model) {
                                   return py::array_t<double>(py::ssize_t(model.mean.size()),
                                                              model.mean.data());
                               })
        .def_property_readonly("explained_variance", [](const PcaModel& model) {
            return py::array_t<double>(py::ssize_t(model.explained_variance.size()),
                                       model.explained_variance.data());
        });

    // dataset I/O
    m.def(
        "load_dataset",
        [](const std::string& path, const std::string& format) {
            return dataset_to_numpy(load_dataset(
                path, format == "csv" ? DatasetFormat::Csv : DatasetFormat::Binary));
        },
        py::arg("path"), py::arg("format") = "binary",
        "Load an ECGW/CSV dataset as (samples[n, W], labels[n], sample_rate)");
    m.def(
        "save_dataset",
        [](const DoubleArray& samples, const IntArray& labels, double sample_rate,
           const std::string& path, const std::string& format) {
            save_dataset(dataset_from_numpy(samples, labels, sample_rate), path,
                         format == "csv" ? DatasetFormat::Csv : DatasetFormat::Binary);
        },
        py::arg("samples"), py::arg("labels"), py::arg("sample_rate"), py::arg("path"),
        py::arg("format") = "binary");

    // windowing and normalization
    m.def(
        "window_signal",
        [](const DoubleArray& signal, std::size_t window_len, std::size_t hop) {
            const auto windows = window_signal(
                std::span<const double>(signal.data(), std::size_t(signal.shape(0))), window_len,
                hop);
            py::array_t<double> out({py::ssize_t(windows.size()), py::ssize_t(window_len)});
            auto view = out.mutable_unchecked<2>();
            for (std::size_t w = 0; w < windows.size(); ++w) {
                for (std::size_t i = 0; i < window_len; ++i) {
                    view(py::ssize_t(w), py::ssize_t(i)) = windows[w][i];
                }
            }
            return out;
        },
        py::arg("signal"), py::arg("window_len"), py::arg("hop"));
    m.def(
        "normalize_window",
        [](const DoubleArray& samples) {
            const auto z = normalize_window(
                std::span<const double>(samples.data(), std::size_t(samples.shape(0))));
            return py::array_t<double>(py::ssize_t(z.size()), z.data());
        },
        py::arg("samples"));

    // synthetic benchmark
    m.def(
        "make_benchmark",
        [](std::uint64_t seed, std::size_t n1, std::size_t n2, std::size_t n3,
           std::uint32_t window_len, double sample_rate, bool shifted) {
            BenchmarkSpec spec = shifted ? shifted_benchmark_spec() : BenchmarkSpec{};
            spec.level1_count = n1;
            spec.level2_count = n2;
            spec.level3_count = n3;
            spec.window_len = window_len;
            spec.sample_rate = sample_rate;
            const auto [l1, l2, l3] = make_benchmark(seed, spec);
            return py::make_tuple(dataset_to_numpy(l1), dataset_to_numpy(l2),
                                  dataset_to_numpy(l3));
        },
        py::arg("seed") = 1, py::arg("n1") = 2000, py::arg("n2") = 400, py::arg("n3") = 400,
        py::arg("window_len") = 512, py::arg("sample_rate") = 256.0, py::arg("shifted") = false);

    // autoencoder lifecycle
    m.def(
        "train_cae",
        [](const DoubleArray& train, const DoubleArray& val, double sample_rate, int epochs,
           int batch_size, double lr, double weight_decay, std::uint64_t seed) {
            std::vector<int> ones(train.shape(0), 1);
            Dataset train_set = dataset_from_numpy(
                train, IntArray(py::ssize_t(ones.size()), ones.data()), sample_rate);
            Dataset val_set;
            if (val.shape(0) > 0) {
                std::vector<int> val_ones(val.shape(0), 1);
                val_set = dataset_from_numpy(
                    val, IntArray(py::ssize_t(val_ones.size()), val_ones.data()), sample_rate);
            }
            const CaeConfig config = config_from_kwargs(int(train.shape(1)), epochs, batch_size,
                                                        lr, weight_decay, seed);
            auto [model, history] = train_cae(build_cae(config), train_set, val_set, config);
            return py::make_tuple(model, history.train_loss, history.val_loss);
        },
        py::arg("train"), py::arg("val"), py::arg("sample_rate") = 256.0, py::arg("epochs") = 10,
        py::arg("batch_size") = 64, py::arg("lr") = 1e-4, py::arg("weight_decay") = 0.01,
        py::arg("seed") = 1, "Build and train a CAE; returns (model, train_loss, val_loss)");
    m.def("save_checkpoint", &save_checkpoint, py::arg("model"), py::arg("path"));
    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

    m.def(
        "encode",
        [](const CaeModel& model, const DoubleArray& samples, double sample_rate) {
            std::vector<int> labels(samples.shape(0), 0);
            const Dataset dataset = dataset_from_numpy(
                samples, IntArray(py::ssize_t(labels.size()), labels.data()), sample_rate);
            return features_to_numpy(encode_dataset(model, dataset));
        },
        py::arg("model"), py::arg("samples"), py::arg("sample_rate") = 256.0,
        "Latent features (n x latent_dim) of the given windows");
    m.def(
        "recon_scores",
        [](const CaeModel& model, const DoubleArray& samples, double sample_rate) {
            std::vector<int> labels(samples.shape(0), 0);
            const Dataset dataset = dataset_from_numpy(
                samples, IntArray(py::ssize_t(labels.size()), labels.data()), sample_rate);
            const auto scores = recon_scores(model, dataset);
            return py::array_t<double>(py::ssize_t(scores.size()), scores.data());
        },
        py::arg("model"), py::arg("samples"), py::arg("sample_rate") = 256.0,
        "Negated reconstruction MSE per window (higher = cleaner)");

    // stage 2: detector
    m.def(
        "fit_ensemble",
        [](const DoubleArray& features, const std::vector<int>& ks, std::uint64_t seed,
           double reg_eps, const std::string& stats) {
            const std::vector<int> counts = ks.empty() ? default_cluster_counts() : ks;
            return fit_ensemble(features_from_numpy(features), counts, seed, reg_eps,
                                stats == "gmm" ? ClusterStats::Gmm : ClusterStats::HardAssign);
        },
        py::arg("features"), py::arg("ks") = std::vector<int>{}, py::arg("seed") = 1,
        py::arg("reg_eps") = 1e-6, py::arg("stats") = "hard",
        "Fit GMM + Mahalanobis detectors for every cluster count (default 1..10)");
    m.def(
        "ensemble_scores",
        [](const EnsembleDetector& ensemble, const DoubleArray& features, bool standardize) {
            const FeatureMatrix matrix = features_from_numpy(features);
            std::vector<double> scores(matrix.rows);
            for (std::size_t i = 0; i < matrix.rows; ++i) {
                scores[i] = ensemble_score(ensemble, matrix.row(i), standardize);
            }
            return py::array_t<double>(py::ssize_t(scores.size()), scores.data());
        },
        py::arg("ensemble"), py::arg("features"), py::arg("standardize") = false,
        "Averaged Mahalanobis noise scores (raw scores always <= 0; higher = cleaner)");
    m.def("save_detector", &save_detector, py::arg("ensemble"), py::arg("path"));
    m.def("load_detector", &load_detector, py::arg("path"));

    // metrics and PCA
    m.def(
        "auroc",
        [](const DoubleArray& noisiness, const IntArray& is_noisy) {
            return auroc(samples_from_numpy(noisiness, is_noisy));
        },
        py::arg("noisiness"), py::arg("is_noisy"));
    m.def(
        "auprc",
        [](const DoubleArray& noisiness, const IntArray& is_noisy) {
            return auprc(samples_from_numpy(noisiness, is_noisy));
        },
        py::arg("noisiness"), py::arg("is_noisy"));
    m.def(
        "pca_fit",
        [](const DoubleArray& features) { return pca_fit(features_from_numpy(features)); },
        py::arg("features"));
    m.def(
        "pca_project",
        [](const PcaModel& model, const DoubleArray& features) {
            return features_to_numpy(pca_project(model, features_from_numpy(features)));
        },
        py::arg("model"), py::arg("features"));
}
