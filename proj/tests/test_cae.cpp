#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "ecgnoise/cae.hpp"

using namespace ecgnoise;
namespace fs = std::filesystem;

namespace {

/// Small architecture that keeps unit tests fast.
CaeConfig tiny_config(int window_len = 64, std::uint64_t seed = 9) {
    CaeConfig config;
    config.window_len = window_len;
    config.encoder = {{{4, 5, 2}, {6, 5, 2}}};
    config.latent_channels = 6;
    config.epochs = 5;
    config.batch_size = 8;
    config.lr = 1e-2;
    config.seed = seed;
    return config;
}

Dataset repeated_window_dataset(int window_len, int copies, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    SignalWindow window;
    window.sample_rate = 100.0;
    window.label = NoiseLabel::Level1;
    window.samples.resize(window_len);
    for (float& v : window.samples) v = float(dist(rng));

    Dataset d;
    d.window_len = window_len;
    d.sample_rate = 100.0;
    d.windows.assign(copies, window);
    return d;
}

Dataset random_dataset(int window_len, int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Dataset d;
    d.window_len = window_len;
    d.sample_rate = 100.0;
    for (int i = 0; i < count; ++i) {
        SignalWindow w;
        w.sample_rate = 100.0;
        w.label = NoiseLabel::Level1;
        w.samples.resize(window_len);
        for (float& v : w.samples) v = float(dist(rng));
        d.windows.push_back(std::move(w));
    }
    return d;
}

std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / ("ecgnoise_cae_" + name)).string();
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("build follows the conv shape chain and restores the window length") {
    const CaeModel model = build_cae(CaeConfig{});  // default 512, k=7, s=4
    // 512 -> 127 -> 31
    CHECK(conv1d_out_len(512, model.layers[0]) == 127);
    CHECK(conv1d_out_len(127, model.layers[1]) == 31);
    CHECK(tconv1d_out_len(31, model.layers[2]) == 127);
    CHECK(tconv1d_out_len(127, model.layers[3]) == 512);

    const Dataset probe = random_dataset(512, 1, 1);
    CHECK(reconstruct_window(model, probe.windows[0]).size() == 512);
    CHECK(encode_window(model, probe.windows[0]).values.size() == 64);
}

TEST_CASE("window too short for the default stack is a build error") {
    CaeConfig config;
    config.window_len = 7;
    CHECK_THROWS_WITH_AS(build_cae(config), doctest::Contains("shape chain"),
                         std::invalid_argument);
}

TEST_CASE("latent channel mismatch is rejected") {
    CaeConfig config = tiny_config();
    config.latent_channels = 5;
    CHECK_THROWS_AS(build_cae(config), std::invalid_argument);
}

TEST_CASE("same seed gives bit-identical initial parameters") {
    const CaeConfig config = tiny_config();
    CHECK(flatten_params(build_cae(config)) == flatten_params(build_cae(config)));

    CaeConfig other = config;
    other.seed += 1;
    CHECK(flatten_params(build_cae(config)) != flatten_params(build_cae(other)));
}

TEST_CASE("training is deterministic and lr=0 is a no-op") {
    const CaeConfig config = tiny_config();
    const Dataset train = random_dataset(config.window_len, 24, 2);
    const Dataset val = random_dataset(config.window_len, 8, 3);
    const CaeModel initial = build_cae(config);

    auto [m1, h1] = train_cae(initial, train, val, config);
    auto [m2, h2] = train_cae(initial, train, val, config);
    CHECK(h1.train_loss == h2.train_loss);
    CHECK(h1.val_loss == h2.val_loss);
    CHECK(flatten_params(m1) == flatten_params(m2));

    CaeConfig frozen = config;
    frozen.lr = 0.0;
    auto [m3, h3] = train_cae(initial, train, val, frozen);
    CHECK(flatten_params(m3) == flatten_params(initial));
    for (std::size_t e = 1; e < h3.train_loss.size(); ++e) {
        CHECK(h3.train_loss[e] == doctest::Approx(h3.train_loss[0]));
    }
}

TEST_CASE("zero epochs returns the initial model with an empty history") {
    CaeConfig config = tiny_config();
    config.epochs = 0;
    const Dataset train = random_dataset(config.window_len, 8, 4);
    const CaeModel initial = build_cae(config);
    auto [model, history] = train_cae(initial, train, {}, config);
    CHECK(history.train_loss.empty());
    CHECK(history.val_loss.empty());
    CHECK(flatten_params(model) == flatten_params(initial));
}

TEST_CASE("overfitting one repeated window shrinks the loss at least 20x") {
    CaeConfig config = tiny_config();
    config.epochs = 200;
    config.batch_size = 64;
    config.lr = 1e-2;
    const Dataset train = repeated_window_dataset(config.window_len, 64, 5);
    const CaeModel initial = build_cae(config);

    const Tensor3 batch = dataset_to_tensor(train);
    const double initial_loss = reconstruction_loss(initial, batch);
    auto [model, history] = train_cae(initial, train, train, config);
    const double final_loss = reconstruction_loss(model, batch);
    CHECK(final_loss < 0.05 * initial_loss);

    // The overfit window now reconstructs better than an unseen one.
    const Dataset other = random_dataset(config.window_len, 1, 77);
    CHECK(recon_score(model, train.windows[0]) > recon_score(model, other.windows[0]));
}

TEST_CASE("recon_score is nonpositive; encode is pure and length-checked") {
    const CaeConfig config = tiny_config();
    const CaeModel model = build_cae(config);
    const Dataset data = random_dataset(config.window_len, 4, 6);
    for (const auto& w : data.windows) CHECK(recon_score(model, w) <= 0.0);

    const LatentFeature a = encode_window(model, data.windows[0]);
    const LatentFeature b = encode_window(model, data.windows[0]);
    CHECK(a.values == b.values);
    CHECK(a.values.size() == 6);

    SignalWindow wrong;
    wrong.sample_rate = 100.0;
    wrong.samples.assign(config.window_len + 1, 0.0f);
    CHECK_THROWS_AS(encode_window(model, wrong), std::invalid_argument);
}

TEST_CASE("zero window encodes to the bias-driven feature, deterministically") {
    const CaeConfig config = tiny_config();
    const CaeModel model = build_cae(config);
    SignalWindow zero;
    zero.sample_rate = 100.0;
    zero.samples.assign(config.window_len, 0.0f);
    const LatentFeature f1 = encode_window(model, zero);
    const LatentFeature f2 = encode_window(model, zero);
    CHECK(f1.values == f2.values);
}

TEST_CASE("full-model gradients match finite differences") {
    CaeConfig config = tiny_config(16);
    config.encoder = {{{3, 3, 2}, {4, 3, 2}}};
    config.latent_channels = 4;
    CaeModel model = build_cae(config);

    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor3 batch(2, 1, config.window_len);
    for (double& v : batch.data) v = dist(rng);

    std::vector<double> params = flatten_params(model);
    const std::vector<double> analytic = reconstruction_grad(model, batch);
    auto loss = [&](std::span<const double> p) {
        CaeModel probe = model;
        set_flat_params(probe, p);
        return reconstruction_loss(probe, batch);
    };
    CHECK(grad_check(loss, params, analytic, 1e-4) < 1e-5);
}

TEST_CASE("finetune subset arithmetic and boundary behaviour") {
    const Dataset data = random_dataset(32, 10, 9);
    CHECK(finetune_subset(data, 0.2, 7).windows.size() == 2);
    CHECK(finetune_subset(data, 1.0, 7).windows.size() == 10);
    CHECK(finetune_subset(data, 0.05, 7).windows.size() == 1);
    CHECK_THROWS_AS(finetune_subset(data, 0.0, 7), std::invalid_argument);

    CaeConfig config = tiny_config(32);
    config.encoder = {{{3, 3, 2}, {4, 3, 2}}};
    config.latent_channels = 4;
    config.epochs = 3;
    const CaeModel base = build_cae(config);

    // fraction 1.0 is exactly train() on the shuffled full set
    auto [ft, ft_hist] = finetune_cae(base, data, {}, 1.0, config);
    auto [tr, tr_hist] = train_cae(base, finetune_subset(data, 1.0, config.seed), {}, config);
    CHECK(flatten_params(ft) == flatten_params(tr));
    CHECK(ft_hist.train_loss == tr_hist.train_loss);
}

TEST_CASE("checkpoint round trip is byte-stable and score-invariant") {
    const CaeConfig config = tiny_config();
    const Dataset data = random_dataset(config.window_len, 12, 10);
    auto [model, history] = train_cae(build_cae(config), data, {}, config);

    const auto path1 = temp_path("a.ckpt");
    const auto path2 = temp_path("b.ckpt");
    save_checkpoint(model, path1);
    const CaeModel loaded = load_checkpoint(path1);
    save_checkpoint(loaded, path2);
    CHECK(read_bytes(path1) == read_bytes(path2));

    // Trained parameters are stored in f32; the round trip is exact.
    CHECK(flatten_params(loaded) == flatten_params(model));
    CHECK(encode_window(loaded, data.windows[0]).values ==
          encode_window(model, data.windows[0]).values);
    CHECK(recon_score(loaded, data.windows[3]) == recon_score(model, data.windows[3]));
    fs::remove(path1);
    fs::remove(path2);
}

TEST_CASE("corrupted checkpoints are reported") {
    const CaeConfig config = tiny_config();
    const CaeModel model = build_cae(config);
    const auto path = temp_path("trunc.ckpt");
    save_checkpoint(model, path);
    std::string bytes = read_bytes(path);

    std::ofstream(path, std::ios::binary | std::ios::trunc)
        << bytes.substr(0, bytes.size() - 10);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"),
                         std::runtime_error);

    std::string wrong = bytes;
    wrong[0] = 'X';
    std::ofstream(path, std::ios::binary | std::ios::trunc) << wrong;
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), std::runtime_error);

    std::ofstream(path, std::ios::binary | std::ios::app) << "tail";
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    fs::remove(path);
}

TEST_CASE("training aborts with a diagnostic on non-finite loss") {
    CaeConfig config = tiny_config();
    config.lr = 1e18;  // blows the parameters up within a few steps
    config.epochs = 50;
    const Dataset train = random_dataset(config.window_len, 16, 11);
    CHECK_THROWS_WITH_AS(train_cae(build_cae(config), train, {}, config),
                         doctest::Contains("epoch"), std::runtime_error);
}
