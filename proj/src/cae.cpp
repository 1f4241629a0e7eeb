#include "ecgnoise/cae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ecgnoise {

namespace {

constexpr char kMagic[4] = {'C', 'A', 'E', '1'};
constexpr std::uint16_t kVersion = 1;

struct ForwardCache {
    Tensor3 z1, h1, z2, h2, z3, h3, y;
};

void validate_config(const CaeConfig& config) {
    if (config.window_len < 1) throw std::invalid_argument("window_len must be >= 1");
    for (const auto& spec : config.encoder) {
        if (spec.out_channels < 1 || spec.kernel < 1 || spec.stride < 1) {
            throw std::invalid_argument("encoder layer spec must have positive channels/kernel/stride");
        }
    }
    if (config.latent_channels != config.encoder.back().out_channels) {
        throw std::invalid_argument("latent_channels must equal the last encoder layer's out_channels");
    }
    if (config.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (config.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
}

void check_same_architecture(const CaeConfig& a, const CaeConfig& b) {
    const bool same = a.window_len == b.window_len && a.latent_channels == b.latent_channels &&
                      std::equal(a.encoder.begin(), a.encoder.end(), b.encoder.begin(),
                                 [](const ConvSpec& x, const ConvSpec& y) {
                                     return x.out_channels == y.out_channels && x.kernel == y.kernel &&
                                            x.stride == y.stride;
                                 });
    if (!same) throw std::invalid_argument("training config architecture does not match the model");
}

Tensor3 forward_cae(const CaeModel& model, const Tensor3& x, ForwardCache* cache) {
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.z1 = conv1d_forward(x, model.layers[0]);
    c.h1 = relu(c.z1);
    c.z2 = conv1d_forward(c.h1, model.layers[1]);
    c.h2 = relu(c.z2);
    c.z3 = tconv1d_forward(c.h2, model.layers[2]);
    c.h3 = relu(c.z3);
    c.y = tconv1d_forward(c.h3, model.layers[3]);
    return c.y;
}

/// Backpropagates grad_y; gradients are laid out [w0,b0,w1,b1,w2,b2,w3,b3].
std::vector<std::vector<double>> backward_cae(const CaeModel& model, const Tensor3& x,
                                              const ForwardCache& c, const Tensor3& grad_y) {
    ConvGrads g3 = tconv1d_backward(c.h3, model.layers[3], grad_y);
    Tensor3 grad_z3 = relu_backward(c.z3, g3.grad_input);
    ConvGrads g2 = tconv1d_backward(c.h2, model.layers[2], grad_z3);
    Tensor3 grad_h2 = relu_backward(c.z2, g2.grad_input);
    ConvGrads g1 = conv1d_backward(c.h1, model.layers[1], grad_h2);
    Tensor3 grad_z1 = relu_backward(c.z1, g1.grad_input);
    ConvGrads g0 = conv1d_backward(x, model.layers[0], grad_z1);

    std::vector<std::vector<double>> grads;
    grads.reserve(8);
    grads.push_back(std::move(g0.grad_weights));
    grads.push_back(std::move(g0.grad_bias));
    grads.push_back(std::move(g1.grad_weights));
    grads.push_back(std::move(g1.grad_bias));
    grads.push_back(std::move(g2.grad_weights));
    grads.push_back(std::move(g2.grad_bias));
    grads.push_back(std::move(g3.grad_weights));
    grads.push_back(std::move(g3.grad_bias));
    return grads;
}

/// Rounds every parameter to its f32 value so models are invariant under the
/// 32-bit checkpoint round trip.
void quantize_params(CaeModel& model) {
    for (auto& layer : model.layers) {
        for (double& w : layer.weights) w = double(float(w));
        for (double& b : layer.bias) b = double(float(b));
    }
}

Tensor3 windows_to_tensor(const Dataset& dataset, std::span<const std::size_t> indices,
                          int window_len) {
    Tensor3 batch(static_cast<int>(indices.size()), 1, window_len);
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto normalized = normalized_samples(dataset.windows[indices[b]]);
        std::copy(normalized.begin(), normalized.end(), batch.data.begin() + b * window_len);
    }
    return batch;
}

double dataset_mse(const CaeModel& model, const Dataset& dataset, int batch_size) {
    const int W = model.config.window_len;
    double sum = 0.0;
    std::size_t elems = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < dataset.windows.size(); start += batch_size) {
        const std::size_t end = std::min(dataset.windows.size(), start + batch_size);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        Tensor3 x = windows_to_tensor(dataset, idx, W);
        Tensor3 y = forward_cae(model, x, nullptr);
        auto [loss, grad] = mse_loss(y, x);
        sum += loss * double(x.size());
        elems += x.size();
    }
    return sum / double(elems);
}

std::string config_to_text(const CaeConfig& config) {
    char buf[64];
    std::ostringstream out;
    out << "window_len=" << config.window_len << "\n";
    for (std::size_t i = 0; i < config.encoder.size(); ++i) {
        out << "enc" << i << "_out=" << config.encoder[i].out_channels << "\n";
        out << "enc" << i << "_kernel=" << config.encoder[i].kernel << "\n";
        out << "enc" << i << "_stride=" << config.encoder[i].stride << "\n";
    }
    out << "latent_channels=" << config.latent_channels << "\n";
    out << "epochs=" << config.epochs << "\n";
    out << "batch_size=" << config.batch_size << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", config.lr);
    out << "lr=" << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", config.weight_decay);
    out << "weight_decay=" << buf << "\n";
    out << "seed=" << config.seed << "\n";
    return out.str();
}

CaeConfig config_from_text(const std::string& text, const std::string& path) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(path + ": malformed config line `" + line + "`");
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw std::runtime_error(path + ": checkpoint config missing key `" + key + "`");
        return it->second;
    };
    CaeConfig config;
    config.window_len = std::stoi(get("window_len"));
    for (std::size_t i = 0; i < config.encoder.size(); ++i) {
        const std::string prefix = "enc" + std::to_string(i) + "_";
        config.encoder[i].out_channels = std::stoi(get(prefix + "out"));
        config.encoder[i].kernel = std::stoi(get(prefix + "kernel"));
        config.encoder[i].stride = std::stoi(get(prefix + "stride"));
    }
    config.latent_channels = std::stoi(get("latent_channels"));
    config.epochs = std::stoi(get("epochs"));
    config.batch_size = std::stoi(get("batch_size"));
    config.lr = std::stod(get("lr"));
    config.weight_decay = std::stod(get("weight_decay"));
    config.seed = std::stoull(get("seed"));
    return config;
}

std::pair<CaeModel, TrainHistory> run_training(const CaeModel& start, const Dataset& train_set,
                                               const Dataset& val_set, const CaeConfig& config) {
    validate_dataset(train_set);
    validate_config(config);
    check_same_architecture(start.config, config);
    if (train_set.window_len != static_cast<std::uint32_t>(config.window_len)) {
        throw std::invalid_argument("training windows have length " + std::to_string(train_set.window_len) +
                                    ", model expects " + std::to_string(config.window_len));
    }
    const bool has_val = !val_set.windows.empty();
    if (has_val) validate_dataset(val_set);

    CaeModel model = start;
    model.config = config;
    TrainHistory history;
    if (config.epochs == 0) return {model, history};

    std::vector<AdamWState> states(8);
    const AdamWConfig opt{config.lr, 0.9, 0.999, 1e-8, config.weight_decay};
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(train_set.windows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    CaeModel best = model;
    double best_val = std::numeric_limits<double>::infinity();
    const int W = config.window_len;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_sum = 0.0;
        std::size_t epoch_elems = 0;
        int batch_index = 0;
        for (std::size_t start_i = 0; start_i < order.size(); start_i += config.batch_size, ++batch_index) {
            const std::size_t end_i = std::min(order.size(), start_i + config.batch_size);
            std::span<const std::size_t> chunk(order.data() + start_i, end_i - start_i);
            Tensor3 x = windows_to_tensor(train_set, chunk, W);
            ForwardCache cache;
            Tensor3 y = forward_cae(model, x, &cache);
            auto [loss, grad_y] = mse_loss(y, x);
            if (!std::isfinite(loss)) {
                throw std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(batch_index));
            }
            epoch_sum += loss * double(x.size());
            epoch_elems += x.size();
            auto grads = backward_cae(model, x, cache, grad_y);
            for (int l = 0; l < 4; ++l) {
                adamw_step(model.layers[l].weights, grads[2 * l], opt, states[2 * l]);
                adamw_step(model.layers[l].bias, grads[2 * l + 1], opt, states[2 * l + 1]);
            }
        }
        const double train_loss = epoch_sum / double(epoch_elems);
        const double val_loss = has_val ? dataset_mse(model, val_set, config.batch_size) : train_loss;
        history.train_loss.push_back(train_loss);
        history.val_loss.push_back(val_loss);
        if (val_loss < best_val) {
            best_val = val_loss;
            best = model;
        }
    }
    quantize_params(best);
    return {best, history};
}

}  // namespace

CaeModel build_cae(const CaeConfig& config) {
    validate_config(config);

    // Shape chain through the encoder.
    std::vector<int> lens{config.window_len};
    std::vector<ConvLayer> layers(4);
    int channels = 1;
    for (std::size_t i = 0; i < config.encoder.size(); ++i) {
        const auto& spec = config.encoder[i];
        ConvLayer& layer = layers[i];
        layer.in_channels = channels;
        layer.out_channels = spec.out_channels;
        layer.kernel = spec.kernel;
        layer.stride = spec.stride;
        const int t_out = conv1d_out_len(lens.back(), layer);
        if (t_out < 1) {
            std::string chain;
            for (int len : lens) chain += std::to_string(len) + " -> ";
            chain += std::to_string(t_out);
            throw std::invalid_argument("encoder layer " + std::to_string(i) +
                                        " collapses the signal (shape chain: " + chain + ")");
        }
        lens.push_back(t_out);
        channels = spec.out_channels;
    }

    // Decoder mirror; output_padding restores each encoder input length exactly.
    for (std::size_t i = 0; i < config.encoder.size(); ++i) {
        const std::size_t enc_index = config.encoder.size() - 1 - i;
        const auto& spec = config.encoder[enc_index];
        ConvLayer& layer = layers[2 + i];
        layer.transposed = true;
        layer.in_channels = spec.out_channels;
        layer.out_channels = enc_index == 0 ? 1 : config.encoder[enc_index - 1].out_channels;
        layer.kernel = spec.kernel;
        layer.stride = spec.stride;
        const int target = lens[enc_index];
        const int base_len = (lens[enc_index + 1] - 1) * spec.stride + spec.kernel;
        layer.output_padding = target - base_len;
        if (layer.output_padding < 0 || layer.output_padding >= spec.stride) {
            throw std::invalid_argument("decoder layer " + std::to_string(i) +
                                        " cannot restore length " + std::to_string(target) + " from " +
                                        std::to_string(lens[enc_index + 1]));
        }
    }

    std::mt19937_64 rng(config.seed);
    for (auto& layer : layers) {
        const double a = 1.0 / std::sqrt(double(layer.in_channels) * layer.kernel);
        std::uniform_real_distribution<double> dist(-a, a);
        layer.weights.resize(layer.weight_count());
        layer.bias.resize(layer.out_channels);
        for (double& w : layer.weights) w = dist(rng);
        for (double& b : layer.bias) b = dist(rng);
    }

    CaeModel model{config, std::move(layers)};
    quantize_params(model);

    // Round-trip shape assertion on a probe batch.
    Tensor3 probe(1, 1, config.window_len);
    Tensor3 out = forward_cae(model, probe, nullptr);
    if (out.channels != 1 || out.len != config.window_len) {
        throw std::invalid_argument("decoder output shape (1," + std::to_string(out.channels) + "," +
                                    std::to_string(out.len) + ") does not match input length " +
                                    std::to_string(config.window_len));
    }
    return model;
}

std::pair<CaeModel, TrainHistory> train_cae(const CaeModel& model, const Dataset& train_set,
                                            const Dataset& val_set, const CaeConfig& config) {
    return run_training(model, train_set, val_set, config);
}

Dataset finetune_subset(const Dataset& dataset, double fraction, std::uint64_t seed) {
    validate_dataset(dataset);
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument("finetune fraction must lie in (0, 1]");
    }
    const std::size_t n = dataset.windows.size();
    const auto take = static_cast<std::size_t>(std::ceil(fraction * double(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    Dataset subset;
    subset.window_len = dataset.window_len;
    subset.sample_rate = dataset.sample_rate;
    subset.windows.reserve(take);
    for (std::size_t i = 0; i < take; ++i) subset.windows.push_back(dataset.windows[order[i]]);
    return subset;
}

std::pair<CaeModel, TrainHistory> finetune_cae(const CaeModel& model, const Dataset& new_train,
                                               const Dataset& val_set, double fraction,
                                               const CaeConfig& config) {
    return run_training(model, finetune_subset(new_train, fraction, config.seed), val_set, config);
}

LatentFeature encode_normalized(const CaeModel& model, std::span<const double> samples) {
    if (samples.size() != std::size_t(model.config.window_len)) {
        throw std::invalid_argument("encode: window has length " + std::to_string(samples.size()) +
                                    ", model expects " + std::to_string(model.config.window_len));
    }
    Tensor3 x(1, 1, model.config.window_len);
    std::copy(samples.begin(), samples.end(), x.data.begin());
    Tensor3 h1 = relu(conv1d_forward(x, model.layers[0]));
    Tensor3 h2 = relu(conv1d_forward(h1, model.layers[1]));
    LatentFeature feature;
    feature.values.resize(h2.channels);
    for (int c = 0; c < h2.channels; ++c) {
        double sum = 0.0;
        for (int t = 0; t < h2.len; ++t) sum += h2.at(0, c, t);
        feature.values[c] = sum / double(h2.len);
    }
    return feature;
}

LatentFeature encode_window(const CaeModel& model, const SignalWindow& window) {
    return encode_normalized(model, normalized_samples(window));
}

std::vector<double> reconstruct_window(const CaeModel& model, const SignalWindow& window) {
    const auto normalized = normalized_samples(window);
    if (normalized.size() != std::size_t(model.config.window_len)) {
        throw std::invalid_argument("reconstruct: window has length " + std::to_string(normalized.size()) +
                                    ", model expects " + std::to_string(model.config.window_len));
    }
    Tensor3 x(1, 1, model.config.window_len);
    std::copy(normalized.begin(), normalized.end(), x.data.begin());
    Tensor3 y = forward_cae(model, x, nullptr);
    return y.data;
}

double recon_score(const CaeModel& model, const SignalWindow& window) {
    const auto normalized = normalized_samples(window);
    const auto reconstruction = reconstruct_window(model, window);
    double sum = 0.0;
    for (std::size_t i = 0; i < normalized.size(); ++i) {
        const double d = reconstruction[i] - normalized[i];
        sum += d * d;
    }
    return -sum / double(normalized.size());
}

Tensor3 dataset_to_tensor(const Dataset& dataset) {
    validate_dataset(dataset);
    std::vector<std::size_t> idx(dataset.windows.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return windows_to_tensor(dataset, idx, static_cast<int>(dataset.window_len));
}

std::vector<double> flatten_params(const CaeModel& model) {
    std::vector<double> flat;
    for (const auto& layer : model.layers) {
        flat.insert(flat.end(), layer.weights.begin(), layer.weights.end());
        flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
    }
    return flat;
}

void set_flat_params(CaeModel& model, std::span<const double> params) {
    std::size_t cursor = 0;
    for (auto& layer : model.layers) {
        if (cursor + layer.weights.size() + layer.bias.size() > params.size()) {
            throw std::invalid_argument("set_flat_params: too few parameters");
        }
        std::copy_n(params.begin() + cursor, layer.weights.size(), layer.weights.begin());
        cursor += layer.weights.size();
        std::copy_n(params.begin() + cursor, layer.bias.size(), layer.bias.begin());
        cursor += layer.bias.size();
    }
    if (cursor != params.size()) throw std::invalid_argument("set_flat_params: too many parameters");
}

double reconstruction_loss(const CaeModel& model, const Tensor3& batch) {
    Tensor3 y = forward_cae(model, batch, nullptr);
    return mse_loss(y, batch).first;
}

std::vector<double> reconstruction_grad(const CaeModel& model, const Tensor3& batch) {
    ForwardCache cache;
    Tensor3 y = forward_cae(model, batch, &cache);
    auto [loss, grad_y] = mse_loss(y, batch);
    auto grads = backward_cae(model, batch, cache, grad_y);
    std::vector<double> flat;
    for (const auto& g : grads) flat.insert(flat.end(), g.begin(), g.end());
    return flat;
}

void save_checkpoint(const CaeModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open file for writing");
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&kVersion), 2);
    const std::string config_text = config_to_text(model.config);
    const auto text_len = static_cast<std::uint32_t>(config_text.size());
    out.write(reinterpret_cast<const char*>(&text_len), 4);
    out.write(config_text.data(), text_len);
    auto write_array = [&](const std::vector<double>& values) {
        const auto count = static_cast<std::uint32_t>(values.size());
        out.write(reinterpret_cast<const char*>(&count), 4);
        for (double v : values) {
            const float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&f), 4);
        }
    };
    for (const auto& layer : model.layers) {
        write_array(layer.weights);
        write_array(layer.bias);
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

CaeModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open file");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error(path + ": bad magic (expected CAE1)");
    }
    std::uint16_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 2);
    if (!in || version != kVersion) {
        throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    std::uint32_t text_len = 0;
    in.read(reinterpret_cast<char*>(&text_len), 4);
    std::string config_text(text_len, '\0');
    in.read(config_text.data(), text_len);
    if (!in) throw std::runtime_error(path + ": truncated config block");

    CaeModel model = build_cae(config_from_text(config_text, path));
    auto read_array = [&](std::vector<double>& values, const char* name) {
        std::uint32_t count = 0;
        in.read(reinterpret_cast<char*>(&count), 4);
        if (!in) throw std::runtime_error(path + ": truncated file before " + std::string(name));
        if (count != values.size()) {
            throw std::runtime_error(path + ": " + name + " has " + std::to_string(count) +
                                     " values, expected " + std::to_string(values.size()));
        }
        for (std::uint32_t i = 0; i < count; ++i) {
            float f = 0.0f;
            in.read(reinterpret_cast<char*>(&f), 4);
            if (!in) {
                throw std::runtime_error(path + ": truncated " + std::string(name) + " (expected " +
                                         std::to_string(count) + " values, got " + std::to_string(i) + ")");
            }
            values[i] = f;
        }
    };
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const std::string wname = "layer " + std::to_string(l) + " weights";
        const std::string bname = "layer " + std::to_string(l) + " bias";
        read_array(model.layers[l].weights, wname.c_str());
        read_array(model.layers[l].bias, bname.c_str());
    }
    in.peek();
    if (!in.eof()) throw std::runtime_error(path + ": trailing bytes after parameters");
    return model;
}

}  // namespace ecgnoise
