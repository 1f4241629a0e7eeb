#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ecgnoise/nn.hpp"
#include "ecgnoise/signal_io.hpp"

namespace ecgnoise {

struct ConvSpec {
    int out_channels = 0;
    int kernel = 7;
    int stride = 4;
};

/// Architecture and training hyperparameters of the convolutional
/// autoencoder. The decoder is always the exact mirror of the encoder
/// (transposed convolutions, output padding chosen at build time so the
/// reconstruction has exactly window_len samples).
struct CaeConfig {
    int window_len = 512;
    std::array<ConvSpec, 2> encoder{{{32, 7, 4}, {64, 7, 4}}};
    int latent_channels = 64;  // must equal encoder.back().out_channels
    int epochs = 100;
    int batch_size = 64;
    double lr = 1e-4;
    double weight_decay = 0.01;
    std::uint64_t seed = 1;
};

/// Trained (or freshly initialized) autoencoder. layers[0..1] encode,
/// layers[2..3] decode.
struct CaeModel {
    CaeConfig config;
    std::vector<ConvLayer> layers;

    int latent_dim() const { return config.latent_channels; }
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
};

/// 64-dim (by default) feature vector: time-mean of the encoder output.
struct LatentFeature {
    std::vector<double> values;
};

/// Initializes parameters uniform(-a, a) with a = 1/sqrt(C_in * K) from the
/// seeded generator and verifies the decoder restores exactly window_len
/// samples. Throws std::invalid_argument with the full shape chain when the
/// config cannot round-trip the length.
CaeModel build_cae(const CaeConfig& config);

/// Mini-batch AdamW on reconstruction MSE. Deterministic given the seed
/// (fixed shuffle and reduction order). Returns the parameters with the
/// lowest validation loss seen. If val_set is empty the training loss is
/// used for both history columns and model selection.
std::pair<CaeModel, TrainHistory> train_cae(const CaeModel& model, const Dataset& train_set,
                                            const Dataset& val_set, const CaeConfig& config);

/// The first ceil(fraction*n) windows of `dataset` after a shuffle seeded
/// with `seed`; this is the exact subset finetune_cae trains on.
Dataset finetune_subset(const Dataset& dataset, double fraction, std::uint64_t seed);

/// Continues training from `model` on finetune_subset(new_train, fraction,
/// config.seed), with fresh optimizer state.
std::pair<CaeModel, TrainHistory> finetune_cae(const CaeModel& model, const Dataset& new_train,
                                               const Dataset& val_set, double fraction,
                                               const CaeConfig& config);

/// Encoder forward pass followed by a mean over the time axis.
LatentFeature encode_window(const CaeModel& model, const SignalWindow& window);
LatentFeature encode_normalized(const CaeModel& model, std::span<const double> samples);

/// Full forward pass; output has exactly window_len samples.
std::vector<double> reconstruct_window(const CaeModel& model, const SignalWindow& window);

/// Baseline score: negated reconstruction MSE, so higher means cleaner.
double recon_score(const CaeModel& model, const SignalWindow& window);

/// Stacks windows into a (n, 1, W) tensor, z-scoring each window.
Tensor3 dataset_to_tensor(const Dataset& dataset);

// Flat parameter access in declaration order (enc0 w, enc0 b, ..., dec1 b).
std::vector<double> flatten_params(const CaeModel& model);
void set_flat_params(CaeModel& model, std::span<const double> params);

/// Reconstruction MSE of a batch against itself, and its gradient with
/// respect to the flattened parameters.
double reconstruction_loss(const CaeModel& model, const Tensor3& batch);
std::vector<double> reconstruction_grad(const CaeModel& model, const Tensor3& batch);

// Checkpoint format "CAE1", little-endian: magic `43 41 45 31`, u16 version,
// u32-length-prefixed UTF-8 config block (flat key=value lines), then per
// layer the f32 weights and f32 bias arrays in declaration order, each
// u32-count-prefixed. Parameters are stored in 32-bit precision.
void save_checkpoint(const CaeModel& model, const std::string& path);
CaeModel load_checkpoint(const std::string& path);

}  // namespace ecgnoise
