#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <tuple>
#include <vector>

#include "ecgnoise/signal_io.hpp"

namespace ecgnoise {

/// Gaussian-bump component of a synthetic beat: amplitude (mV), offset from
/// the R peak (s), width (s).
struct WaveComponent {
    double amplitude = 0.0;
    double offset = 0.0;
    double width = 0.01;
};

struct EcgParams {
    double heart_rate = 70.0;   // bpm, in [30, 220]
    double sample_rate = 256.0; // Hz
    WaveComponent p{0.15, -0.20, 0.030};
    WaveComponent q{-0.12, -0.030, 0.010};
    WaveComponent r{1.00, 0.0, 0.012};
    WaveComponent s{-0.20, 0.030, 0.010};
    WaveComponent t{0.30, 0.25, 0.050};
    double rr_jitter = 0.05;  // fractional beat-period jitter
};

/// Sentinel: skip SNR scaling and add the components at their raw amplitudes.
inline constexpr double kNoSnrScaling = std::numeric_limits<double>::infinity();

struct NoiseSpec {
    double wander_amp = 0.0;     // mV
    double wander_freq = 0.33;   // Hz, typically 0.2-0.5
    double powerline_amp = 0.0;  // mV
    double powerline_freq = 50.0;
    double muscle_amp = 0.0;       // white-noise std in mV before scaling
    double muscle_bandwidth = 0.0; // Hz; 0 or >= Nyquist means unfiltered
    double snr_db = kNoSnrScaling;
};

/// Sum of Gaussian bumps per beat; beat period 60/heart_rate with seeded
/// jitter. Deterministic given the seed.
std::vector<double> gen_clean_ecg(const EcgParams& params, double duration_s, std::uint64_t seed);

/// Adds wander + powerline + muscle noise. With a finite snr_db the noise
/// mixture is rescaled so 10*log10(P_signal/P_noise) == snr_db; with
/// kNoSnrScaling the raw amplitudes are used as given. The sample rate is
/// needed to place the oscillators at their Hz frequencies.
std::vector<double> add_noise(std::span<const double> signal, double sample_rate,
                              const NoiseSpec& spec, std::uint64_t seed);

/// Sizes and window geometry of the synthetic benchmark corpora. The
/// morphology ranges are deliberately narrow: within-level variation should
/// come from the noise realizations, not from beat timing, so the clean
/// cloud's principal axes track noisiness rather than heart rate.
struct BenchmarkSpec {
    std::size_t level1_count = 2000;
    std::size_t level2_count = 400;
    std::size_t level3_count = 400;
    std::uint32_t window_len = 512;
    double sample_rate = 256.0;
    // Per-window morphology diversity (heart rate and R amplitude ranges).
    double min_heart_rate = 70.0;
    double max_heart_rate = 70.0;
    double min_r_amp = 0.98;
    double max_r_amp = 1.02;
    double rr_jitter = 0.0;
};

/// A parameter set with shifted heart-rate/amplitude ranges, used as the
/// "different recorder" corpus in transfer experiments.
BenchmarkSpec shifted_benchmark_spec();

/// Labeled Level 1/2/3 corpora: Level 1 at 30 dB SNR, Level 2 at 5 dB,
/// Level 3 at -5 dB plus a baseline wander of 2.5x the R amplitude.
std::tuple<Dataset, Dataset, Dataset> make_benchmark(std::uint64_t seed,
                                                     const BenchmarkSpec& spec = {});

}  // namespace ecgnoise
