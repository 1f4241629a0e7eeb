#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace ecgnoise {

/// Noise-quality annotation of a window. Level1 = clean, Level2 = slightly
/// noisy (QRS still detectable), Level3 = severely noisy.
enum class NoiseLabel : std::uint8_t {
    Unknown = 0,
    Level1 = 1,
    Level2 = 2,
    Level3 = 3,
};

/// One fixed-length single-lead ECG segment in millivolts.
struct SignalWindow {
    std::vector<float> samples;
    double sample_rate = 0.0;  // Hz, > 0
    NoiseLabel label = NoiseLabel::Unknown;
    std::string source_id;  // opaque provenance tag, not serialized
};

/// A homogeneous collection of windows: every window has the same length and
/// sample rate.
struct Dataset {
    std::vector<SignalWindow> windows;
    std::uint32_t window_len = 0;
    double sample_rate = 0.0;

    std::size_t size() const { return windows.size(); }
};

/// Train/val/test fractions plus the shuffle seed. Fractions must be in
/// [0,1] and sum to 1 within 1e-12.
struct SplitSpec {
    double train_frac = 0.8;
    double val_frac = 0.1;
    double test_frac = 0.1;
    std::uint64_t seed = 0;
};

enum class DatasetFormat { Binary, Csv };

/// Throws std::runtime_error if any Dataset invariant is violated
/// (empty set, inhomogeneous window length or rate, non-finite samples).
void validate_dataset(const Dataset& dataset);

/// Throws std::invalid_argument on bad fractions.
void validate_split_spec(const SplitSpec& spec);

// Binary dataset format "ECGW v1", little-endian:
//   magic "ECGW" (45 43 47 57), u16 version=1, u16 reserved=0,
//   u32 window_count, u32 window_len, f32 sample_rate,
//   then per window: u8 label (0=Unknown,1,2,3) + window_len f32 samples.
// CSV format: header `label,s0,s1,...,s{W-1}`, one window per row. CSV
// carries no sample rate; loading CSV sets sample_rate = 1.0.
Dataset load_dataset(const std::string& path, DatasetFormat format);
void save_dataset(const Dataset& dataset, const std::string& path, DatasetFormat format);

/// Cuts a long signal into contiguous windows of `window_len` starting at
/// multiples of `hop`. The trailing remainder is dropped; a signal shorter
/// than one window yields an empty list.
std::vector<std::vector<double>> window_signal(std::span<const double> signal,
                                               std::size_t window_len, std::size_t hop);

/// Per-window z-score with population standard deviation. A near-constant
/// window (std < 1e-8) maps to all zeros.
std::vector<double> normalize_window(std::span<const double> samples);

/// Converts a stored window to a normalized double vector for the model path.
std::vector<double> normalized_samples(const SignalWindow& window);

/// Deterministic shuffle by spec.seed followed by a contiguous partition at
/// floor(n*train) and floor(n*(train+val)).
std::tuple<Dataset, Dataset, Dataset> split_dataset(const Dataset& dataset, const SplitSpec& spec);

}  // namespace ecgnoise
