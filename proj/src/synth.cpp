#include "ecgnoise/synth.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace ecgnoise {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

void validate_params(const EcgParams& params) {
    if (!(params.heart_rate >= 30.0 && params.heart_rate <= 220.0)) {
        throw std::invalid_argument("heart_rate must lie in [30, 220] bpm");
    }
    if (!(params.sample_rate > 0.0)) throw std::invalid_argument("sample_rate must be positive");
    for (const WaveComponent* wave : {&params.p, &params.q, &params.r, &params.s, &params.t}) {
        if (!(wave->width > 0.0)) throw std::invalid_argument("wave widths must be positive");
    }
    if (!(params.rr_jitter >= 0.0 && params.rr_jitter < 1.0)) {
        throw std::invalid_argument("rr_jitter must lie in [0, 1)");
    }
}

double bump(const WaveComponent& wave, double dt) {
    const double z = (dt - wave.offset) / wave.width;
    return wave.amplitude * std::exp(-0.5 * z * z);
}

/// Noise mixture at the spec's raw amplitudes; phases and the white-noise
/// stream come from the seeded generator.
std::vector<double> raw_noise(std::size_t n, double sample_rate, const NoiseSpec& spec,
                              std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * M_PI);
    const double wander_phase = phase_dist(rng);
    const double powerline_phase = phase_dist(rng);

    std::vector<double> noise(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = double(i) / sample_rate;
        noise[i] += spec.wander_amp * std::sin(2.0 * M_PI * spec.wander_freq * t + wander_phase);
        noise[i] +=
            spec.powerline_amp * std::sin(2.0 * M_PI * spec.powerline_freq * t + powerline_phase);
    }
    if (spec.muscle_amp > 0.0) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::vector<double> white(n);
        for (double& w : white) w = spec.muscle_amp * gauss(rng);
        if (spec.muscle_bandwidth > 0.0 && spec.muscle_bandwidth < sample_rate / 2.0) {
            // crude band limit: moving average of width ~fs/bandwidth
            const int width = std::max(1, int(std::llround(sample_rate / spec.muscle_bandwidth)));
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += white[i];
                if (i >= std::size_t(width)) acc -= white[i - width];
                noise[i] += acc / double(std::min<std::size_t>(i + 1, width));
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) noise[i] += white[i];
        }
    }
    return noise;
}

double mean_power(std::span<const double> x) {
    double sum = 0.0;
    for (double v : x) sum += v * v;
    return sum / double(x.size());
}

}  // namespace

std::vector<double> gen_clean_ecg(const EcgParams& params, double duration_s, std::uint64_t seed) {
    validate_params(params);
    if (!(duration_s > 0.0)) throw std::invalid_argument("duration must be positive");

    const double base_period = 60.0 / params.heart_rate;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(-params.rr_jitter, params.rr_jitter);

    // Beats start half a period before the window and run past its end so
    // boundary samples still carry partial waveforms.
    std::vector<double> beats;
    double t = -base_period * (0.5 + jitter(rng));
    while (t < duration_s + base_period) {
        beats.push_back(t);
        t += base_period * (1.0 + jitter(rng));
    }

    const auto n = static_cast<std::size_t>(std::llround(duration_s * params.sample_rate));
    std::vector<double> signal(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double now = double(i) / params.sample_rate;
        double v = 0.0;
        for (double beat : beats) {
            const double dt = now - beat;
            if (std::abs(dt) > 0.7) continue;
            v += bump(params.p, dt) + bump(params.q, dt) + bump(params.r, dt) + bump(params.s, dt) +
                 bump(params.t, dt);
        }
        signal[i] = v;
    }
    return signal;
}

std::vector<double> add_noise(std::span<const double> signal, double sample_rate,
                              const NoiseSpec& spec, std::uint64_t seed) {
    if (signal.empty()) throw std::invalid_argument("add_noise: empty signal");
    if (!(sample_rate > 0.0)) throw std::invalid_argument("add_noise: sample_rate must be positive");
    if (spec.wander_amp < 0.0 || spec.powerline_amp < 0.0 || spec.muscle_amp < 0.0) {
        throw std::invalid_argument("add_noise: noise amplitudes must be nonnegative");
    }
    const std::vector<double> noise = raw_noise(signal.size(), sample_rate, spec, seed);
    std::vector<double> out(signal.begin(), signal.end());
    double scale = 1.0;
    if (spec.snr_db != kNoSnrScaling) {
        const double signal_power = mean_power(signal);
        if (signal_power <= 0.0) {
            throw std::invalid_argument("add_noise: zero-power signal with a finite SNR request");
        }
        const double noise_power = mean_power(noise);
        if (noise_power <= 0.0) {
            throw std::invalid_argument("add_noise: noise spec has zero power but SNR is finite");
        }
        scale = std::sqrt(signal_power / (noise_power * std::pow(10.0, spec.snr_db / 10.0)));
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * noise[i];
    return out;
}

BenchmarkSpec shifted_benchmark_spec() {
    BenchmarkSpec spec;
    spec.min_heart_rate = 110.0;
    spec.max_heart_rate = 110.0;
    spec.min_r_amp = 1.28;
    spec.max_r_amp = 1.32;
    return spec;
}

std::tuple<Dataset, Dataset, Dataset> make_benchmark(std::uint64_t seed, const BenchmarkSpec& spec) {
    if (spec.window_len < 2) throw std::invalid_argument("window_len must be >= 2");
    if (!(spec.sample_rate > 0.0)) throw std::invalid_argument("sample_rate must be positive");
    if (spec.level1_count == 0 || spec.level2_count == 0 || spec.level3_count == 0) {
        throw std::invalid_argument("all level counts must be positive");
    }

    // Fixture noise anchors: 30 dB (clean), 5 dB (moderate), -5 dB (severe,
    // plus a wander of 2.5x the R amplitude that swamps the QRS complexes).
    const NoiseSpec mixture{/*wander_amp=*/0.3, /*wander_freq=*/0.33,
                            /*powerline_amp=*/0.2, /*powerline_freq=*/50.0,
                            /*muscle_amp=*/1.0, /*muscle_bandwidth=*/0.0,
                            /*snr_db=*/30.0};
    const double duration = double(spec.window_len) / spec.sample_rate;

    auto make_level = [&](int level, std::size_t count, double snr_db) {
        Dataset dataset;
        dataset.window_len = spec.window_len;
        dataset.sample_rate = spec.sample_rate;
        dataset.windows.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::uint64_t window_seed =
                splitmix64(splitmix64(seed + std::uint64_t(level) * 0x100000001b3ULL) + i);
            std::mt19937_64 rng(window_seed);
            std::uniform_real_distribution<double> hr_dist(spec.min_heart_rate, spec.max_heart_rate);
            std::uniform_real_distribution<double> amp_dist(spec.min_r_amp, spec.max_r_amp);
            EcgParams params;
            params.sample_rate = spec.sample_rate;
            params.heart_rate = hr_dist(rng);
            params.rr_jitter = spec.rr_jitter;
            const double morphology_scale = amp_dist(rng);
            for (WaveComponent* wave : {&params.p, &params.q, &params.r, &params.s, &params.t}) {
                wave->amplitude *= morphology_scale;
            }

            std::vector<double> samples =
                gen_clean_ecg(params, duration, splitmix64(window_seed + 1));
            NoiseSpec level_noise = mixture;
            level_noise.snr_db = snr_db;
            samples = add_noise(samples, spec.sample_rate, level_noise, splitmix64(window_seed + 2));
            if (level == 3) {
                NoiseSpec wander;
                wander.wander_amp = 2.5 * params.r.amplitude;
                wander.wander_freq = 0.25;
                wander.snr_db = kNoSnrScaling;
                samples = add_noise(samples, spec.sample_rate, wander, splitmix64(window_seed + 3));
            }

            SignalWindow window;
            window.sample_rate = spec.sample_rate;
            window.label = static_cast<NoiseLabel>(level);
            window.samples.assign(samples.begin(), samples.end());
            dataset.windows.push_back(std::move(window));
        }
        return dataset;
    };

    return {make_level(1, spec.level1_count, 30.0), make_level(2, spec.level2_count, 5.0),
            make_level(3, spec.level3_count, -5.0)};
}

}  // namespace ecgnoise
