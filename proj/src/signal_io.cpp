#include "ecgnoise/signal_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ecgnoise {

namespace {

constexpr char kMagic[4] = {'E', 'C', 'G', 'W'};
constexpr std::uint16_t kVersion = 1;

[[noreturn]] void parse_fail(const std::string& path, const std::string& what) {
    throw std::runtime_error(path + ": " + what);
}

template <typename T>
void write_le(std::ofstream& out, T value) {
    // Assumes a little-endian host, which is checked once in save_dataset.
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in, const std::string& path, const char* field) {
    const long long offset = in.tellg();
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) {
        parse_fail(path, std::string("truncated file while reading ") + field + " at byte offset " +
                             std::to_string(offset));
    }
    return value;
}

void check_little_endian() {
    const std::uint16_t probe = 1;
    char byte0;
    std::memcpy(&byte0, &probe, 1);
    if (byte0 != 1) throw std::runtime_error("ECGW I/O requires a little-endian host");
}

NoiseLabel label_from_byte(std::uint8_t b, const std::string& path, std::size_t window_index) {
    if (b > 3) {
        parse_fail(path, "invalid label byte " + std::to_string(int(b)) + " in window " +
                             std::to_string(window_index));
    }
    return static_cast<NoiseLabel>(b);
}

Dataset load_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) parse_fail(path, "cannot open file");
    in.seekg(0, std::ios::end);
    const auto file_size = in.tellg();
    in.seekg(0, std::ios::beg);
    if (file_size == 0) parse_fail(path, "empty dataset");

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        parse_fail(path, "bad magic at byte offset 0 (expected ECGW)");
    }
    const auto version = read_le<std::uint16_t>(in, path, "version");
    if (version != kVersion) {
        parse_fail(path, "unsupported version " + std::to_string(version));
    }
    read_le<std::uint16_t>(in, path, "reserved");
    const auto count = read_le<std::uint32_t>(in, path, "window_count");
    const auto window_len = read_le<std::uint32_t>(in, path, "window_len");
    const auto rate = read_le<float>(in, path, "sample_rate");
    if (count == 0) parse_fail(path, "empty dataset");
    if (window_len == 0) parse_fail(path, "window_len is 0");
    if (!(rate > 0.0f) || !std::isfinite(rate)) {
        parse_fail(path, "non-positive sample_rate in header");
    }
    const long long expected = 20LL + (long long)count * (1LL + 4LL * window_len);
    if ((long long)file_size != expected) {
        parse_fail(path, "file size " + std::to_string((long long)file_size) + " does not match header (expected " +
                             std::to_string(expected) + " bytes)");
    }

    Dataset dataset;
    dataset.window_len = window_len;
    dataset.sample_rate = rate;
    dataset.windows.reserve(count);
    for (std::uint32_t w = 0; w < count; ++w) {
        SignalWindow window;
        window.sample_rate = rate;
        window.label = label_from_byte(read_le<std::uint8_t>(in, path, "label"), path, w);
        window.samples.resize(window_len);
        in.read(reinterpret_cast<char*>(window.samples.data()), 4LL * window_len);
        if (!in) parse_fail(path, "truncated samples in window " + std::to_string(w));
        for (std::uint32_t i = 0; i < window_len; ++i) {
            if (!std::isfinite(window.samples[i])) {
                const long long offset = 20LL + (long long)w * (1LL + 4LL * window_len) + 1 + 4LL * i;
                parse_fail(path, "non-finite sample at byte offset " + std::to_string(offset));
            }
        }
        dataset.windows.push_back(std::move(window));
    }
    return dataset;
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) parse_fail(path, "cannot open file");

    std::string line;
    if (!std::getline(in, line)) parse_fail(path, "empty dataset");
    std::size_t columns = 1;
    for (char c : line) {
        if (c == ',') ++columns;
    }
    if (columns < 2 || line.rfind("label,", 0) != 0) {
        parse_fail(path, "line 1: expected header `label,s0,...`");
    }
    const std::size_t window_len = columns - 1;

    Dataset dataset;
    dataset.window_len = static_cast<std::uint32_t>(window_len);
    dataset.sample_rate = 1.0;  // the CSV schema carries no rate
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string cell;
        SignalWindow window;
        window.sample_rate = dataset.sample_rate;
        if (!std::getline(row, cell, ',')) {
            parse_fail(path, "line " + std::to_string(line_no) + ": missing label");
        }
        try {
            const int label = std::stoi(cell);
            if (label < 0 || label > 3) throw std::out_of_range("label");
            window.label = static_cast<NoiseLabel>(label);
        } catch (const std::exception&) {
            parse_fail(path, "line " + std::to_string(line_no) + ": bad label `" + cell + "`");
        }
        window.samples.reserve(window_len);
        while (std::getline(row, cell, ',')) {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || !std::isfinite(v)) {
                parse_fail(path, "line " + std::to_string(line_no) + ": non-finite or malformed sample `" +
                                     cell + "`");
            }
            window.samples.push_back(static_cast<float>(v));
        }
        if (window.samples.size() != window_len) {
            parse_fail(path, "line " + std::to_string(line_no) + ": expected " + std::to_string(window_len) +
                                 " samples, got " + std::to_string(window.samples.size()));
        }
        dataset.windows.push_back(std::move(window));
    }
    if (dataset.windows.empty()) parse_fail(path, "empty dataset");
    return dataset;
}

void save_binary(const Dataset& dataset, const std::string& path) {
    check_little_endian();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open file for writing");
    out.write(kMagic, 4);
    write_le<std::uint16_t>(out, kVersion);
    write_le<std::uint16_t>(out, 0);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.windows.size()));
    write_le<std::uint32_t>(out, dataset.window_len);
    write_le<float>(out, static_cast<float>(dataset.sample_rate));
    for (const auto& window : dataset.windows) {
        write_le<std::uint8_t>(out, static_cast<std::uint8_t>(window.label));
        out.write(reinterpret_cast<const char*>(window.samples.data()), 4LL * window.samples.size());
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

void save_csv(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open file for writing");
    out << "label";
    for (std::uint32_t i = 0; i < dataset.window_len; ++i) out << ",s" << i;
    out << "\n";
    char buf[32];
    for (const auto& window : dataset.windows) {
        out << int(window.label);
        for (float v : window.samples) {
            std::snprintf(buf, sizeof(buf), "%.9g", double(v));
            out << ',' << buf;
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace

void validate_dataset(const Dataset& dataset) {
    if (dataset.windows.empty()) throw std::runtime_error("empty dataset");
    if (dataset.window_len == 0) throw std::runtime_error("dataset window_len is 0");
    if (!(dataset.sample_rate > 0.0)) throw std::runtime_error("dataset sample_rate must be positive");
    for (std::size_t i = 0; i < dataset.windows.size(); ++i) {
        const auto& w = dataset.windows[i];
        if (w.samples.size() != dataset.window_len) {
            throw std::runtime_error("window " + std::to_string(i) + " has length " +
                                     std::to_string(w.samples.size()) + ", expected " +
                                     std::to_string(dataset.window_len));
        }
        if (w.sample_rate != dataset.sample_rate) {
            throw std::runtime_error("window " + std::to_string(i) + " has a different sample rate");
        }
        for (float v : w.samples) {
            if (!std::isfinite(v)) {
                throw std::runtime_error("window " + std::to_string(i) + " contains a non-finite sample");
            }
        }
    }
}

void validate_split_spec(const SplitSpec& spec) {
    const double fracs[3] = {spec.train_frac, spec.val_frac, spec.test_frac};
    for (double f : fracs) {
        if (!(f >= 0.0 && f <= 1.0)) {
            throw std::invalid_argument("split fractions must lie in [0,1]");
        }
    }
    const double sum = spec.train_frac + spec.val_frac + spec.test_frac;
    if (std::abs(sum - 1.0) > 1e-12) {
        throw std::invalid_argument("split fractions must sum to 1 (got " + std::to_string(sum) + ")");
    }
}

Dataset load_dataset(const std::string& path, DatasetFormat format) {
    Dataset dataset = format == DatasetFormat::Binary ? load_binary(path) : load_csv(path);
    validate_dataset(dataset);
    return dataset;
}

void save_dataset(const Dataset& dataset, const std::string& path, DatasetFormat format) {
    validate_dataset(dataset);
    if (format == DatasetFormat::Binary) {
        save_binary(dataset, path);
    } else {
        save_csv(dataset, path);
    }
}

std::vector<std::vector<double>> window_signal(std::span<const double> signal,
                                               std::size_t window_len, std::size_t hop) {
    if (window_len < 1) throw std::invalid_argument("window_len must be >= 1");
    if (hop < 1) throw std::invalid_argument("hop must be >= 1");
    std::vector<std::vector<double>> windows;
    if (signal.size() < window_len) return windows;
    const std::size_t count = (signal.size() - window_len) / hop + 1;
    windows.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
        const double* begin = signal.data() + w * hop;
        windows.emplace_back(begin, begin + window_len);
    }
    return windows;
}

std::vector<double> normalize_window(std::span<const double> samples) {
    if (samples.size() < 2) throw std::invalid_argument("normalize_window needs at least 2 samples");
    const double n = static_cast<double>(samples.size());
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : samples) var += (v - mean) * (v - mean);
    const double stddev = std::sqrt(var / n);
    std::vector<double> out(samples.size());
    if (stddev < 1e-8) return out;  // constant window -> zeros
    for (std::size_t i = 0; i < samples.size(); ++i) out[i] = (samples[i] - mean) / stddev;
    return out;
}

std::vector<double> normalized_samples(const SignalWindow& window) {
    std::vector<double> raw(window.samples.begin(), window.samples.end());
    return normalize_window(raw);
}

std::tuple<Dataset, Dataset, Dataset> split_dataset(const Dataset& dataset, const SplitSpec& spec) {
    validate_dataset(dataset);
    validate_split_spec(spec);
    const std::size_t n = dataset.windows.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(spec.seed);
    std::shuffle(order.begin(), order.end(), rng);

    const auto cut1 = static_cast<std::size_t>(std::floor(double(n) * spec.train_frac));
    const auto cut2 = static_cast<std::size_t>(std::floor(double(n) * (spec.train_frac + spec.val_frac)));

    auto take = [&](std::size_t begin, std::size_t end) {
        Dataset part;
        part.window_len = dataset.window_len;
        part.sample_rate = dataset.sample_rate;
        part.windows.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) part.windows.push_back(dataset.windows[order[i]]);
        return part;
    };
    return {take(0, cut1), take(cut1, cut2), take(cut2, n)};
}

}  // namespace ecgnoise
