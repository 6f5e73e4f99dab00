/*
 * dataset.hpp
 *
 * Node-by-time measurement series, sliding-window samples, the
 * chronological train/val/test split, the thresholded Gaussian kernel
 * graph prior and a synthetic generator with controllable redundancy.
 *
 * Layouts:
 *   RawSeries::values      [frame][node][feature]
 *   WindowedSample::x / y  [node][step][feature]
 *
 * File formats:
 *   CSV   header row of node ids, one row per frame, one feature per cell
 *   STB1  "STB1", u32 N, u32 frames, u32 F (little-endian), then
 *         frames*N*F float64, then u8 flag and, if the flag is 1, an N*N
 *         float64 distance matrix
 */
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stprune/numerics.hpp"

namespace stprune {

/// Malformed input file.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RawSeries {
    std::size_t num_nodes = 0;
    std::size_t num_frames = 0;
    std::size_t num_features = 0;
    std::vector<double> values;
    DenseMatrix distances;  // empty when unknown
    std::vector<std::string> node_ids;
    std::size_t period = 0;  // frames per day, 0 when unknown

    double at(std::size_t frame, std::size_t node, std::size_t feature = 0) const {
        return values[(frame * num_nodes + node) * num_features + feature];
    }
    double& at(std::size_t frame, std::size_t node, std::size_t feature = 0) {
        return values[(frame * num_nodes + node) * num_features + feature];
    }

    /// Time series of one node/feature.
    std::vector<double> node_series(std::size_t node, std::size_t feature = 0) const {
        std::vector<double> out(num_frames);
        for (std::size_t t = 0; t < num_frames; ++t) out[t] = at(t, node, feature);
        return out;
    }

    /// Frames [begin, end) as a new series; distances and ids carried over.
    RawSeries slice(std::size_t begin, std::size_t end) const {
        RawSeries out = *this;
        out.num_frames = end - begin;
        const std::size_t stride = num_nodes * num_features;
        out.values.assign(values.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                          values.begin() + static_cast<std::ptrdiff_t>(end * stride));
        return out;
    }

    void validate() const {
        if (values.size() != num_frames * num_nodes * num_features)
            throw std::invalid_argument("RawSeries: values length != frames*N*F");
        if (!distances.empty() && (distances.rows() != num_nodes || distances.cols() != num_nodes))
            throw std::invalid_argument("RawSeries: distance matrix must be N x N");
    }
};

struct WindowedSample {
    std::size_t index = 0;
    std::size_t start_frame = 0;  // absolute frame of x's first step
    std::vector<double> x;        // N*T_p*F
    std::vector<double> y;        // N*T_f*F, raw units
    double dynamic_intensity = 0.0;
};

struct WindowShape {
    std::size_t num_nodes = 0;
    std::size_t history = 0;  // T_p
    std::size_t horizon = 0;  // T_f
    std::size_t num_features = 1;

    std::size_t x_size() const { return num_nodes * history * num_features; }
    std::size_t y_size() const { return num_nodes * horizon * num_features; }
};

/// Mean over (node, feature) of the temporal population variance of the
/// target series. Independent of node order.
inline double dynamic_intensity(const std::vector<double>& y, const WindowShape& shape) {
    double total = 0.0;
    std::vector<double> series(shape.horizon);
    for (std::size_t n = 0; n < shape.num_nodes; ++n)
        for (std::size_t f = 0; f < shape.num_features; ++f) {
            for (std::size_t t = 0; t < shape.horizon; ++t)
                series[t] = y[(n * shape.horizon + t) * shape.num_features + f];
            total += pop_var(series);
        }
    return total / static_cast<double>(shape.num_nodes * shape.num_features);
}

inline std::vector<WindowedSample> make_windows(const RawSeries& series, std::size_t history,
                                                std::size_t horizon,
                                                std::size_t frame_offset = 0) {
    if (history == 0 || horizon == 0) throw std::invalid_argument("make_windows: T_p and T_f must be >= 1");
    if (series.num_frames < history + horizon)
        throw std::invalid_argument("make_windows: insufficient frames (" +
                                    std::to_string(series.num_frames) + " < T_p + T_f = " +
                                    std::to_string(history + horizon) + ")");
    const std::size_t n_nodes = series.num_nodes, n_feat = series.num_features;
    const WindowShape shape{n_nodes, history, horizon, n_feat};
    const std::size_t count = series.num_frames - history - horizon + 1;
    std::vector<WindowedSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        WindowedSample s;
        s.index = i;
        s.start_frame = frame_offset + i;
        s.x.resize(shape.x_size());
        s.y.resize(shape.y_size());
        for (std::size_t n = 0; n < n_nodes; ++n)
            for (std::size_t f = 0; f < n_feat; ++f) {
                for (std::size_t t = 0; t < history; ++t)
                    s.x[(n * history + t) * n_feat + f] = series.at(i + t, n, f);
                for (std::size_t t = 0; t < horizon; ++t)
                    s.y[(n * horizon + t) * n_feat + f] = series.at(i + history + t, n, f);
            }
        s.dynamic_intensity = dynamic_intensity(s.y, shape);
        out.push_back(std::move(s));
    }
    return out;
}

/// Per-feature z-score statistics.
struct Normalizer {
    static constexpr double std_floor = 1e-8;
    std::vector<double> mean;
    std::vector<double> stddev;

    static Normalizer fit(const RawSeries& train) {
        Normalizer z;
        const std::size_t nf = train.num_features;
        z.mean.assign(nf, 0.0);
        z.stddev.assign(nf, 0.0);
        const double count = static_cast<double>(train.num_frames * train.num_nodes);
        for (std::size_t f = 0; f < nf; ++f) {
            double s = 0.0;
            for (std::size_t t = 0; t < train.num_frames; ++t)
                for (std::size_t n = 0; n < train.num_nodes; ++n) s += train.at(t, n, f);
            const double m = s / count;
            double v = 0.0;
            for (std::size_t t = 0; t < train.num_frames; ++t)
                for (std::size_t n = 0; n < train.num_nodes; ++n) {
                    const double d = train.at(t, n, f) - m;
                    v += d * d;
                }
            z.mean[f] = m;
            z.stddev[f] = std::max(std::sqrt(v / count), std_floor);
        }
        return z;
    }

    // Buffers are [..][feature] with feature fastest.
    void normalize(std::vector<double>& buf) const {
        const std::size_t nf = mean.size();
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = (buf[i] - mean[i % nf]) / stddev[i % nf];
    }
    void denormalize(std::vector<double>& buf) const {
        const std::size_t nf = mean.size();
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = buf[i] * stddev[i % nf] + mean[i % nf];
    }
};

struct SplitBounds {
    std::size_t train_end = 0;
    std::size_t val_end = 0;
    std::size_t total = 0;
};

struct DatasetSplit {
    WindowShape shape;
    std::vector<WindowedSample> train, val, test;  // x normalized, y raw
    Normalizer normalizer;
    SplitBounds bounds;
    std::size_t period = 0;
};

inline SplitBounds split_bounds(std::size_t frames, double r_train, double r_val, double r_test) {
    if (r_train <= 0 || r_val <= 0 || r_test <= 0)
        throw std::invalid_argument("chrono_split: ratios must be positive");
    if (std::abs(r_train + r_val + r_test - 1.0) > 1e-9)
        throw std::invalid_argument("chrono_split: ratios must sum to 1");
    const double n = static_cast<double>(frames);
    SplitBounds b;
    b.train_end = static_cast<std::size_t>(std::floor(r_train * n + 1e-9));
    b.val_end = static_cast<std::size_t>(std::floor((r_train + r_val) * n + 1e-9));
    b.total = frames;
    return b;
}

/// Chronological split; windows are built inside each portion and never
/// straddle a boundary. Normalization statistics come from the train frames.
inline DatasetSplit chrono_split(const RawSeries& series, double r_train, double r_val,
                                 double r_test, std::size_t history, std::size_t horizon) {
    series.validate();
    const SplitBounds b = split_bounds(series.num_frames, r_train, r_val, r_test);
    const std::size_t need = history + horizon;
    const auto check = [&](const char* name, std::size_t len) {
        if (len < need)
            throw std::invalid_argument(std::string("chrono_split: ") + name + " portion has " +
                                        std::to_string(len) + " frames, need T_p + T_f = " +
                                        std::to_string(need));
    };
    check("train", b.train_end);
    check("val", b.val_end - b.train_end);
    check("test", b.total - b.val_end);

    DatasetSplit out;
    out.shape = WindowShape{series.num_nodes, history, horizon, series.num_features};
    out.bounds = b;
    out.period = series.period;
    const RawSeries train = series.slice(0, b.train_end);
    out.normalizer = Normalizer::fit(train);
    out.train = make_windows(train, history, horizon, 0);
    out.val = make_windows(series.slice(b.train_end, b.val_end), history, horizon, b.train_end);
    out.test = make_windows(series.slice(b.val_end, b.total), history, horizon, b.val_end);
    for (auto* part : {&out.train, &out.val, &out.test})
        for (auto& s : *part) out.normalizer.normalize(s.x);
    return out;
}

// ---------------------------------------------------------------------------
// Graph prior
// ---------------------------------------------------------------------------

struct Adjacency {
    DenseMatrix weights;
    double threshold = 0.0;     // kappa
    double kernel_width = 0.0;  // sigma_d
};

inline Adjacency build_adjacency(const DenseMatrix& d, double kappa) {
    const std::size_t n = d.rows();
    if (n != d.cols()) throw std::invalid_argument("build_adjacency: distance matrix not square");
    if (!(kappa > 0.0 && kappa < 1.0)) throw std::invalid_argument("build_adjacency: kappa must lie in (0,1)");
    std::vector<double> off;
    off.reserve(n * (n > 0 ? n - 1 : 0));
    for (std::size_t i = 0; i < n; ++i) {
        if (d(i, i) != 0.0) throw std::invalid_argument("build_adjacency: non-zero diagonal");
        for (std::size_t j = 0; j < n; ++j) {
            if (d(i, j) < 0.0 || !std::isfinite(d(i, j)))
                throw std::invalid_argument("build_adjacency: distances must be finite and non-negative");
            if (std::abs(d(i, j) - d(j, i)) > 1e-9 * std::max(1.0, std::abs(d(i, j))))
                throw std::invalid_argument("build_adjacency: distance matrix not symmetric");
            if (i != j) off.push_back(d(i, j));
        }
    }
    if (off.empty()) throw std::invalid_argument("degenerate distances");
    const double sigma = pop_std(off);
    if (sigma == 0.0) throw std::invalid_argument("degenerate distances");

    Adjacency a{DenseMatrix(n, n), kappa, sigma};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double w = std::exp(-(d(i, j) * d(i, j)) / (sigma * sigma));
            if (w >= kappa) a.weights(i, j) = w;
        }
    return a;
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

inline std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace detail

inline RawSeries parse_csv(std::istream& in, const std::string& source = "<csv>") {
    RawSeries s;
    s.num_features = 1;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        if (!have_header) {
            if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
            s.node_ids = detail::split_commas(line);
            s.num_nodes = s.node_ids.size();
            have_header = true;
            continue;
        }
        const auto cells = detail::split_commas(line);
        const std::size_t row = s.num_frames + 1;
        const std::string where = source + ": row " + std::to_string(row) + " (line " +
                                  std::to_string(line_no) + ")";
        if (cells.size() != s.num_nodes)
            throw ParseError(where + ": expected " + std::to_string(s.num_nodes) + " cells, got " +
                             std::to_string(cells.size()));
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const std::string& cell = cells[c];
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (cell.empty() || used != cell.size() || !std::isfinite(v))
                throw ParseError(where + ", column " + std::to_string(c + 1) + ": non-numeric cell '" +
                                 cell + "'");
            s.values.push_back(v);
        }
        ++s.num_frames;
    }
    if (s.num_frames == 0) throw ParseError(source + ": no frames");
    if (s.num_frames < 2) throw ParseError(source + ": need at least 2 frames, got 1");
    return s;
}

inline RawSeries load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    return parse_csv(in, path);
}

// ---------------------------------------------------------------------------
// STB1 binary format
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(out, bits);
}

inline std::uint64_t get_uint(std::istream& in, int bytes, const std::string& what) {
    unsigned char b[8] = {};
    if (!in.read(reinterpret_cast<char*>(b), bytes)) throw ParseError("truncated file reading " + what);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& in, const std::string& what) {
    const std::uint64_t bits = get_uint(in, 8, what);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

}  // namespace detail

inline void write_stb(std::ostream& out, const RawSeries& s) {
    s.validate();
    out.write("STB1", 4);
    detail::put_u32(out, static_cast<std::uint32_t>(s.num_nodes));
    detail::put_u32(out, static_cast<std::uint32_t>(s.num_frames));
    detail::put_u32(out, static_cast<std::uint32_t>(s.num_features));
    for (double v : s.values) detail::put_f64(out, v);
    const bool has_d = !s.distances.empty();
    out.put(static_cast<char>(has_d ? 1 : 0));
    if (has_d)
        for (double v : s.distances.data()) detail::put_f64(out, v);
}

inline RawSeries read_stb(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "STB1", 4) != 0) throw ParseError("bad magic, expected STB1");
    RawSeries s;
    s.num_nodes = detail::get_uint(in, 4, "N");
    s.num_frames = detail::get_uint(in, 4, "frames");
    s.num_features = detail::get_uint(in, 4, "F");
    if (s.num_nodes == 0 || s.num_features == 0) throw ParseError("STB1: N and F must be positive");
    if (s.num_frames < 2) throw ParseError("STB1: no frames");
    const std::size_t count = s.num_nodes * s.num_frames * s.num_features;
    s.values.resize(count);
    for (auto& v : s.values) v = detail::get_f64(in, "values");
    const auto flag = detail::get_uint(in, 1, "distance flag");
    if (flag == 1) {
        s.distances = DenseMatrix(s.num_nodes, s.num_nodes);
        for (auto& v : s.distances.data()) v = detail::get_f64(in, "distances");
    } else if (flag != 0) {
        throw ParseError("STB1: distance flag must be 0 or 1");
    }
    for (std::size_t n = 0; n < s.num_nodes; ++n) s.node_ids.push_back(std::to_string(n));
    return s;
}

inline void save_stb(const std::string& path, const RawSeries& s) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_stb(out, s);
}

inline RawSeries load_stb(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    return read_stb(in);
}

/// Dispatch on extension: .csv goes through the CSV reader, everything else is STB1.
inline RawSeries load_series(const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) return load_csv(path);
    return load_stb(path);
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/*
 * Generative recipe (one feature):
 *
 *   latent_j(t) = sin(2*pi*(j+1)*t/period + phase_j),     j < rank
 *   clean_n(t)  = base_n + sum_j loading_nj * latent_j(t)
 *   value_n(t)  = clean_n(t) + noise_level * z_nt + spikes_n(t)
 *
 *   base_n       ~ base_level * U(0.8, 1.2)
 *   loading_nj   ~ amplitude * U(0.5, 1.5) / (j+1)
 *   z_nt         ~ N(0, 1)
 *   spikes       events start at each frame with probability
 *                anomaly_rate / anomaly_duration, hit one uniformly chosen
 *                node and add a half-sine bump of peak height
 *                anomaly_magnitude * U(0.5, 1.5) lasting anomaly_duration
 *                frames. anomaly_rate is therefore the expected fraction
 *                of frames touched by some event.
 *
 * Node coordinates are uniform in the unit square; distances are Euclidean.
 * Each ingredient draws from its own child stream.
 */
struct SynthSpec {
    std::size_t num_nodes = 20;
    std::size_t num_frames = 3000;
    std::size_t rank = 3;
    std::size_t period = 48;
    double base_level = 100.0;
    double amplitude = 30.0;
    double noise_level = 2.0;
    double anomaly_rate = 0.05;
    double anomaly_magnitude = 150.0;
    std::size_t anomaly_duration = 12;
};

struct SynthOutput {
    RawSeries series;
    std::vector<double> clean;  // latent reconstruction, same layout as values
    std::vector<double> noise;  // standard-normal draws z, same layout
    std::size_t anomaly_events = 0;
};

inline SynthOutput synthesize_detailed(const SynthSpec& spec, const SeededRng& rng) {
    if (spec.num_nodes == 0 || spec.num_frames < 2) throw std::invalid_argument("synthesize: need N >= 1 and frames >= 2");
    if (spec.rank == 0) throw std::invalid_argument("synthesize: rank must be >= 1");
    if (spec.rank > spec.num_nodes) throw std::invalid_argument("synthesize: rank k > N");
    if (spec.period < 2) throw std::invalid_argument("synthesize: period must be >= 2");
    if (spec.noise_level < 0 || spec.anomaly_rate < 0 || spec.anomaly_rate > 1 || spec.anomaly_duration == 0)
        throw std::invalid_argument("synthesize: invalid noise/anomaly settings");

    const std::size_t n_nodes = spec.num_nodes, frames = spec.num_frames, k = spec.rank;
    SeededRng shape_rng = rng.split(Stream::synthesis, 0);
    SeededRng noise_rng = rng.split(Stream::synthesis, 1);
    SeededRng spike_rng = rng.split(Stream::synthesis, 2);
    SeededRng coord_rng = rng.split(Stream::synthesis, 3);

    constexpr double two_pi = 6.283185307179586476925;
    std::vector<double> phase(k);
    for (auto& p : phase) p = shape_rng.uniform(0.0, two_pi);
    std::vector<double> base(n_nodes);
    for (auto& b : base) b = spec.base_level * shape_rng.uniform(0.8, 1.2);
    DenseMatrix loading(n_nodes, k);
    for (std::size_t n = 0; n < n_nodes; ++n)
        for (std::size_t j = 0; j < k; ++j)
            loading(n, j) = spec.amplitude * shape_rng.uniform(0.5, 1.5) / static_cast<double>(j + 1);

    SynthOutput out;
    RawSeries& s = out.series;
    s.num_nodes = n_nodes;
    s.num_frames = frames;
    s.num_features = 1;
    s.period = spec.period;
    s.values.resize(frames * n_nodes);
    out.clean.resize(frames * n_nodes);
    out.noise.resize(frames * n_nodes);
    for (std::size_t n = 0; n < n_nodes; ++n) s.node_ids.push_back("node" + std::to_string(n));

    std::vector<double> latent(k);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t j = 0; j < k; ++j)
            latent[j] = std::sin(two_pi * static_cast<double>((j + 1) * t) / static_cast<double>(spec.period) + phase[j]);
        for (std::size_t n = 0; n < n_nodes; ++n) {
            double c = base[n];
            for (std::size_t j = 0; j < k; ++j) c += loading(n, j) * latent[j];
            const double z = noise_rng.normal();
            const std::size_t idx = t * n_nodes + n;
            out.clean[idx] = c;
            out.noise[idx] = z;
            s.values[idx] = c + spec.noise_level * z;
        }
    }

    if (spec.anomaly_rate > 0.0) {
        const double start_p = spec.anomaly_rate / static_cast<double>(spec.anomaly_duration);
        for (std::size_t t = 0; t < frames; ++t) {
            if (!spike_rng.bernoulli(start_p)) continue;
            const std::size_t node = spike_rng.below(n_nodes);
            const double mag = spec.anomaly_magnitude * spike_rng.uniform(0.5, 1.5);
            const double dur = static_cast<double>(spec.anomaly_duration);
            for (std::size_t u = t; u < std::min(frames, t + spec.anomaly_duration); ++u)
                s.values[u * n_nodes + node] +=
                    mag * std::sin(3.14159265358979323846 * (static_cast<double>(u - t) + 0.5) / dur);
            ++out.anomaly_events;
        }
    }

    std::vector<double> cx(n_nodes), cy(n_nodes);
    for (std::size_t n = 0; n < n_nodes; ++n) {
        cx[n] = coord_rng.uniform();
        cy[n] = coord_rng.uniform();
    }
    s.distances = DenseMatrix(n_nodes, n_nodes);
    for (std::size_t i = 0; i < n_nodes; ++i)
        for (std::size_t j = 0; j < n_nodes; ++j)
            s.distances(i, j) = std::hypot(cx[i] - cx[j], cy[i] - cy[j]);
    return out;
}

inline RawSeries synthesize(const SynthSpec& spec, const SeededRng& rng) {
    return synthesize_detailed(spec, rng).series;
}

}  // namespace stprune
