/*
 * config.hpp
 *
 * Experiment configuration: a flat key-value text file with [sections].
 *
 *   # comment
 *   [dataset]
 *   source = synth          # synth | csv | stb
 *   history = 12
 *
 * Every key must be known; unknown sections or keys are errors. Defaults
 * follow the reference hyperparameter table (100 epochs, batch 256,
 * lr 1e-3 -> 1e-4, momentum 0.9, weight decay 1e-4, lambda 0.5,
 * annealing cutoff 0.9). See README.md for the full key list.
 */
#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stprune/dataset.hpp"
#include "stprune/trainer.hpp"

namespace stprune {

/// Invalid configuration; raised before any compute happens.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class DataSource { synth, csv, stb };

struct ExperimentConfig {
    DataSource source = DataSource::synth;
    std::string data_path;
    SynthSpec synth;
    std::uint64_t synth_seed = 7;
    std::size_t history = 12;
    std::size_t horizon = 12;
    double train_ratio = 0.6, val_ratio = 0.2, test_ratio = 0.2;
    std::size_t period = 0;  // 0: take it from the data when known
    double adjacency_threshold = 0.1;

    TrainConfig train;
    std::vector<std::uint64_t> seeds{1};
    std::string output_dir = "out";
    bool analyze = false;
    bool dump_plans = false;
    bool checkpoint = false;

    void validate() const;
};

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double d = 0.0;
    try {
        d = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (v.empty() || used != v.size() || !std::isfinite(d)) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return d;
}

inline std::uint64_t parse_count(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    unsigned long long n = 0;
    try {
        if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
        n = std::stoull(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (v.empty() || used != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return n;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

}  // namespace detail

/// Binds every config key to a field; parsing and echoing share this table.
class ConfigSchema {
public:
    struct Entry {
        std::function<void(const std::string&)> set;
        std::function<std::string()> get;
    };

    explicit ConfigSchema(ExperimentConfig& c) {
        using namespace detail;
        const auto num = [&](const std::string& k, double& f) {
            add(k, [&f, k](const std::string& v) { f = parse_double(k, v); }, [&f] { return format_double(f); });
        };
        const auto count = [&](const std::string& k, std::size_t& f) {
            add(k, [&f, k](const std::string& v) { f = parse_count(k, v); }, [&f] { return std::to_string(f); });
        };
        const auto flag = [&](const std::string& k, bool& f) {
            add(k, [&f, k](const std::string& v) { f = parse_bool(k, v); }, [&f] { return std::string(f ? "true" : "false"); });
        };
        const auto text = [&](const std::string& k, std::string& f) {
            add(k, [&f](const std::string& v) { f = v; }, [&f] { return f; });
        };

        add("dataset.source",
            [&c](const std::string& v) {
                if (v == "synth") c.source = DataSource::synth;
                else if (v == "csv") c.source = DataSource::csv;
                else if (v == "stb") c.source = DataSource::stb;
                else throw ConfigError("dataset.source: expected synth|csv|stb, got '" + v + "'");
            },
            [&c] { return std::string(c.source == DataSource::synth ? "synth" : c.source == DataSource::csv ? "csv" : "stb"); });
        text("dataset.path", c.data_path);
        count("dataset.history", c.history);
        count("dataset.horizon", c.horizon);
        num("dataset.train_ratio", c.train_ratio);
        num("dataset.val_ratio", c.val_ratio);
        num("dataset.test_ratio", c.test_ratio);
        count("dataset.period", c.period);
        num("dataset.adjacency_threshold", c.adjacency_threshold);

        count("synth.nodes", c.synth.num_nodes);
        count("synth.frames", c.synth.num_frames);
        count("synth.rank", c.synth.rank);
        count("synth.period", c.synth.period);
        num("synth.base_level", c.synth.base_level);
        num("synth.amplitude", c.synth.amplitude);
        num("synth.noise_level", c.synth.noise_level);
        num("synth.anomaly_rate", c.synth.anomaly_rate);
        num("synth.anomaly_magnitude", c.synth.anomaly_magnitude);
        count("synth.anomaly_duration", c.synth.anomaly_duration);
        add("synth.seed", [&c](const std::string& v) { c.synth_seed = parse_count("synth.seed", v); },
            [&c] { return std::to_string(c.synth_seed); });

        add("model.arch", [&c](const std::string& v) {
                try {
                    c.train.model.arch = parse_architecture(v);
                } catch (const std::invalid_argument& e) {
                    throw ConfigError(std::string("model.arch: ") + e.what());
                }
            },
            [&c] { return std::string(to_string(c.train.model.arch)); });
        count("model.hidden", c.train.model.hidden);
        count("model.embed_dim", c.train.model.embed_dim);

        count("train.epochs", c.train.epochs);
        count("train.batch_size", c.train.batch_size);
        num("train.lr", c.train.base_lr);
        num("train.min_lr", c.train.min_lr);
        num("train.momentum", c.train.momentum);
        num("train.weight_decay", c.train.weight_decay);
        num("train.mape_floor", c.train.mape_floor);

        add("prune.policy", [&c](const std::string& v) {
                try {
                    c.train.prune.policy = parse_policy(v);
                } catch (const std::invalid_argument& e) {
                    throw ConfigError(std::string("prune.policy: ") + e.what());
                }
            },
            [&c] { return std::string(to_string(c.train.prune.policy)); });
        num("prune.ratio", c.train.prune.prune_ratio);
        num("prune.lambda", c.train.prune.lambda);
        num("prune.alpha", c.train.prune.alpha);
        num("prune.epsilon", c.train.prune.epsilon);
        num("prune.anneal_cutoff", c.train.prune.anneal_cutoff);
        flag("prune.disable_complexity", c.train.prune.disable_complexity);
        flag("prune.disable_rescale", c.train.prune.disable_rescale);
        flag("prune.disable_anneal", c.train.prune.disable_anneal);
        flag("prune.weights_on_informative", c.train.prune.weights_on_informative);

        add("run.seeds",
            [&c](const std::string& v) {
                c.seeds.clear();
                std::stringstream ss(v);
                std::string item;
                while (std::getline(ss, item, ',')) c.seeds.push_back(parse_count("run.seeds", trim(item)));
            },
            [&c] {
                std::string s;
                for (std::size_t i = 0; i < c.seeds.size(); ++i) s += (i ? "," : "") + std::to_string(c.seeds[i]);
                return s;
            });
        text("run.output", c.output_dir);
        flag("run.analyze", c.analyze);
        flag("run.dump_plans", c.dump_plans);
        flag("run.checkpoint", c.checkpoint);
    }

    void set(const std::string& key, const std::string& value) {
        const auto it = entries_.find(key);
        if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second.set(value);
    }

    bool has_section(const std::string& section) const {
        const std::string prefix = section + ".";
        for (const auto& [k, _] : entries_)
            if (k.compare(0, prefix.size(), prefix) == 0) return true;
        return false;
    }

    /// Canonical "key = value" lines, sorted by key.
    std::string echo() const {
        std::string out;
        for (const auto& [k, e] : entries_) out += k + " = " + e.get() + "\n";
        return out;
    }

private:
    void add(const std::string& key, std::function<void(const std::string&)> set, std::function<std::string()> get) {
        entries_[key] = Entry{std::move(set), std::move(get)};
    }

    std::map<std::string, Entry> entries_;
};

inline void parse_config_into(ExperimentConfig& cfg, std::istream& in, const std::string& source = "<config>") {
    ConfigSchema schema(cfg);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::string where = source + ":" + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "malformed section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (!schema.has_section(section)) throw ConfigError(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
        if (section.empty()) throw ConfigError(where + "key outside of a section");
        const std::string key = section + "." + detail::trim(line.substr(0, eq));
        try {
            schema.set(key, detail::trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
}

inline ExperimentConfig parse_config(std::istream& in, const std::string& source = "<config>") {
    ExperimentConfig cfg;
    parse_config_into(cfg, in, source);
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    return parse_config(in, path);
}

inline std::string config_echo(const ExperimentConfig& cfg) {
    ExperimentConfig copy = cfg;
    return ConfigSchema(copy).echo();
}

/// FNV-1a 64-bit over the canonical echo, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : config_echo(cfg)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline void ExperimentConfig::validate() const {
    try {
        train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (history == 0 || horizon == 0) throw ConfigError("dataset: history and horizon must be >= 1");
    if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9 || train_ratio <= 0 || val_ratio <= 0 ||
        test_ratio <= 0)
        throw ConfigError("dataset: split ratios must be positive and sum to 1");
    if (source != DataSource::synth && data_path.empty()) throw ConfigError("dataset.path is required for csv/stb sources");
    if (source == DataSource::synth) {
        if (synth.rank == 0 || synth.rank > synth.num_nodes) throw ConfigError("synth: need 1 <= rank <= nodes");
        if (synth.period < 2) throw ConfigError("synth: period must be >= 2");
        if (synth.num_frames < 2) throw ConfigError("synth: frames must be >= 2");
        if (synth.noise_level < 0 || synth.anomaly_rate < 0 || synth.anomaly_rate > 1 || synth.anomaly_duration == 0)
            throw ConfigError("synth: invalid noise/anomaly settings");
    }
    if (!(adjacency_threshold > 0.0 && adjacency_threshold < 1.0))
        throw ConfigError("dataset.adjacency_threshold must lie in (0, 1)");
    if (seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
    if (output_dir.empty()) throw ConfigError("run.output must not be empty");
}

}  // namespace stprune
