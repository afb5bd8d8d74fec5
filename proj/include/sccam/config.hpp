#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sccam/data.hpp"
#include "sccam/errors.hpp"
#include "sccam/model.hpp"
#include "sccam/train.hpp"

namespace sccam {

// Run configuration file grammar (documented in the README):
//   - one "key = value" pair per line, keys are dotted lowercase words
//   - '#' starts a comment (whole line or trailing)
//   - lists are comma separated
//   - unknown keys are rejected, as are duplicate assignments
// Command-line flags override file values; built-in defaults fill the rest.

/// Ordered key/value store with consumption tracking.
class ConfigMap {
public:
    void set(const std::string& key, const std::string& value, bool allow_replace) {
        for (auto& e : entries_)
            if (e.key == key) {
                if (!allow_replace)
                    throw ConfigError("duplicate key '" + key + "' in configuration");
                e.value = value;
                return;
            }
        entries_.push_back({key, value, false});
    }

    bool has(const std::string& key) const {
        for (const auto& e : entries_)
            if (e.key == key) return true;
        return false;
    }

    /// Fetch and mark consumed; returns fallback when absent.
    std::string take(const std::string& key, const std::string& fallback) {
        for (auto& e : entries_)
            if (e.key == key) {
                e.consumed = true;
                return e.value;
            }
        return fallback;
    }

    bool take_flag(const std::string& key, bool fallback) {
        const std::string v = take(key, fallback ? "true" : "false");
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
    }

    long long take_int(const std::string& key, long long fallback) {
        const std::string v = take(key, std::to_string(fallback));
        long long out = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || p != v.data() + v.size())
            throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
        return out;
    }

    std::uint64_t take_u64(const std::string& key, std::uint64_t fallback) {
        const std::string v = take(key, std::to_string(fallback));
        std::uint64_t out = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || p != v.data() + v.size())
            throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
        return out;
    }

    double take_double(const std::string& key, double fallback) {
        std::ostringstream os;
        os.precision(17);
        os << fallback;
        const std::string v = take(key, os.str());
        double out = 0.0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || p != v.data() + v.size())
            throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
        return out;
    }

    std::vector<int> take_int_list(const std::string& key) {
        const std::string v = take(key, "");
        std::vector<int> out;
        if (v.empty()) return out;
        std::size_t pos = 0;
        while (pos <= v.size()) {
            std::size_t next = v.find(',', pos);
            if (next == std::string::npos) next = v.size();
            std::string cell = v.substr(pos, next - pos);
            while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
            while (!cell.empty() && cell.back() == ' ') cell.pop_back();
            int x = 0;
            auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), x);
            if (ec != std::errc{} || p != cell.data() + cell.size())
                throw ConfigError("key '" + key + "': expected an integer list, got '" + v + "'");
            out.push_back(x);
            pos = next + 1;
        }
        return out;
    }

    /// Every key must have been consumed; leftovers are configuration errors.
    void reject_unconsumed() const {
        std::vector<std::string> unknown;
        for (const auto& e : entries_)
            if (!e.consumed) unknown.push_back(e.key);
        if (!unknown.empty()) {
            std::ostringstream os;
            os << "unknown configuration key" << (unknown.size() > 1 ? "s" : "") << ": ";
            for (std::size_t i = 0; i < unknown.size(); ++i) os << (i ? ", " : "") << unknown[i];
            throw ConfigError(os.str());
        }
    }

private:
    struct Entry {
        std::string key;
        std::string value;
        bool consumed;
    };
    std::vector<Entry> entries_;
};

namespace detail {
inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}
} // namespace detail

inline ConfigMap parse_config_text(std::istream& in, const std::string& what) {
    ConfigMap map;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            std::ostringstream os;
            os << what << " line " << lineno << ": expected 'key = value', got '" << t << "'";
            throw ConfigError(os.str());
        }
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        if (key.empty()) {
            std::ostringstream os;
            os << what << " line " << lineno << ": empty key";
            throw ConfigError(os.str());
        }
        map.set(key, value, false);
    }
    return map;
}

inline ConfigMap parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse_config_text(in, "config file '" + path + "'");
}

/// Per-class fault description as configured (class label 1..M-1).
struct FaultSpec {
    int class_label = 1;
    SyntheticFaultConfig fault;
};

/// Everything one run needs: data generation, scenario, model, training.
struct RunConfig {
    std::uint64_t seed = 7;

    struct Paths {
        std::string data_dir = "data";
        std::string out_dir = "out";
        std::string coupling_file; // optional {H,H} CSV
    } paths;

    struct Data {
        int variables = 5;
        int classes = 2;
        int window = 20;
        int stride = 20;
        double noise_scale = 1.0;
    } data;

    ScenarioSpec scenario;
    std::vector<FaultSpec> faults;
    ModelConfig model;
    TrainConfig train;

    /// Train-stage view with the master seed and augmentation scale applied.
    TrainConfig effective_train() const {
        TrainConfig t = train;
        t.seed = seed;
        t.noise_scale = data.noise_scale;
        return t;
    }
};

inline RunConfig run_config_from_map(ConfigMap& map) {
    RunConfig cfg;
    cfg.seed = map.take_u64("seed", cfg.seed);

    cfg.paths.data_dir = map.take("paths.data_dir", cfg.paths.data_dir);
    cfg.paths.out_dir = map.take("paths.out_dir", cfg.paths.out_dir);
    cfg.paths.coupling_file = map.take("paths.coupling_file", "");

    cfg.data.variables = static_cast<int>(map.take_int("data.variables", cfg.data.variables));
    cfg.data.classes = static_cast<int>(map.take_int("data.classes", cfg.data.classes));
    cfg.data.window = static_cast<int>(map.take_int("data.window", cfg.data.window));
    cfg.data.stride = static_cast<int>(map.take_int("data.stride", cfg.data.window));
    cfg.data.noise_scale = map.take_double("data.noise_scale", cfg.data.noise_scale);
    if (cfg.data.variables < 2) throw ConfigError("data.variables must be >= 2");
    if (cfg.data.classes < 2) throw ConfigError("data.classes must be >= 2");
    if (cfg.data.window < 1) throw ConfigError("data.window must be >= 1");
    if (cfg.data.stride < 1) throw ConfigError("data.stride must be >= 1");
    if (cfg.data.noise_scale < 0) throw ConfigError("data.noise_scale must be >= 0");

    cfg.scenario.kind = scenario_kind_from(map.take("scenario.kind", "balanced"));
    cfg.scenario.train_counts = map.take_int_list("scenario.train_counts");
    cfg.scenario.test_counts = map.take_int_list("scenario.test_counts");
    if (cfg.scenario.train_counts.empty())
        cfg.scenario.train_counts.assign(static_cast<std::size_t>(cfg.data.classes), 100);
    if (cfg.scenario.test_counts.empty())
        cfg.scenario.test_counts.assign(static_cast<std::size_t>(cfg.data.classes), 50);
    cfg.scenario.seed = cfg.seed;
    if (static_cast<int>(cfg.scenario.train_counts.size()) != cfg.data.classes ||
        static_cast<int>(cfg.scenario.test_counts.size()) != cfg.data.classes)
        throw ConfigError("scenario count lists must have one entry per class");
    cfg.scenario.validate();

    for (int c = 1; c < cfg.data.classes; ++c) {
        const std::string prefix = "fault." + std::to_string(c) + ".";
        FaultSpec fs;
        fs.class_label = c;
        // default: rotate the fault variable across classes
        fs.fault.fault_variable = (c - 1) % cfg.data.variables;
        fs.fault.fault_variable =
            static_cast<int>(map.take_int(prefix + "variable", fs.fault.fault_variable));
        fs.fault.kind = fault_kind_from(map.take(prefix + "kind", "step"));
        fs.fault.magnitude = map.take_double(prefix + "magnitude", 3.0);
        fs.fault.onset = static_cast<int>(map.take_int(prefix + "onset", 0));
        fs.fault.validate(cfg.data.variables);
        cfg.faults.push_back(std::move(fs));
    }

    cfg.model.reduction = static_cast<int>(map.take_int("model.reduction", cfg.model.reduction));
    cfg.model.alpha = static_cast<int>(map.take_int("model.alpha", cfg.model.alpha));
    cfg.model.hidden = static_cast<int>(map.take_int("model.hidden", cfg.model.hidden));
    cfg.model.embedding = static_cast<int>(map.take_int("model.embedding", cfg.model.embedding));
    cfg.model.normalize_embeddings =
        map.take_flag("model.normalize_embeddings", cfg.model.normalize_embeddings);
    cfg.model.bn_epsilon = map.take_double("model.bn_epsilon", cfg.model.bn_epsilon);
    cfg.model.bn_momentum = map.take_double("model.bn_momentum", cfg.model.bn_momentum);
    cfg.model.validate();

    cfg.train.batch = static_cast<int>(map.take_int("train.batch", cfg.train.batch));
    cfg.train.epochs_stage1 = static_cast<int>(map.take_int("train.epochs_stage1", cfg.train.epochs_stage1));
    cfg.train.epochs_stage2 = static_cast<int>(map.take_int("train.epochs_stage2", cfg.train.epochs_stage2));
    cfg.train.lr_stage1 = map.take_double("train.lr_stage1", cfg.train.lr_stage1);
    cfg.train.lr_stage2 = map.take_double("train.lr_stage2", cfg.train.lr_stage2);
    cfg.train.optimizer = optimizer_kind_from(map.take("train.optimizer", to_string(cfg.train.optimizer)));
    cfg.train.momentum = map.take_double("train.momentum", cfg.train.momentum);
    cfg.train.temperature = map.take_double("train.temperature", cfg.train.temperature);
    cfg.train.freeze_encoder = map.take_flag("train.freeze_encoder", cfg.train.freeze_encoder);
    cfg.train.seed = cfg.seed;
    cfg.train.noise_scale = cfg.data.noise_scale;
    cfg.train.validate();

    map.reject_unconsumed();
    return cfg;
}

inline RunConfig load_run_config(const std::string& path,
                                 const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
    ConfigMap map = parse_config_file(path);
    for (const auto& [k, v] : overrides) map.set(k, v, true);
    return run_config_from_map(map);
}

inline RunConfig default_run_config(
    const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
    ConfigMap map;
    for (const auto& [k, v] : overrides) map.set(k, v, true);
    return run_config_from_map(map);
}

} // namespace sccam
