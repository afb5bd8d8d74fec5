#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sccam/data.hpp"
#include "sccam/errors.hpp"
#include "sccam/model.hpp"

namespace sccam {

enum class ExplanationScope { global, local };

inline const char* to_string(ExplanationScope s) {
    return s == ExplanationScope::global ? "global" : "local";
}

/// Channel-averaged feature contribution over one window: H variables by W
/// timesteps, annotated with variable names and the window's time indices.
struct AttentionMap {
    Tensor values; // {H, W}
    std::vector<std::string> variable_names;
    std::vector<int> time_indices;

    int var_count() const { return values.shape[0]; }
    int window() const { return values.shape[1]; }
};

/// A root-cause verdict: the attention map, per-variable contributions
/// (time-averaged rows), the descending ranking and its head. Ties break to
/// the lowest variable index.
struct Explanation {
    AttentionMap map;
    std::vector<double> contributions;
    std::vector<int> ranking;
    int root_cause = 0;
    ExplanationScope scope = ExplanationScope::local;
    int class_id = 0;

    const std::string& root_cause_name() const {
        return map.variable_names[static_cast<std::size_t>(root_cause)];
    }
};

/// Channel-wise average pooling of the refined feature map F_S:
/// map[h,w] = mean over the 32 channels of F_S[c,h,w]. Raw values are kept
/// (no per-map normalization) so cross-sample averaging stays meaningful.
inline AttentionMap attention_map(const ForwardArtifacts& artifacts,
                                  std::vector<std::string> variable_names = {},
                                  std::vector<int> time_indices = {}) {
    const Shape& fs = artifacts.refined.shape;
    if (fs.size() != 3) throw ShapeError("attention_map expects a {C,H,W} refined map");
    const int c = fs[0], h = fs[1], w = fs[2];
    std::vector<double> vals(static_cast<std::size_t>(h) * w, 0.0);
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = artifacts.refined.values.data() + static_cast<std::size_t>(ci) * h * w;
        for (std::size_t i = 0; i < vals.size(); ++i) vals[i] += plane[i];
    }
    const double inv = 1.0 / static_cast<double>(c);
    for (double& v : vals) v *= inv;
    AttentionMap map;
    map.values = Tensor({h, w}, std::move(vals));
    map.variable_names = variable_names.empty() ? default_variable_names(h) : std::move(variable_names);
    if (static_cast<int>(map.variable_names.size()) != h)
        throw ShapeError("attention_map: variable name count does not match rows");
    if (time_indices.empty()) {
        map.time_indices.resize(static_cast<std::size_t>(w));
        std::iota(map.time_indices.begin(), map.time_indices.end(), 0);
    } else {
        if (static_cast<int>(time_indices.size()) != w)
            throw ShapeError("attention_map: time index count does not match columns");
        map.time_indices = std::move(time_indices);
    }
    return map;
}

namespace detail {

inline Explanation explanation_from_map(AttentionMap map, ExplanationScope scope, int class_id) {
    Explanation e;
    const int h = map.var_count();
    const int w = map.window();
    e.contributions.resize(static_cast<std::size_t>(h));
    for (int v = 0; v < h; ++v) {
        const double* row = map.values.values.data() + static_cast<std::size_t>(v) * w;
        double s = 0.0;
        for (int t = 0; t < w; ++t) s += row[t];
        e.contributions[static_cast<std::size_t>(v)] = s / static_cast<double>(w);
    }
    e.ranking.resize(static_cast<std::size_t>(h));
    std::iota(e.ranking.begin(), e.ranking.end(), 0);
    std::stable_sort(e.ranking.begin(), e.ranking.end(), [&](int a, int b) {
        return e.contributions[static_cast<std::size_t>(a)] > e.contributions[static_cast<std::size_t>(b)];
    });
    e.root_cause = e.ranking.front();
    e.scope = scope;
    e.class_id = class_id;
    e.map = std::move(map);
    return e;
}

} // namespace detail

/// Explain a single window: one infer-mode forward pass, channel-averaged
/// attention map, time-averaged contributions, ranking. The class id is the
/// model's prediction for the window.
inline Explanation local_explanation(Model& model, const WindowedSample& window) {
    auto out = model_forward(model, stack_batch({&window.data}), Mode::infer, true);
    std::vector<int> times(static_cast<std::size_t>(window.window()));
    std::iota(times.begin(), times.end(), window.origin.start);
    auto names = model.variable_names.empty() ? default_variable_names(window.var_count())
                                              : model.variable_names;
    AttentionMap map = attention_map(out.artifacts.front(), names, std::move(times));
    return detail::explanation_from_map(std::move(map), ExplanationScope::local,
                                        out.classification.labels.front());
}

/// Explain a class over a test set: the element-wise mean of the attention
/// maps of every test window labeled with that class.
inline Explanation global_explanation(Model& model, const std::vector<WindowedSample>& test,
                                      int class_id) {
    std::vector<const WindowedSample*> members;
    for (const auto& s : test)
        if (s.label == class_id) members.push_back(&s);
    if (members.empty()) {
        std::ostringstream os;
        os << "no test samples of class " << class_id;
        throw DataError(os.str());
    }
    const int h = members.front()->var_count();
    const int w = members.front()->window();
    std::vector<double> acc(static_cast<std::size_t>(h) * w, 0.0);
    const int chunk = 64;
    for (std::size_t start = 0; start < members.size(); start += chunk) {
        const std::size_t count = std::min<std::size_t>(chunk, members.size() - start);
        std::vector<const Tensor*> windows;
        windows.reserve(count);
        for (std::size_t i = 0; i < count; ++i) windows.push_back(&members[start + i]->data);
        auto out = model_forward(model, stack_batch(windows), Mode::infer, true);
        for (std::size_t i = 0; i < count; ++i) {
            AttentionMap m = attention_map(out.artifacts[i]);
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += m.values.values[k];
        }
    }
    const double inv = 1.0 / static_cast<double>(members.size());
    for (double& v : acc) v *= inv;
    AttentionMap map;
    map.values = Tensor({h, w}, std::move(acc));
    map.variable_names = model.variable_names.empty() ? default_variable_names(h)
                                                      : model.variable_names;
    map.time_indices.resize(static_cast<std::size_t>(w));
    std::iota(map.time_indices.begin(), map.time_indices.end(), 0);
    return detail::explanation_from_map(std::move(map), ExplanationScope::global, class_id);
}

enum class HeatmapFormat { csv, pgm };

/// Write a heatmap to disk.
/// CSV: header row "variable,<t0>,<t1>,..."; one row per variable holding its
/// name and full-precision values.
/// PGM: binary P5, 8-bit, min-max scaled per map; a constant map renders as
/// mid-gray 128. Row order equals variable order.
inline void export_heatmap(const Explanation& explanation, const std::string& path,
                           HeatmapFormat format) {
    const AttentionMap& map = explanation.map;
    const int h = map.var_count();
    const int w = map.window();
    if (format == HeatmapFormat::csv) {
        std::ofstream out(path);
        if (!out) throw ConfigError("cannot write heatmap '" + path + "'");
        out << "variable";
        for (int t = 0; t < w; ++t) out << ',' << map.time_indices[static_cast<std::size_t>(t)];
        out << '\n';
        char buf[40];
        for (int v = 0; v < h; ++v) {
            out << map.variable_names[static_cast<std::size_t>(v)];
            for (int t = 0; t < w; ++t) {
                std::snprintf(buf, sizeof buf, "%.17g", map.values.values[static_cast<std::size_t>(v) * w + t]);
                out << ',' << buf;
            }
            out << '\n';
        }
        if (!out) throw ConfigError("write failed for heatmap '" + path + "'");
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write heatmap '" + path + "'");
    double lo = map.values.values.front(), hi = lo;
    for (double v : map.values.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    out << "P5\n" << w << ' ' << h << "\n255\n";
    const double range = hi - lo;
    for (double v : map.values.values) {
        int g = range > 0.0 ? static_cast<int>(std::lround((v - lo) / range * 255.0)) : 128;
        g = std::clamp(g, 0, 255);
        out.put(static_cast<char>(static_cast<unsigned char>(g)));
    }
    if (!out) throw ConfigError("write failed for heatmap '" + path + "'");
}

/// Re-read an exported CSV heatmap (used by round-trip checks and tooling).
inline AttentionMap load_heatmap_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open heatmap '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("heatmap '" + path + "' is empty");
    auto header = detail::split_csv_line(line);
    if (header.size() < 2 || header.front() != "variable")
        throw DataError("heatmap '" + path + "' has no 'variable' header");
    AttentionMap map;
    const int w = static_cast<int>(header.size()) - 1;
    map.time_indices.resize(static_cast<std::size_t>(w));
    for (int t = 0; t < w; ++t) {
        double v = 0.0;
        if (!detail::parse_double(header[static_cast<std::size_t>(t + 1)], v))
            throw DataError("heatmap '" + path + "': non-numeric time index in header");
        map.time_indices[static_cast<std::size_t>(t)] = static_cast<int>(v);
    }
    std::vector<double> values;
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (static_cast<int>(cells.size()) != w + 1)
            throw DataError("heatmap '" + path + "': ragged row");
        map.variable_names.push_back(cells.front());
        for (int t = 0; t < w; ++t) {
            double v = 0.0;
            if (!detail::parse_double(cells[static_cast<std::size_t>(t + 1)], v))
                throw DataError("heatmap '" + path + "': non-numeric cell");
            values.push_back(v);
        }
        ++rows;
    }
    if (rows == 0) throw DataError("heatmap '" + path + "' has no data rows");
    map.values = Tensor({rows, w}, std::move(values));
    return map;
}

} // namespace sccam
