#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sccam/errors.hpp"
#include "sccam/rng.hpp"
#include "sccam/tensor.hpp"

namespace sccam {

/// A multivariate series: H named variables over L timesteps, row-major H x L.
struct RawSeries {
    std::vector<std::string> variables;
    Tensor values; // {H, L}
    std::string sampling_info;

    int var_count() const { return values.shape.empty() ? 0 : values.shape[0]; }
    int length() const { return values.shape.size() < 2 ? 0 : values.shape[1]; }

    double at(int variable, int t) const {
        return values.values[static_cast<std::size_t>(variable) * length() + t];
    }
};

inline std::vector<std::string> default_variable_names(int h) {
    std::vector<std::string> names(static_cast<std::size_t>(h));
    for (int i = 0; i < h; ++i) names[static_cast<std::size_t>(i)] = "X" + std::to_string(i + 1);
    return names;
}

inline RawSeries make_series(int h, int l, std::vector<double> values,
                             std::vector<std::string> names = {}) {
    RawSeries s;
    s.values = Tensor({h, l}, std::move(values));
    s.variables = names.empty() ? default_variable_names(h) : std::move(names);
    if (static_cast<int>(s.variables.size()) != h)
        throw ShapeError("variable name count does not match series rows");
    return s;
}

// ---------------------------------------------------------------------------
// Standardization (zero mean, unit variance per variable).
// ---------------------------------------------------------------------------

/// Per-variable population mean and standard deviation from training data.
/// The applied divisor is max(stddev, guard), so constant variables map to 0.
struct StandardizerState {
    std::vector<double> mean;
    std::vector<double> stddev;
    double guard = 1e-8;

    int var_count() const { return static_cast<int>(mean.size()); }
    double applied_std(int v) const { return std::max(stddev[static_cast<std::size_t>(v)], guard); }
};

inline StandardizerState standardize_fit(const RawSeries& train, double guard = 1e-8) {
    const int h = train.var_count();
    const int l = train.length();
    if (h == 0 || l == 0) throw DataError("standardize_fit: empty series");
    if (l < 2) throw DataError("standardize_fit: need at least 2 timesteps");
    StandardizerState st;
    st.guard = guard;
    st.mean.resize(static_cast<std::size_t>(h));
    st.stddev.resize(static_cast<std::size_t>(h));
    for (int v = 0; v < h; ++v) {
        const double* row = train.values.values.data() + static_cast<std::size_t>(v) * l;
        double m = 0.0;
        for (int t = 0; t < l; ++t) m += row[t];
        m /= static_cast<double>(l);
        double s = 0.0;
        for (int t = 0; t < l; ++t) {
            const double c = row[t] - m;
            s += c * c;
        }
        st.mean[static_cast<std::size_t>(v)] = m;
        st.stddev[static_cast<std::size_t>(v)] = std::sqrt(s / static_cast<double>(l));
    }
    return st;
}

inline RawSeries standardize_apply(const RawSeries& series, const StandardizerState& state) {
    const int h = series.var_count();
    if (h != state.var_count()) {
        std::ostringstream os;
        os << "standardize_apply: series has " << h << " variables, state fitted for "
           << state.var_count();
        throw ShapeError(os.str());
    }
    RawSeries out = series;
    const int l = series.length();
    for (int v = 0; v < h; ++v) {
        const double m = state.mean[static_cast<std::size_t>(v)];
        const double inv = 1.0 / state.applied_std(v);
        double* row = out.values.values.data() + static_cast<std::size_t>(v) * l;
        for (int t = 0; t < l; ++t) row[t] = (row[t] - m) * inv;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Windowing and augmentation.
// ---------------------------------------------------------------------------

/// One classification unit: an H x W slice of a series plus its class label.
struct WindowedSample {
    Tensor data; // {H, W}
    int label = 0;
    struct Origin {
        std::string series_id;
        int start = 0;
    } origin;

    int var_count() const { return data.shape[0]; }
    int window() const { return data.shape[1]; }
};

/// Segment a series into windows starting at 0, s, 2s, ...
/// Produces floor((L-W)/s)+1 windows; a tail shorter than W is dropped.
inline std::vector<WindowedSample> sliding_window(const RawSeries& series, int window, int stride,
                                                  int label, const std::string& series_id = "") {
    const int l = series.length();
    const int h = series.var_count();
    if (window < 1) throw ConfigError("window length must be >= 1");
    if (stride < 1) throw ConfigError("window stride must be >= 1");
    if (window > l) {
        std::ostringstream os;
        os << "window " << window << " exceeds series length " << l << " (empty result)";
        throw DataError(os.str());
    }
    const int count = (l - window) / stride + 1;
    std::vector<WindowedSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int w = 0; w < count; ++w) {
        const int start = w * stride;
        std::vector<double> vals(static_cast<std::size_t>(h) * window);
        for (int v = 0; v < h; ++v) {
            const double* row = series.values.values.data() + static_cast<std::size_t>(v) * l + start;
            std::copy_n(row, window, vals.data() + static_cast<std::size_t>(v) * window);
        }
        WindowedSample ws;
        ws.data = Tensor({h, window}, std::move(vals));
        ws.label = label;
        ws.origin = {series_id, start};
        out.push_back(std::move(ws));
    }
    return out;
}

/// Pair every sample with a noisy copy: output index 2k is sample k untouched,
/// 2k+1 is sample k plus noise_scale * N(0,1) per entry; labels duplicate.
inline std::vector<WindowedSample> augment_pairs(const std::vector<WindowedSample>& samples,
                                                 double noise_scale, Rng rng) {
    if (samples.empty()) throw DataError("augment_pairs: empty sample set");
    std::vector<WindowedSample> out;
    out.reserve(samples.size() * 2);
    for (const auto& s : samples) {
        out.push_back(s);
        WindowedSample noisy = s;
        for (double& v : noisy.data.values) v += noise_scale * rng.normal();
        out.push_back(std::move(noisy));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scenario construction.
// ---------------------------------------------------------------------------

enum class ScenarioKind { balanced, imbalanced, long_tail };

inline const char* to_string(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::balanced: return "balanced";
        case ScenarioKind::imbalanced: return "imbalanced";
        default: return "long-tail";
    }
}

inline ScenarioKind scenario_kind_from(const std::string& s) {
    if (s == "balanced") return ScenarioKind::balanced;
    if (s == "imbalanced") return ScenarioKind::imbalanced;
    if (s == "long-tail" || s == "long_tail" || s == "longtail") return ScenarioKind::long_tail;
    throw ConfigError("unknown scenario kind '" + s + "' (balanced|imbalanced|long-tail)");
}

/// Per-class train/test counts. Test counts are kept equal across classes.
struct ScenarioSpec {
    std::vector<int> train_counts;
    std::vector<int> test_counts;
    ScenarioKind kind = ScenarioKind::balanced;
    std::uint64_t seed = 0;

    int class_count() const { return static_cast<int>(train_counts.size()); }

    void validate() const {
        if (train_counts.empty()) throw ConfigError("scenario has no classes");
        if (train_counts.size() != test_counts.size())
            throw ConfigError("scenario train/test class counts differ in length");
        for (std::size_t c = 0; c < train_counts.size(); ++c) {
            if (train_counts[c] < 1 || test_counts[c] < 1) {
                std::ostringstream os;
                os << "scenario counts for class " << c << " must be >= 1";
                throw ConfigError(os.str());
            }
            if (test_counts[c] != test_counts[0])
                throw ConfigError("test counts must be equal across classes");
        }
    }
};

/// The reference experimental settings (train/test windows per class).
namespace scenarios {

inline ScenarioSpec csth(ScenarioKind kind, std::uint64_t seed = 0) {
    ScenarioSpec s;
    s.kind = kind;
    s.seed = seed;
    switch (kind) {
        case ScenarioKind::balanced: s.train_counts = {780, 450}; break;
        case ScenarioKind::imbalanced: s.train_counts = {780, 200}; break;
        case ScenarioKind::long_tail: s.train_counts = {780, 20}; break;
    }
    s.test_counts = {200, 200};
    return s;
}

inline ScenarioSpec te(ScenarioKind kind, std::uint64_t seed = 0) {
    ScenarioSpec s;
    s.kind = kind;
    s.seed = seed;
    s.train_counts.assign(11, 4780);
    s.test_counts.assign(11, 780);
    if (kind == ScenarioKind::imbalanced)
        for (std::size_t c = 1; c < s.train_counts.size(); ++c) s.train_counts[c] = 478;
    if (kind == ScenarioKind::long_tail)
        for (std::size_t c = 1; c < s.train_counts.size(); ++c) s.train_counts[c] = 20;
    return s;
}

} // namespace scenarios

struct Scenario {
    std::vector<WindowedSample> train;
    std::vector<WindowedSample> test;
};

/// Draw per-class train and test sets from per-class pools, without
/// replacement and with disjoint index sets. Deterministic under spec.seed.
inline Scenario build_scenario(const std::vector<std::vector<WindowedSample>>& pools,
                               const ScenarioSpec& spec) {
    spec.validate();
    if (static_cast<int>(pools.size()) != spec.class_count()) {
        std::ostringstream os;
        os << "scenario expects " << spec.class_count() << " class pools, got " << pools.size();
        throw DataError(os.str());
    }
    Scenario out;
    Rng rng = Rng(spec.seed).split("scenario");
    for (int c = 0; c < spec.class_count(); ++c) {
        const auto& pool = pools[static_cast<std::size_t>(c)];
        const int want = spec.train_counts[static_cast<std::size_t>(c)] +
                         spec.test_counts[static_cast<std::size_t>(c)];
        if (static_cast<int>(pool.size()) < want) {
            std::ostringstream os;
            os << "class " << c << " pool holds " << pool.size() << " windows, scenario needs "
               << want << " (short by " << want - static_cast<int>(pool.size()) << ")";
            throw DataError(os.str());
        }
        std::vector<int> idx(pool.size());
        std::iota(idx.begin(), idx.end(), 0);
        Rng crng = rng.split(static_cast<std::uint64_t>(c));
        shuffle_indices(idx, crng);
        const int ntr = spec.train_counts[static_cast<std::size_t>(c)];
        const int nte = spec.test_counts[static_cast<std::size_t>(c)];
        for (int i = 0; i < ntr; ++i) out.train.push_back(pool[static_cast<std::size_t>(idx[i])]);
        for (int i = 0; i < nte; ++i)
            out.test.push_back(pool[static_cast<std::size_t>(idx[ntr + i])]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic correlated process with injectable single-variable faults.
// ---------------------------------------------------------------------------

enum class FaultKind { step, random_variation };

inline const char* to_string(FaultKind k) {
    return k == FaultKind::step ? "step" : "random-variation";
}

inline FaultKind fault_kind_from(const std::string& s) {
    if (s == "step") return FaultKind::step;
    if (s == "random-variation" || s == "random_variation") return FaultKind::random_variation;
    throw ConfigError("unknown fault kind '" + s + "' (step|random-variation)");
}

/// A single-variable fault injected into the synthetic process. Magnitude is
/// expressed in the (unit-variance) noise scale of the generator, which the
/// later standardization keeps approximately intact.
struct SyntheticFaultConfig {
    int fault_variable = 0;
    FaultKind kind = FaultKind::step;
    double magnitude = 3.0;
    int onset = 0;
    std::optional<Tensor> coupling; // {H,H}; default banded matrix when absent

    void validate(int h) const {
        if (fault_variable < 0 || fault_variable >= h) {
            std::ostringstream os;
            os << "fault variable " << fault_variable << " outside [0," << h << ")";
            throw ConfigError(os.str());
        }
        if (magnitude < 0.0) throw ConfigError("fault magnitude must be >= 0");
        if (onset < 0) throw ConfigError("fault onset must be >= 0");
        if (coupling && coupling->shape != Shape{h, h})
            throw ShapeError("coupling matrix must be {H,H}");
    }
};

/// The fixed default coupling matrix: strictly lower triangular, banded
/// (0.30 one step down, 0.15 two steps down). Strict triangularity keeps the
/// process stable and lets an injected offset on variable k propagate to
/// downstream variables without feeding back into k.
inline Tensor default_coupling(int h) {
    Tensor a = Tensor::zeros({h, h});
    for (int i = 0; i < h; ++i) {
        if (i >= 1) a.values[static_cast<std::size_t>(i) * h + (i - 1)] = 0.30;
        if (i >= 2) a.values[static_cast<std::size_t>(i) * h + (i - 2)] = 0.15;
    }
    return a;
}

namespace detail {
constexpr int kSyntheticBurnIn = 16;
}

/// Generate one series of the coupled process x_t = A x_{t-1} + e_t with
/// optional fault injection on one variable from `onset` on (post burn-in
/// indexing). The same seed without a fault yields the identical base
/// process, so a zero-magnitude fault reproduces the normal series exactly.
inline RawSeries generate_synthetic_process(const std::optional<SyntheticFaultConfig>& fault,
                                            int h, int l, std::uint64_t seed,
                                            const std::optional<Tensor>& coupling_override = {}) {
    if (h < 2) throw ConfigError("synthetic process needs at least 2 variables");
    if (l < 1) throw ConfigError("series length must be >= 1");
    if (fault) fault->validate(h);
    if (coupling_override && coupling_override->shape != Shape{h, h})
        throw ShapeError("coupling matrix must be {H,H}");
    const Tensor coupling = coupling_override ? *coupling_override
                            : (fault && fault->coupling) ? *fault->coupling
                                                         : default_coupling(h);

    Rng noise = Rng(seed).split("process.noise");
    Rng fault_noise = Rng(seed).split("process.fault");

    const int total = l + detail::kSyntheticBurnIn;
    std::vector<double> prev(static_cast<std::size_t>(h), 0.0);
    std::vector<double> cur(static_cast<std::size_t>(h), 0.0);
    std::vector<double> out(static_cast<std::size_t>(h) * l);
    for (int t = 0; t < total; ++t) {
        for (int i = 0; i < h; ++i) {
            const double* arow = coupling.values.data() + static_cast<std::size_t>(i) * h;
            double s = 0.0;
            for (int j = 0; j < h; ++j) s += arow[j] * prev[static_cast<std::size_t>(j)];
            cur[static_cast<std::size_t>(i)] = s + noise.normal();
        }
        const int rec = t - detail::kSyntheticBurnIn;
        if (fault && rec >= fault->onset && rec >= 0) {
            const double bump = fault->kind == FaultKind::step
                                    ? fault->magnitude
                                    : fault->magnitude * fault_noise.normal();
            cur[static_cast<std::size_t>(fault->fault_variable)] += bump;
        }
        if (rec >= 0)
            for (int i = 0; i < h; ++i)
                out[static_cast<std::size_t>(i) * l + rec] = cur[static_cast<std::size_t>(i)];
        std::swap(prev, cur);
    }
    RawSeries series = make_series(h, l, std::move(out));
    series.sampling_info = "synthetic coupled process, unit sampling period";
    return series;
}

// ---------------------------------------------------------------------------
// CSV ingestion.
// ---------------------------------------------------------------------------

enum class CsvSchema { variables_as_rows, variables_as_columns };

namespace detail {

inline bool parse_double(const std::string& cell, double& out) {
    const char* b = cell.data();
    const char* e = b + cell.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t' || *(e - 1) == '\r')) --e;
    if (b == e) return false;
    auto [ptr, ec] = std::from_chars(b, e, out);
    return ec == std::errc{} && ptr == e;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    cells.push_back(cur);
    return cells;
}

} // namespace detail

/// Parse a rectangular numeric CSV (UTF-8, comma separated, '.' decimal).
/// A non-numeric first line is treated as a header; with a column schema the
/// header supplies variable names. Ragged rows, non-numeric cells and empty
/// files raise diagnostics citing the 1-based row/column.
inline RawSeries load_csv(const std::string& path, CsvSchema schema) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open CSV file '" + path + "'");
    std::vector<std::vector<double>> rows;
    std::vector<std::string> header;
    std::string line;
    int lineno = 0;
    bool first_content = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto cells = detail::split_csv_line(line);
        std::vector<double> row(cells.size());
        bool numeric = true;
        std::size_t bad_col = 0;
        for (std::size_t c = 0; c < cells.size(); ++c)
            if (!detail::parse_double(cells[c], row[c])) {
                numeric = false;
                bad_col = c;
                break;
            }
        if (!numeric) {
            if (first_content) { // header line
                for (auto& c : cells) {
                    while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.pop_back();
                    header.push_back(c);
                }
                first_content = false;
                continue;
            }
            std::ostringstream os;
            os << "non-numeric cell at row " << lineno << ", column " << bad_col + 1 << " in '"
               << path << "'";
            throw DataError(os.str());
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            std::ostringstream os;
            os << "ragged row " << lineno << " in '" << path << "': expected "
               << rows.front().size() << " cells, got " << row.size();
            throw DataError(os.str());
        }
        first_content = false;
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("CSV file '" + path + "' holds no data rows");

    const int nrows = static_cast<int>(rows.size());
    const int ncols = static_cast<int>(rows.front().size());
    int h = 0, l = 0;
    std::vector<double> values;
    if (schema == CsvSchema::variables_as_rows) {
        h = nrows;
        l = ncols;
        values.reserve(static_cast<std::size_t>(h) * l);
        for (const auto& r : rows) values.insert(values.end(), r.begin(), r.end());
        return make_series(h, l, std::move(values));
    }
    h = ncols;
    l = nrows;
    values.resize(static_cast<std::size_t>(h) * l);
    for (int t = 0; t < l; ++t)
        for (int v = 0; v < h; ++v)
            values[static_cast<std::size_t>(v) * l + t] = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(v)];
    std::vector<std::string> names;
    if (static_cast<int>(header.size()) == h) names = header;
    return make_series(h, l, std::move(values), std::move(names));
}

/// Write a series as CSV in the given schema (column schema adds a header of
/// variable names). Values print at full round-trip precision.
inline void save_csv(const RawSeries& series, const std::string& path, CsvSchema schema) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write CSV file '" + path + "'");
    char buf[40];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    const int h = series.var_count();
    const int l = series.length();
    if (schema == CsvSchema::variables_as_rows) {
        for (int v = 0; v < h; ++v) {
            for (int t = 0; t < l; ++t) out << (t ? "," : "") << fmt(series.at(v, t));
            out << '\n';
        }
    } else {
        for (int v = 0; v < h; ++v) out << (v ? "," : "") << series.variables[static_cast<std::size_t>(v)];
        out << '\n';
        for (int t = 0; t < l; ++t) {
            for (int v = 0; v < h; ++v) out << (v ? "," : "") << fmt(series.at(v, t));
            out << '\n';
        }
    }
    if (!out) throw ConfigError("write failed for CSV file '" + path + "'");
}

// ---------------------------------------------------------------------------
// Windowed-sample helpers shared by the trainer.
// ---------------------------------------------------------------------------

/// Fit a standardizer across windowed samples (concatenating all windows per
/// variable). Used after the scenario split so only training windows feed it.
inline StandardizerState standardize_fit_windows(const std::vector<WindowedSample>& train,
                                                 double guard = 1e-8) {
    if (train.empty()) throw DataError("standardize_fit_windows: empty training set");
    const int h = train.front().var_count();
    const int w = train.front().window();
    const std::int64_t per_var = static_cast<std::int64_t>(train.size()) * w;
    if (per_var < 2) throw DataError("standardize_fit_windows: need at least 2 values per variable");
    StandardizerState st;
    st.guard = guard;
    st.mean.assign(static_cast<std::size_t>(h), 0.0);
    st.stddev.assign(static_cast<std::size_t>(h), 0.0);
    for (const auto& s : train) {
        if (s.var_count() != h || s.window() != w)
            throw ShapeError("standardize_fit_windows: inconsistent window shapes");
        for (int v = 0; v < h; ++v) {
            const double* row = s.data.values.data() + static_cast<std::size_t>(v) * w;
            for (int t = 0; t < w; ++t) st.mean[static_cast<std::size_t>(v)] += row[t];
        }
    }
    for (int v = 0; v < h; ++v) st.mean[static_cast<std::size_t>(v)] /= static_cast<double>(per_var);
    for (const auto& s : train)
        for (int v = 0; v < h; ++v) {
            const double* row = s.data.values.data() + static_cast<std::size_t>(v) * w;
            const double m = st.mean[static_cast<std::size_t>(v)];
            for (int t = 0; t < w; ++t) {
                const double c = row[t] - m;
                st.stddev[static_cast<std::size_t>(v)] += c * c;
            }
        }
    for (int v = 0; v < h; ++v)
        st.stddev[static_cast<std::size_t>(v)] =
            std::sqrt(st.stddev[static_cast<std::size_t>(v)] / static_cast<double>(per_var));
    return st;
}

inline void standardize_apply_windows(std::vector<WindowedSample>& samples,
                                      const StandardizerState& state) {
    for (auto& s : samples) {
        if (s.var_count() != state.var_count())
            throw ShapeError("standardize_apply_windows: variable count mismatch");
        const int w = s.window();
        for (int v = 0; v < s.var_count(); ++v) {
            const double m = state.mean[static_cast<std::size_t>(v)];
            const double inv = 1.0 / state.applied_std(v);
            double* row = s.data.values.data() + static_cast<std::size_t>(v) * w;
            for (int t = 0; t < w; ++t) row[t] = (row[t] - m) * inv;
        }
    }
}

} // namespace sccam
