#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sccam/checkpoint.hpp"
#include "sccam/config.hpp"
#include "sccam/data.hpp"
#include "sccam/dataset.hpp"
#include "sccam/report.hpp"
#include "sccam/train.hpp"

namespace sccam {

// End-to-end orchestration shared by the CLI and the integration tests:
// generate per-class series files, assemble a scenario dataset from them,
// run the two training stages, evaluate, and write the run artifacts.

constexpr int kManifestVersion = 1;

inline std::string class_name(int label) {
    return label == 0 ? "normal" : "fault_" + std::to_string(label);
}

inline std::string class_file_name(int label) {
    return "class_" + std::to_string(label) + ".csv";
}

namespace detail {

inline std::uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path + "' for checksum");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (got < static_cast<std::streamsize>(sizeof buf)) break;
    }
    return h;
}

inline std::optional<Tensor> load_coupling(const RunConfig& cfg) {
    if (cfg.paths.coupling_file.empty()) return std::nullopt;
    RawSeries m = load_csv(cfg.paths.coupling_file, CsvSchema::variables_as_rows);
    if (m.var_count() != cfg.data.variables || m.length() != cfg.data.variables)
        throw ConfigError("coupling file must be a " + std::to_string(cfg.data.variables) + "x" +
                          std::to_string(cfg.data.variables) + " matrix");
    return Tensor({cfg.data.variables, cfg.data.variables}, m.values.values);
}

} // namespace detail

/// Series length that yields exactly `pool` windows under (window, stride).
inline int series_length_for(int pool, int window, int stride) {
    return window + stride * (pool - 1);
}

struct GenerateSummary {
    std::string manifest_path;
    std::vector<std::string> class_files;
    std::vector<std::uint64_t> class_checksums;
};

/// Write per-class raw series CSVs plus the manifest into cfg.paths.data_dir.
/// Deterministic under cfg.seed: identical seeds yield identical files.
inline GenerateSummary generate_dataset_files(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    const auto coupling = detail::load_coupling(cfg);
    fs::create_directories(cfg.paths.data_dir);

    GenerateSummary summary;
    ReportWriter manifest;
    manifest.add("manifest_version", kManifestVersion);
    manifest.add("seed", cfg.seed);
    manifest.add("variables", cfg.data.variables);
    manifest.add("classes", cfg.data.classes);
    manifest.add("window", cfg.data.window);
    manifest.add("stride", cfg.data.stride);
    manifest.add("scenario.kind", to_string(cfg.scenario.kind));
    manifest.add("scenario.train_counts", cfg.scenario.train_counts);
    manifest.add("scenario.test_counts", cfg.scenario.test_counts);
    {
        std::string joined;
        const auto names = default_variable_names(cfg.data.variables);
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (i) joined += ',';
            joined += names[i];
        }
        manifest.add("variable_names", joined);
    }

    Rng master = Rng(cfg.seed).split("generate");
    for (int c = 0; c < cfg.data.classes; ++c) {
        const int pool = cfg.scenario.train_counts[static_cast<std::size_t>(c)] +
                         cfg.scenario.test_counts[static_cast<std::size_t>(c)];
        const int length = series_length_for(pool, cfg.data.window, cfg.data.stride);
        std::optional<SyntheticFaultConfig> fault;
        if (c > 0) {
            for (const auto& fspec : cfg.faults)
                if (fspec.class_label == c) fault = fspec.fault;
            if (!fault) throw ConfigError("no fault specification for class " + std::to_string(c));
        }
        RawSeries series = generate_synthetic_process(
            fault, cfg.data.variables, length, master.split(static_cast<std::uint64_t>(c)).next_u64(),
            coupling);
        const std::string file = (fs::path(cfg.paths.data_dir) / class_file_name(c)).string();
        save_csv(series, file, CsvSchema::variables_as_columns);

        const std::string prefix = "class." + std::to_string(c) + ".";
        manifest.add(prefix + "label", c);
        manifest.add(prefix + "name", class_name(c));
        manifest.add(prefix + "file", class_file_name(c));
        manifest.add(prefix + "length", length);
        manifest.add(prefix + "train_count", cfg.scenario.train_counts[static_cast<std::size_t>(c)]);
        manifest.add(prefix + "test_count", cfg.scenario.test_counts[static_cast<std::size_t>(c)]);
        if (fault) {
            manifest.add(prefix + "fault_variable", fault->fault_variable);
            manifest.add(prefix + "fault_kind", to_string(fault->kind));
            manifest.add(prefix + "fault_magnitude", fault->magnitude);
            manifest.add(prefix + "fault_onset", fault->onset);
        }
        const std::uint64_t checksum = detail::file_checksum(file);
        manifest.add(prefix + "checksum", checksum);
        summary.class_files.push_back(file);
        summary.class_checksums.push_back(checksum);
    }

    summary.manifest_path = (fs::path(cfg.paths.data_dir) / "manifest.txt").string();
    manifest.write(summary.manifest_path);
    return summary;
}

/// Assemble the scenario dataset from generated files: window each class
/// series, split train/test disjointly, then fit the standardizer on the
/// training windows only and apply it to both splits.
inline Dataset build_dataset(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    const std::string manifest_path = (fs::path(cfg.paths.data_dir) / "manifest.txt").string();
    if (!fs::exists(manifest_path))
        throw ConfigError("dataset manifest '" + manifest_path + "' not found; run generate first");
    ConfigMap manifest = parse_config_file(manifest_path);
    const int version = static_cast<int>(manifest.take_int("manifest_version", -1));
    if (version != kManifestVersion)
        throw ConfigError("manifest '" + manifest_path + "' has unsupported version " +
                          std::to_string(version));
    const int classes = static_cast<int>(manifest.take_int("classes", 0));
    const int variables = static_cast<int>(manifest.take_int("variables", 0));
    if (classes != cfg.data.classes || variables != cfg.data.variables)
        throw DataError("manifest declares " + std::to_string(classes) + " classes / " +
                        std::to_string(variables) + " variables but the run config expects " +
                        std::to_string(cfg.data.classes) + " / " +
                        std::to_string(cfg.data.variables));

    std::vector<std::vector<WindowedSample>> pools;
    std::vector<std::string> names;
    for (int c = 0; c < classes; ++c) {
        const std::string prefix = "class." + std::to_string(c) + ".";
        const std::string file = manifest.take(prefix + "file", "");
        if (file.empty())
            throw ConfigError("manifest lacks '" + prefix + "file'");
        const std::string path = (fs::path(cfg.paths.data_dir) / file).string();
        RawSeries series = load_csv(path, CsvSchema::variables_as_columns);
        if (series.var_count() != variables)
            throw DataError("series '" + path + "' has " + std::to_string(series.var_count()) +
                            " variables, manifest declares " + std::to_string(variables));
        if (c == 0) names = series.variables;
        pools.push_back(sliding_window(series, cfg.data.window, cfg.data.stride, c, file));
    }

    Scenario scenario = build_scenario(pools, cfg.scenario);

    Dataset ds;
    ds.kind = cfg.scenario.kind;
    ds.seed = cfg.seed;
    ds.class_count = classes;
    ds.variable_names = std::move(names);
    ds.standardizer = standardize_fit_windows(scenario.train);
    ds.train = std::move(scenario.train);
    ds.test = std::move(scenario.test);
    standardize_apply_windows(ds.train, ds.standardizer);
    standardize_apply_windows(ds.test, ds.standardizer);
    return ds;
}

inline std::string dataset_file_name(ScenarioKind kind) {
    return std::string("dataset_") + to_string(kind) + ".bin";
}

/// Echo every effective configuration value into a report block.
inline void echo_config(ReportWriter& rep, const RunConfig& cfg) {
    rep.add("config.seed", cfg.seed);
    rep.add("config.paths.data_dir", cfg.paths.data_dir);
    rep.add("config.paths.out_dir", cfg.paths.out_dir);
    rep.add("config.paths.coupling_file", cfg.paths.coupling_file);
    rep.add("config.data.variables", cfg.data.variables);
    rep.add("config.data.classes", cfg.data.classes);
    rep.add("config.data.window", cfg.data.window);
    rep.add("config.data.stride", cfg.data.stride);
    rep.add("config.data.noise_scale", cfg.data.noise_scale);
    rep.add("config.scenario.kind", to_string(cfg.scenario.kind));
    rep.add("config.scenario.train_counts", cfg.scenario.train_counts);
    rep.add("config.scenario.test_counts", cfg.scenario.test_counts);
    for (const auto& f : cfg.faults) {
        const std::string prefix = "config.fault." + std::to_string(f.class_label) + ".";
        rep.add(prefix + "variable", f.fault.fault_variable);
        rep.add(prefix + "kind", to_string(f.fault.kind));
        rep.add(prefix + "magnitude", f.fault.magnitude);
        rep.add(prefix + "onset", f.fault.onset);
    }
    rep.add("config.model.reduction", cfg.model.reduction);
    rep.add("config.model.alpha", cfg.model.alpha);
    rep.add("config.model.hidden", cfg.model.hidden);
    rep.add("config.model.embedding", cfg.model.embedding);
    rep.add("config.model.normalize_embeddings", cfg.model.normalize_embeddings);
    rep.add("config.model.bn_epsilon", cfg.model.bn_epsilon);
    rep.add("config.model.bn_momentum", cfg.model.bn_momentum);
    rep.add("config.train.batch", cfg.train.batch);
    rep.add("config.train.epochs_stage1", cfg.train.epochs_stage1);
    rep.add("config.train.epochs_stage2", cfg.train.epochs_stage2);
    rep.add("config.train.lr_stage1", cfg.train.lr_stage1);
    rep.add("config.train.lr_stage2", cfg.train.lr_stage2);
    rep.add("config.train.optimizer", to_string(cfg.train.optimizer));
    rep.add("config.train.momentum", cfg.train.momentum);
    rep.add("config.train.temperature", cfg.train.temperature);
    rep.add("config.train.freeze_encoder", cfg.train.freeze_encoder);
}

struct TrainRunOutput {
    Model model;
    TrainReport report;
    Dataset dataset;
    std::string checkpoint_path;
    std::string report_path;
    std::string dataset_path;
};

/// The full offline procedure on an in-memory dataset: stage 1, stage 2,
/// evaluation. Leaves file writing to the caller.
inline std::pair<Model, TrainReport> train_model(const Dataset& ds, const RunConfig& cfg) {
    const TrainConfig tc = cfg.effective_train();
    auto s1 = train_stage1(ds.train, ds.class_count, cfg.model, tc);
    auto s2 = train_stage2(s1.encoder, ds.train, ds.class_count, tc);
    Model model;
    model.encoder = std::move(s1.encoder);
    model.classifier = std::move(s2.classifier);
    model.variable_names = ds.variable_names;
    TrainReport rep = evaluate(model, ds.test);
    rep.stage1_loss = std::move(s1.loss);
    rep.stage2_loss = std::move(s2.loss);
    rep.skipped_batches_stage1 = s1.skipped_batches;
    return {std::move(model), std::move(rep)};
}

/// Offline training end to end: build the dataset from generated files,
/// train both stages, evaluate, and write dataset cache, checkpoint and
/// report under cfg.paths.out_dir.
inline TrainRunOutput train_run(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    TrainRunOutput out;
    out.dataset = build_dataset(cfg);
    fs::create_directories(cfg.paths.out_dir);
    out.dataset_path = (fs::path(cfg.paths.out_dir) / dataset_file_name(cfg.scenario.kind)).string();
    save_dataset(out.dataset, out.dataset_path);

    auto [model, report] = train_model(out.dataset, cfg);
    out.model = std::move(model);
    out.report = std::move(report);

    out.checkpoint_path = (fs::path(cfg.paths.out_dir) / "checkpoint.bin").string();
    save_checkpoint(out.model, out.checkpoint_path);

    ReportWriter rep;
    echo_config(rep, cfg);
    rep.add("dataset.train_size", static_cast<long long>(out.dataset.train.size()));
    rep.add("dataset.test_size", static_cast<long long>(out.dataset.test.size()));
    rep.add("stage1.epochs", static_cast<long long>(out.report.stage1_loss.size()));
    rep.add("stage1.loss", out.report.stage1_loss);
    rep.add("stage1.skipped_batches", out.report.skipped_batches_stage1);
    rep.add("stage2.epochs", static_cast<long long>(out.report.stage2_loss.size()));
    rep.add("stage2.loss", out.report.stage2_loss);
    rep.add("metrics.accuracy", out.report.accuracy);
    rep.add("metrics.per_class_accuracy", out.report.per_class_accuracy);
    for (std::size_t r = 0; r < out.report.confusion.size(); ++r)
        rep.add("metrics.confusion." + std::to_string(r), out.report.confusion[r]);
    out.report_path = (fs::path(cfg.paths.out_dir) / "report.txt").string();
    rep.write(out.report_path);
    return out;
}

} // namespace sccam
