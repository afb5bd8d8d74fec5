#pragma once

#include <string>
#include <vector>

#include "sccam/data.hpp"
#include "sccam/serialize.hpp"

namespace sccam {

// Dataset cache layout (one file per scenario, little-endian):
//   magic "SCCAMDS1" | u32 version | scenario kind/seed | class count |
//   variable names | standardizer state | train samples | test samples |
//   u64 FNV-1a checksum. Samples store label, origin and H x W doubles.
constexpr char kDatasetMagic[9] = "SCCAMDS1";
constexpr std::uint32_t kDatasetVersion = 1;

/// A scenario frozen to disk: standardized train/test windows plus the
/// standardizer that produced them.
struct Dataset {
    ScenarioKind kind = ScenarioKind::balanced;
    std::uint64_t seed = 0;
    int class_count = 0;
    std::vector<std::string> variable_names;
    StandardizerState standardizer;
    std::vector<WindowedSample> train;
    std::vector<WindowedSample> test;
};

namespace detail {

inline void write_sample(BinWriter& w, const WindowedSample& s) {
    w.i32(s.label);
    w.str(s.origin.series_id);
    w.i32(s.origin.start);
    w.i32(s.data.shape[0]);
    w.i32(s.data.shape[1]);
    w.bytes(s.data.values.data(), s.data.values.size() * sizeof(double));
}

inline WindowedSample read_sample(BinReader& r) {
    WindowedSample s;
    s.label = r.i32();
    s.origin.series_id = r.str();
    s.origin.start = r.i32();
    const int h = r.i32();
    const int w = r.i32();
    if (h < 1 || w < 1 || h > 100000 || w > 100000)
        throw SerializationError("dataset sample has implausible dimensions");
    std::vector<double> vals(static_cast<std::size_t>(h) * w);
    r.bytes(vals.data(), vals.size() * sizeof(double));
    s.data = Tensor({h, w}, std::move(vals));
    return s;
}

} // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& path) {
    detail::BinWriter w(path);
    w.bytes(kDatasetMagic, 8);
    w.u32(kDatasetVersion);
    w.u8(static_cast<std::uint8_t>(ds.kind));
    w.u64(ds.seed);
    w.i32(ds.class_count);
    w.u32(static_cast<std::uint32_t>(ds.variable_names.size()));
    for (const auto& n : ds.variable_names) w.str(n);
    w.doubles(ds.standardizer.mean);
    w.doubles(ds.standardizer.stddev);
    w.f64(ds.standardizer.guard);
    w.u64(ds.train.size());
    for (const auto& s : ds.train) detail::write_sample(w, s);
    w.u64(ds.test.size());
    for (const auto& s : ds.test) detail::write_sample(w, s);
    w.finish();
}

inline Dataset load_dataset(const std::string& path) {
    detail::BinReader r(path);
    detail::expect_magic(r, kDatasetMagic, "dataset");
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion)
        throw SerializationError("dataset '" + path + "' has version " + std::to_string(version) +
                                 ", expected " + std::to_string(kDatasetVersion));
    Dataset ds;
    const std::uint8_t kind = r.u8();
    if (kind > 2) throw SerializationError("dataset '" + path + "': bad scenario kind");
    ds.kind = static_cast<ScenarioKind>(kind);
    ds.seed = r.u64();
    ds.class_count = r.i32();
    const std::uint32_t names = r.u32();
    ds.variable_names.resize(names);
    for (auto& n : ds.variable_names) n = r.str();
    ds.standardizer.mean = r.doubles();
    ds.standardizer.stddev = r.doubles();
    ds.standardizer.guard = r.f64();
    const std::uint64_t ntr = r.u64();
    ds.train.reserve(ntr);
    for (std::uint64_t i = 0; i < ntr; ++i) ds.train.push_back(detail::read_sample(r));
    const std::uint64_t nte = r.u64();
    ds.test.reserve(nte);
    for (std::uint64_t i = 0; i < nte; ++i) ds.test.push_back(detail::read_sample(r));
    r.verify_checksum();
    return ds;
}

} // namespace sccam
