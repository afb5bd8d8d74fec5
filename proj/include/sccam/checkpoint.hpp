#pragma once

#include <string>

#include "sccam/model.hpp"
#include "sccam/serialize.hpp"

namespace sccam {

// Checkpoint layout (little-endian, documented in the README):
//   magic "SCCAMCP1" | u32 version | config echo | named tensors in declared
//   order | batch-norm states | variable names | u64 FNV-1a checksum.
// The checksum covers every preceding byte; truncated or altered files are
// rejected before any state is handed out.
constexpr char kCheckpointMagic[9] = "SCCAMCP1";
constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_bn_state(BinWriter& w, const BatchNormState& s) {
    w.u8(s.initialized ? 1 : 0);
    w.f64(s.momentum);
    w.doubles(s.running_mean);
    w.doubles(s.running_var);
}

inline BatchNormState read_bn_state(BinReader& r) {
    BatchNormState s;
    s.initialized = r.u8() != 0;
    s.momentum = r.f64();
    s.running_mean = r.doubles();
    s.running_var = r.doubles();
    return s;
}

} // namespace detail

inline void save_checkpoint(Model& model, const std::string& path) {
    detail::BinWriter w(path);
    w.bytes(kCheckpointMagic, 8);
    w.u32(kCheckpointVersion);
    const EncoderParams& e = model.encoder;
    w.i32(e.input_h);
    w.i32(e.input_w);
    w.i32(model.classifier.class_count());
    w.i32(e.config.reduction);
    w.i32(e.config.alpha);
    w.i32(e.config.hidden);
    w.i32(e.config.embedding);
    w.u8(e.config.normalize_embeddings ? 1 : 0);
    w.f64(e.config.bn_epsilon);
    w.f64(e.config.bn_momentum);
    for (Tensor* t : model.encoder.parameters()) w.tensor(*t);
    detail::write_bn_state(w, e.conv1.bn);
    detail::write_bn_state(w, e.conv2.bn);
    w.tensor(model.classifier.weight);
    w.u32(static_cast<std::uint32_t>(model.variable_names.size()));
    for (const auto& n : model.variable_names) w.str(n);
    w.finish();
}

inline Model load_checkpoint(const std::string& path) {
    detail::BinReader r(path);
    detail::expect_magic(r, kCheckpointMagic, "checkpoint");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw SerializationError("checkpoint '" + path + "' has version " +
                                 std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
    }
    Model model;
    EncoderParams& e = model.encoder;
    e.input_h = r.i32();
    e.input_w = r.i32();
    const int classes = r.i32();
    e.config.reduction = r.i32();
    e.config.alpha = r.i32();
    e.config.hidden = r.i32();
    e.config.embedding = r.i32();
    e.config.normalize_embeddings = r.u8() != 0;
    e.config.bn_epsilon = r.f64();
    e.config.bn_momentum = r.f64();
    for (Tensor* t : e.parameters()) *t = r.tensor();
    e.cbam.channel.reduction = e.config.reduction;
    e.cbam.spatial.alpha = e.config.alpha;
    e.conv1.bn = detail::read_bn_state(r);
    e.conv2.bn = detail::read_bn_state(r);
    model.classifier.weight = r.tensor();
    const std::uint32_t names = r.u32();
    model.variable_names.resize(names);
    for (auto& n : model.variable_names) n = r.str();
    r.verify_checksum();
    e.config.validate();
    const int flat = kConv2Channels * e.input_h * e.input_w;
    const bool well_formed =
        e.conv1.kernel.shape == Shape{kConv1Channels, 1} &&
        e.conv2.kernel.shape == Shape{kConv2Channels, kConv1Channels} &&
        e.proj_w1.shape == Shape{e.config.hidden, flat} &&
        e.proj_w2.shape == Shape{e.config.embedding, e.config.hidden} &&
        static_cast<int>(e.conv1.bn.running_mean.size()) == kConv1Channels &&
        static_cast<int>(e.conv2.bn.running_mean.size()) == kConv2Channels;
    if (!well_formed)
        throw SerializationError("checkpoint '" + path + "': parameter shapes are inconsistent");
    if (model.classifier.class_count() != classes)
        throw SerializationError("checkpoint '" + path + "': classifier row count mismatch");
    if (model.classifier.embedding_dim() != e.config.embedding)
        throw SerializationError("checkpoint '" + path + "': classifier/embedding dim mismatch");
    return model;
}

} // namespace sccam
