#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "sccam/cbam.hpp"
#include "sccam/errors.hpp"
#include "sccam/rng.hpp"
#include "sccam/tensor.hpp"

namespace sccam {

// The encoder is fixed to two pointwise conv layers of 16 and 32 channels.
constexpr int kConv1Channels = 16;
constexpr int kConv2Channels = 32;

struct ModelConfig {
    int reduction = 4;     // channel-attention bottleneck ratio
    int alpha = 7;         // spatial-attention filter size (odd)
    int hidden = 128;      // projection head hidden width
    int embedding = 64;    // projection output dimension D_z
    bool normalize_embeddings = true;
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.9;

    void validate() const {
        if (embedding < 2) throw ConfigError("embedding dimension must be >= 2");
        if (hidden < 1) throw ConfigError("projection hidden width must be >= 1");
        if (alpha % 2 == 0) throw ConfigError("spatial filter size must be odd");
        if (reduction <= 0 || kConv2Channels % reduction != 0)
            throw ConfigError("reduction ratio must divide 32");
        if (bn_epsilon <= 0.0) throw ConfigError("batch-norm epsilon must be positive");
        if (bn_momentum < 0.0 || bn_momentum >= 1.0)
            throw ConfigError("batch-norm momentum must lie in [0,1)");
    }
};

struct ConvBnLayer {
    Tensor kernel; // {C_out, C_in}
    Tensor bias;   // {C_out}
    Tensor gamma;  // {C_out}
    Tensor beta;   // {C_out}
    BatchNormState bn;
};

/// All learnable state of the encoder: conv1 -> BN -> ReLU -> conv2 -> BN ->
/// ReLU -> CBAM -> flatten -> projection head (bias-free two-layer MLP).
struct EncoderParams {
    ConvBnLayer conv1;
    ConvBnLayer conv2;
    CbamParams cbam;
    Tensor proj_w1; // {hidden, 32*H*W}
    Tensor proj_w2; // {embedding, hidden}
    int input_h = 0;
    int input_w = 0;
    ModelConfig config;

    std::vector<Tensor*> parameters() {
        return {&conv1.kernel, &conv1.bias, &conv1.gamma, &conv1.beta,
                &conv2.kernel, &conv2.bias, &conv2.gamma, &conv2.beta,
                &cbam.channel.w0, &cbam.channel.w1,
                &cbam.spatial.kernel, &cbam.spatial.bias,
                &proj_w1, &proj_w2};
    }
};

/// Linear classifier p = W z over the projection output.
struct ClassifierParams {
    Tensor weight; // {M, embedding}

    int class_count() const { return weight.shape.empty() ? 0 : weight.shape[0]; }
    int embedding_dim() const { return weight.shape.size() < 2 ? 0 : weight.shape[1]; }
    std::vector<Tensor*> parameters() { return {&weight}; }
};

namespace detail {
inline ConvBnLayer make_conv_bn(int c_out, int c_in, double momentum, Rng rng) {
    ConvBnLayer l;
    l.kernel = uniform_fan_in({c_out, c_in}, c_in, rng);
    l.bias = Tensor::zeros({c_out}, true);
    l.gamma = Tensor::full({c_out}, 1.0, true);
    l.beta = Tensor::zeros({c_out}, true);
    l.bn = BatchNormState(c_out, momentum);
    return l;
}
} // namespace detail

/// Build encoder parameters for windows of a fixed H x W. Initialization is
/// uniform in +-1/sqrt(fan_in), fully determined by the seed.
inline EncoderParams make_encoder_params(int input_h, int input_w, const ModelConfig& config,
                                         std::uint64_t seed) {
    config.validate();
    if (input_h < 1 || input_w < 1) throw ConfigError("window dimensions must be positive");
    Rng rng(seed);
    EncoderParams p;
    p.config = config;
    p.input_h = input_h;
    p.input_w = input_w;
    p.conv1 = detail::make_conv_bn(kConv1Channels, 1, config.bn_momentum, rng.split("conv1"));
    p.conv2 = detail::make_conv_bn(kConv2Channels, kConv1Channels, config.bn_momentum, rng.split("conv2"));
    p.cbam = make_cbam_params(kConv2Channels, config.reduction, config.alpha, rng.split("cbam"));
    const int flat = kConv2Channels * input_h * input_w;
    Rng r1 = rng.split("proj1");
    p.proj_w1 = uniform_fan_in({config.hidden, flat}, flat, r1);
    Rng r2 = rng.split("proj2");
    p.proj_w2 = uniform_fan_in({config.embedding, config.hidden}, config.hidden, r2);
    return p;
}

inline ClassifierParams make_classifier_params(int classes, int embedding, std::uint64_t seed) {
    if (classes < 2) throw ConfigError("classifier needs at least 2 classes");
    Rng rng = Rng(seed).split("classifier");
    ClassifierParams p;
    p.weight = uniform_fan_in({classes, embedding}, embedding, rng);
    return p;
}

/// Per-sample tensors surfaced by a forward pass; the refined map F_S keeps
/// the input's H x W so its channel mean reads as per-variable/per-time
/// feature contribution.
struct ForwardArtifacts {
    Tensor embedding;   // {D_z}
    Tensor refined;     // {32, H, W}
    Tensor channel_map; // {32}
    Tensor spatial_map; // {H, W}
    Tensor logits;      // {M} when a classifier participated, else empty
};

/// Tape-level encoder pass over a batch {B,1,H,W}.
struct EncoderTapeOut {
    Var embeddings; // {B, D_z}
    CbamTapeOut cbam;
};

struct EncoderTapeParams {
    Var conv1_k, conv1_b, conv1_g, conv1_beta;
    Var conv2_k, conv2_b, conv2_g, conv2_beta;
    CbamTapeParams cbam;
    Var proj_w1, proj_w2;
};

inline EncoderTapeParams register_encoder_params(Tape& tape, EncoderParams& p, bool trainable) {
    EncoderTapeParams tp;
    auto reg = [&](Tensor& t) { return trainable ? tape.param(t) : tape.view(t); };
    tp.conv1_k = reg(p.conv1.kernel);
    tp.conv1_b = reg(p.conv1.bias);
    tp.conv1_g = reg(p.conv1.gamma);
    tp.conv1_beta = reg(p.conv1.beta);
    tp.conv2_k = reg(p.conv2.kernel);
    tp.conv2_b = reg(p.conv2.bias);
    tp.conv2_g = reg(p.conv2.gamma);
    tp.conv2_beta = reg(p.conv2.beta);
    tp.cbam = register_cbam_params(tape, p.cbam, trainable);
    tp.proj_w1 = reg(p.proj_w1);
    tp.proj_w2 = reg(p.proj_w2);
    return tp;
}

inline EncoderTapeOut encoder_forward_tape(Tape& tape, Var batch, EncoderParams& params,
                                           const EncoderTapeParams& tp, Mode mode) {
    const Shape& bs = batch.shape();
    detail::require_rank(bs, {4}, "encoder_forward");
    if (bs[1] != 1) throw ShapeError("encoder input must have a single channel ({B,1,H,W})");
    if (bs[2] != params.input_h || bs[3] != params.input_w) {
        std::ostringstream os;
        os << "encoder fitted for " << params.input_h << "x" << params.input_w
           << " windows, got " << bs[2] << "x" << bs[3];
        throw ShapeError(os.str());
    }
    const double eps = params.config.bn_epsilon;
    Var x = conv_pointwise(batch, tp.conv1_k, tp.conv1_b);
    x = batch_norm(x, tp.conv1_g, tp.conv1_beta, eps, mode, params.conv1.bn);
    x = relu(x);
    x = conv_pointwise(x, tp.conv2_k, tp.conv2_b);
    x = batch_norm(x, tp.conv2_g, tp.conv2_beta, eps, mode, params.conv2.bn);
    x = relu(x);
    EncoderTapeOut out;
    out.cbam = cbam_forward(x, tp.cbam);
    Var flat = flatten(out.cbam.refined);
    Var hidden = relu(dense(flat, tp.proj_w1));
    Var z = dense(hidden, tp.proj_w2);
    out.embeddings = params.config.normalize_embeddings ? l2_normalize_rows(z) : z;
    return out;
}

/// Value-level batched forward pass.
struct EncoderOutput {
    Tensor embeddings; // {B, D_z}
    std::vector<ForwardArtifacts> artifacts; // filled when capture requested
};

namespace detail {
inline Tensor slice_sample(const Tape& tape, Var v, int b, Shape sample_shape) {
    const auto vals = v.values();
    const std::int64_t per = numel(sample_shape);
    std::vector<double> out(static_cast<std::size_t>(per));
    std::copy_n(vals.data() + static_cast<std::size_t>(b) * per, per, out.data());
    return Tensor(std::move(sample_shape), std::move(out));
}
} // namespace detail

/// Stack windows into a {B,1,H,W} batch tensor.
inline Tensor stack_batch(const std::vector<const Tensor*>& windows) {
    if (windows.empty()) throw DataError("empty batch");
    const Shape& ws = windows.front()->shape;
    if (ws.size() != 2) throw ShapeError("windows must be {H,W} matrices");
    const int B = static_cast<int>(windows.size());
    const std::int64_t per = numel(ws);
    std::vector<double> vals(static_cast<std::size_t>(B) * per);
    for (int b = 0; b < B; ++b) {
        if (windows[static_cast<std::size_t>(b)]->shape != ws)
            throw ShapeError("batch windows disagree on H x W");
        std::copy_n(windows[static_cast<std::size_t>(b)]->values.data(), per,
                    vals.data() + static_cast<std::size_t>(b) * per);
    }
    return Tensor({B, 1, ws[0], ws[1]}, std::move(vals));
}

inline EncoderOutput encoder_forward(const Tensor& batch, EncoderParams& params, Mode mode,
                                     bool capture_artifacts = false) {
    Tape tape;
    Var in = tape.input(batch);
    auto tp = register_encoder_params(tape, params, false);
    auto fwd = encoder_forward_tape(tape, in, params, tp, mode);
    EncoderOutput out;
    out.embeddings = tape.materialize(fwd.embeddings);
    if (capture_artifacts) {
        const int B = batch.shape[0];
        const int H = params.input_h, W = params.input_w;
        out.artifacts.resize(static_cast<std::size_t>(B));
        for (int b = 0; b < B; ++b) {
            auto& a = out.artifacts[static_cast<std::size_t>(b)];
            a.embedding = detail::slice_sample(tape, fwd.embeddings, b, {params.config.embedding});
            a.refined = detail::slice_sample(tape, fwd.cbam.refined, b, {kConv2Channels, H, W});
            a.channel_map = detail::slice_sample(tape, fwd.cbam.channel_map, b, {kConv2Channels});
            a.spatial_map = detail::slice_sample(tape, fwd.cbam.spatial_map, b, {H, W});
        }
    }
    return out;
}

/// Classification of one embedding or a {B,D_z} batch: logits p = W z,
/// softmax probabilities, argmax labels (ties to the lowest index).
struct Classification {
    Tensor logits;        // {M} or {B,M}
    Tensor probabilities; // same shape
    std::vector<int> labels;
};

inline Classification classify(const Tensor& embeddings, const ClassifierParams& params) {
    const Shape& es = embeddings.shape;
    if (es.size() != 1 && es.size() != 2)
        throw ShapeError("classify expects {D_z} or {B,D_z} embeddings");
    const int dz = es.size() == 2 ? es[1] : es[0];
    if (dz != params.embedding_dim()) {
        std::ostringstream os;
        os << "classifier fitted for embedding dim " << params.embedding_dim() << ", got " << dz;
        throw ShapeError(os.str());
    }
    Tape tape;
    Var z = tape.view(embeddings);
    Var w = tape.view(params.weight);
    Var logits = dense(z, w);
    Var probs = softmax(logits);
    Classification out;
    out.logits = tape.materialize(logits);
    out.probabilities = tape.materialize(probs);
    const int B = es.size() == 2 ? es[0] : 1;
    const int M = params.class_count();
    out.labels.resize(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        const double* row = out.probabilities.values.data() + static_cast<std::size_t>(b) * M;
        int best = 0;
        for (int j = 1; j < M; ++j)
            if (row[j] > row[best]) best = j;
        out.labels[static_cast<std::size_t>(b)] = best;
    }
    return out;
}

/// A complete model: encoder plus linear classifier.
struct Model {
    EncoderParams encoder;
    ClassifierParams classifier;
    std::vector<std::string> variable_names; // echo of the training data's naming
};

/// Batched forward through encoder and classifier.
struct ModelOutput {
    Tensor embeddings;
    Classification classification;
    std::vector<ForwardArtifacts> artifacts;
};

inline ModelOutput model_forward(Model& model, const Tensor& batch, Mode mode,
                                 bool capture_artifacts = false) {
    ModelOutput out;
    auto enc = encoder_forward(batch, model.encoder, mode, capture_artifacts);
    out.embeddings = std::move(enc.embeddings);
    out.artifacts = std::move(enc.artifacts);
    out.classification = classify(out.embeddings, model.classifier);
    if (capture_artifacts) {
        const int M = model.classifier.class_count();
        for (std::size_t b = 0; b < out.artifacts.size(); ++b) {
            std::vector<double> row(static_cast<std::size_t>(M));
            std::copy_n(out.classification.logits.values.data() + b * static_cast<std::size_t>(M),
                        M, row.data());
            out.artifacts[b].logits = Tensor({M}, std::move(row));
        }
    }
    return out;
}

/// FNV-1a 64 over a parameter set; used to assert stage separation.
inline std::uint64_t parameter_hash(std::vector<Tensor*> params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_bytes = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const Tensor* t : params)
        mix_bytes(t->values.data(), t->values.size() * sizeof(double));
    return h;
}

inline std::uint64_t encoder_hash(EncoderParams& p) {
    std::uint64_t h = parameter_hash(p.parameters());
    // running BN moments count as encoder state too
    auto mix = [&](const std::vector<double>& v) {
        for (double d : v) {
            const auto* b = reinterpret_cast<const unsigned char*>(&d);
            for (std::size_t i = 0; i < sizeof(double); ++i) {
                h ^= b[i];
                h *= 0x100000001b3ULL;
            }
        }
    };
    mix(p.conv1.bn.running_mean);
    mix(p.conv1.bn.running_var);
    mix(p.conv2.bn.running_mean);
    mix(p.conv2.bn.running_var);
    return h;
}

} // namespace sccam
