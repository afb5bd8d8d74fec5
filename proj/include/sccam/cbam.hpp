#pragma once

#include <cmath>
#include <sstream>
#include <vector>

#include "sccam/errors.hpp"
#include "sccam/rng.hpp"
#include "sccam/tensor.hpp"

namespace sccam {

/// Shared bottleneck MLP of the channel attention branch. The same two
/// (bias-free) layers serve the average- and max-pooled descriptors.
struct ChannelAttentionParams {
    Tensor w0; // {C/r, C}
    Tensor w1; // {C, C/r}
    int reduction = 4;

    int channels() const { return w1.shape.empty() ? 0 : w1.shape[0]; }

    void validate(int c) const {
        if (reduction <= 0 || c % reduction != 0) {
            std::ostringstream os;
            os << "reduction ratio " << reduction << " must divide channel count " << c;
            throw ConfigError(os.str());
        }
        const int hidden = c / reduction;
        if (w0.shape != Shape{hidden, c} || w1.shape != Shape{c, hidden})
            throw ShapeError("channel attention weights do not match channel count / reduction");
    }
};

/// Single-filter convolution over the 2-channel [avg; max] stack.
struct SpatialAttentionParams {
    Tensor kernel; // {1, 2, alpha, alpha}
    Tensor bias;   // {1}
    int alpha = 7;

    void validate() const {
        if (alpha % 2 == 0) {
            std::ostringstream os;
            os << "spatial filter size " << alpha << " must be odd";
            throw ConfigError(os.str());
        }
        if (kernel.shape != Shape{1, 2, alpha, alpha})
            throw ShapeError("spatial attention kernel must be {1,2,alpha,alpha}");
        if (numel(bias.shape) != 1) throw ShapeError("spatial attention bias must be a scalar");
    }
};

struct CbamParams {
    ChannelAttentionParams channel;
    SpatialAttentionParams spatial;
};

/// Uniform fan-in initialization in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
inline Tensor uniform_fan_in(Shape shape, int fan_in, Rng& rng, bool trainable = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor(std::move(shape), std::move(v), trainable);
}

inline CbamParams make_cbam_params(int channels, int reduction, int alpha, Rng rng) {
    if (reduction <= 0 || channels % reduction != 0) {
        std::ostringstream os;
        os << "reduction ratio " << reduction << " must divide channel count " << channels;
        throw ConfigError(os.str());
    }
    if (alpha % 2 == 0) {
        std::ostringstream os;
        os << "spatial filter size " << alpha << " must be odd";
        throw ConfigError(os.str());
    }
    const int hidden = channels / reduction;
    CbamParams p;
    Rng r0 = rng.split("cbam.w0");
    Rng r1 = rng.split("cbam.w1");
    Rng rs = rng.split("cbam.spatial");
    p.channel.w0 = uniform_fan_in({hidden, channels}, channels, r0);
    p.channel.w1 = uniform_fan_in({channels, hidden}, hidden, r1);
    p.channel.reduction = reduction;
    p.spatial.kernel = uniform_fan_in({1, 2, alpha, alpha}, 2 * alpha * alpha, rs);
    p.spatial.bias = Tensor::zeros({1}, true);
    p.spatial.alpha = alpha;
    return p;
}

/// Parameter leaves of one CBAM block registered on a tape.
struct CbamTapeParams {
    Var w0, w1, spatial_kernel, spatial_bias;
};

inline CbamTapeParams register_cbam_params(Tape& tape, CbamParams& p, bool trainable) {
    CbamTapeParams tp;
    if (trainable) {
        tp.w0 = tape.param(p.channel.w0);
        tp.w1 = tape.param(p.channel.w1);
        tp.spatial_kernel = tape.param(p.spatial.kernel);
        tp.spatial_bias = tape.param(p.spatial.bias);
    } else {
        tp.w0 = tape.view(p.channel.w0);
        tp.w1 = tape.view(p.channel.w1);
        tp.spatial_kernel = tape.view(p.spatial.kernel);
        tp.spatial_bias = tape.view(p.spatial.bias);
    }
    return tp;
}

namespace detail {
// {C,1,1}->{1,C} or {B,C,1,1}->{B,C}, and back.
inline Var squeeze_pooled(Var pooled) {
    const Shape& s = pooled.shape();
    if (s.size() == 4) return reshape(pooled, Shape{s[0], s[1]});
    return reshape(pooled, Shape{1, s[0]});
}

inline Var unsqueeze_channel_map(Var flat, bool batched) {
    const Shape& s = flat.shape();
    if (batched) return reshape(flat, Shape{s[0], s[1], 1, 1});
    return reshape(flat, Shape{s[1], 1, 1});
}
} // namespace detail

/// Channel attention map A_C in (0,1): shared MLP over avg- and max-pooled
/// spatial descriptors, branch outputs added, then sigmoid.
/// {C,H,W} -> {C,1,1}; batched {B,C,H,W} -> {B,C,1,1}.
inline Var channel_attention(Var fmap, const CbamTapeParams& p) {
    const Shape& fs = fmap.shape();
    detail::require_rank(fs, {3, 4}, "channel_attention");
    const bool batched = fs.size() == 4;
    const int C = batched ? fs[1] : fs[0];
    if (p.w1.shape()[0] != C) {
        std::ostringstream os;
        os << "channel_attention: params built for " << p.w1.shape()[0]
           << " channels, input has " << C;
        throw ShapeError(os.str());
    }
    Var avg = detail::squeeze_pooled(pool_spatial(fmap, PoolMode::avg)); // {B,C}
    Var mx = detail::squeeze_pooled(pool_spatial(fmap, PoolMode::max));
    Var branch_avg = dense(relu(dense(avg, p.w0)), p.w1);
    Var branch_max = dense(relu(dense(mx, p.w0)), p.w1);
    Var gate = sigmoid(add(branch_avg, branch_max));
    return detail::unsqueeze_channel_map(gate, batched);
}

/// Spatial attention map A_S in (0,1): channel-avg and channel-max maps
/// stacked, convolved with same padding, then sigmoid.
/// {C,H,W} -> {1,H,W}; batched {B,C,H,W} -> {B,1,H,W}.
inline Var spatial_attention(Var fmap, const CbamTapeParams& p) {
    detail::require_rank(fmap.shape(), {3, 4}, "spatial_attention");
    Var avg = pool_channel(fmap, PoolMode::avg);
    Var mx = pool_channel(fmap, PoolMode::max);
    Var stacked = concat_channels(avg, mx);
    return sigmoid(conv2d_same(stacked, p.spatial_kernel, p.spatial_bias));
}

/// CBAM forward pass outputs: the refined map and both attention maps.
struct CbamTapeOut {
    Var refined;     // F_S, same shape as the input
    Var channel_map; // A_C: {C,1,1} or {B,C,1,1}
    Var spatial_map; // A_S: {1,H,W} or {B,1,H,W}
};

/// Value-level snapshot of one sample's CBAM output.
struct CbamOutput {
    Tensor refined;     // {C,H,W}
    Tensor channel_map; // {C,1,1}
    Tensor spatial_map; // {1,H,W}
};

/// Sequential channel-then-spatial refinement:
/// F_C = A_C(F) (x) F, F_S = A_S(F_C) (x) F_C.
inline CbamTapeOut cbam_forward(Var fmap, const CbamTapeParams& p) {
    CbamTapeOut out;
    out.channel_map = channel_attention(fmap, p);
    Var refined_c = mul(out.channel_map, fmap);
    out.spatial_map = spatial_attention(refined_c, p);
    out.refined = mul(out.spatial_map, refined_c);
    return out;
}

/// Single-sample convenience wrapper returning materialized maps.
inline CbamOutput cbam_apply(const Tensor& fmap, CbamParams& params) {
    if (fmap.shape.size() != 3) throw ShapeError("cbam_apply expects a {C,H,W} tensor");
    params.channel.validate(fmap.shape[0]);
    params.spatial.validate();
    Tape tape;
    Var f = tape.input(fmap);
    auto tp = register_cbam_params(tape, params, false);
    auto fwd = cbam_forward(f, tp);
    CbamOutput out;
    out.refined = tape.materialize(fwd.refined);
    out.channel_map = tape.materialize(fwd.channel_map);
    out.spatial_map = tape.materialize(fwd.spatial_map);
    return out;
}

} // namespace sccam
