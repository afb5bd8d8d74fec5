#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sccam/errors.hpp"

namespace sccam {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense 64-bit tensor. `grad` is allocated only for trainable tensors and is
/// filled by Tape::backward. Values are validated finite on construction.
struct Tensor {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad; // same size as values when trainable
    bool trainable = false;

    Tensor() = default;

    Tensor(Shape s, std::vector<double> v, bool train = false)
        : shape(std::move(s)), values(std::move(v)), trainable(train) {
        validate();
        if (trainable) grad.assign(values.size(), 0.0);
    }

    static Tensor zeros(Shape s, bool train = false) {
        auto n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0), train);
    }

    static Tensor full(Shape s, double v, bool train = false) {
        auto n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v), train);
    }

    std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }

    double& at(std::initializer_list<int> idx) { return values[flat(idx)]; }
    double at(std::initializer_list<int> idx) const { return values[flat(idx)]; }

    void zero_grad() {
        if (trainable) std::fill(grad.begin(), grad.end(), 0.0);
    }

    void validate() const {
        if (shape.empty()) throw ShapeError("tensor rank must be >= 1");
        for (std::size_t i = 0; i < shape.size(); ++i)
            if (shape[i] <= 0) {
                std::ostringstream os;
                os << "axis " << i << " of " << shape_str(shape) << " must be positive";
                throw ShapeError(os.str());
            }
        if (numel(shape) != static_cast<std::int64_t>(values.size())) {
            std::ostringstream os;
            os << "shape " << shape_str(shape) << " implies " << numel(shape)
               << " values, got " << values.size();
            throw ShapeError(os.str());
        }
        for (double v : values)
            if (!std::isfinite(v)) throw ContractError("tensor holds a non-finite value");
    }

private:
    std::size_t flat(std::initializer_list<int> idx) const {
        std::size_t off = 0;
        std::size_t axis = 0;
        for (int i : idx) {
            off = off * static_cast<std::size_t>(shape[axis]) + static_cast<std::size_t>(i);
            ++axis;
        }
        return off;
    }
};

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

enum class Activation { relu, sigmoid };
enum class PoolMode { avg, max };
enum class Mode { train, infer };

/// Running first/second moments for batch normalization. Populated by the
/// first train-mode pass, then tracked as an exponential moving average.
struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.9;
    bool initialized = false;

    explicit BatchNormState(int features = 0, double mom = 0.9)
        : running_mean(static_cast<std::size_t>(features), 0.0),
          running_var(static_cast<std::size_t>(features), 1.0),
          momentum(mom) {}
};

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Tape;
struct Var {
    Tape* tape = nullptr;
    int node = -1;

    bool valid() const { return tape != nullptr && node >= 0; }
    const Shape& shape() const;
    std::span<const double> values() const;
    std::span<const double> grad() const;
};

/// Define-by-run gradient tape. Records each differentiable op in execution
/// order (inputs always precede consumers) and replays backward closures in
/// reverse. A tape supports exactly one backward pass; reset and rebuild for
/// the next step.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf holding a copy of `t.values`; does not require gradients.
    Var input(const Tensor& t) {
        t.validate();
        return make_leaf(t.shape, std::vector<double>(t.values), nullptr, false);
    }

    Var input(Shape shape, std::vector<double> values) {
        Tensor t(std::move(shape), std::move(values));
        return make_leaf(t.shape, std::move(t.values), nullptr, false);
    }

    /// Leaf that views `t.values` without copying; no gradients. The tensor
    /// must outlive the tape and must not be resized meanwhile.
    Var view(const Tensor& t) {
        return make_leaf(t.shape, {}, &t, false);
    }

    /// Trainable leaf bound to an external tensor. After backward() the
    /// tensor's grad buffer holds d(loss)/d(tensor); unused parameters get
    /// zeros. Same lifetime rules as view().
    Var param(Tensor& t) {
        if (!t.trainable) throw ContractError("param() requires a trainable tensor");
        return make_leaf(t.shape, {}, &t, true);
    }

    /// Runs reverse-mode accumulation from a scalar loss. Gradients of bound
    /// parameters are written (overwriting) into their tensors. Calling
    /// backward a second time on the same tape throws.
    void backward(Var loss) {
        if (loss.tape != this) throw ContractError("loss belongs to a different tape");
        if (backward_done_) throw ContractError("backward already ran on this tape; a tape supports one backward pass");
        Node& ln = nodes_[static_cast<std::size_t>(loss.node)];
        if (numel(ln.shape) != 1) {
            std::ostringstream os;
            os << "backward requires a scalar loss, got " << shape_str(ln.shape);
            throw ContractError(os.str());
        }
        if (!std::isfinite(ln.vals[0])) throw ContractError("loss is not finite");
        backward_done_ = true;
        for (Node& n : nodes_)
            if (n.needs_grad) n.grad.assign(static_cast<std::size_t>(numel(n.shape)), 0.0);
        if (!ln.needs_grad) return; // loss independent of every parameter
        ln.grad[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backprop && n.needs_grad) n.backprop(*this);
        }
        for (Node& n : nodes_) {
            if (n.bound != nullptr && n.bound->trainable) {
                std::copy(n.grad.begin(), n.grad.end(), n.bound->grad.begin());
            }
        }
    }

    bool backward_done() const { return backward_done_; }
    std::size_t node_count() const { return nodes_.size(); }

    /// Snapshot a var's current values into a standalone tensor.
    Tensor materialize(Var v) const {
        const Node& n = node(v.node);
        return Tensor(n.shape, std::vector<double>(n.vals, n.vals + numel(n.shape)));
    }

    // --- internal node machinery (used by the op implementations) ---

    struct Node {
        Shape shape;
        std::vector<double> own;   // storage for op outputs and copied leaves
        const double* vals = nullptr;
        std::vector<double> grad;  // allocated during backward
        std::function<void(Tape&)> backprop;
        bool needs_grad = false;
        Tensor* bound = nullptr;   // parameter leaf target, when trainable
    };

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

    Var emit(Shape shape, std::vector<double> values, bool needs_grad,
             std::function<void(Tape&)> backprop) {
        Node n;
        n.shape = std::move(shape);
        n.own = std::move(values);
        n.vals = n.own.data();
        n.needs_grad = needs_grad;
        if (needs_grad) n.backprop = std::move(backprop);
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size() - 1)};
    }

private:
    Var make_leaf(const Shape& shape, std::vector<double> copy, const Tensor* external,
                  bool trainable) {
        Node n;
        n.shape = shape;
        if (external != nullptr) {
            n.vals = external->values.data();
            n.bound = trainable ? const_cast<Tensor*>(external) : nullptr;
        } else {
            n.own = std::move(copy);
            n.vals = n.own.data();
        }
        n.needs_grad = trainable;
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size() - 1)};
    }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

inline const Shape& Var::shape() const { return tape->node(node).shape; }

inline std::span<const double> Var::values() const {
    const auto& n = tape->node(node);
    return {n.vals, static_cast<std::size_t>(numel(n.shape))};
}

inline std::span<const double> Var::grad() const {
    const auto& n = tape->node(node);
    return {n.grad.data(), n.grad.size()};
}

namespace detail {

inline Tape& tape_of(Var v) {
    if (!v.valid()) throw ContractError("operation on an invalid Var");
    return *v.tape;
}

inline void require_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw ContractError("operands live on different tapes");
}

inline void require_rank(const Shape& s, std::initializer_list<int> ranks, const char* op) {
    for (int r : ranks)
        if (static_cast<int>(s.size()) == r) return;
    std::ostringstream os;
    os << op << ": unsupported rank " << s.size() << " for input " << shape_str(s);
    throw ShapeError(os.str());
}

inline std::span<double> grad_of(Tape& t, int id) {
    auto& n = t.node(id);
    return {n.grad.data(), n.grad.size()};
}

inline std::span<const double> vals_of(Tape& t, int id) {
    const auto& n = t.node(id);
    return {n.vals, static_cast<std::size_t>(numel(n.shape))};
}

} // namespace detail

// ---------------------------------------------------------------------------
// Pointwise (1x1) convolution across channels.
// out[b,o,p] = sum_i kernel[o,i] * input[b,i,p] + bias[o].
// Spatial dimensions are untouched. Accepts {C,H,W} or {B,C,H,W}.
// ---------------------------------------------------------------------------
inline Var conv_pointwise(Var input, Var kernel, Var bias) {
    Tape& t = detail::tape_of(input);
    detail::require_same_tape(input, kernel);
    detail::require_same_tape(input, bias);
    const Shape& is = input.shape();
    const Shape& ks = kernel.shape();
    const Shape& bs = bias.shape();
    detail::require_rank(is, {3, 4}, "conv_pointwise");
    const bool batched = is.size() == 4;
    const int B = batched ? is[0] : 1;
    const int Cin = batched ? is[1] : is[0];
    const int H = batched ? is[2] : is[1];
    const int W = batched ? is[3] : is[2];
    if (ks.size() != 2) throw ShapeError("conv_pointwise: kernel must be rank 2 (C_out x C_in)");
    const int Cout = ks[0];
    if (ks[1] != Cin) {
        std::ostringstream os;
        os << "conv_pointwise: kernel input-channel axis is " << ks[1]
           << " but input has " << Cin << " channels";
        throw ShapeError(os.str());
    }
    if (bs.size() != 1 || bs[0] != Cout) {
        std::ostringstream os;
        os << "conv_pointwise: bias axis must have length " << Cout << ", got " << shape_str(bs);
        throw ShapeError(os.str());
    }

    const int P = H * W;
    const auto in = input.values();
    const auto kv = kernel.values();
    const auto bv = bias.values();
    std::vector<double> out(static_cast<std::size_t>(B) * Cout * P);
    for (int b = 0; b < B; ++b) {
        const double* ib = in.data() + static_cast<std::size_t>(b) * Cin * P;
        double* ob = out.data() + static_cast<std::size_t>(b) * Cout * P;
        for (int o = 0; o < Cout; ++o) {
            double* orow = ob + static_cast<std::size_t>(o) * P;
            std::fill(orow, orow + P, bv[static_cast<std::size_t>(o)]);
            for (int i = 0; i < Cin; ++i) {
                const double k = kv[static_cast<std::size_t>(o) * Cin + i];
                if (k == 0.0) continue;
                const double* irow = ib + static_cast<std::size_t>(i) * P;
                for (int p = 0; p < P; ++p) orow[p] += k * irow[p];
            }
        }
    }

    Shape os_shape = batched ? Shape{B, Cout, H, W} : Shape{Cout, H, W};
    const bool needs = t.node(input.node).needs_grad || t.node(kernel.node).needs_grad ||
                       t.node(bias.node).needs_grad;
    const int in_id = input.node, k_id = kernel.node, b_id = bias.node;
    Var outv = t.emit(std::move(os_shape), std::move(out), needs, nullptr);
    if (needs) {
        const int out_id = outv.node;
        t.node(out_id).backprop = [=](Tape& tp) {
            auto go = detail::grad_of(tp, out_id);
            auto iv = detail::vals_of(tp, in_id);
            auto kvv = detail::vals_of(tp, k_id);
            auto gi = detail::grad_of(tp, in_id);
            auto gk = detail::grad_of(tp, k_id);
            auto gb = detail::grad_of(tp, b_id);
            for (int b = 0; b < B; ++b) {
                const double* gob = go.data() + static_cast<std::size_t>(b) * Cout * P;
                const double* ib = iv.data() + static_cast<std::size_t>(b) * Cin * P;
                double* gib = gi.empty() ? nullptr : gi.data() + static_cast<std::size_t>(b) * Cin * P;
                for (int o = 0; o < Cout; ++o) {
                    const double* gorow = gob + static_cast<std::size_t>(o) * P;
                    if (!gb.empty()) {
                        double s = 0.0;
                        for (int p = 0; p < P; ++p) s += gorow[p];
                        gb[static_cast<std::size_t>(o)] += s;
                    }
                    for (int i = 0; i < Cin; ++i) {
                        const double* irow = ib + static_cast<std::size_t>(i) * P;
                        if (!gk.empty()) {
                            double s = 0.0;
                            for (int p = 0; p < P; ++p) s += gorow[p] * irow[p];
                            gk[static_cast<std::size_t>(o) * Cin + i] += s;
                        }
                        if (gib != nullptr) {
                            const double k = kvv[static_cast<std::size_t>(o) * Cin + i];
                            if (k == 0.0) continue;
                            double* girow = gib + static_cast<std::size_t>(i) * P;
                            for (int p = 0; p < P; ++p) girow[p] += k * gorow[p];
                        }
                    }
                }
            }
        };
    }
    return outv;
}

// ---------------------------------------------------------------------------
// Same-padded 2-D convolution with a single output channel.
// kernel {1,C,a,a} with odd a; zero padding keeps HxW. Bias is a scalar {1}.
// ---------------------------------------------------------------------------
inline Var conv2d_same(Var input, Var kernel, Var bias) {
    Tape& t = detail::tape_of(input);
    detail::require_same_tape(input, kernel);
    detail::require_same_tape(input, bias);
    const Shape& is = input.shape();
    const Shape& ks = kernel.shape();
    detail::require_rank(is, {3, 4}, "conv2d_same");
    const bool batched = is.size() == 4;
    const int B = batched ? is[0] : 1;
    const int C = batched ? is[1] : is[0];
    const int H = batched ? is[2] : is[1];
    const int W = batched ? is[3] : is[2];
    if (ks.size() != 4 || ks[0] != 1) throw ShapeError("conv2d_same: kernel must be {1,C,a,a}");
    if (ks[1] != C) {
        std::ostringstream os;
        os << "conv2d_same: kernel channel axis is " << ks[1] << " but input has " << C;
        throw ShapeError(os.str());
    }
    const int A = ks[2];
    if (ks[3] != A) throw ShapeError("conv2d_same: filter must be square");
    if (A % 2 == 0) {
        std::ostringstream os;
        os << "filter size " << A << " must be odd for symmetric same-padding";
        throw ConfigError(os.str());
    }
    if (numel(bias.shape()) != 1) throw ShapeError("conv2d_same: bias must be a scalar");
    const int pad = A / 2;

    const auto in = input.values();
    const auto kv = kernel.values();
    const double b0 = bias.values()[0];
    std::vector<double> out(static_cast<std::size_t>(B) * H * W);
    for (int b = 0; b < B; ++b) {
        const double* ib = in.data() + static_cast<std::size_t>(b) * C * H * W;
        double* ob = out.data() + static_cast<std::size_t>(b) * H * W;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double s = b0;
                for (int c = 0; c < C; ++c) {
                    const double* ic = ib + static_cast<std::size_t>(c) * H * W;
                    const double* kc = kv.data() + static_cast<std::size_t>(c) * A * A;
                    for (int u = 0; u < A; ++u) {
                        const int yy = y + u - pad;
                        if (yy < 0 || yy >= H) continue;
                        for (int v = 0; v < A; ++v) {
                            const int xx = x + v - pad;
                            if (xx < 0 || xx >= W) continue;
                            s += kc[u * A + v] * ic[yy * W + xx];
                        }
                    }
                }
                ob[y * W + x] = s;
            }
    }

    Shape os_shape = batched ? Shape{B, 1, H, W} : Shape{1, H, W};
    const bool needs = t.node(input.node).needs_grad || t.node(kernel.node).needs_grad ||
                       t.node(bias.node).needs_grad;
    const int in_id = input.node, k_id = kernel.node, b_id = bias.node;
    Var outv = t.emit(std::move(os_shape), std::move(out), needs, nullptr);
    if (needs) {
        const int out_id = outv.node;
        t.node(out_id).backprop = [=](Tape& tp) {
            auto go = detail::grad_of(tp, out_id);
            auto iv = detail::vals_of(tp, in_id);
            auto kvv = detail::vals_of(tp, k_id);
            auto gi = detail::grad_of(tp, in_id);
            auto gk = detail::grad_of(tp, k_id);
            auto gb = detail::grad_of(tp, b_id);
            for (int b = 0; b < B; ++b) {
                const double* gob = go.data() + static_cast<std::size_t>(b) * H * W;
                const double* ib = iv.data() + static_cast<std::size_t>(b) * C * H * W;
                double* gib = gi.empty() ? nullptr : gi.data() + static_cast<std::size_t>(b) * C * H * W;
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        const double g = gob[y * W + x];
                        if (g == 0.0) continue;
                        if (!gb.empty()) gb[0] += g;
                        for (int c = 0; c < C; ++c) {
                            const double* ic = ib + static_cast<std::size_t>(c) * H * W;
                            const double* kc = kvv.data() + static_cast<std::size_t>(c) * A * A;
                            double* gic = gib == nullptr ? nullptr : gib + static_cast<std::size_t>(c) * H * W;
                            double* gkc = gk.empty() ? nullptr : gk.data() + static_cast<std::size_t>(c) * A * A;
                            for (int u = 0; u < A; ++u) {
                                const int yy = y + u - pad;
                                if (yy < 0 || yy >= H) continue;
                                for (int v = 0; v < A; ++v) {
                                    const int xx = x + v - pad;
                                    if (xx < 0 || xx >= W) continue;
                                    if (gkc != nullptr) gkc[u * A + v] += g * ic[yy * W + xx];
                                    if (gic != nullptr) gic[yy * W + xx] += g * kc[u * A + v];
                                }
                            }
                        }
                    }
            }
        };
    }
    return outv;
}

// ---------------------------------------------------------------------------
// Batch normalization over the feature axis.
// Rank 2 {B,D}: features are columns, statistics over the batch.
// Rank 4 {B,C,H,W}: features are channels, statistics over batch and space.
// Train mode uses batch statistics (population variance) and updates the
// running moments; infer mode requires previously populated moments.
// ---------------------------------------------------------------------------
inline Var batch_norm(Var input, Var gamma, Var beta, double epsilon, Mode mode,
                      BatchNormState& state) {
    Tape& t = detail::tape_of(input);
    detail::require_same_tape(input, gamma);
    detail::require_same_tape(input, beta);
    const Shape& is = input.shape();
    detail::require_rank(is, {2, 4}, "batch_norm");
    const bool rank4 = is.size() == 4;
    const int B = is[0];
    const int D = rank4 ? is[1] : is[1];
    const int P = rank4 ? is[2] * is[3] : 1;     // per-feature positions within one sample
    const std::int64_t m = static_cast<std::int64_t>(B) * P; // reduction set size
    if (static_cast<int>(state.running_mean.size()) != D)
        throw ShapeError("batch_norm: state feature count does not match input");
    if (numel(gamma.shape()) != D || numel(beta.shape()) != D)
        throw ShapeError("batch_norm: gamma/beta length must equal feature count");
    if (mode == Mode::infer && !state.initialized)
        throw ContractError("batch_norm: infer mode before any train-mode step (running moments uninitialized)");

    const auto in = input.values();
    const auto gv = gamma.values();
    const auto bv = beta.values();

    std::vector<double> mean(static_cast<std::size_t>(D), 0.0);
    std::vector<double> var(static_cast<std::size_t>(D), 0.0);
    // element index for (b, d, p): rank4 -> ((b*D)+d)*P + p ; rank2 -> b*D + d
    // (value capture: the backward closure outlives this scope)
    auto elem = [rank4, D, P](int b, int d, int p) -> std::size_t {
        return rank4 ? (static_cast<std::size_t>(b) * D + d) * P + p
                     : static_cast<std::size_t>(b) * D + d;
    };
    if (mode == Mode::train) {
        for (int d = 0; d < D; ++d) {
            double s = 0.0;
            for (int b = 0; b < B; ++b)
                for (int p = 0; p < P; ++p) s += in[elem(b, d, p)];
            mean[static_cast<std::size_t>(d)] = s / static_cast<double>(m);
        }
        for (int d = 0; d < D; ++d) {
            double s = 0.0;
            const double mu = mean[static_cast<std::size_t>(d)];
            for (int b = 0; b < B; ++b)
                for (int p = 0; p < P; ++p) {
                    const double c = in[elem(b, d, p)] - mu;
                    s += c * c;
                }
            var[static_cast<std::size_t>(d)] = s / static_cast<double>(m);
        }
        if (!state.initialized) {
            state.running_mean = mean;
            state.running_var = var;
            state.initialized = true;
        } else {
            for (int d = 0; d < D; ++d) {
                auto di = static_cast<std::size_t>(d);
                state.running_mean[di] = state.momentum * state.running_mean[di] + (1.0 - state.momentum) * mean[di];
                state.running_var[di] = state.momentum * state.running_var[di] + (1.0 - state.momentum) * var[di];
            }
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    std::vector<double> inv_sd(static_cast<std::size_t>(D));
    for (int d = 0; d < D; ++d)
        inv_sd[static_cast<std::size_t>(d)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(d)] + epsilon);

    std::vector<double> out(in.size());
    std::vector<double> xhat(in.size());
    for (int b = 0; b < B; ++b)
        for (int d = 0; d < D; ++d) {
            const auto di = static_cast<std::size_t>(d);
            for (int p = 0; p < P; ++p) {
                const std::size_t e = elem(b, d, p);
                const double xh = (in[e] - mean[di]) * inv_sd[di];
                xhat[e] = xh;
                out[e] = xh * gv[di] + bv[di];
            }
        }

    const bool needs = t.node(input.node).needs_grad || t.node(gamma.node).needs_grad ||
                       t.node(beta.node).needs_grad;
    const int in_id = input.node, g_id = gamma.node, b_id = beta.node;
    const bool train_stats = mode == Mode::train;
    Var outv = t.emit(is, std::move(out), needs, nullptr);
    if (needs) {
        const int out_id = outv.node;
        auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
        auto isd = std::make_shared<std::vector<double>>(std::move(inv_sd));
        t.node(out_id).backprop = [=](Tape& tp) {
            auto go = detail::grad_of(tp, out_id);
            auto gvv = detail::vals_of(tp, g_id);
            auto gi = detail::grad_of(tp, in_id);
            auto gg = detail::grad_of(tp, g_id);
            auto gb = detail::grad_of(tp, b_id);
            const double inv_m = 1.0 / static_cast<double>(m);
            for (int d = 0; d < D; ++d) {
                const auto di = static_cast<std::size_t>(d);
                double sum_gy = 0.0, sum_gy_xh = 0.0;
                for (int b = 0; b < B; ++b)
                    for (int p = 0; p < P; ++p) {
                        const std::size_t e = elem(b, d, p);
                        sum_gy += go[e];
                        sum_gy_xh += go[e] * (*xh)[e];
                    }
                if (!gb.empty()) gb[di] += sum_gy;
                if (!gg.empty()) gg[di] += sum_gy_xh;
                if (!gi.empty()) {
                    const double a = gvv[di] * (*isd)[di];
                    if (train_stats) {
                        const double mean_gy = sum_gy * inv_m;
                        const double mean_gy_xh = sum_gy_xh * inv_m;
                        for (int b = 0; b < B; ++b)
                            for (int p = 0; p < P; ++p) {
                                const std::size_t e = elem(b, d, p);
                                gi[e] += a * (go[e] - mean_gy - (*xh)[e] * mean_gy_xh);
                            }
                    } else {
                        for (int b = 0; b < B; ++b)
                            for (int p = 0; p < P; ++p) {
                                const std::size_t e = elem(b, d, p);
                                gi[e] += a * go[e];
                            }
                    }
                }
            }
        };
    }
    return outv;
}

namespace detail {
inline double sigmoid_stable(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}
} // namespace detail

/// Elementwise ReLU or sigmoid.
inline Var activation(Var input, Activation kind) {
    Tape& t = detail::tape_of(input);
    const auto in = input.values();
    std::vector<double> out(in.size());
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    } else {
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = detail::sigmoid_stable(in[i]);
    }
    const bool needs = t.node(input.node).needs_grad;
    const int in_id = input.node;
    Var outv = t.emit(input.shape(), std::move(out), needs, nullptr);
    if (needs) {
        const int out_id = outv.node;
        t.node(out_id).backprop = [=](Tape& tp) {
            auto go = detail::grad_of(tp, out_id);
            auto ov = detail::vals_of(tp, out_id);
            auto gi = detail::grad_of(tp, in_id);
            if (gi.empty()) return;
            if (kind == Activation::relu) {
                for (std::size_t i = 0; i < go.size(); ++i)
                    if (ov[i] > 0.0) gi[i] += go[i];
            } else {
                for (std::size_t i = 0; i < go.size(); ++i)
                    gi[i] += go[i] * ov[i] * (1.0 - ov[i]);
            }
        };
    }
    return outv;
}

inline Var relu(Var input) { return activation(input, Activation::relu); }
inline Var sigmoid(Var input) { return activation(input, Activation::sigmoid); }

// ---------------------------------------------------------------------------
// Spatial pooling: {C,H,W} -> {C,1,1} (or batched {B,C,H,W} -> {B,C,1,1}).
// Max-pool gradients route to the first row-major argmax.
// ---------------------------------------------------------------------------
inline Var pool_spatial(Var input, PoolMode mode) {
    Tape& t = detail::tape_of(input);
    const Shape& is = input.shape();
    detail::require_rank(is, {3, 4}, "pool_spatial");
    const bool batched = is.size() == 4;
    const int B = batched ? is[0] : 1;
    const int C = batched ? is[1] : is[0];
    const int P = batched ? is[2] * is[3] : is[1] * is[2];

    const auto in = input.values();
    std::vector<double> out(static_cast<std::size_t>(B) * C);
    std::vector<int> arg(mode == PoolMode::max ? out.size() : 0);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* row = in.data() + (static_cast<std::size_t>(b) * C + c) * P;
            const std::size_t oi = static_cast<std::size_t>(b) * C + c;
            if (mode == PoolMode::avg) {
                double s = 0.0;
                for (int p = 0; p < P; ++p) s += row[p];
                out[oi] = s / static_cast<double>(P);
            } else {
                int best = 0;
                for (int p = 1; p < P; ++p)
                    if (row[p] > row[best]) best = p;
                out[oi] = row[best];
                arg[oi] = best;
            }
        }

    Shape os_shape = batched ? Shape{B, C, 1, 1} : Shape{C, 1, 1};
    const bool needs = t.node(input.node).needs_grad;
    const int in_id = input.node;
    Var outv = t.emit(std::move(os_shape), std::move(out), needs, nullptr);
    if (needs) {
        const int out_id = outv.node;
        auto am = std::make_shared<std::vector<int>>(std::move(arg));
        t.node(out_id).backprop = [=](Tape& tp) {
            auto go = detail::grad_of(tp, out_id);
            auto gi = detail::grad_of(tp, in_id);
            if (gi.empty()) return;
            for (std::size_t oi = 0; oi < go.size(); ++oi) {
                double* row = gi.data() + oi * P;
                if (mode == PoolMode::avg) {
                    const double g = go[oi] / static_cast<double>(P);
                    for (int p = 0; p < P; ++p) row[p] += g;
                } else {
                    row[(*am)[oi]] += go[oi];
                }
            }
        };
    }
    return outv;
}

// ---------------------------------------------------------------------------
// Channel pooling: {C,H,W} -> {1,H,W} (or batched). Max ties break to the
// lowest channel index.
// ---------------------------------------------------------------------------
inline Var pool_channel(Var input, PoolMode mode) {
    Tape& t = detail::tape_of(input);
    const Shape& is = input.shape();
    detail::require_rank(is, {3, 4}, "pool_channel");
    const bool batched = is.size() == 4;
    const int B = batched ? is[0] : 1;
    const int C = batched ? is[1] : is[0];
    const int P = batched ? is[2] * is[3] : is[1] * is[2];

    const auto in = input.values();
    std::vector<double> out(static_cast<std::size_t>(B) * P);
    std::vector<int> arg(mode == PoolMode::max ? out.size() : 0);
    for (int b = 0; b < B; ++b) {
        const double* ib = in.data() + static_cast<std::size_t>(b) * C * P;
        double* ob = out.data() + static_cast<std::size_t>(b) * P;
        int* ab = arg.empty() ? nullptr : arg.data() + static_cast<std::size_t>(b) * P;
        if (mode == PoolMode::avg) {
            for (int p = 0; p < P; ++p) {
                double s = 0.0;
                for (int c = 0; c < C; ++c) s += ib[static_cast<std::size_t>(c) * P + p];
                ob[p] = s / static_cast<double>(C);
            }
        } else {
            for (int p = 0; p < P; ++p) {
                int best = 0;
                double bv = ib[p];
                for (int c = 1; c < C; ++c) {
                    const double v = ib[static_cast<std::size_t>(c) * P + p];
                    if (v > bv) {
                        bv = v;
                        best = c;
                    }
                }
                ob[p] = bv;
                ab[p] = best;
            }
        }
    }

    Shape os_shape = batched ? Shape{B, 1, is[2], is[3]} : Shape{1, is[1], is[2]};
    const bool needs = t.node(input.node).needs_grad;
    const int in_id = input.node;
    Var outv = t.emit(std::move(os_shape), std::move(out), needs, nullptr);
    if (needs) {
        const int out_id = outv.node;
        auto am = std::make_shared<std::vector<int>>(std::move(arg));
        t.node(out_id).backprop = [=](Tape& tp) {
            auto go = detail::grad_of(tp, out_id);
            auto gi = detail::grad_of(tp, in_id);
            if (gi.empty()) return;
            for (int b = 0; b < B; ++b) {
                const double* gob = go.data() + static_cast<std::size_t>(b) * P;
                double* gib = gi.data() + static_cast<std::size_t>(b) * C * P;
                if (mode == PoolMode::avg) {
                    const double inv_c = 1.0 / static_cast<double>(C);
                    for (int p = 0; p < P; ++p) {
                        const double g = gob[p] * inv_c;
                        for (int c = 0; c < C; ++c) gib[static_cast<std::size_t>(c) * P + p] += g;
                    }
                } else {
                    const int* ab = am->data() + static_cast<std::size_t>(b) * P;
                    for (int p = 0; p < P; ++p)
                        gib[static_cast<std::size_t>(ab[p]) * P + p] += gob[p];
                }
            }
        };
    }
    return outv;
}

// ---------------------------------------------------------------------------
// Affine map out = weights . input (+ bias). weights {D_out,D}; input {D} or
// {B,D}. Pass an invalid Var{} as bias to omit it.
// ---------------------------------------------------------------------------
inline Var dense(Var input, Var weights, Var bias = Var{}) {
    Tape& t = detail::tape_of(input);
    detail::require_same_tape(input, weights);
    const bool has_bias = bias.valid();
    if (has_bias) detail::require_same_tape(input, bias);
    const Shape& is = input.shape();
    const Shape& ws = weights.shape();
    detail::require_rank(is, {1, 2}, "dense");
    if (ws.size() != 2) throw ShapeError("dense: weights must be rank 2 (D_out x D)");
    const bool batched = is.size() == 2;
    const int B = batched ? is[0] : 1;
    const int D = batched ? is[1] : is[0];
    const int Dout = ws[0];
    if (ws[1] != D) {
        std::ostringstream os;
        os << "dense: weight inner axis is " << ws[1] << " but input feature axis is " << D;
        throw ShapeError(os.str());
    }
    if (has_bias && numel(bias.shape()) != Dout)
        throw ShapeError("dense: bias length must equal output features");

    const auto in = input.values();
    const auto wv = weights.values();
    std::vector<double> out(static_cast<std::size_t>(B) * Dout);
    for (int b = 0; b < B; ++b) {
        const double* xr = in.data() + static_cast<std::size_t>(b) * D;
        double* orow = out.data() + static_cast<std::size_t>(b) * Dout;
        for (int j = 0; j < Dout; ++j) {
            const double* wr = wv.data() + static_cast<std::size_t>(j) * D;
            double s = 0.0;
            for (int k = 0; k < D; ++k) s += wr[k] * xr[k];
            orow[j] = s;
        }
    }
    if (has_bias) {
        const auto bv = bias.values();
        for (int b = 0; b < B; ++b)
            for (int j = 0; j < Dout; ++j)
                out[static_cast<std::size_t>(b) * Dout + j] += bv[static_cast<std::size_t>(j)];
    }

    Shape os_shape = batched ? Shape{B, Dout} : Shape{Dout};
    bool needs = t.node(input.node).needs_grad || t.node(weights.node).needs_grad;
    if (has_bias) needs = needs || t.node(bias.node).needs_grad;
    const int in_id = input.node, w_id = weights.node;
    const int b_id = has_bias ? bias.node : -1;
    Var outv = t.emit(std::move(os_shape), std::move(out), needs, nullptr);
    if (needs) {
        const int out_id = outv.node;
        t.node(out_id).backprop = [=](Tape& tp) {
            auto go = detail::grad_of(tp, out_id);
            auto iv = detail::vals_of(tp, in_id);
            auto wvv = detail::vals_of(tp, w_id);
            auto gi = detail::grad_of(tp, in_id);
            auto gw = detail::grad_of(tp, w_id);
            for (int b = 0; b < B; ++b) {
                const double* gor = go.data() + static_cast<std::size_t>(b) * Dout;
                const double* xr = iv.data() + static_cast<std::size_t>(b) * D;
                double* gir = gi.empty() ? nullptr : gi.data() + static_cast<std::size_t>(b) * D;
                for (int j = 0; j < Dout; ++j) {
                    const double g = gor[j];
                    if (g == 0.0) continue;
                    const double* wr = wvv.data() + static_cast<std::size_t>(j) * D;
                    if (!gw.empty()) {
                        double* gwr = gw.data() + static_cast<std::size_t>(j) * D;
                        for (int k = 0; k < D; ++k) gwr[k] += g * xr[k];
                    }
                    if (gir != nullptr)
                        for (int k = 0; k < D; ++k) gir[k] += g * wr[k];
                }
            }
            if (b_id >= 0) {
                auto gb = detail::grad_of(tp, b_id);
                if (!gb.empty())
                    for (int b = 0; b < B; ++b)
                        for (int j = 0; j < Dout; ++j)
                            gb[static_cast<std::size_t>(j)] += go[static_cast<std::size_t>(b) * Dout + j];
            }
        };
    }
    return outv;
}

// ---------------------------------------------------------------------------
// Max-shifted softmax over the last axis. Accepts {M} or {B,M}.
// ---------------------------------------------------------------------------
inline Var softmax(Var logits) {
    Tape& t = detail::tape_of(logits);
    const Shape& is = logits.shape();
    detail::require_rank(is, {1, 2}, "softmax");
    const bool batched = is.size() == 2;
    const int B = batched ? is[0] : 1;
    const int M = batched ? is[1] : is[0];
    const auto in = logits.values();
    std::vector<double> out(in.size());
    for (int b = 0; b < B; ++b) {
        const double* row = in.data() + static_cast<std::size_t>(b) * M;
        double* orow = out.data() + static_cast<std::size_t>(b) * M;
        double mx = row[0];
        for (int j = 1; j < M; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < M; ++j) {
            orow[j] = std::exp(row[j] - mx);
            s += orow[j];
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < M; ++j) orow[j] *= inv;
    }
    const bool needs = t.node(logits.node).needs_grad;
    const int in_id = logits.node;
    Var outv = t.emit(is, std::move(out), needs, nullptr);
    if (needs) {
        const int out_id = outv.node;
        t.node(out_id).backprop = [=](Tape& tp) {
            auto go = detail::grad_of(tp, out_id);
            auto ov = detail::vals_of(tp, out_id);
            auto gi = detail::grad_of(tp, in_id);
            if (gi.empty()) return;
            for (int b = 0; b < B; ++b) {
                const double* gr = go.data() + static_cast<std::size_t>(b) * M;
                const double* sr = ov.data() + static_cast<std::size_t>(b) * M;
                double* gir = gi.data() + static_cast<std::size_t>(b) * M;
                double dot = 0.0;
                for (int j = 0; j < M; ++j) dot += gr[j] * sr[j];
                for (int j = 0; j < M; ++j) gir[j] += sr[j] * (gr[j] - dot);
            }
        };
    }
    return outv;
}

// ---------------------------------------------------------------------------
// Elementwise add/multiply with same-rank broadcasting (axis sizes must match
// or be 1 on either side). Gradients sum over broadcast axes.
// ---------------------------------------------------------------------------
namespace detail {

struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> stride_a, stride_b;
};

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* op) {
    if (a.size() != b.size()) {
        std::ostringstream os;
        os << op << ": rank mismatch " << shape_str(a) << " vs " << shape_str(b);
        throw ShapeError(os.str());
    }
    BroadcastPlan plan;
    plan.out.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i] || a[i] == 1 || b[i] == 1) {
            plan.out[i] = std::max(a[i], b[i]);
        } else {
            std::ostringstream os;
            os << op << ": axis " << i << " incompatible: " << shape_str(a) << " vs " << shape_str(b);
            throw ShapeError(os.str());
        }
    }
    auto strides_for = [&](const Shape& s) {
        std::vector<std::size_t> st(s.size(), 0);
        std::size_t acc = 1;
        for (std::size_t i = s.size(); i-- > 0;) {
            st[i] = (s[i] == 1) ? 0 : acc;
            acc *= static_cast<std::size_t>(s[i]);
        }
        return st;
    };
    plan.stride_a = strides_for(a);
    plan.stride_b = strides_for(b);
    return plan;
}

template <typename F>
inline void for_each_broadcast(const BroadcastPlan& plan, F&& fn) {
    const std::size_t rank = plan.out.size();
    std::vector<int> idx(rank, 0);
    const std::int64_t total = numel(plan.out);
    std::size_t oa = 0, ob = 0;
    for (std::int64_t lin = 0; lin < total; ++lin) {
        fn(static_cast<std::size_t>(lin), oa, ob);
        for (std::size_t ax = rank; ax-- > 0;) {
            ++idx[ax];
            oa += plan.stride_a[ax];
            ob += plan.stride_b[ax];
            if (idx[ax] < plan.out[ax]) break;
            oa -= static_cast<std::size_t>(plan.out[ax]) * plan.stride_a[ax];
            ob -= static_cast<std::size_t>(plan.out[ax]) * plan.stride_b[ax];
            idx[ax] = 0;
        }
    }
}

enum class EwKind { add, mul };

inline Var elementwise(Var a, Var b, EwKind kind, const char* op) {
    Tape& t = tape_of(a);
    require_same_tape(a, b);
    const BroadcastPlan plan = broadcast_plan(a.shape(), b.shape(), op);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(static_cast<std::size_t>(numel(plan.out)));
    if (kind == EwKind::add) {
        for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            out[o] = av[ia] + bv[ib];
        });
    } else {
        for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            out[o] = av[ia] * bv[ib];
        });
    }
    const bool needs = t.node(a.node).needs_grad || t.node(b.node).needs_grad;
    const int a_id = a.node, b_id = b.node;
    Var outv = t.emit(plan.out, std::move(out), needs, nullptr);
    if (needs) {
        const int out_id = outv.node;
        t.node(out_id).backprop = [=](Tape& tp) {
            auto go = grad_of(tp, out_id);
            auto ga = grad_of(tp, a_id);
            auto gb = grad_of(tp, b_id);
            auto avv = vals_of(tp, a_id);
            auto bvv = vals_of(tp, b_id);
            if (kind == EwKind::add) {
                for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                    if (!ga.empty()) ga[ia] += go[o];
                    if (!gb.empty()) gb[ib] += go[o];
                });
            } else {
                for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                    if (!ga.empty()) ga[ia] += go[o] * bvv[ib];
                    if (!gb.empty()) gb[ib] += go[o] * avv[ia];
                });
            }
        };
    }
    return outv;
}

} // namespace detail

inline Var add(Var a, Var b) { return detail::elementwise(a, b, detail::EwKind::add, "add"); }
inline Var mul(Var a, Var b) { return detail::elementwise(a, b, detail::EwKind::mul, "mul"); }

/// Concatenate two feature maps along the channel axis ({C,H,W} or {B,C,H,W}).
inline Var concat_channels(Var a, Var b) {
    Tape& t = detail::tape_of(a);
    detail::require_same_tape(a, b);
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    detail::require_rank(as, {3, 4}, "concat_channels");
    if (as.size() != bs.size()) throw ShapeError("concat_channels: rank mismatch");
    const bool batched = as.size() == 4;
    const int B = batched ? as[0] : 1;
    const int Ca = batched ? as[1] : as[0];
    const int Cb = batched ? bs[1] : bs[0];
    const int P = batched ? as[2] * as[3] : as[1] * as[2];
    const int Pb = batched ? bs[2] * bs[3] : bs[1] * bs[2];
    if (P != Pb || (batched && as[0] != bs[0]))
        throw ShapeError("concat_channels: non-channel axes must match");

    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(static_cast<std::size_t>(B) * (Ca + Cb) * P);
    for (int bi = 0; bi < B; ++bi) {
        double* ob = out.data() + static_cast<std::size_t>(bi) * (Ca + Cb) * P;
        std::copy_n(av.data() + static_cast<std::size_t>(bi) * Ca * P, static_cast<std::size_t>(Ca) * P, ob);
        std::copy_n(bv.data() + static_cast<std::size_t>(bi) * Cb * P, static_cast<std::size_t>(Cb) * P,
                    ob + static_cast<std::size_t>(Ca) * P);
    }

    Shape os_shape = batched ? Shape{B, Ca + Cb, as[2], as[3]} : Shape{Ca + Cb, as[1], as[2]};
    const bool needs = t.node(a.node).needs_grad || t.node(b.node).needs_grad;
    const int a_id = a.node, b_id = b.node;
    Var outv = t.emit(std::move(os_shape), std::move(out), needs, nullptr);
    if (needs) {
        const int out_id = outv.node;
        t.node(out_id).backprop = [=](Tape& tp) {
            auto go = detail::grad_of(tp, out_id);
            auto ga = detail::grad_of(tp, a_id);
            auto gb = detail::grad_of(tp, b_id);
            for (int bi = 0; bi < B; ++bi) {
                const double* gob = go.data() + static_cast<std::size_t>(bi) * (Ca + Cb) * P;
                if (!ga.empty())
                    for (std::size_t i = 0; i < static_cast<std::size_t>(Ca) * P; ++i)
                        ga[static_cast<std::size_t>(bi) * Ca * P + i] += gob[i];
                if (!gb.empty())
                    for (std::size_t i = 0; i < static_cast<std::size_t>(Cb) * P; ++i)
                        gb[static_cast<std::size_t>(bi) * Cb * P + i] += gob[static_cast<std::size_t>(Ca) * P + i];
            }
        };
    }
    return outv;
}

/// Copy into a new shape with identical element count.
inline Var reshape(Var input, Shape target) {
    Tape& t = detail::tape_of(input);
    if (numel(target) != numel(input.shape())) {
        std::ostringstream os;
        os << "reshape: cannot map " << shape_str(input.shape()) << " to " << shape_str(target);
        throw ShapeError(os.str());
    }
    const auto in = input.values();
    std::vector<double> out(in.begin(), in.end());
    const bool needs = t.node(input.node).needs_grad;
    const int in_id = input.node;
    Var outv = t.emit(std::move(target), std::move(out), needs, nullptr);
    if (needs) {
        const int out_id = outv.node;
        t.node(out_id).backprop = [=](Tape& tp) {
            auto go = detail::grad_of(tp, out_id);
            auto gi = detail::grad_of(tp, in_id);
            if (gi.empty()) return;
            for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
        };
    }
    return outv;
}

/// {B,C,H,W} -> {B,C*H*W}; {C,H,W} -> {C*H*W}.
inline Var flatten(Var input) {
    const Shape& is = input.shape();
    detail::require_rank(is, {3, 4}, "flatten");
    if (is.size() == 4) return reshape(input, Shape{is[0], is[1] * is[2] * is[3]});
    return reshape(input, Shape{is[0] * is[1] * is[2]});
}

/// Scale each row of {B,D} (or the single {D} vector) to unit L2 norm.
/// Rows with norm below `guard` are scaled by 1/guard instead, which keeps
/// the all-zero row at zero.
inline Var l2_normalize_rows(Var input, double guard = 1e-12) {
    Tape& t = detail::tape_of(input);
    const Shape& is = input.shape();
    detail::require_rank(is, {1, 2}, "l2_normalize_rows");
    const bool batched = is.size() == 2;
    const int B = batched ? is[0] : 1;
    const int D = batched ? is[1] : is[0];
    const auto in = input.values();
    std::vector<double> out(in.size());
    std::vector<double> inv_norm(static_cast<std::size_t>(B));
    std::vector<char> clamped(static_cast<std::size_t>(B), 0);
    for (int b = 0; b < B; ++b) {
        const double* row = in.data() + static_cast<std::size_t>(b) * D;
        double s = 0.0;
        for (int k = 0; k < D; ++k) s += row[k] * row[k];
        double norm = std::sqrt(s);
        if (norm < guard) {
            norm = guard;
            clamped[static_cast<std::size_t>(b)] = 1;
        }
        const double inv = 1.0 / norm;
        inv_norm[static_cast<std::size_t>(b)] = inv;
        double* orow = out.data() + static_cast<std::size_t>(b) * D;
        for (int k = 0; k < D; ++k) orow[k] = row[k] * inv;
    }
    const bool needs = t.node(input.node).needs_grad;
    const int in_id = input.node;
    Var outv = t.emit(is, std::move(out), needs, nullptr);
    if (needs) {
        const int out_id = outv.node;
        auto invn = std::make_shared<std::vector<double>>(std::move(inv_norm));
        auto clmp = std::make_shared<std::vector<char>>(std::move(clamped));
        t.node(out_id).backprop = [=](Tape& tp) {
            auto go = detail::grad_of(tp, out_id);
            auto ov = detail::vals_of(tp, out_id);
            auto gi = detail::grad_of(tp, in_id);
            if (gi.empty()) return;
            for (int b = 0; b < B; ++b) {
                const double* gr = go.data() + static_cast<std::size_t>(b) * D;
                const double* yr = ov.data() + static_cast<std::size_t>(b) * D;
                double* gir = gi.data() + static_cast<std::size_t>(b) * D;
                const double inv = (*invn)[static_cast<std::size_t>(b)];
                if ((*clmp)[static_cast<std::size_t>(b)]) {
                    // norm pinned at guard: y = x / guard is linear
                    for (int k = 0; k < D; ++k) gir[k] += gr[k] * inv;
                } else {
                    double dot = 0.0;
                    for (int k = 0; k < D; ++k) dot += gr[k] * yr[k];
                    for (int k = 0; k < D; ++k) gir[k] += inv * (gr[k] - dot * yr[k]);
                }
            }
        };
    }
    return outv;
}

/// Sum all elements to a scalar {1}.
inline Var sum(Var input) {
    Tape& t = detail::tape_of(input);
    const auto in = input.values();
    double s = 0.0;
    for (double v : in) s += v;
    const bool needs = t.node(input.node).needs_grad;
    const int in_id = input.node;
    Var outv = t.emit(Shape{1}, std::vector<double>{s}, needs, nullptr);
    if (needs) {
        const int out_id = outv.node;
        t.node(out_id).backprop = [=](Tape& tp) {
            auto go = detail::grad_of(tp, out_id);
            auto gi = detail::grad_of(tp, in_id);
            if (gi.empty()) return;
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[0];
        };
    }
    return outv;
}

/// Free-function form of Tape::backward.
inline void backward(Tape& tape, Var loss) { tape.backward(loss); }

} // namespace sccam
