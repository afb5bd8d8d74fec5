#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <vector>

#include "sccam/errors.hpp"
#include "sccam/tensor.hpp"

namespace sccam {

/// An augmented contrastive batch: 2N embeddings in pairing order
/// (entry 2k is the original of pair k, entry 2k+1 its augmentation, 0-based)
/// with labels satisfying labels[2k] == labels[2k+1].
struct ContrastiveBatch {
    Var embeddings; // {2N, D}
    std::vector<int> labels;
    double temperature = 0.1;
};

namespace detail {

struct ContrastiveForward {
    double loss = 0.0;
    std::vector<double> grad_rows; // dL/dS, {n*n} row-major, diagonal zero
};

// Shared core for Eq.-style contrastive losses: for each anchor i and its
// positive set P(i) (subset of A(i) = all-but-i),
//   L = sum_i (1/|P(i)|) * sum_{p in P(i)} [ logsumexp_{a != i}(S_ia) - S_ip ]
// with S = Z Z^T / tau, computed with a max shift. The gradient w.r.t. S is
//   dL/dS_ia = softmax_i(a) - [a in P(i)] / |P(i)|   (a != i).
inline ContrastiveForward contrastive_core(std::span<const double> z, int n, int dim,
                                           const std::vector<std::vector<int>>& positives,
                                           double tau, bool want_grad) {
    ContrastiveForward res;
    std::vector<double> sim(static_cast<std::size_t>(n) * n, 0.0);
    const double inv_tau = 1.0 / tau;
    for (int i = 0; i < n; ++i) {
        const double* zi = z.data() + static_cast<std::size_t>(i) * dim;
        for (int a = i + 1; a < n; ++a) {
            const double* za = z.data() + static_cast<std::size_t>(a) * dim;
            double s = 0.0;
            for (int k = 0; k < dim; ++k) s += zi[k] * za[k];
            s *= inv_tau;
            sim[static_cast<std::size_t>(i) * n + a] = s;
            sim[static_cast<std::size_t>(a) * n + i] = s;
        }
    }
    if (want_grad) res.grad_rows.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* row = sim.data() + static_cast<std::size_t>(i) * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < n; ++a)
            if (a != i) mx = std::max(mx, row[a]);
        double denom = 0.0;
        for (int a = 0; a < n; ++a)
            if (a != i) denom += std::exp(row[a] - mx);
        const double lse = mx + std::log(denom);
        const auto& pos = positives[static_cast<std::size_t>(i)];
        const double inv_p = 1.0 / static_cast<double>(pos.size());
        for (int p : pos) res.loss += inv_p * (lse - row[p]);
        if (want_grad) {
            double* grow = res.grad_rows.data() + static_cast<std::size_t>(i) * n;
            const double inv_denom = 1.0 / denom;
            for (int a = 0; a < n; ++a)
                if (a != i) grow[a] = std::exp(row[a] - mx) * inv_denom;
            for (int p : pos) grow[p] -= inv_p;
        }
    }
    return res;
}

inline Var contrastive_loss_var(Var embeddings, const std::vector<std::vector<int>>& positives,
                                double tau) {
    Tape& t = tape_of(embeddings);
    const Shape& es = embeddings.shape();
    require_rank(es, {2}, "contrastive loss");
    const int n = es[0];
    const int dim = es[1];
    const bool needs = t.node(embeddings.node).needs_grad;
    auto fwd = contrastive_core(embeddings.values(), n, dim, positives, tau, needs);
    const int z_id = embeddings.node;
    Var out = t.emit(Shape{1}, std::vector<double>{fwd.loss}, needs, nullptr);
    if (needs) {
        const int out_id = out.node;
        auto gmat = std::make_shared<std::vector<double>>(std::move(fwd.grad_rows));
        const double inv_tau = 1.0 / tau;
        t.node(out_id).backprop = [=](Tape& tp) {
            auto go = grad_of(tp, out_id);
            auto gz = grad_of(tp, z_id);
            auto zv = vals_of(tp, z_id);
            if (gz.empty()) return;
            const double g0 = go[0] * inv_tau;
            // dZ = (G + G^T) Z / tau
            for (int i = 0; i < n; ++i) {
                double* gzr = gz.data() + static_cast<std::size_t>(i) * dim;
                const double* grow = gmat->data() + static_cast<std::size_t>(i) * n;
                for (int a = 0; a < n; ++a) {
                    const double w = (grow[a] + (*gmat)[static_cast<std::size_t>(a) * n + i]) * g0;
                    if (w == 0.0) continue;
                    const double* za = zv.data() + static_cast<std::size_t>(a) * dim;
                    for (int k = 0; k < dim; ++k) gzr[k] += w * za[k];
                }
            }
        };
    }
    return out;
}

inline void validate_contrastive_batch(const Shape& es, const std::vector<int>& labels,
                                       double tau) {
    if (es.size() != 2) throw ShapeError("contrastive batch embeddings must be {2N, D}");
    const int n = es[0];
    if (n < 2) throw ContractError("contrastive batch needs at least 2 samples");
    if (tau <= 0.0) throw ContractError("temperature must be positive");
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("label count does not match embedding rows");
}

} // namespace detail

/// Self-supervised contrastive loss: the only positive of anchor i is its
/// augmentation partner (rows 2k and 2k+1 pair up). Sum over anchors.
inline Var self_supervised_contrastive_loss(Var embeddings, double tau) {
    const Shape& es = embeddings.shape();
    if (es.size() != 2) throw ShapeError("embeddings must be {2N, D}");
    const int n = es[0];
    if (n < 2) throw ContractError("contrastive batch needs at least 2 samples");
    if (n % 2 != 0) throw ContractError("paired batch size must be even");
    if (tau <= 0.0) throw ContractError("temperature must be positive");
    std::vector<std::vector<int>> positives(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) positives[static_cast<std::size_t>(i)] = {i ^ 1};
    return detail::contrastive_loss_var(embeddings, positives, tau);
}

/// Supervised contrastive loss: positives of anchor i are all other samples
/// with the same label, including its augmentation partner. Sum over anchors.
inline Var supervised_contrastive_loss(Var embeddings, const std::vector<int>& labels,
                                       double tau) {
    const Shape& es = embeddings.shape();
    detail::validate_contrastive_batch(es, labels, tau);
    const int n = es[0];
    std::vector<std::vector<int>> positives(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto& pos = positives[static_cast<std::size_t>(i)];
        for (int a = 0; a < n; ++a)
            if (a != i && labels[static_cast<std::size_t>(a)] == labels[static_cast<std::size_t>(i)])
                pos.push_back(a);
        if (pos.empty()) {
            std::ostringstream os;
            os << "anchor " << i << " (label " << labels[static_cast<std::size_t>(i)]
               << ") has no positive in the batch";
            throw ContractError(os.str());
        }
    }
    return detail::contrastive_loss_var(embeddings, positives, tau);
}

inline Var supervised_contrastive_loss(const ContrastiveBatch& batch) {
    return supervised_contrastive_loss(batch.embeddings, batch.labels, batch.temperature);
}

/// Mean cross-entropy computed from logits (softmax fused for stability).
inline Var cross_entropy_with_logits(Var logits, const std::vector<int>& targets) {
    Tape& t = detail::tape_of(logits);
    const Shape& ls = logits.shape();
    detail::require_rank(ls, {2}, "cross_entropy_with_logits");
    const int B = ls[0];
    const int M = ls[1];
    if (static_cast<int>(targets.size()) != B)
        throw ShapeError("target count does not match logit rows");
    for (int b = 0; b < B; ++b)
        if (targets[static_cast<std::size_t>(b)] < 0 || targets[static_cast<std::size_t>(b)] >= M) {
            std::ostringstream os;
            os << "target " << targets[static_cast<std::size_t>(b)] << " at row " << b
               << " outside class range [0," << M << ")";
            throw DataError(os.str());
        }

    const auto lv = logits.values();
    std::vector<double> softmaxes(lv.size());
    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
        const double* row = lv.data() + static_cast<std::size_t>(b) * M;
        double* srow = softmaxes.data() + static_cast<std::size_t>(b) * M;
        double mx = row[0];
        for (int j = 1; j < M; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < M; ++j) {
            srow[j] = std::exp(row[j] - mx);
            denom += srow[j];
        }
        const double inv = 1.0 / denom;
        for (int j = 0; j < M; ++j) srow[j] *= inv;
        loss += mx + std::log(denom) - row[targets[static_cast<std::size_t>(b)]];
    }
    loss /= static_cast<double>(B);

    const bool needs = t.node(logits.node).needs_grad;
    const int l_id = logits.node;
    Var out = t.emit(Shape{1}, std::vector<double>{loss}, needs, nullptr);
    if (needs) {
        const int out_id = out.node;
        auto sm = std::make_shared<std::vector<double>>(std::move(softmaxes));
        auto tg = std::make_shared<std::vector<int>>(targets);
        t.node(out_id).backprop = [=](Tape& tp) {
            auto go = detail::grad_of(tp, out_id);
            auto gl = detail::grad_of(tp, l_id);
            if (gl.empty()) return;
            const double g0 = go[0] / static_cast<double>(B);
            for (int b = 0; b < B; ++b) {
                const double* srow = sm->data() + static_cast<std::size_t>(b) * M;
                double* grow = gl.data() + static_cast<std::size_t>(b) * M;
                for (int j = 0; j < M; ++j) grow[j] += g0 * srow[j];
                grow[(*tg)[static_cast<std::size_t>(b)]] -= g0;
            }
        };
    }
    return out;
}

/// Mean cross-entropy from an already-normalized probability matrix {B,M}.
/// Rows must sum to 1 (1e-6 slack). Training uses the fused logits form; this
/// form services probability-space checks.
inline double cross_entropy_loss(const Tensor& probabilities, const std::vector<int>& targets) {
    if (probabilities.shape.size() != 2)
        throw ShapeError("cross_entropy_loss expects probabilities {B, M}");
    const int B = probabilities.shape[0];
    const int M = probabilities.shape[1];
    if (static_cast<int>(targets.size()) != B)
        throw ShapeError("target count does not match probability rows");
    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
        const double* row = probabilities.values.data() + static_cast<std::size_t>(b) * M;
        double s = 0.0;
        for (int j = 0; j < M; ++j) s += row[j];
        if (std::abs(s - 1.0) > 1e-6) {
            std::ostringstream os;
            os << "probability row " << b << " sums to " << s << ", not 1";
            throw ContractError(os.str());
        }
        const int tgt = targets[static_cast<std::size_t>(b)];
        if (tgt < 0 || tgt >= M) {
            std::ostringstream os;
            os << "target " << tgt << " at row " << b << " outside class range [0," << M << ")";
            throw DataError(os.str());
        }
        loss -= std::log(std::max(row[tgt], 1e-300));
    }
    return loss / static_cast<double>(B);
}

} // namespace sccam
