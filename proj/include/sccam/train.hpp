#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <sstream>
#include <vector>

#include "sccam/data.hpp"
#include "sccam/errors.hpp"
#include "sccam/losses.hpp"
#include "sccam/model.hpp"
#include "sccam/rng.hpp"

namespace sccam {

enum class OptimizerKind { adam, sgd_momentum };

inline const char* to_string(OptimizerKind k) {
    return k == OptimizerKind::adam ? "adam" : "sgd-momentum";
}

inline OptimizerKind optimizer_kind_from(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd-momentum" || s == "sgd" || s == "sgd_momentum") return OptimizerKind::sgd_momentum;
    throw ConfigError("unknown optimizer '" + s + "' (adam|sgd-momentum)");
}

/// Knobs of the two-stage offline procedure. `batch` counts originals; the
/// contrastive stage sees 2*batch samples after pairing.
///
/// Adam is the default: under heavy class imbalance the SCL landscape has a
/// collapse saddle whose escape directions carry tiny gradients, and plain
/// SGD-momentum reaches it only on lucky seeds. SGD-momentum remains
/// available for comparison.
struct TrainConfig {
    int batch = 64;
    int epochs_stage1 = 30;
    int epochs_stage2 = 20;
    double lr_stage1 = 0.002;
    double lr_stage2 = 0.01;
    OptimizerKind optimizer = OptimizerKind::adam;
    double momentum = 0.9;
    double temperature = 0.5;
    double noise_scale = 1.0;
    std::uint64_t seed = 7;
    bool freeze_encoder = true;

    void validate() const {
        if (batch < 2) throw ConfigError("batch size must be >= 2");
        if (epochs_stage1 < 1 || epochs_stage2 < 1) throw ConfigError("epoch counts must be >= 1");
        if (lr_stage1 <= 0.0 || lr_stage2 <= 0.0) throw ConfigError("learning rates must be positive");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0,1)");
        if (temperature <= 0.0) throw ConfigError("temperature must be positive");
        if (noise_scale < 0.0) throw ConfigError("noise scale must be >= 0");
    }
};

/// Heavy-ball SGD: v <- momentum*v + grad, p <- p - lr*v.
class SgdMomentum {
public:
    explicit SgdMomentum(double momentum) : momentum_(momentum) {}

    void attach(const std::vector<Tensor*>& params) {
        for (Tensor* p : params) {
            if (!p->trainable) throw ContractError("optimizer attached to a non-trainable tensor");
            slots_.push_back({p, std::vector<double>(p->values.size(), 0.0)});
        }
    }

    void step(double lr) {
        for (auto& s : slots_) {
            for (std::size_t i = 0; i < s.velocity.size(); ++i) {
                s.velocity[i] = momentum_ * s.velocity[i] + s.param->grad[i];
                s.param->values[i] -= lr * s.velocity[i];
            }
        }
    }

    void zero_grad() {
        for (auto& s : slots_) s.param->zero_grad();
    }

private:
    struct Slot {
        Tensor* param;
        std::vector<double> velocity;
    };
    double momentum_;
    std::vector<Slot> slots_;
};

/// Adam with bias correction (beta1 = momentum, beta2 = 0.999, eps = 1e-8).
class Adam {
public:
    explicit Adam(double beta1, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void attach(const std::vector<Tensor*>& params) {
        for (Tensor* p : params) {
            if (!p->trainable) throw ContractError("optimizer attached to a non-trainable tensor");
            slots_.push_back({p, std::vector<double>(p->values.size(), 0.0),
                              std::vector<double>(p->values.size(), 0.0)});
        }
    }

    void step(double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        for (auto& s : slots_) {
            for (std::size_t i = 0; i < s.m.size(); ++i) {
                const double g = s.param->grad[i];
                s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
                s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
                const double mhat = s.m[i] / c1;
                const double vhat = s.v[i] / c2;
                s.param->values[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    void zero_grad() {
        for (auto& s : slots_) s.param->zero_grad();
    }

private:
    struct Slot {
        Tensor* param;
        std::vector<double> m;
        std::vector<double> v;
    };
    double beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Slot> slots_;
};

/// Uniform front-end over the two optimizers.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double momentum)
        : kind_(kind), sgd_(momentum), adam_(momentum) {}

    void attach(const std::vector<Tensor*>& params) {
        if (kind_ == OptimizerKind::adam)
            adam_.attach(params);
        else
            sgd_.attach(params);
        attached_.insert(attached_.end(), params.begin(), params.end());
    }

    void step(double lr) {
        if (kind_ == OptimizerKind::adam)
            adam_.step(lr);
        else
            sgd_.step(lr);
    }

    void zero_grad() {
        for (Tensor* p : attached_) p->zero_grad();
    }

private:
    OptimizerKind kind_;
    SgdMomentum sgd_;
    Adam adam_;
    std::vector<Tensor*> attached_;
};

/// Final metrics plus the per-epoch loss traces of both stages.
struct TrainReport {
    std::vector<double> stage1_loss;
    std::vector<double> stage2_loss;
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    std::vector<std::vector<int>> confusion; // rows = true class, cols = predicted
    int skipped_batches_stage1 = 0;
};

namespace detail {

inline void check_loss_finite(double value, const char* stage, int epoch, int batch_index) {
    if (!std::isfinite(value)) {
        std::ostringstream os;
        os << stage << ": non-finite loss at epoch " << epoch << ", batch " << batch_index;
        throw ContractError(os.str());
    }
}

inline std::vector<int> class_histogram(const std::vector<WindowedSample>& set, int classes) {
    std::vector<int> hist(static_cast<std::size_t>(classes), 0);
    for (const auto& s : set) {
        if (s.label < 0 || s.label >= classes) {
            std::ostringstream os;
            os << "sample label " << s.label << " outside [0," << classes << ")";
            throw DataError(os.str());
        }
        ++hist[static_cast<std::size_t>(s.label)];
    }
    return hist;
}

} // namespace detail

struct Stage1Result {
    EncoderParams encoder;
    std::vector<double> loss;
    int skipped_batches = 0;
};

/// Stage 1: supervised contrastive feature learning. Each epoch shuffles the
/// originals, pairs every batch with noisy augmentations, and updates the
/// encoder with the SCL loss. Batches left with a single original are skipped
/// (their loss is degenerate) with a warning on stderr.
inline Stage1Result train_stage1(const std::vector<WindowedSample>& train, int classes,
                                 const ModelConfig& model_config, const TrainConfig& config) {
    config.validate();
    if (train.empty()) throw DataError("stage 1: empty training set");
    auto hist = detail::class_histogram(train, classes);
    for (int c = 0; c < classes; ++c)
        if (hist[static_cast<std::size_t>(c)] < 1) {
            std::ostringstream os;
            os << "stage 1: class " << c << " has no training samples";
            throw DataError(os.str());
        }

    const int h = train.front().var_count();
    const int w = train.front().window();
    Stage1Result res;
    res.encoder = make_encoder_params(h, w, model_config, Rng(config.seed).split("init.encoder").next_u64());

    Optimizer opt(config.optimizer, config.momentum);
    opt.attach(res.encoder.parameters());

    Rng shuffle_rng = Rng(config.seed).split("stage1.shuffle");
    Rng augment_rng = Rng(config.seed).split("stage1.augment");

    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    const int n = static_cast<int>(train.size());
    for (int epoch = 0; epoch < config.epochs_stage1; ++epoch) {
        Rng erng = shuffle_rng.split(static_cast<std::uint64_t>(epoch));
        shuffle_indices(order, erng);
        double epoch_loss = 0.0;
        int batches = 0;
        for (int start = 0, bi = 0; start < n; start += config.batch, ++bi) {
            const int count = std::min(config.batch, n - start);
            if (count < 2) {
                std::cerr << "stage 1: skipping single-sample batch " << bi << " in epoch "
                          << epoch << "\n";
                ++res.skipped_batches;
                continue;
            }
            std::vector<WindowedSample> originals;
            originals.reserve(static_cast<std::size_t>(count));
            for (int i = 0; i < count; ++i)
                originals.push_back(train[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])]);
            Rng brng = augment_rng.split(static_cast<std::uint64_t>(epoch)).split(static_cast<std::uint64_t>(bi));
            auto paired = augment_pairs(originals, config.noise_scale, brng);

            std::vector<const Tensor*> windows;
            std::vector<int> labels;
            windows.reserve(paired.size());
            labels.reserve(paired.size());
            for (const auto& s : paired) {
                windows.push_back(&s.data);
                labels.push_back(s.label);
            }
            Tensor batch = stack_batch(windows);

            Tape tape;
            Var in = tape.input(batch);
            auto tp = register_encoder_params(tape, res.encoder, true);
            auto fwd = encoder_forward_tape(tape, in, res.encoder, tp, Mode::train);
            Var loss = supervised_contrastive_loss(fwd.embeddings, labels, config.temperature);
            const double lv = loss.values()[0];
            detail::check_loss_finite(lv, "stage 1", epoch, bi);
            opt.zero_grad();
            tape.backward(loss);
            opt.step(config.lr_stage1);
            epoch_loss += lv;
            ++batches;
        }
        res.loss.push_back(batches > 0 ? epoch_loss / batches : 0.0);
    }
    return res;
}

struct Stage2Result {
    ClassifierParams classifier;
    std::vector<double> loss;
};

/// Stage 2: cross-entropy training of the linear classifier on the original
/// (non-augmented) windows. The encoder is frozen in infer mode by default;
/// with freeze_encoder=false it is fine-tuned jointly in train mode.
inline Stage2Result train_stage2(EncoderParams& encoder, const std::vector<WindowedSample>& train,
                                 int classes, const TrainConfig& config) {
    config.validate();
    if (train.empty()) throw DataError("stage 2: empty training set");
    auto hist = detail::class_histogram(train, classes);
    for (int c = 0; c < classes; ++c)
        if (hist[static_cast<std::size_t>(c)] < 1) {
            std::ostringstream os;
            os << "stage 2: class " << c
               << " is absent from the training set; the classifier would never learn it";
            throw DataError(os.str());
        }

    Stage2Result res;
    res.classifier = make_classifier_params(classes, encoder.config.embedding,
                                            Rng(config.seed).split("init.classifier").next_u64());
    Optimizer opt(config.optimizer, config.momentum);
    opt.attach(res.classifier.parameters());
    if (!config.freeze_encoder) opt.attach(encoder.parameters());

    const int n = static_cast<int>(train.size());

    // Frozen encoder + infer mode is deterministic per sample, so embeddings
    // can be computed once up front (in chunks to bound peak memory).
    Tensor cached_embeddings;
    if (config.freeze_encoder) {
        const int dz_dim = encoder.config.embedding;
        std::vector<double> all(static_cast<std::size_t>(n) * dz_dim);
        const int chunk = 64;
        for (int start = 0; start < n; start += chunk) {
            const int count = std::min(chunk, n - start);
            std::vector<const Tensor*> windows;
            windows.reserve(static_cast<std::size_t>(count));
            for (int i = 0; i < count; ++i)
                windows.push_back(&train[static_cast<std::size_t>(start + i)].data);
            auto emb = encoder_forward(stack_batch(windows), encoder, Mode::infer).embeddings;
            std::copy_n(emb.values.data(), emb.values.size(),
                        all.data() + static_cast<std::size_t>(start) * dz_dim);
        }
        cached_embeddings = Tensor({n, dz_dim}, std::move(all));
    }

    Rng shuffle_rng = Rng(config.seed).split("stage2.shuffle");
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    const int dz = encoder.config.embedding;
    for (int epoch = 0; epoch < config.epochs_stage2; ++epoch) {
        Rng erng = shuffle_rng.split(static_cast<std::uint64_t>(epoch));
        shuffle_indices(order, erng);
        double epoch_loss = 0.0;
        int batches = 0;
        for (int start = 0, bi = 0; start < n; start += config.batch, ++bi) {
            const int count = std::min(config.batch, n - start);
            std::vector<int> targets;
            targets.reserve(static_cast<std::size_t>(count));
            for (int i = 0; i < count; ++i)
                targets.push_back(train[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])].label);

            Tape tape;
            Var z{};
            if (config.freeze_encoder) {
                std::vector<double> rows(static_cast<std::size_t>(count) * dz);
                for (int i = 0; i < count; ++i) {
                    const int src = order[static_cast<std::size_t>(start + i)];
                    std::copy_n(cached_embeddings.values.data() + static_cast<std::size_t>(src) * dz,
                                dz, rows.data() + static_cast<std::size_t>(i) * dz);
                }
                z = tape.input(Shape{count, dz}, std::move(rows));
            } else {
                std::vector<const Tensor*> windows;
                windows.reserve(static_cast<std::size_t>(count));
                for (int i = 0; i < count; ++i)
                    windows.push_back(&train[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])].data);
                Var in = tape.input(stack_batch(windows));
                auto tp = register_encoder_params(tape, encoder, true);
                z = encoder_forward_tape(tape, in, encoder, tp, Mode::train).embeddings;
            }
            Var wv = tape.param(res.classifier.weight);
            Var logits = dense(z, wv);
            Var loss = cross_entropy_with_logits(logits, targets);
            const double lv = loss.values()[0];
            detail::check_loss_finite(lv, "stage 2", epoch, bi);
            opt.zero_grad();
            tape.backward(loss);
            opt.step(config.lr_stage2);
            epoch_loss += lv;
            ++batches;
        }
        res.loss.push_back(batches > 0 ? epoch_loss / batches : 0.0);
    }
    return res;
}

/// Infer-mode evaluation over a test set: per-window prediction, confusion
/// matrix (rows = true class), overall and per-class accuracy.
inline TrainReport evaluate(Model& model, const std::vector<WindowedSample>& test) {
    if (test.empty()) throw DataError("evaluate: empty test set");
    const int classes = model.classifier.class_count();
    TrainReport rep;
    rep.confusion.assign(static_cast<std::size_t>(classes),
                         std::vector<int>(static_cast<std::size_t>(classes), 0));

    const int chunk = 64;
    const int n = static_cast<int>(test.size());
    for (int start = 0; start < n; start += chunk) {
        const int count = std::min(chunk, n - start);
        std::vector<const Tensor*> windows;
        windows.reserve(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i)
            windows.push_back(&test[static_cast<std::size_t>(start + i)].data);
        auto out = model_forward(model, stack_batch(windows), Mode::infer);
        for (int i = 0; i < count; ++i) {
            const int truth = test[static_cast<std::size_t>(start + i)].label;
            if (truth < 0 || truth >= classes) {
                std::ostringstream os;
                os << "evaluate: test label " << truth << " outside [0," << classes << ")";
                throw DataError(os.str());
            }
            const int pred = out.classification.labels[static_cast<std::size_t>(i)];
            ++rep.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
        }
    }

    int correct = 0;
    rep.per_class_accuracy.assign(static_cast<std::size_t>(classes), 0.0);
    for (int c = 0; c < classes; ++c) {
        int row_total = 0;
        for (int j = 0; j < classes; ++j) row_total += rep.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
        const int diag = rep.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
        correct += diag;
        rep.per_class_accuracy[static_cast<std::size_t>(c)] =
            row_total > 0 ? static_cast<double>(diag) / row_total : 0.0;
    }
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return rep;
}

} // namespace sccam
