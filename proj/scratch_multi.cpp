#include <chrono>
#include <cstdio>

#include "sccam/sccam.hpp"

using namespace sccam;
using Clock = std::chrono::steady_clock;

static double macro_accuracy(const TrainReport& r) {
    double s = 0.0;
    for (double a : r.per_class_accuracy) s += a;
    return s / static_cast<double>(r.per_class_accuracy.size());
}

int main(int argc, char** argv) {
    const std::string seed = argc > 1 ? argv[1] : "11";
    const std::string e1 = argc > 2 ? argv[2] : "20";
    const std::string e2 = argc > 3 ? argv[3] : "15";
    // 11-class analog: H=22 variables, 10 single-variable faults, 10:1 imbalance
    std::vector<std::pair<std::string, std::string>> base = {
        {"seed", seed},
        {"paths.data_dir", "/tmp/multi_data"},
        {"paths.out_dir", "/tmp/multi_out"},
        {"data.variables", "22"},
        {"data.classes", "11"},
        {"data.window", "10"},
        {"data.stride", "10"},
        {"scenario.kind", "imbalanced"},
        {"scenario.train_counts", argc > 4 ? argv[4] : "300,30,30,30,30,30,30,30,30,30,30"},
        {"scenario.test_counts", "30,30,30,30,30,30,30,30,30,30,30"},
        {"fault.1.magnitude", argc > 5 ? argv[5] : "3"}, {"fault.1.variable", "17"}, {"fault.1.kind", "random-variation"},
        {"fault.2.magnitude", argc > 5 ? argv[5] : "3"}, {"fault.2.variable", "8"},  {"fault.2.kind", "random-variation"},
        {"fault.3.magnitude", argc > 5 ? argv[5] : "3"}, {"fault.3.variable", "0"},  {"fault.3.kind", "step"},
        {"fault.4.magnitude", argc > 5 ? argv[5] : "3"}, {"fault.4.variable", "2"},  {"fault.4.kind", "step"},
        {"fault.5.magnitude", argc > 5 ? argv[5] : "3"}, {"fault.5.variable", "4"},  {"fault.5.kind", "random-variation"},
        {"fault.6.magnitude", argc > 5 ? argv[5] : "3"}, {"fault.6.variable", "6"},  {"fault.6.kind", "step"},
        {"fault.7.magnitude", argc > 5 ? argv[5] : "3"}, {"fault.7.variable", "10"}, {"fault.7.kind", "random-variation"},
        {"fault.8.magnitude", argc > 5 ? argv[5] : "3"}, {"fault.8.variable", "12"}, {"fault.8.kind", "step"},
        {"fault.9.magnitude", argc > 5 ? argv[5] : "3"}, {"fault.9.variable", "14"}, {"fault.9.kind", "random-variation"},
        {"fault.10.magnitude", argc > 5 ? argv[5] : "3"}, {"fault.10.variable", "19"}, {"fault.10.kind", "step"},
        {"train.epochs_stage1", e1},
        {"train.epochs_stage2", e2},
        {"train.temperature", argc > 6 ? argv[6] : "0.5"},
        {"data.noise_scale", argc > 7 ? argv[7] : "1.0"},
    };

    RunConfig cfg = default_run_config(base);
    auto t0 = Clock::now();
    generate_dataset_files(cfg);
    Dataset ds = build_dataset(cfg);
    auto t1 = Clock::now();
    std::printf("data: %.1fs train=%zu test=%zu\n",
                std::chrono::duration<double>(t1 - t0).count(), ds.train.size(), ds.test.size());

    // full SCCAM
    auto [model, rep] = train_model(ds, cfg);
    auto t2 = Clock::now();
    std::printf("SCCAM: %.1fs macro=%.4f acc=%.4f\n",
                std::chrono::duration<double>(t2 - t1).count(), macro_accuracy(rep), rep.accuracy);

    // random frozen encoder baseline: skip stage 1, stage 2 on random encoder
    {
        TrainConfig tc = cfg.effective_train();
        EncoderParams enc = make_encoder_params(22, 10, cfg.model, Rng(tc.seed).split("init.encoder").next_u64());
        // BN moments must exist for infer mode: one train-mode pass over a chunk
        {
            std::vector<const Tensor*> w;
            for (std::size_t i = 0; i < 64 && i < ds.train.size(); ++i) w.push_back(&ds.train[i].data);
            encoder_forward(stack_batch(w), enc, Mode::train);
        }
        auto s2 = train_stage2(enc, ds.train, ds.class_count, tc);
        Model base_model;
        base_model.encoder = std::move(enc);
        base_model.classifier = std::move(s2.classifier);
        auto brep = evaluate(base_model, ds.test);
        auto t3 = Clock::now();
        std::printf("random-encoder baseline: %.1fs macro=%.4f acc=%.4f\n",
                    std::chrono::duration<double>(t3 - t2).count(), macro_accuracy(brep), brep.accuracy);
    }

    // CE-only ablation: no stage 1, joint CE training of encoder+classifier
    {
        auto t3 = Clock::now();
        TrainConfig tc = cfg.effective_train();
        tc.freeze_encoder = false;
        tc.epochs_stage2 = tc.epochs_stage1 + tc.epochs_stage2; // same total budget
        EncoderParams enc = make_encoder_params(22, 10, cfg.model, Rng(tc.seed).split("init.encoder").next_u64());
        auto s2 = train_stage2(enc, ds.train, ds.class_count, tc);
        Model ce_model;
        ce_model.encoder = std::move(enc);
        ce_model.classifier = std::move(s2.classifier);
        auto crep = evaluate(ce_model, ds.test);
        auto t4 = Clock::now();
        std::printf("CE-only ablation: %.1fs macro=%.4f acc=%.4f\n",
                    std::chrono::duration<double>(t4 - t3).count(), macro_accuracy(crep), crep.accuracy);
    }

    // root causes for the two paper-mapped faults
    auto g1 = global_explanation(model, ds.test, 1);
    auto g2 = global_explanation(model, ds.test, 2);
    std::printf("fault_1 root cause: %s (want X18), fault_2: %s (want X9)\n",
                g1.root_cause_name().c_str(), g2.root_cause_name().c_str());
    std::printf("total: %.1fs\n", std::chrono::duration<double>(Clock::now() - t0).count());
    return 0;
}
