#include <chrono>
#include <cstdio>

#include "sccam/sccam.hpp"
#include "sccam/explain.hpp"

using namespace sccam;
using Clock = std::chrono::steady_clock;

int main(int argc, char** argv) {
    // CSTH-analog long-tail: 780/20 train, 200/200 test, step fault delta=3 on var 2
    RunConfig cfg = default_run_config({
        {"seed", argc > 1 ? argv[1] : "1"},
        {"paths.data_dir", "/tmp/e2e_data"},
        {"paths.out_dir", "/tmp/e2e_out"},
        {"data.variables", "5"},
        {"data.classes", "2"},
        {"scenario.kind", "long-tail"},
        {"scenario.train_counts", "780,20"},
        {"scenario.test_counts", "200,200"},
        {"fault.1.variable", "2"},
        {"fault.1.kind", "step"},
        {"fault.1.magnitude", "3"},
        {"train.epochs_stage1", argc > 2 ? argv[2] : "15"},
        {"train.epochs_stage2", argc > 3 ? argv[3] : "30"},
        {"train.lr_stage1", argc > 4 ? argv[4] : "0.05"},
        {"train.temperature", argc > 5 ? argv[5] : "0.1"},
        {"train.batch", argc > 6 ? argv[6] : "32"},
    });

    auto t0 = Clock::now();
    generate_dataset_files(cfg);
    auto t1 = Clock::now();
    std::printf("generate: %.2fs\n", std::chrono::duration<double>(t1 - t0).count());

    auto out = train_run(cfg);
    auto t2 = Clock::now();
    std::printf("train_run: %.2fs  accuracy=%.4f  per-class=[%.4f, %.4f]\n",
                std::chrono::duration<double>(t2 - t1).count(), out.report.accuracy,
                out.report.per_class_accuracy[0], out.report.per_class_accuracy[1]);
    std::printf("stage1 loss: first=%.4f last=%.4f\n", out.report.stage1_loss.front(),
                out.report.stage1_loss.back());
    std::printf("stage2 loss: first=%.4f last=%.4f\n", out.report.stage2_loss.front(),
                out.report.stage2_loss.back());

    auto g = global_explanation(out.model, out.dataset.test, 1);
    std::printf("global root cause: %s (index %d), contributions:", g.root_cause_name().c_str(),
                g.root_cause);
    for (double c : g.contributions) std::printf(" %.4f", c);
    std::printf("\n");

    // local explanations on correctly classified fault windows
    int correct = 0, agree = 0;
    for (const auto& s : out.dataset.test) {
        if (s.label != 1) continue;
        auto le = local_explanation(out.model, s);
        if (le.class_id == 1) {
            ++correct;
            if (le.root_cause == 2) ++agree;
        }
    }
    std::printf("local: %d/%d correctly-classified fault windows name var 2\n", agree, correct);
    auto t3 = Clock::now();
    std::printf("explain: %.2fs, total %.2fs\n", std::chrono::duration<double>(t3 - t2).count(),
                std::chrono::duration<double>(t3 - t0).count());
    return 0;
}
