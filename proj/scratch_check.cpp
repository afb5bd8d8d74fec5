#include <cstdio>
#include <functional>

#include "sccam/cbam.hpp"
#include "sccam/losses.hpp"
#include "sccam/tensor.hpp"

using namespace sccam;

// central finite differences vs analytic grads on a tiny cbam+loss graph
int main() {
    Rng rng(42);
    const int C = 4, H = 3, W = 5;
    CbamParams params = make_cbam_params(C, 2, 3, rng.split("p"));
    Tensor input({C, H, W}, [&] {
        std::vector<double> v(C * H * W);
        for (auto& x : v) x = rng.uniform(-2.0, 2.0);
        return v;
    }());

    auto loss_fn = [&](bool with_params) -> double {
        Tape tape;
        Var f = tape.input(input);
        auto tp = register_cbam_params(tape, params, with_params);
        auto out = cbam_forward(f, tp);
        Var l = sum(out.refined);
        if (with_params) tape.backward(l);
        return l.values()[0];
    };

    double base = loss_fn(true); // populates grads
    std::printf("loss=%.12f\n", base);

    const double h = 1e-5;
    int bad = 0, total = 0;
    auto check_tensor = [&](Tensor& t, const char* name) {
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            const double keep = t.values[i];
            t.values[i] = keep + h;
            const double fp = loss_fn(false);
            t.values[i] = keep - h;
            const double fm = loss_fn(false);
            t.values[i] = keep;
            const double num = (fp - fm) / (2 * h);
            const double ana = t.grad[i];
            const double err = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8});
            ++total;
            if (err > 1e-4) {
                ++bad;
                std::printf("MISMATCH %s[%zu]: num=%.10f ana=%.10f err=%.2e\n", name, i, num, ana, err);
            }
        }
    };
    check_tensor(params.channel.w0, "w0");
    check_tensor(params.channel.w1, "w1");
    check_tensor(params.spatial.kernel, "sk");
    check_tensor(params.spatial.bias, "sb");
    std::printf("gradcheck: %d/%d bad\n", bad, total);

    // contrastive loss gradcheck
    {
        Tensor z({6, 4}, [&] {
            std::vector<double> v(24);
            Rng r2(7);
            for (auto& x : v) x = r2.uniform(-1.0, 1.0);
            return v;
        }(), true);
        std::vector<int> labels = {0, 0, 1, 1, 0, 0};
        auto f = [&](bool bw) {
            Tape tape;
            Var zv = bw ? tape.param(z) : tape.view(z);
            Var l = supervised_contrastive_loss(zv, labels, 0.3);
            if (bw) tape.backward(l);
            return l.values()[0];
        };
        f(true);
        int zb = 0;
        for (std::size_t i = 0; i < z.values.size(); ++i) {
            const double keep = z.values[i];
            z.values[i] = keep + h;
            const double fp = f(false);
            z.values[i] = keep - h;
            const double fm = f(false);
            z.values[i] = keep;
            const double num = (fp - fm) / (2 * h);
            const double err = std::abs(num - z.grad[i]) / std::max({std::abs(num), std::abs(z.grad[i]), 1e-8});
            if (err > 1e-5) {
                ++zb;
                std::printf("SCL MISMATCH [%zu] num=%.10f ana=%.10f\n", i, num, z.grad[i]);
            }
        }
        std::printf("scl gradcheck: %d/24 bad\n", zb);
    }
    return bad == 0 ? 0 : 1;
}
