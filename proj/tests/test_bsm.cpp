#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "matchattn/bilinear_softmax.hpp"
#include "matchattn/ops.hpp"
#include "matchattn/rng.hpp"
#include "test_util.hpp"

using namespace matchattn;

namespace {

struct Instance {
    int w = 3;
    std::vector<double> sim;
    double fx = 0, fy = 0;
    bool alive[4] = {true, true, true, true};
};

Instance random_instance(Rng& rng, int w, bool with_masks) {
    Instance in;
    in.w = w;
    const int e2 = (w + 1) * (w + 1);
    in.sim.resize(static_cast<size_t>(e2));
    for (auto& v : in.sim) v = rng.uniform(-3, 3);
    in.fx = rng.uniform();
    in.fy = rng.uniform();
    if (with_masks) {
        for (auto& v : in.sim)
            if (rng.uniform() < 0.15) v = kMaskedSim<double>;
        for (auto& a : in.alive) a = rng.uniform() < 0.85;
        // keep at least one live sub-window with one live entry
        in.alive[0] = true;
        in.sim[0] = 0.0;
    }
    return in;
}

std::vector<double> run_fwd(const Instance& in) {
    std::vector<double> out(in.sim.size());
    bilinear_softmax_fwd(in.w, in.sim.data(), in.fx, in.fy, in.alive, out.data());
    return out;
}

}  // namespace

TEST_CASE("corner weights partition unity and have the right derivatives") {
    Rng rng(4);
    for (int it = 0; it < 50; ++it) {
        const double fx = rng.uniform(), fy = rng.uniform();
        const auto b = bilinear_corner_weights(fx, fy);
        CHECK(b[0] + b[1] + b[2] + b[3] == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(b[0] == doctest::Approx((1 - fx) * (1 - fy)).epsilon(1e-15));
        CHECK(b[3] == doctest::Approx(fx * fy).epsilon(1e-15));
        const auto dx = bilinear_corner_dfx(fx, fy);
        const auto dy = bilinear_corner_dfy(fx, fy);
        const double h = 1e-6;
        const auto bp = bilinear_corner_weights(fx + h, fy);
        const auto bq = bilinear_corner_weights(fx, fy + h);
        for (int t = 0; t < 4; ++t) {
            CHECK(dx[t] == doctest::Approx((bp[t] - b[t]) / h).epsilon(1e-5));
            CHECK(dy[t] == doctest::Approx((bq[t] - b[t]) / h).epsilon(1e-5));
        }
    }
}

TEST_CASE("fused kernel matches the unfused reference") {
    Rng rng(100);
    for (int w : {1, 3, 5}) {
        for (int it = 0; it < 200; ++it) {
            const Instance in = random_instance(rng, w, it % 2 == 1);
            const auto fused = run_fwd(in);
            std::vector<double> ref(fused.size());
            bilinear_softmax_ref(in.w, in.sim.data(), in.fx, in.fy, in.alive, ref.data());
            for (size_t i = 0; i < fused.size(); ++i)
                CHECK(std::abs(fused[i] - ref[i]) < 1e-12);
        }
    }
}

TEST_CASE("weights always sum to one, masks or not") {
    Rng rng(7);
    for (int w : {1, 3, 5}) {
        for (int it = 0; it < 200; ++it) {
            const Instance in = random_instance(rng, w, true);
            const auto out = run_fwd(in);
            double s = 0;
            for (double v : out) {
                CHECK(v >= 0.0);
                s += v;
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("zero frac reduces to a plain window softmax") {
    Rng rng(12);
    const int w = 3, e = w + 1;
    for (int it = 0; it < 100; ++it) {
        Instance in = random_instance(rng, w, false);
        in.fx = 0.0;
        in.fy = 0.0;
        const auto out = run_fwd(in);
        // plain softmax over the top-left w x w block
        double m = -1e300, z = 0;
        for (int r = 0; r < w; ++r)
            for (int c = 0; c < w; ++c) m = std::max(m, in.sim[static_cast<size_t>(r * e + c)]);
        for (int r = 0; r < w; ++r)
            for (int c = 0; c < w; ++c) z += std::exp(in.sim[static_cast<size_t>(r * e + c)] - m);
        for (int r = 0; r < e; ++r)
            for (int c = 0; c < e; ++c) {
                const double got = out[static_cast<size_t>(r * e + c)];
                if (r == w || c == w) {
                    CHECK(got == 0.0);  // expanded rim carries no weight
                } else {
                    const double want = std::exp(in.sim[static_cast<size_t>(r * e + c)] - m) / z;
                    CHECK(std::abs(got - want) <= 4 * 1e-16 * std::abs(want) + 1e-300);
                }
            }
    }
}

TEST_CASE("masked entries receive exactly zero weight") {
    Rng rng(19);
    for (int it = 0; it < 100; ++it) {
        Instance in = random_instance(rng, 3, true);
        const auto out = run_fwd(in);
        for (size_t i = 0; i < in.sim.size(); ++i)
            if (in.sim[i] == kMaskedSim<double>) CHECK(out[i] == 0.0);
    }
}

TEST_CASE("dead sub-window weight is redistributed") {
    // w = 1: the expanded window is 2x2 and each sub-window is one entry.
    const int w = 1;
    SUBCASE("proportionally to surviving corner weights") {
        std::vector<double> sim = {kMaskedSim<double>, 0.3, -0.7, 1.1};
        std::vector<double> out(4);
        bilinear_softmax_fwd(w, sim.data(), 0.5, 0.0, nullptr, out.data());
        // corner weights (0.5, 0.5, 0, 0); the dead nw weight flows to ne
        CHECK(out[0] == 0.0);
        CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(out[2] == 0.0);
        CHECK(out[3] == 0.0);
    }
    SUBCASE("uniformly when surviving weights vanish") {
        std::vector<double> sim = {kMaskedSim<double>, 0.3, -0.7, 1.1};
        std::vector<double> out(4);
        bilinear_softmax_fwd(w, sim.data(), 0.0, 0.0, nullptr, out.data());
        // only the dead corner had weight; survivors share it equally
        CHECK(out[0] == 0.0);
        CHECK(out[1] == doctest::Approx(1.0 / 3).epsilon(1e-14));
        CHECK(out[2] == doctest::Approx(1.0 / 3).epsilon(1e-14));
        CHECK(out[3] == doctest::Approx(1.0 / 3).epsilon(1e-14));
    }
    SUBCASE("alive flags behave like fully masked sub-windows") {
        std::vector<double> sim = {0.9, 0.3, -0.7, 1.1};
        bool alive[4] = {false, true, true, true};
        std::vector<double> via_flag(4), via_mask(4);
        bilinear_softmax_fwd(w, sim.data(), 0.25, 0.75, alive, via_flag.data());
        std::vector<double> sim2 = sim;
        sim2[0] = kMaskedSim<double>;
        bilinear_softmax_fwd(w, sim2.data(), 0.25, 0.75, nullptr, via_mask.data());
        for (int i = 0; i < 4; ++i) CHECK(via_flag[i] == via_mask[i]);
    }
    SUBCASE("an instance with every sub-window dead is rejected") {
        std::vector<double> sim(4, kMaskedSim<double>);
        std::vector<double> out(4);
        CHECK_THROWS_AS(bilinear_softmax_fwd(w, sim.data(), 0.2, 0.2, nullptr, out.data()),
                        std::runtime_error);
    }
}

TEST_CASE("analytic gradients match finite differences") {
    Rng rng(55);
    double worst = 0;
    for (int w : {1, 3}) {
        const int e2 = (w + 1) * (w + 1);
        for (int it = 0; it < 30; ++it) {
            Instance in = random_instance(rng, w, it % 3 == 2);
            in.fx = rng.uniform(0.1, 0.9);  // keep clear of the redistribution kinks
            in.fy = rng.uniform(0.1, 0.9);
            std::vector<double> dout(static_cast<size_t>(e2));
            for (auto& v : dout) v = rng.uniform(-1, 1);

            std::vector<double> dsim(static_cast<size_t>(e2), 0.0);
            double dfx = 0, dfy = 0;
            const auto out = run_fwd(in);
            bilinear_softmax_bwd(w, in.sim.data(), in.fx, in.fy, in.alive, dout.data(),
                                 dsim.data(), &dfx, &dfy);

            auto loss = [&](const Instance& probe) {
                const auto o = run_fwd(probe);
                double acc = 0;
                for (size_t i = 0; i < o.size(); ++i) acc += dout[i] * o[i];
                return acc;
            };
            const double h = 1e-5;
            for (int i = 0; i < e2; ++i) {
                if (in.sim[static_cast<size_t>(i)] == kMaskedSim<double>) {
                    CHECK(dsim[static_cast<size_t>(i)] == 0.0);
                    continue;
                }
                Instance p = in, q = in;
                p.sim[static_cast<size_t>(i)] += h;
                q.sim[static_cast<size_t>(i)] -= h;
                const double fd = (loss(p) - loss(q)) / (2 * h);
                worst = std::max(worst, rel_err(dsim[static_cast<size_t>(i)], fd, 1e-6));
            }
            Instance px = in, qx = in, py = in, qy = in;
            px.fx += h;
            qx.fx -= h;
            py.fy += h;
            qy.fy -= h;
            worst = std::max(worst, rel_err(dfx, (loss(px) - loss(qx)) / (2 * h), 1e-6));
            worst = std::max(worst, rel_err(dfy, (loss(py) - loss(qy)) / (2 * h), 1e-6));
        }
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("the kernel is bitwise deterministic") {
    Rng rng(77);
    const Instance in = random_instance(rng, 5, true);
    const auto a = run_fwd(in);
    const auto b = run_fwd(in);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
