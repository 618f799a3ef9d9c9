// Command-line front end: self tests, gradient checks, benchmarks, flop
// accounting, synthetic scene generation, toy training, inference, and
// evaluation. Exit codes: 0 ok, 1 failed check or runtime error, 2 usage.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "matchattn/attention.hpp"
#include "matchattn/bench.hpp"
#include "matchattn/bilinear_softmax.hpp"
#include "matchattn/decoder.hpp"
#include "matchattn/flops.hpp"
#include "matchattn/graph.hpp"
#include "matchattn/imageio.hpp"
#include "matchattn/metrics.hpp"
#include "matchattn/ops.hpp"
#include "matchattn/rng.hpp"
#include "matchattn/scene.hpp"
#include "matchattn/train.hpp"

namespace fs = std::filesystem;
using namespace matchattn;

namespace {

uint64_t env_seed(uint64_t fallback) {
    const char* s = std::getenv("MATCHATTN_SEED");
    if (!s || !*s) return fallback;
    return static_cast<uint64_t>(std::strtoull(s, nullptr, 10));
}

Task parse_task(const std::string& s) {
    if (s == "stereo") return Task::Stereo;
    if (s == "flow") return Task::Flow;
    throw std::runtime_error("unknown task '" + s + "' (stereo|flow)");
}

// Disparity map [H,W,1] -> relative-position style field [H,W,2] with the
// disparity on x, so stereo metrics reduce to |pred - gt| per pixel.
Tensor<float> disp_as_field(const Tensor<float>& disp) {
    MA_CHECK(disp.rank() >= 2, "disparity map must be 2-d");
    const int64_t H = disp.dim(0), W = disp.dim(1);
    Tensor<float> f({H, W, 2}, 0.f);
    for (int64_t p = 0; p < H * W; ++p) f[p * 2] = disp[p];
    return f;
}

Tensor<float> mean_head_x(const Tensor<float>& sr) {
    const int64_t H = sr.dim(0), W = sr.dim(1), c = sr.dim(2);
    const int64_t h = c / 2;
    Tensor<float> out({H, W}, 0.f);
    for (int64_t p = 0; p < H * W; ++p) {
        double acc = 0;
        for (int64_t k = 0; k < h; ++k) acc += sr[p * c + 2 * k];
        out[p] = static_cast<float>(acc / static_cast<double>(h));
    }
    return out;
}

void print_report(const char* region, const Metrics& m) {
    std::printf("%-4s epe %.4f  d1 %.4f  bad0.5 %.4f  bad1 %.4f  bad2 %.4f  bad3 %.4f  (n=%" PRId64
                ")\n",
                region, m.epe, m.d1, m.bad05, m.bad1, m.bad2, m.bad3, m.count);
}

void report_csv(std::ofstream& os, const char* region, const Metrics& m) {
    os << region << ',' << m.epe << ',' << m.d1 << ',' << m.bad05 << ',' << m.bad1 << ','
       << m.bad2 << ',' << m.bad3 << ',' << m.count << '\n';
}

// ---------------------------------------------------------------------------
// selftest

struct CheckRunner {
    int failures = 0;
    void run(const std::string& name, const std::function<void()>& body) {
        try {
            body();
            std::printf("ok: %s\n", name.c_str());
        } catch (const std::exception& e) {
            ++failures;
            std::printf("FAIL: %s: %s\n", name.c_str(), e.what());
        }
    }
};

void check_bsm_reference(Rng& rng) {
    for (int w : {1, 3, 5}) {
        const int e2 = (w + 1) * (w + 1);
        std::vector<double> sim(static_cast<size_t>(e2)), a(static_cast<size_t>(e2)),
            b(static_cast<size_t>(e2));
        for (int it = 0; it < 50; ++it) {
            for (auto& v : sim) v = rng.uniform(-6.0, 6.0);
            if (it % 3 == 1)  // mask a few entries
                for (int j = 0; j < e2 / 4; ++j)
                    sim[static_cast<size_t>(rng.uniform_int(e2))] = kMaskedSim<double>;
            bool alive[4];
            for (bool& t : alive) t = rng.uniform() < 0.85;
            if (!alive[0] && !alive[1] && !alive[2] && !alive[3]) alive[it % 4] = true;
            const double fx = rng.uniform(), fy = rng.uniform();
            bilinear_softmax_fwd(w, sim.data(), fx, fy, alive, a.data());
            bilinear_softmax_ref(w, sim.data(), fx, fy, alive, b.data());
            for (int j = 0; j < e2; ++j)
                MA_CHECK(std::abs(a[static_cast<size_t>(j)] - b[static_cast<size_t>(j)]) < 1e-12,
                         "fused/reference mismatch");
        }
    }
}

void check_bsm_plain_softmax(Rng& rng) {
    const int w = 3, e = w + 1, e2 = e * e;
    std::vector<double> sim(static_cast<size_t>(e2)), out(static_cast<size_t>(e2));
    for (auto& v : sim) v = rng.uniform(-4.0, 4.0);
    bilinear_softmax_fwd(w, sim.data(), 0.0, 0.0, nullptr, out.data());
    // nw sub-window softmax, everything else exactly zero
    double mx = -1e300;
    for (int r = 0; r < w; ++r)
        for (int c = 0; c < w; ++c) mx = std::max(mx, sim[static_cast<size_t>(r * e + c)]);
    double z = 0;
    for (int r = 0; r < w; ++r)
        for (int c = 0; c < w; ++c) z += std::exp(sim[static_cast<size_t>(r * e + c)] - mx);
    for (int r = 0; r < e; ++r)
        for (int c = 0; c < e; ++c) {
            const double got = out[static_cast<size_t>(r * e + c)];
            if (r < w && c < w) {
                const double want = std::exp(sim[static_cast<size_t>(r * e + c)] - mx) / z;
                MA_CHECK(std::abs(got - want) < 5e-16, "plain-softmax reduction mismatch");
            } else {
                MA_CHECK(got == 0.0, "expanded rim must be zero at integer centers");
            }
        }
}

void check_normalization() {
    DecoderConfig cfg = preset_config("desk", Task::Stereo);
    MatchDecoder<double> dec(cfg, 7);
    Scene<double> sc = gen_scene<double>(Task::Stereo, SceneKind::ConstantShift, 32, 64, 7, 3.0);
    Graph<double> g;
    ForwardResult fr = dec.forward(g, sc.img0, sc.img1);
    int checked = 0;
    for (const auto& rec : fr.records) {
        for (int var : {rec.attn0, rec.attn1}) {
            if (var < 0) continue;
            const Tensor<double>& a = g.val(var);
            const int64_t n = a.dim(0) * a.dim(1);
            const int64_t c = a.dim(2);
            const int64_t e2 = c / cfg.heads;
            for (int64_t p = 0; p < n; ++p)
                for (int hh = 0; hh < cfg.heads; ++hh) {
                    double s = 0;
                    for (int64_t j = 0; j < e2; ++j) s += a[(p * cfg.heads + hh) * e2 + j];
                    MA_CHECK(std::abs(s - 1.0) <= 1e-6, "attention row does not sum to 1");
                }
            ++checked;
        }
    }
    MA_CHECK(checked > 0, "no attention records seen");
}

void check_flops_hand_values() {
    FlopsBreakdown a = attention_flops(8, 8, 4, 32, 32, 3);
    MA_CHECK(a.qk == 262144, "qk formula");
    FlopsBreakdown b = attention_flops(1, 1, 1, 1, 1, 3);
    MA_CHECK(b.qk == 32 && b.agg == 32 && b.bsm == 160, "unit-size formulas");
    FlopsBreakdown c = attention_flops(64, 64, 4, 8, 8, 3);
    MA_CHECK(c.attn_mem == 262144, "attention memory count");
}

void check_io_round_trips(Rng& rng) {
    const fs::path dir = fs::temp_directory_path() / "matchattn_selftest";
    fs::create_directories(dir);
    Tensor<float> a({7, 5, 1});
    fill_normal(a, rng, 0.0, 10.0);
    write_pfm((dir / "a.pfm").string(), a);
    Tensor<float> a2 = read_pfm((dir / "a.pfm").string());
    MA_CHECK(a.same_shape(a2), "pfm shape");
    for (int64_t i = 0; i < a.numel(); ++i) MA_CHECK(a[i] == a2[i], "pfm payload");
    Tensor<float> f({6, 9, 2});
    fill_normal(f, rng, 0.0, 3.0);
    write_flo((dir / "f.flo").string(), f);
    Tensor<float> f2 = read_flo((dir / "f.flo").string());
    MA_CHECK(f.same_shape(f2), "flo shape");
    for (int64_t i = 0; i < f.numel(); ++i) MA_CHECK(f[i] == f2[i], "flo payload");
}

void check_metric_definitions() {
    Tensor<float> gt({4, 4, 2}, 0.f), pred({4, 4, 2}, 0.f);
    for (int64_t p = 0; p < 16; ++p) gt[p * 2] = 10.f, pred[p * 2] = 10.f;
    Metrics eq = compute_metrics(pred, gt, nullptr, Task::Stereo);
    MA_CHECK(eq.epe == 0 && eq.d1 == 0 && eq.bad05 == 0, "pred==gt must be zero error");
    for (int64_t p = 0; p < 16; ++p) pred[p * 2] = 14.f;  // off by 4 on gt 10
    Metrics off = compute_metrics(pred, gt, nullptr, Task::Stereo);
    MA_CHECK(off.d1 == 1.0 && off.bad3 == 1.0 && off.epe == 4.0, "4px error on 10px gt");
    for (int64_t p = 0; p < 16; ++p) {
        gt[p * 2] = 100.f;
        pred[p * 2] = p < 8 ? 102.f : 100.f;  // half off by 2
    }
    Metrics half = compute_metrics(pred, gt, nullptr, Task::Stereo);
    MA_CHECK(half.bad1 == 0.5 && half.bad3 == 0.0 && half.d1 == 0.0, "half off by 2 on 100");
}

void check_scene_consistency() {
    struct Case {
        Task task;
        SceneKind kind;
        double mag, tol;
    };
    // Piecewise-constant scenes invert exactly. The smooth warp is curved, so
    // bilinear sampling of the target-view gt between grid points carries an
    // O(h^2 * curvature) error; 5e-2 px bounds it comfortably at this size.
    for (const Case& c : {Case{Task::Stereo, SceneKind::ConstantShift, 4.0, 0.0},
                          Case{Task::Stereo, SceneKind::TwoLayer, 10.0, 0.0},
                          Case{Task::Flow, SceneKind::SmoothWarp, 3.0, 5e-2}}) {
        Scene<double> sc = gen_scene<double>(c.task, c.kind, 48, 96, 11, c.mag);
        Tensor<double> resid = consistency_residual_value(sc.gt.gt0, sc.gt.gt1);
        const int64_t n = resid.dim(0) * resid.dim(1);
        for (int64_t p = 0; p < n; ++p) {
            if (!sc.noc0[p]) continue;
            const double l1 = std::abs(resid[p * 2]) + std::abs(resid[p * 2 + 1]);
            MA_CHECK(l1 <= c.tol, scene_kind_name(c.kind) + ": gt fails inverse consistency");
        }
    }
}

void check_constant_upsample(Rng& rng) {
    Graph<double> g;
    Tensor<double> field({5, 7, 2});
    field.fill(0.0);
    for (int64_t p = 0; p < 35; ++p) field[p * 2] = -2.5, field[p * 2 + 1] = 0.75;
    Tensor<double> logits({5, 7, 9 * 4 * 4});
    fill_normal(logits, rng, 0.0, 1.0);
    const int f = convex_upsample(g, g.push(field), g.push(logits), 4);
    const Tensor<double>& up = g.val(f);
    MA_CHECK(up.dim(0) == 20 && up.dim(1) == 28, "upsample shape");
    for (int64_t p = 0; p < up.dim(0) * up.dim(1); ++p) {
        MA_CHECK(std::abs(up[p * 2] - (-2.5 * 4)) < 1e-12, "constant x not preserved");
        MA_CHECK(std::abs(up[p * 2 + 1] - 0.75 * 4) < 1e-12, "constant y not preserved");
    }
}

void check_stereo_init_signs() {
    DecoderConfig cfg = preset_config("desk", Task::Stereo);
    MatchDecoder<double> dec(cfg, 3);
    Scene<double> sc = gen_scene<double>(Task::Stereo, SceneKind::ConstantShift, 32, 64, 3, 4.0);
    Graph<double> g;
    ForwardResult fr = dec.forward(g, sc.img0, sc.img1);
    const Tensor<double>& r0 = g.val(fr.r_init0);
    const Tensor<double>& r1 = g.val(fr.r_init1);
    for (int64_t p = 0; p < r0.dim(0) * r0.dim(1); ++p) {
        MA_CHECK(r0[p * 2] <= 0.0, "reference-view initial x must be <= 0");
        MA_CHECK(r1[p * 2] >= 0.0, "target-view initial x must be >= 0");
    }
}

void check_checkpoint_round_trip() {
    const fs::path dir = fs::temp_directory_path() / "matchattn_selftest";
    fs::create_directories(dir);
    DecoderConfig cfg = preset_config("desk", Task::Flow);
    MatchDecoder<float> dec(cfg, 21);
    const std::string path = (dir / "ckpt.mtn").string();
    dec.save(path);
    MatchDecoder<float> back = MatchDecoder<float>::load(path);
    MA_CHECK(back.config().task == cfg.task && back.config().heads == cfg.heads &&
                 back.config().channels == cfg.channels,
             "config round trip");
    const auto& a = dec.params().entries;
    const auto& b = back.params().entries;
    MA_CHECK(a.size() == b.size(), "entry count");
    for (size_t i = 0; i < a.size(); ++i) {
        MA_CHECK(a[i].name == b[i].name, "entry order");
        for (int64_t j = 0; j < a[i].value.numel(); ++j)
            MA_CHECK(a[i].value[j] == b[i].value[j], "weights differ after reload");
    }
}

int run_selftest() {
    Rng rng(env_seed(1234));
    CheckRunner cr;
    cr.run("bilinear softmax matches the unfused reference", [&] { check_bsm_reference(rng); });
    cr.run("integer-centered window reduces to plain softmax",
           [&] { check_bsm_plain_softmax(rng); });
    cr.run("attention rows normalize across a decoder pass", [] { check_normalization(); });
    cr.run("flop counter hand values", [] { check_flops_hand_values(); });
    cr.run("pfm/flo round trips are bitwise", [&] { check_io_round_trips(rng); });
    cr.run("metric definitions", [] { check_metric_definitions(); });
    cr.run("scene gt satisfies inverse consistency", [] { check_scene_consistency(); });
    cr.run("convex upsample preserves constants", [&] { check_constant_upsample(rng); });
    cr.run("stereo initialization keeps disparity signs", [] { check_stereo_init_signs(); });
    cr.run("checkpoint save/load round trip", [] { check_checkpoint_round_trip(); });
    if (cr.failures) {
        std::printf("selftest: FAIL (%d)\n", cr.failures);
        return 1;
    }
    std::printf("selftest: PASS\n");
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradStats {
    double worst = 0;
    int64_t total = 0, over_tol = 0;
    void add(double analytic, double numeric) {
        const double e = rel_err(analytic, numeric, 1e-6);
        worst = std::max(worst, e);
        ++total;
        if (e >= 1e-4) ++over_tol;
    }
    bool pass() const {
        const double frac = total ? static_cast<double>(over_tol) / static_cast<double>(total) : 0;
        return worst < 1e-3 && frac <= 0.01;
    }
};

bool report_sweep(const char* name, const GradStats& s) {
    std::printf("%s: worst rel err %.3e, %" PRId64 "/%" PRId64 " entries over 1e-4 -> %s\n", name,
                s.worst, s.over_tol, s.total, s.pass() ? "PASS" : "FAIL");
    return s.pass();
}

GradStats gradcheck_bsm(Rng& rng) {
    GradStats stats;
    const double h = 1e-5;
    for (int w : {1, 3}) {
        const int e2 = (w + 1) * (w + 1);
        for (int it = 0; it < 20; ++it) {
            std::vector<double> sim(static_cast<size_t>(e2));
            for (auto& v : sim) v = rng.uniform(-3.0, 3.0);
            const double fx = rng.uniform(0.05, 0.95), fy = rng.uniform(0.05, 0.95);
            std::vector<double> dout(static_cast<size_t>(e2));
            for (auto& v : dout) v = rng.uniform(-1.0, 1.0);
            std::vector<double> dsim(static_cast<size_t>(e2), 0.0);
            double dfx = 0, dfy = 0;
            bilinear_softmax_bwd(w, sim.data(), fx, fy, nullptr, dout.data(), dsim.data(), &dfx,
                                 &dfy);
            auto loss_sim = [&](const double* x) {
                std::vector<double> out(static_cast<size_t>(e2));
                bilinear_softmax_fwd(w, x, fx, fy, nullptr, out.data());
                double l = 0;
                for (int j = 0; j < e2; ++j)
                    l += out[static_cast<size_t>(j)] * dout[static_cast<size_t>(j)];
                return l;
            };
            std::vector<double> num = finite_diff_grad(loss_sim, sim, h);
            for (int j = 0; j < e2; ++j)
                stats.add(dsim[static_cast<size_t>(j)], num[static_cast<size_t>(j)]);
            auto loss_frac = [&](const double* fr) {
                std::vector<double> out(static_cast<size_t>(e2));
                bilinear_softmax_fwd(w, sim.data(), fr[0], fr[1], nullptr, out.data());
                double l = 0;
                for (int j = 0; j < e2; ++j)
                    l += out[static_cast<size_t>(j)] * dout[static_cast<size_t>(j)];
                return l;
            };
            std::vector<double> numf = finite_diff_grad(loss_frac, {fx, fy}, h);
            stats.add(dfx, numf[0]);
            stats.add(dfy, numf[1]);
        }
    }
    return stats;
}

GradStats gradcheck_core(Rng& rng, Similarity sim) {
    GradStats stats;
    AttnCoreCfg cfg;
    cfg.H = 5;
    cfg.W = 6;
    cfg.heads = 2;
    cfg.ck = 3;
    cfg.cv = 3;
    cfg.w = 3;
    cfg.sim = sim;
    const int64_t n = cfg.H * cfg.W;
    const int e2 = (cfg.w + 1) * (cfg.w + 1);
    Tensor<double> Q({cfg.H, cfg.W, cfg.heads * cfg.ck}), K(Q.shape), V(Q.shape),
        R({cfg.H, cfg.W, 2});
    fill_normal(Q, rng, 0.0, 1.0);
    fill_normal(K, rng, 0.0, 1.0);
    fill_normal(V, rng, 0.0, 1.0);
    fill_uniform(R, rng, -2.0, 2.0);
    Tensor<double> M({cfg.H, cfg.W, cfg.heads * cfg.cv}),
        A({cfg.H, cfg.W, cfg.heads * e2});
    Tensor<double> dM(M.shape);
    fill_normal(dM, rng, 0.0, 1.0);
    Tensor<double> dA(A.shape, 0.0), dQ(Q.shape, 0.0), dK(K.shape, 0.0), dV(V.shape, 0.0),
        dR(R.shape, 0.0);
    attention_core_fwd(cfg, Q.ptr(), K.ptr(), V.ptr(), R.ptr(), M.ptr(), A.ptr());
    attention_core_bwd(cfg, Q.ptr(), K.ptr(), V.ptr(), R.ptr(), A.ptr(), dM.ptr(), dA.ptr(),
                       dQ.ptr(), dK.ptr(), dV.ptr(), dR.ptr());
    auto loss_with = [&](Tensor<double>* slot, const double* x, int64_t count) {
        Tensor<double> keep = *slot;
        for (int64_t i = 0; i < count; ++i) (*slot)[i] = x[i];
        Tensor<double> m2(M.shape), a2(A.shape);
        attention_core_fwd(cfg, Q.ptr(), K.ptr(), V.ptr(), R.ptr(), m2.ptr(), a2.ptr());
        *slot = keep;
        double l = 0;
        for (int64_t i = 0; i < m2.numel(); ++i) l += m2[i] * dM[i];
        return l;
    };
    struct Slot {
        Tensor<double>* x;
        Tensor<double>* g;
    };
    for (Slot s : {Slot{&Q, &dQ}, Slot{&K, &dK}, Slot{&V, &dV}, Slot{&R, &dR}}) {
        // probe a deterministic subset to keep the sweep quick
        std::vector<double> x(s.x->data.begin(), s.x->data.end());
        const int64_t stride = std::max<int64_t>(1, s.x->numel() / 64);
        for (int64_t i = 0; i < s.x->numel(); i += stride) {
            auto f = [&](const double* xv) { return loss_with(s.x, xv, s.x->numel()); };
            std::vector<double> probe = x;
            const double x0 = probe[static_cast<size_t>(i)];
            probe[static_cast<size_t>(i)] = x0 + 1e-5;
            const double fp = f(probe.data());
            probe[static_cast<size_t>(i)] = x0 - 1e-5;
            const double fm = f(probe.data());
            stats.add((*s.g)[i], (fp - fm) / 2e-5);
        }
    }
    (void)n;
    return stats;
}

GradStats gradcheck_decoder(uint64_t seed) {
    GradStats stats;
    DecoderConfig cfg = preset_config("desk", Task::Stereo);
    MatchDecoder<double> dec(cfg, seed);
    Scene<double> sc = gen_scene<double>(Task::Stereo, SceneKind::ConstantShift, 32, 64, seed, 3.0);
    Graph<double> g;
    ForwardResult fr = dec.forward(g, sc.img0, sc.img1, &sc.gt);
    g.backward(fr.loss);
    Tensor<double>& w0 = dec.params()["enc.s0.down.w"];
    const int idx = static_cast<int>(dec.params().by_name.at("enc.s0.down.w"));
    const Tensor<double>& analytic = g.grad(fr.param_vars[static_cast<size_t>(idx)]);
    const int64_t stride = std::max<int64_t>(1, w0.numel() / 24);
    for (int64_t i = 0; i < w0.numel(); i += stride) {
        const double x0 = w0[i];
        auto eval = [&](double v) {
            w0[i] = v;
            Graph<double> g2;
            ForwardResult f2 = dec.forward(g2, sc.img0, sc.img1, &sc.gt);
            w0[i] = x0;
            return static_cast<double>(g2.val(f2.loss)[0]);
        };
        const double num = (eval(x0 + 1e-5) - eval(x0 - 1e-5)) / 2e-5;
        stats.add(analytic[i], num);
    }
    return stats;
}

int run_gradcheck(bool full) {
    Rng rng(env_seed(99));
    bool ok = true;
    ok &= report_sweep("window softmax wrt similarities and fractions", gradcheck_bsm(rng));
    ok &= report_sweep("attention core (dot) wrt q/k/v/r", gradcheck_core(rng, Similarity::Dot));
    ok &= report_sweep("attention core (neg-l1) wrt q/k/v/r",
                       gradcheck_core(rng, Similarity::NegL1));
    if (full)
        ok &= report_sweep("decoder loss wrt first encoder conv", gradcheck_decoder(env_seed(99)));
    std::printf("gradcheck: %s\n", ok ? "PASS" : "FAIL");
    return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// bench / flops

int run_bench(const std::vector<std::string>& variants, std::vector<int64_t> sides, int heads,
              int ck, int cv, int w, int runs, uint64_t seed, int threads,
              const std::string& out_dir) {
    BenchSpec spec;
    if (!sides.empty()) spec.sides = std::move(sides);
    spec.heads = heads;
    spec.ck = ck;
    spec.cv = cv;
    spec.w = w;
    spec.runs = runs;
    spec.seed = env_seed(seed);
    std::vector<BenchRow> rows = run_bench(spec, variants);
    std::printf("variant,tokens,channels,window,runs,median_ms\n");
    for (const auto& r : rows)
        std::printf("%s,%" PRId64 ",%d,%d,%d,%.6f\n", r.variant.c_str(), r.tokens, r.channels,
                    r.window, r.runs, r.median_ms);
    for (const auto& v : variants) {
        std::vector<BenchRow> sel;
        for (const auto& r : rows)
            if (r.variant == v) sel.push_back(r);
        if (sel.size() >= 3)
            std::printf("# %s log-log slope: %.3f\n", v.c_str(), loglog_slope(sel));
    }
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        const std::string path = (fs::path(out_dir) / "bench.csv").string();
        write_bench_csv(path, rows, threads);
        std::printf("# wrote %s\n", path.c_str());
    }
    return 0;
}

int run_flops(const std::string& preset, const std::string& task_s, int64_t res, int64_t height,
              int64_t width, int heads, int ck, int cv, int w, const std::string& out_dir) {
    int64_t H = height, W = width;
    if (res > 0) H = W = res;
    FlopsBreakdown fb;
    if (!preset.empty()) {
        DecoderConfig cfg = preset_config(preset, parse_task(task_s));
        MA_CHECK(H > 0 && W > 0, "--res or --height/--width required");
        fb = decoder_flops(cfg, H, W);
        std::printf("preset %s (%s) at %" PRId64 "x%" PRId64 "\n", preset.c_str(), task_s.c_str(),
                    H, W);
    } else {
        MA_CHECK(H > 0 && W > 0 && ck > 0 && cv > 0, "core mode needs extents and channels");
        fb = attention_flops(H, W, heads, ck, cv, w);
        std::printf("attention core at %" PRId64 "x%" PRId64 " h=%d ck=%d cv=%d w=%d\n", H, W,
                    heads, ck, cv, w);
    }
    std::printf("qk_flops      %" PRId64 "\n", fb.qk);
    std::printf("bsm_flops     %" PRId64 "\n", fb.bsm);
    std::printf("agg_flops     %" PRId64 "\n", fb.agg);
    std::printf("tensor_flops  %" PRId64 "\n", fb.tensor);
    std::printf("direct_total  %" PRId64 "\n", fb.direct());
    std::printf("grand_total   %" PRId64 "  (%.4f TFLOPs)\n", fb.total(),
                static_cast<double>(fb.total()) * 1e-12);
    std::printf("attn_memory   %" PRId64 " values\n", fb.attn_mem);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        const std::string path = (fs::path(out_dir) / "flops.csv").string();
        std::ofstream os(path);
        os << "component,value\n"
           << "qk," << fb.qk << "\nbsm," << fb.bsm << "\nagg," << fb.agg << "\ntensor,"
           << fb.tensor << "\ndirect," << fb.direct() << "\ntotal," << fb.total() << "\nattn_mem,"
           << fb.attn_mem << "\n";
        std::printf("wrote %s\n", path.c_str());
    }
    return 0;
}

// ---------------------------------------------------------------------------
// gen / train / infer / eval

int run_gen(const std::string& task_s, const std::string& scene_s, int64_t H, int64_t W,
            uint64_t seed, double magnitude, const std::string& out_dir) {
    const Task task = parse_task(task_s);
    const SceneKind kind = scene_kind_from_string(scene_s);
    Scene<float> sc = gen_scene<float>(task, kind, H, W, env_seed(seed), magnitude);
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    write_ppm((dir / "img0.ppm").string(), sc.img0);
    write_ppm((dir / "img1.ppm").string(), sc.img1);
    write_pgm((dir / "noc0.pgm").string(), sc.noc0);
    write_pgm((dir / "noc1.pgm").string(), sc.noc1);
    if (kind == SceneKind::TwoLayer) write_pgm((dir / "occ_band0.pgm").string(), sc.occ_band0);
    if (task == Task::Stereo) {
        Tensor<float> d0({H, W, 1}), d1({H, W, 1});
        for (int64_t p = 0; p < H * W; ++p) {
            d0[p] = -sc.gt.gt0[p * 2];
            d1[p] = sc.gt.gt1[p * 2];
        }
        write_pfm((dir / "disp0.pfm").string(), d0);
        write_pfm((dir / "disp1.pfm").string(), d1);
    } else {
        write_flo((dir / "flow0.flo").string(), sc.gt.gt0);
        write_flo((dir / "flow1.flo").string(), sc.gt.gt1);
    }
    std::ofstream os((dir / "scene.csv").string());
    os << "key,value\nkind," << scene_kind_name(kind) << "\ntask," << task_s << "\nheight," << H
       << "\nwidth," << W << "\nseed," << env_seed(seed) << "\nmagnitude," << magnitude << "\n";
    std::printf("wrote scene '%s' (%s) to %s\n", scene_kind_name(kind).c_str(), task_s.c_str(),
                out_dir.c_str());
    return 0;
}

int run_train(TrainConfig cfg) {
    cfg.seed = env_seed(cfg.seed);
    TrainResult tr = train_toy(cfg);
    std::printf("steps %d  loss %.6f  epe %.4f  %s\n", tr.steps_run, tr.final_loss, tr.final_epe,
                tr.diverged ? "DIVERGED" : "ok");
    std::printf("checkpoint %s\ntrace %s\n", tr.checkpoint_path.c_str(), tr.trace_path.c_str());
    return tr.diverged ? 1 : 0;
}

int run_infer(const std::string& ckpt, const std::string& img0_p, const std::string& img1_p,
              const std::string& out_dir) {
    MatchDecoder<float> dec = MatchDecoder<float>::load(ckpt);
    Tensor<float> img0 = read_ppm(img0_p);
    Tensor<float> img1 = read_ppm(img1_p);
    Graph<float> g;
    ForwardResult fr = dec.forward(g, img0, img1);
    const Tensor<float>& r0 = g.val(fr.r_full0);
    const Tensor<float>& r1 = g.val(fr.r_full1);
    const Tensor<float>& sr0 = g.val(fr.sr_full0);
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    const int64_t H = r0.dim(0), W = r0.dim(1);
    if (dec.config().task == Task::Stereo) {
        Tensor<float> d0({H, W, 1}), d1({H, W, 1});
        for (int64_t p = 0; p < H * W; ++p) {
            d0[p] = -r0[p * 2];
            d1[p] = r1[p * 2];
        }
        write_pfm((dir / "disp0.pfm").string(), d0);
        write_pfm((dir / "disp1.pfm").string(), d1);
    } else {
        write_flo((dir / "flow0.flo").string(), r0);
        write_flo((dir / "flow1.flo").string(), r1);
    }
    write_pfm((dir / "self_rpos_x0.pfm").string(), mean_head_x(sr0));
    Tensor<float> resid = consistency_residual_value(r0, r1);
    Tensor<uint8_t> noc = consistency_mask(resid, dec.config().threshold_a);
    write_pgm((dir / "noc0.pgm").string(), noc);
    int64_t kept = 0;
    for (int64_t p = 0; p < H * W; ++p) kept += noc[p] ? 1 : 0;
    std::ofstream os((dir / "infer.csv").string());
    os << "key,value\nheight," << H << "\nwidth," << W << "\nnoc_fraction,"
       << static_cast<double>(kept) / static_cast<double>(H * W) << "\n";
    std::printf("wrote predictions to %s (noc %.3f)\n", out_dir.c_str(),
                static_cast<double>(kept) / static_cast<double>(H * W));
    return 0;
}

int run_eval(const std::string& task_s, const std::string& pred_p, const std::string& gt_p,
             const std::string& noc_p, const std::string& out_dir) {
    const Task task = parse_task(task_s);
    Tensor<float> pred, gt;
    if (task == Task::Stereo) {
        pred = disp_as_field(read_pfm(pred_p));
        gt = disp_as_field(read_pfm(gt_p));
    } else {
        pred = read_flo(pred_p);
        gt = read_flo(gt_p);
    }
    MA_CHECK(pred.same_shape(gt), "prediction/gt shape mismatch");
    Metrics all = compute_metrics(pred, gt, nullptr, task);
    print_report("all", all);
    Metrics noc;
    bool have_noc = false;
    if (!noc_p.empty()) {
        Tensor<uint8_t> mask = read_pgm(noc_p);
        MA_CHECK(mask.dim(0) == pred.dim(0) && mask.dim(1) == pred.dim(1),
                 "noc mask shape mismatch");
        noc = compute_metrics(pred, gt, &mask, task);
        print_report("noc", noc);
        have_noc = true;
    }
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        const std::string path = (fs::path(out_dir) / "eval.csv").string();
        std::ofstream os(path);
        os << "region,epe,d1,bad05,bad1,bad2,bad3,count\n";
        report_csv(os, "all", all);
        if (have_noc) report_csv(os, "noc", noc);
        std::printf("wrote %s\n", path.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sliding-window cross-view matching toolkit"};
    app.require_subcommand(1);

    auto* selftest = app.add_subcommand("selftest", "run the invariant suite");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient sweeps");
    bool gc_full = false;
    gradcheck->add_flag("--full", gc_full, "include the end-to-end decoder sweep (slow)");

    auto* bench = app.add_subcommand("bench", "latency scaling benchmark");
    std::vector<std::string> b_variants = {"match", "global"};
    std::vector<int64_t> b_sides;
    int b_heads = 2, b_ck = 8, b_cv = 8, b_w = 3, b_runs = 5, b_threads = 1;
    uint64_t b_seed = 1234;
    std::string b_out;
    bench->add_option("--variants", b_variants,
                      "comma list of match,match_simagg,direct,global")
        ->delimiter(',');
    bench->add_option("--sides", b_sides, "token grid sides, e.g. 64,128,256")->delimiter(',');
    bench->add_option("--heads", b_heads, "attention heads");
    bench->add_option("--ck", b_ck, "key channels per head");
    bench->add_option("--cv", b_cv, "value channels per head");
    bench->add_option("--window", b_w, "window size (odd)");
    bench->add_option("--runs", b_runs, "timed repetitions per point");
    bench->add_option("--seed", b_seed, "input seed");
    bench->add_option("--threads", b_threads, "thread count recorded in the CSV");
    bench->add_option("--out", b_out, "directory for bench.csv");

    auto* flops = app.add_subcommand("flops", "arithmetic cost breakdown");
    std::string f_preset, f_task = "stereo", f_out;
    int64_t f_res = 0, f_height = 0, f_width = 0;
    int f_heads = 2, f_ck = 0, f_cv = 0, f_w = 3;
    flops->add_option("--preset", f_preset, "decoder preset: desk or T");
    flops->add_option("--task", f_task, "stereo or flow");
    flops->add_option("--res", f_res, "square input resolution");
    flops->add_option("--height", f_height, "input height");
    flops->add_option("--width", f_width, "input width");
    flops->add_option("--heads", f_heads, "core mode: heads");
    flops->add_option("--ck", f_ck, "core mode: key channels per head");
    flops->add_option("--cv", f_cv, "core mode: value channels per head");
    flops->add_option("--window", f_w, "core mode: window size");
    flops->add_option("--out", f_out, "directory for flops.csv");

    auto* gen = app.add_subcommand("gen", "generate a synthetic scene with gt");
    std::string g_task = "stereo", g_scene = "constant_shift", g_out;
    int64_t g_H = 128, g_W = 256;
    uint64_t g_seed = 1;
    double g_mag = 4.0;
    gen->add_option("--task", g_task, "stereo or flow");
    gen->add_option("--scene", g_scene, "constant_shift, two_layer or smooth_warp");
    gen->add_option("--height", g_H, "image height");
    gen->add_option("--width", g_W, "image width");
    gen->add_option("--seed", g_seed, "texture seed");
    gen->add_option("--magnitude", g_mag, "shift / warp magnitude in pixels");
    gen->add_option("--out", g_out, "output directory")->required();

    auto* train = app.add_subcommand("train-toy", "overfit the desk model on one scene");
    std::string t_config, t_task, t_scene, t_preset, t_out;
    int64_t t_H = 0, t_W = 0;
    int t_steps = -1;
    uint64_t t_seed = 0;
    bool t_have_seed = false;
    double t_mag = std::nan(""), t_lr = std::nan(""), t_target = std::nan("");
    train->add_option("--config", t_config, "key = value config file");
    train->add_option("--task", t_task, "stereo or flow");
    train->add_option("--scene", t_scene, "scene kind");
    train->add_option("--preset", t_preset, "decoder preset");
    train->add_option("--height", t_H, "scene height");
    train->add_option("--width", t_W, "scene width");
    train->add_option("--steps", t_steps, "optimization steps");
    train->add_option("--seed", t_seed, "seed")->each([&](const std::string&) {
        t_have_seed = true;
    });
    train->add_option("--magnitude", t_mag, "scene magnitude");
    train->add_option("--lr", t_lr, "peak learning rate");
    train->add_option("--target-epe", t_target, "stop early below this non-occluded EPE");
    train->add_option("--out", t_out, "output directory");
    bool t_swap = false;
    train->add_flag("--swap-views", t_swap,
                    "flow only: alternate swapped pair presentations so both matching "
                    "directions are supervised");

    auto* infer = app.add_subcommand("infer", "run a checkpoint on an image pair");
    std::string i_ckpt, i_img0, i_img1, i_out;
    infer->add_option("--checkpoint", i_ckpt, "checkpoint .mtn")->required();
    infer->add_option("--img0", i_img0, "reference image (ppm)")->required();
    infer->add_option("--img1", i_img1, "target image (ppm)")->required();
    infer->add_option("--out", i_out, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "compare a prediction against gt");
    std::string e_task = "stereo", e_pred, e_gt, e_noc, e_out;
    eval->add_option("--task", e_task, "stereo or flow");
    eval->add_option("--pred", e_pred, "prediction file (pfm/flo)")->required();
    eval->add_option("--gt", e_gt, "ground-truth file (pfm/flo)")->required();
    eval->add_option("--noc", e_noc, "non-occlusion mask (pgm)");
    eval->add_option("--out", e_out, "directory for eval.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*selftest) return run_selftest();
        if (*gradcheck) return run_gradcheck(gc_full);
        if (*bench)
            return run_bench(b_variants, b_sides, b_heads, b_ck, b_cv, b_w, b_runs, b_seed,
                             b_threads, b_out);
        if (*flops)
            return run_flops(f_preset, f_task, f_res, f_height, f_width, f_heads, f_ck, f_cv, f_w,
                             f_out);
        if (*gen) return run_gen(g_task, g_scene, g_H, g_W, g_seed, g_mag, g_out);
        if (*train) {
            TrainConfig cfg;
            if (!t_config.empty()) cfg = load_train_config(t_config);
            if (!t_task.empty()) cfg.task = parse_task(t_task);
            if (!t_scene.empty()) cfg.kind = scene_kind_from_string(t_scene);
            if (!t_preset.empty()) cfg.preset = t_preset;
            if (t_H > 0) cfg.H = t_H;
            if (t_W > 0) cfg.W = t_W;
            if (t_steps >= 0) cfg.steps = t_steps;
            if (t_have_seed) cfg.seed = t_seed;
            if (!std::isnan(t_mag)) cfg.magnitude = t_mag;
            if (!std::isnan(t_lr)) cfg.optim.lr_peak = t_lr;
            if (!std::isnan(t_target)) cfg.target_epe = t_target;
            if (!t_out.empty()) cfg.out_dir = t_out;
            if (t_swap) cfg.swap_views = true;
            return run_train(cfg);
        }
        if (*infer) return run_infer(i_ckpt, i_img0, i_img1, i_out);
        if (*eval) return run_eval(e_task, e_pred, e_gt, e_noc, e_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
