#include "matchattn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>

#include "matchattn/attention.hpp"
#include "matchattn/rng.hpp"

namespace matchattn {

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn) {
    const auto t0 = Clock::now();
    fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

struct Inputs {
    Tensor<float> Q, K, V, R;
};

Inputs make_inputs(int64_t side, int h, int ck, int cv, uint64_t seed) {
    Inputs in;
    Rng rng(seed + static_cast<uint64_t>(side));
    in.Q = Tensor<float>({side, side, static_cast<int64_t>(h) * ck});
    in.K = Tensor<float>({side, side, static_cast<int64_t>(h) * ck});
    in.V = Tensor<float>({side, side, static_cast<int64_t>(h) * cv});
    in.R = Tensor<float>({side, side, 2});
    fill_normal(in.Q, rng, 0.0, 1.0);
    fill_normal(in.K, rng, 0.0, 1.0);
    fill_normal(in.V, rng, 0.0, 1.0);
    fill_uniform(in.R, rng, -1.5, 1.5);
    return in;
}

// similarity + aggregation stages only: raw similarities act as weights
void simagg_kernel(const Inputs& in, int h, int ck, int cv, int w, Tensor<float>* out) {
    const int64_t H = in.Q.dim(0), W = in.Q.dim(1);
    const int hw = (w - 1) / 2;
    const int we = w + 1;
    const float gamma = 1.0f / std::sqrt(static_cast<float>(ck));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            const float rx = in.R[(y * W + x) * 2 + 0];
            const float ry = in.R[(y * W + x) * 2 + 1];
            const int64_t bx = static_cast<int64_t>(std::floor(static_cast<double>(x) + rx));
            const int64_t by = static_cast<int64_t>(std::floor(static_cast<double>(y) + ry));
            for (int hd = 0; hd < h; ++hd) {
                const float* q = in.Q.ptr() + ((y * W + x) * h + hd) * ck;
                float* m = out->ptr() + ((y * W + x) * h + hd) * cv;
                for (int c = 0; c < cv; ++c) m[c] = 0.0f;
                for (int r = 0; r < we; ++r) {
                    const int64_t py = clamp_idx(by - hw + r, H);
                    for (int cc = 0; cc < we; ++cc) {
                        const int64_t px = clamp_idx(bx - hw + cc, W);
                        const float* k = in.K.ptr() + ((py * W + px) * h + hd) * ck;
                        float s = 0.0f;
                        for (int c = 0; c < ck; ++c) s += q[c] * k[c];
                        s *= gamma;
                        const float* v = in.V.ptr() + ((py * W + px) * h + hd) * cv;
                        for (int c = 0; c < cv; ++c) m[c] += s * v[c];
                    }
                }
            }
        }
}

// pixel-level alternative: every window entry bilinearly resamples key and
// value from four neighbors before the similarity
void direct_kernel(const Inputs& in, int h, int ck, int cv, int w, Tensor<float>* out) {
    const int64_t H = in.Q.dim(0), W = in.Q.dim(1);
    const int hw = (w - 1) / 2;
    std::vector<float> kbuf(static_cast<size_t>(ck)), vbuf(static_cast<size_t>(cv));
    std::vector<float> sims(static_cast<size_t>(w) * w);
    std::vector<float> vals(static_cast<size_t>(w) * w * cv);
    const float gamma = 1.0f / std::sqrt(static_cast<float>(ck));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            const float cx = static_cast<float>(x) + in.R[(y * W + x) * 2 + 0];
            const float cy = static_cast<float>(y) + in.R[(y * W + x) * 2 + 1];
            for (int hd = 0; hd < h; ++hd) {
                const float* q = in.Q.ptr() + ((y * W + x) * h + hd) * ck;
                int n = 0;
                for (int v = -hw; v <= hw; ++v)
                    for (int u = -hw; u <= hw; ++u, ++n) {
                        const double sx = static_cast<double>(cx) + u;
                        const double sy = static_cast<double>(cy) + v;
                        const int64_t x0 = static_cast<int64_t>(std::floor(sx));
                        const int64_t y0 = static_cast<int64_t>(std::floor(sy));
                        const float fx = static_cast<float>(sx - static_cast<double>(x0));
                        const float fy = static_cast<float>(sy - static_cast<double>(y0));
                        const int64_t xa = clamp_idx(x0, W), xb = clamp_idx(x0 + 1, W);
                        const int64_t ya = clamp_idx(y0, H), yb = clamp_idx(y0 + 1, H);
                        const float w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy);
                        const float w10 = (1 - fx) * fy, w11 = fx * fy;
                        const float* k00 = in.K.ptr() + ((ya * W + xa) * h + hd) * ck;
                        const float* k01 = in.K.ptr() + ((ya * W + xb) * h + hd) * ck;
                        const float* k10 = in.K.ptr() + ((yb * W + xa) * h + hd) * ck;
                        const float* k11 = in.K.ptr() + ((yb * W + xb) * h + hd) * ck;
                        for (int c = 0; c < ck; ++c)
                            kbuf[static_cast<size_t>(c)] = w00 * k00[c] + w01 * k01[c] +
                                                           w10 * k10[c] + w11 * k11[c];
                        const float* v00 = in.V.ptr() + ((ya * W + xa) * h + hd) * cv;
                        const float* v01 = in.V.ptr() + ((ya * W + xb) * h + hd) * cv;
                        const float* v10 = in.V.ptr() + ((yb * W + xa) * h + hd) * cv;
                        const float* v11 = in.V.ptr() + ((yb * W + xb) * h + hd) * cv;
                        float* vd = vals.data() + static_cast<size_t>(n) * cv;
                        for (int c = 0; c < cv; ++c)
                            vd[c] = w00 * v00[c] + w01 * v01[c] + w10 * v10[c] + w11 * v11[c];
                        float s = 0.0f;
                        for (int c = 0; c < ck; ++c) s += q[c] * kbuf[static_cast<size_t>(c)];
                        sims[static_cast<size_t>(n)] = gamma * s;
                    }
                float mx = sims[0];
                for (int i = 1; i < n; ++i) mx = std::max(mx, sims[static_cast<size_t>(i)]);
                float z = 0.0f;
                for (int i = 0; i < n; ++i) {
                    sims[static_cast<size_t>(i)] = std::exp(sims[static_cast<size_t>(i)] - mx);
                    z += sims[static_cast<size_t>(i)];
                }
                float* m = out->ptr() + ((y * W + x) * h + hd) * cv;
                for (int c = 0; c < cv; ++c) m[c] = 0.0f;
                for (int i = 0; i < n; ++i) {
                    const float a = sims[static_cast<size_t>(i)] / z;
                    const float* vd = vals.data() + static_cast<size_t>(i) * cv;
                    for (int c = 0; c < cv; ++c) m[c] += a * vd[c];
                }
            }
        }
}

// dense all-pairs attention, one query row of logits at a time
void global_kernel(const Inputs& in, int h, int ck, int cv, Tensor<float>* out) {
    const int64_t H = in.Q.dim(0), W = in.Q.dim(1);
    const int64_t n = H * W;
    const float gamma = 1.0f / std::sqrt(static_cast<float>(ck));
    std::vector<float> logits(static_cast<size_t>(n));
    for (int64_t qi = 0; qi < n; ++qi)
        for (int hd = 0; hd < h; ++hd) {
            const float* q = in.Q.ptr() + (qi * h + hd) * ck;
            float mx = -std::numeric_limits<float>::infinity();
            for (int64_t t = 0; t < n; ++t) {
                const float* k = in.K.ptr() + (t * h + hd) * ck;
                float s = 0.0f;
                for (int c = 0; c < ck; ++c) s += q[c] * k[c];
                logits[static_cast<size_t>(t)] = gamma * s;
                mx = std::max(mx, logits[static_cast<size_t>(t)]);
            }
            float z = 0.0f;
            for (int64_t t = 0; t < n; ++t) {
                logits[static_cast<size_t>(t)] = std::exp(logits[static_cast<size_t>(t)] - mx);
                z += logits[static_cast<size_t>(t)];
            }
            float* m = out->ptr() + (qi * h + hd) * cv;
            for (int c = 0; c < cv; ++c) m[c] = 0.0f;
            for (int64_t t = 0; t < n; ++t) {
                const float a = logits[static_cast<size_t>(t)] / z;
                const float* v = in.V.ptr() + (t * h + hd) * cv;
                for (int c = 0; c < cv; ++c) m[c] += a * v[c];
            }
        }
}

}  // namespace

BenchRow bench_variant(const std::string& variant, int64_t side, const BenchSpec& spec) {
    MA_CHECK(variant != "global" || side <= kGlobalSideCap,
             "global attention benchmark capped at side " + std::to_string(kGlobalSideCap));
    const Inputs in = make_inputs(side, spec.heads, spec.ck, spec.cv, spec.seed);
    Tensor<float> M({side, side, static_cast<int64_t>(spec.heads) * spec.cv});
    Tensor<float> A({side, side,
                     static_cast<int64_t>(spec.heads) * (spec.w + 1) * (spec.w + 1)});

    AttnCoreCfg cfg;
    cfg.H = side;
    cfg.W = side;
    cfg.heads = spec.heads;
    cfg.ck = spec.ck;
    cfg.cv = spec.cv;
    cfg.w = spec.w;
    cfg.sim = Similarity::Dot;

    std::function<void()> fn;
    if (variant == "match")
        fn = [&] {
            attention_core_fwd(cfg, in.Q.ptr(), in.K.ptr(), in.V.ptr(), in.R.ptr(), M.ptr(),
                               A.ptr());
        };
    else if (variant == "match_simagg")
        fn = [&] { simagg_kernel(in, spec.heads, spec.ck, spec.cv, spec.w, &M); };
    else if (variant == "direct")
        fn = [&] { direct_kernel(in, spec.heads, spec.ck, spec.cv, spec.w, &M); };
    else if (variant == "global")
        fn = [&] { global_kernel(in, spec.heads, spec.ck, spec.cv, &M); };
    else
        MA_CHECK(false, "unknown bench variant " + variant);

    fn();  // warm up
    std::vector<double> times;
    times.reserve(static_cast<size_t>(spec.runs));
    for (int r = 0; r < spec.runs; ++r) times.push_back(time_ms(fn));
    std::sort(times.begin(), times.end());
    BenchRow row;
    row.variant = variant;
    row.tokens = side * side;
    row.channels = spec.ck;
    row.window = variant == "global" ? 0 : spec.w;
    row.runs = spec.runs;
    row.median_ms = times[times.size() / 2];
    return row;
}

std::vector<BenchRow> run_bench(const BenchSpec& spec,
                                const std::vector<std::string>& variants) {
    std::vector<BenchRow> rows;
    for (const auto& v : variants)
        for (int64_t side : spec.sides) {
            if (v == "global" && side > kGlobalSideCap) continue;
            rows.push_back(bench_variant(v, side, spec));
        }
    return rows;
}

double loglog_slope(const std::vector<BenchRow>& rows) {
    MA_CHECK(rows.size() >= 2, "slope needs at least two sizes");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(rows.size());
    for (const auto& r : rows) {
        const double x = std::log(static_cast<double>(r.tokens));
        const double y = std::log(std::max(r.median_ms, 1e-6));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows, int threads) {
    std::ofstream f(path, std::ios::binary);
    MA_CHECK(f.good(), "cannot open " + path);
    f << "variant,tokens,channels,window,runs,median_ms\n";
    f << "# threads=" << threads << "\n";
    for (const auto& r : rows)
        f << r.variant << ',' << r.tokens << ',' << r.channels << ',' << r.window << ','
          << r.runs << ',' << r.median_ms << "\n";
}

}  // namespace matchattn
