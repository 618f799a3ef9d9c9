#include "matchattn/scene.hpp"

#include <cmath>
#include <functional>

#include "matchattn/rng.hpp"

namespace matchattn {

SceneKind scene_kind_from_string(const std::string& s) {
    if (s == "constant_shift") return SceneKind::ConstantShift;
    if (s == "two_layer") return SceneKind::TwoLayer;
    if (s == "smooth_warp") return SceneKind::SmoothWarp;
    MA_CHECK(false, "unknown scene kind " + s);
    return SceneKind::ConstantShift;
}

std::string scene_kind_name(SceneKind k) {
    switch (k) {
        case SceneKind::ConstantShift: return "constant_shift";
        case SceneKind::TwoLayer: return "two_layer";
        case SceneKind::SmoothWarp: return "smooth_warp";
    }
    return "?";
}

namespace {

constexpr double kPi = 3.14159265358979323846;

// Band-limited texture evaluable at continuous coordinates: per channel a sum
// of oriented sinusoids with wavelengths from the image size down to ~4 px, so
// the coarsest pyramid level still sees structure.
struct SinBank {
    static constexpr int kComps = 12;
    double amp[3][kComps], fx[3][kComps], fy[3][kComps], ph[3][kComps];
    double mean;

    SinBank(Rng& rng, int64_t H, int64_t W, double mean_level) : mean(mean_level) {
        const double lmax = static_cast<double>(std::min(H, W)) * 1.5;
        for (int c = 0; c < 3; ++c) {
            double total = 0;
            for (int k = 0; k < kComps; ++k) {
                const double t = static_cast<double>(k) / (kComps - 1);
                const double lambda = lmax * std::pow(4.0 / lmax, t);  // log-spaced to 4 px
                const double ang = rng.uniform() * 2 * kPi;
                fx[c][k] = std::cos(ang) / lambda;
                fy[c][k] = std::sin(ang) / lambda;
                ph[c][k] = rng.uniform() * 2 * kPi;
                amp[c][k] = 0.5 + rng.uniform();
                total += amp[c][k];
            }
            for (int k = 0; k < kComps; ++k) amp[c][k] *= 0.38 / total;
        }
    }

    double eval(int c, double x, double y) const {
        double v = mean;
        for (int k = 0; k < kComps; ++k)
            v += amp[c][k] * std::sin(2 * kPi * (fx[c][k] * x + fy[c][k] * y) + ph[c][k]);
        return v;
    }
};

template <typename T>
void paint(Tensor<T>& img, const SinBank& bank, double dx, double dy) {
    const int64_t H = img.dim(0), W = img.dim(1);
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                img[(y * W + x) * 3 + c] = static_cast<T>(
                    bank.eval(c, static_cast<double>(x) + dx, static_cast<double>(y) + dy));
}

// Inverse of a strictly increasing warp on [0, n-1] by bisection.
double invert_monotone(const std::function<double(double)>& f, double target, double n1) {
    double lo = 0, hi = n1;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) < target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

template <typename T>
Scene<T> gen_scene(Task task, SceneKind kind, int64_t H, int64_t W, uint64_t seed,
                   double magnitude) {
    Scene<T> s;
    s.img0 = Tensor<T>({H, W, 3});
    s.img1 = Tensor<T>({H, W, 3});
    s.gt.gt0 = Tensor<T>({H, W, 2});
    s.gt.gt1 = Tensor<T>({H, W, 2});
    s.gt.valid0 = Tensor<uint8_t>({H, W}, 1);
    s.gt.valid1 = Tensor<uint8_t>({H, W}, 1);
    s.noc0 = Tensor<uint8_t>({H, W}, 1);
    s.noc1 = Tensor<uint8_t>({H, W}, 1);
    Rng rng(seed);
    // reference pixels move leftward in the target view; one convention serves
    // both tasks (stereo disparity d appears as relative position -d)
    const double sgn = -1.0;

    if (kind == SceneKind::ConstantShift) {
        const int64_t d = static_cast<int64_t>(std::llround(std::abs(magnitude)));
        SinBank bank(rng, H, W, 0.5);
        paint(s.img0, bank, 0.0, 0.0);
        paint(s.img1, bank, static_cast<double>(d), 0.0);  // I1(x) = Txt(x + d)
        for (int64_t p = 0; p < H * W; ++p) {
            s.gt.gt0[p * 2] = static_cast<T>(sgn * static_cast<double>(d));
            s.gt.gt1[p * 2] = static_cast<T>(-sgn * static_cast<double>(d));
        }
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                s.noc0[y * W + x] = x >= d ? 1 : 0;
                s.noc1[y * W + x] = x < W - d ? 1 : 0;
            }
        return s;
    }

    if (kind == SceneKind::TwoLayer) {
        const int64_t df = magnitude >= 3 ? static_cast<int64_t>(std::llround(magnitude)) : 10;
        const int64_t db = 2;
        const int64_t rx0 = (3 * W) / 8, rx1 = (3 * W) / 4;
        const int64_t ry0 = H / 4, ry1 = (3 * H) / 4;
        MA_CHECK(rx0 >= df, "two_layer: foreground must stay in view");
        SinBank bg(rng, H, W, 0.42);
        SinBank fg(rng, H, W, 0.62);
        auto in_rect = [&](int64_t x, int64_t y) {
            return x >= rx0 && x < rx1 && y >= ry0 && y < ry1;
        };
        s.occ_band0 = Tensor<uint8_t>({H, W});
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                const int64_t p = y * W + x;
                const bool fg0 = in_rect(x, y);
                for (int c = 0; c < 3; ++c)
                    s.img0[p * 3 + c] = static_cast<T>(
                        fg0 ? fg.eval(c, static_cast<double>(x), static_cast<double>(y))
                            : bg.eval(c, static_cast<double>(x), static_cast<double>(y)));
                // the foreground is nearer, so it wins in the target view
                const bool fg1 = in_rect(x + df, y);
                for (int c = 0; c < 3; ++c)
                    s.img1[p * 3 + c] = static_cast<T>(
                        fg1 ? fg.eval(c, static_cast<double>(x + df), static_cast<double>(y))
                            : bg.eval(c, static_cast<double>(x + db), static_cast<double>(y)));
                const int64_t d0 = fg0 ? df : db;
                const int64_t d1 = fg1 ? df : db;
                s.gt.gt0[p * 2] = static_cast<T>(sgn * static_cast<double>(d0));
                s.gt.gt1[p * 2] = static_cast<T>(-sgn * static_cast<double>(d1));
                // view 0: background hidden when its target-view position is
                // covered by the foreground there, or out of view
                bool occ0 = false, band = false;
                if (!fg0) {
                    if (x - db < 0) occ0 = true;
                    else if (in_rect(x - db + df, y)) {
                        occ0 = true;
                        band = true;
                    }
                }
                // view 1: background hidden when its reference position is
                // covered by the foreground in view 0, or out of view
                bool occ1 = false;
                if (!fg1) {
                    if (x + db >= W) occ1 = true;
                    else if (in_rect(x + db, y)) occ1 = true;
                }
                s.noc0[p] = occ0 ? 0 : 1;
                s.noc1[p] = occ1 ? 0 : 1;
                s.occ_band0[p] = band ? 1 : 0;
            }
        return s;
    }

    // smooth_warp: separable monotone warp with fixed endpoints, no occlusion
    const double ax = magnitude > 0 ? magnitude : 3.0;
    const double ay = task == Task::Stereo ? 0.0 : 0.5 * ax;
    const double W1 = static_cast<double>(W - 1), H1 = static_cast<double>(H - 1);
    MA_CHECK(ax * 2 * kPi / W1 < 0.95 && (ay == 0 || ay * 2 * kPi / H1 < 0.95),
             "smooth_warp: amplitude too large for monotone warp");
    std::function<double(double)> U, V;
    if (task == Task::Stereo) {
        // nonnegative disparity, zero at both borders
        U = [ax, W1](double x) {
            const double sp = std::sin(kPi * x / W1);
            return x - ax * sp * sp;
        };
    } else {
        U = [ax, W1](double x) { return x + ax * std::sin(2 * kPi * x / W1); };
    }
    V = [ay, H1](double y) { return y + ay * std::sin(2 * kPi * y / H1); };

    SinBank bank(rng, H, W, 0.5);
    for (int64_t y = 0; y < H; ++y) {
        const double vy = V(static_cast<double>(y));
        const double yin = invert_monotone(V, static_cast<double>(y), H1);
        for (int64_t x = 0; x < W; ++x) {
            const int64_t p = y * W + x;
            const double ux = U(static_cast<double>(x));
            const double xin = invert_monotone(U, static_cast<double>(x), W1);
            for (int c = 0; c < 3; ++c) {
                s.img0[p * 3 + c] =
                    static_cast<T>(bank.eval(c, static_cast<double>(x), static_cast<double>(y)));
                s.img1[p * 3 + c] = static_cast<T>(bank.eval(c, xin, yin));
            }
            s.gt.gt0[p * 2 + 0] = static_cast<T>(ux - static_cast<double>(x));
            s.gt.gt0[p * 2 + 1] = static_cast<T>(vy - static_cast<double>(y));
            s.gt.gt1[p * 2 + 0] = static_cast<T>(xin - static_cast<double>(x));
            s.gt.gt1[p * 2 + 1] = static_cast<T>(yin - static_cast<double>(y));
        }
    }
    return s;
}

template Scene<float> gen_scene<float>(Task, SceneKind, int64_t, int64_t, uint64_t, double);
template Scene<double> gen_scene<double>(Task, SceneKind, int64_t, int64_t, uint64_t, double);

}  // namespace matchattn
