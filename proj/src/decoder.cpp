#include "matchattn/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "matchattn/ops.hpp"
#include "matchattn/rng.hpp"
#include "matchattn/tensor_io.hpp"

namespace matchattn {

DecoderConfig preset_config(const std::string& name, Task task) {
    DecoderConfig cfg;
    cfg.task = task;
    if (name == "desk") return cfg;
    if (name == "T") {
        cfg.heads = 4;
        cfg.channels = {32, 64, 128, 160};
        cfg.enc_depths = {2, 2, 6, 2};
        cfg.dec_depths = {2, 8, 8, 8};
        cfg.windows = {3, 3, 5, 5};
        return cfg;
    }
    MA_CHECK(false, "unknown preset " + name);
    return cfg;
}

namespace {

template <typename T>
Tensor<T> make_grid(int64_t H, int64_t W) {
    Tensor<T> g({H, W, 2});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            g[(y * W + x) * 2 + 0] = static_cast<T>(x);
            g[(y * W + x) * 2 + 1] = static_cast<T>(y);
        }
    return g;
}

Tensor<uint8_t> and_mask(const Tensor<uint8_t>& a, const Tensor<uint8_t>& b) {
    MA_CHECK(a.numel() == b.numel(), "mask size mismatch");
    Tensor<uint8_t> out(a.shape);
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = (a[i] && b[i]) ? 1 : 0;
    return out;
}

// mask as an extra 0/1 input channel; a constant, so gradients never reach it
Tensor<uint8_t> upsample_mask_nearest(const Tensor<uint8_t>& m, int factor) {
    const int64_t Hc = m.dim(0), Wc = m.dim(1);
    Tensor<uint8_t> out({Hc * factor, Wc * factor});
    for (int64_t y = 0; y < Hc * factor; ++y)
        for (int64_t x = 0; x < Wc * factor; ++x)
            out[y * Wc * factor + x] = m[(y / factor) * Wc + x / factor];
    return out;
}

// Bilinear upsampling of a coarse field to factor x the resolution, with the
// values scaled by the factor so they stay in fine-scale pixel units.
template <typename T>
int upsample_field(Graph<T>& g, int field, int factor) {
    if (factor == 1) return field;
    const int64_t Hc = g.val(field).dim(0), Wc = g.val(field).dim(1);
    const int64_t Hf = Hc * factor, Wf = Wc * factor;
    Tensor<T> coords({Hf, Wf, 2});
    const T inv = T(1) / static_cast<T>(factor);
    for (int64_t y = 0; y < Hf; ++y)
        for (int64_t x = 0; x < Wf; ++x) {
            coords[(y * Wf + x) * 2 + 0] = (static_cast<T>(x) + T(0.5)) * inv - T(0.5);
            coords[(y * Wf + x) * 2 + 1] = (static_cast<T>(y) + T(0.5)) * inv - T(0.5);
        }
    return g.scale(g.bilinear_sample(field, g.push(std::move(coords))),
                   static_cast<T>(factor));
}

template <typename T>
Tensor<T> mask_to_channel(const Tensor<uint8_t>& m) {
    Tensor<T> out({m.dim(0), m.dim(1), 1});
    for (int64_t i = 0; i < m.numel(); ++i) out[i] = m[i] ? T(1) : T(0);
    return out;
}

}  // namespace

template <typename T>
int consistency_residual(Graph<T>& g, int r_ab, int r_ba) {
    const Tensor<T>& r = g.val(r_ab);
    const int64_t H = r.dim(0), W = r.dim(1);
    const int grid = g.push(make_grid<T>(H, W));
    const int coords = g.add(r_ab, grid);
    const int warped = g.bilinear_sample(r_ba, coords);
    return g.add(r_ab, warped);
}

template <typename T>
Tensor<T> consistency_residual_value(const Tensor<T>& r_ab, const Tensor<T>& r_ba) {
    const int64_t H = r_ab.dim(0), W = r_ab.dim(1);
    Tensor<T> coords = make_grid<T>(H, W);
    for (int64_t i = 0; i < coords.numel(); ++i) coords[i] += r_ab[i];
    Tensor<T> warped = bilinear_sample_fwd(r_ba, coords);
    for (int64_t i = 0; i < warped.numel(); ++i) warped[i] += r_ab[i];
    return warped;
}

template <typename T>
Tensor<uint8_t> consistency_mask(const Tensor<T>& resid, double threshold) {
    const int64_t H = resid.dim(0), W = resid.dim(1);
    Tensor<uint8_t> mask({H, W});
    for (int64_t p = 0; p < H * W; ++p) {
        const double l1 = std::abs(static_cast<double>(resid[p * 2 + 0])) +
                          std::abs(static_cast<double>(resid[p * 2 + 1]));
        mask[p] = l1 <= threshold ? 1 : 0;
    }
    return mask;
}

template <typename T>
int convex_upsample(Graph<T>& g, int field, int logits, int factor) {
    const Tensor<T>& r = g.val(field);
    const Tensor<T>& wl = g.val(logits);
    const int64_t H = r.dim(0), W = r.dim(1), C = r.dim(2);
    const int f = factor;
    MA_CHECK(wl.dim(0) == H && wl.dim(1) == W && wl.dim(2) == 9 * f * f,
             "convex_upsample: bad logits shape");
    Tensor<T> out({H * f, W * f, C});
    const T* rp = r.ptr();
    const T* lp = wl.ptr();
    T* op = out.ptr();
    T sm[9];
    for (int64_t yc = 0; yc < H; ++yc)
        for (int64_t xc = 0; xc < W; ++xc)
            for (int fy = 0; fy < f; ++fy)
                for (int fx = 0; fx < f; ++fx) {
                    const T* lg = lp + (yc * W + xc) * 9 * f * f + (fy * f + fx) * 9;
                    T mx = lg[0];
                    for (int n = 1; n < 9; ++n) mx = std::max(mx, lg[n]);
                    T z = T(0);
                    for (int n = 0; n < 9; ++n) {
                        sm[n] = std::exp(lg[n] - mx);
                        z += sm[n];
                    }
                    for (int n = 0; n < 9; ++n) sm[n] /= z;
                    T* dst = op + ((yc * f + fy) * W * f + (xc * f + fx)) * C;
                    for (int64_t c = 0; c < C; ++c) dst[c] = T(0);
                    for (int n = 0; n < 9; ++n) {
                        const int64_t ny = clamp_idx(yc + n / 3 - 1, H);
                        const int64_t nx = clamp_idx(xc + n % 3 - 1, W);
                        const T* src = rp + (ny * W + nx) * C;
                        const T wgt = static_cast<T>(f) * sm[n];
                        for (int64_t c = 0; c < C; ++c) dst[c] += wgt * src[c];
                    }
                }
    const int y = g.push(std::move(out));
    g.record([field, logits, y, H, W, C, f](Graph<T>& gr) {
        const Tensor<T>& r2 = gr.val(field);
        const Tensor<T>& wl2 = gr.val(logits);
        const Tensor<T>& gy = gr.grad(y);
        Tensor<T>& dr = gr.grad(field);
        Tensor<T>& dl = gr.grad(logits);
        const T* rp2 = r2.ptr();
        const T* lp2 = wl2.ptr();
        T sm2[9], gn[9];
        for (int64_t yc = 0; yc < H; ++yc)
            for (int64_t xc = 0; xc < W; ++xc)
                for (int fy = 0; fy < f; ++fy)
                    for (int fx = 0; fx < f; ++fx) {
                        const T* lg = lp2 + (yc * W + xc) * 9 * f * f + (fy * f + fx) * 9;
                        T mx = lg[0];
                        for (int n = 1; n < 9; ++n) mx = std::max(mx, lg[n]);
                        T z = T(0);
                        for (int n = 0; n < 9; ++n) {
                            sm2[n] = std::exp(lg[n] - mx);
                            z += sm2[n];
                        }
                        for (int n = 0; n < 9; ++n) sm2[n] /= z;
                        const T* gdst =
                            gy.ptr() + ((yc * f + fy) * W * f + (xc * f + fx)) * C;
                        T dot = T(0);
                        for (int n = 0; n < 9; ++n) {
                            const int64_t ny = clamp_idx(yc + n / 3 - 1, H);
                            const int64_t nx = clamp_idx(xc + n % 3 - 1, W);
                            const T* src = rp2 + (ny * W + nx) * C;
                            T* gsrc = dr.ptr() + (ny * W + nx) * C;
                            T acc = T(0);
                            for (int64_t c = 0; c < C; ++c) {
                                acc += gdst[c] * static_cast<T>(f) * src[c];
                                gsrc[c] += static_cast<T>(f) * sm2[n] * gdst[c];
                            }
                            gn[n] = acc;
                            dot += acc * sm2[n];
                        }
                        T* glg = dl.ptr() + (yc * W + xc) * 9 * f * f + (fy * f + fx) * 9;
                        for (int n = 0; n < 9; ++n) glg[n] += sm2[n] * (gn[n] - dot);
                    }
    });
    return y;
}

template <typename T>
void downsample_gt(const Tensor<T>& gt, const Tensor<uint8_t>& valid, int factor,
                   Tensor<T>* gt_s, Tensor<uint8_t>* valid_s) {
    const int64_t H = gt.dim(0), W = gt.dim(1), C = gt.dim(2);
    MA_CHECK(H % factor == 0 && W % factor == 0, "downsample_gt: extent not divisible");
    const int64_t Hs = H / factor, Ws = W / factor;
    *gt_s = Tensor<T>({Hs, Ws, C});
    *valid_s = Tensor<uint8_t>({Hs, Ws});
    for (int64_t ys = 0; ys < Hs; ++ys)
        for (int64_t xs = 0; xs < Ws; ++xs) {
            int64_t cnt = 0;
            std::vector<T> acc(static_cast<size_t>(C), T(0));
            for (int64_t dy = 0; dy < factor; ++dy)
                for (int64_t dx = 0; dx < factor; ++dx) {
                    const int64_t p = (ys * factor + dy) * W + (xs * factor + dx);
                    if (!valid[p]) continue;
                    ++cnt;
                    for (int64_t c = 0; c < C; ++c) acc[static_cast<size_t>(c)] += gt[p * C + c];
                }
            (*valid_s)[ys * Ws + xs] = cnt > 0 ? 1 : 0;
            for (int64_t c = 0; c < C; ++c)
                (*gt_s)[(ys * Ws + xs) * C + c] =
                    cnt > 0 ? acc[static_cast<size_t>(c)] / (static_cast<T>(cnt) *
                                                             static_cast<T>(factor))
                            : T(0);
        }
}

// ---- initial correlation -------------------------------------------------

namespace {

// Dense softmax correlation of every query token against every target token.
template <typename T>
int flow_prob(Graph<T>& g, int a, int b) {
    const Tensor<T>& A = g.val(a);
    const Tensor<T>& B = g.val(b);
    const int64_t H = A.dim(0), W = A.dim(1), c = A.dim(2);
    const int64_t L = B.dim(0) * B.dim(1);
    const T gamma = T(1) / std::sqrt(static_cast<T>(c));
    Tensor<T> P({H, W, L});
    const T* ap = A.ptr();
    const T* bp = B.ptr();
    T* pp = P.ptr();
    std::vector<T> logits(static_cast<size_t>(L));
    for (int64_t q = 0; q < H * W; ++q) {
        const T* av = ap + q * c;
        T mx = std::numeric_limits<T>::lowest();
        for (int64_t t = 0; t < L; ++t) {
            T acc = T(0);
            const T* bv = bp + t * c;
            for (int64_t k = 0; k < c; ++k) acc += av[k] * bv[k];
            logits[static_cast<size_t>(t)] = gamma * acc;
            mx = std::max(mx, logits[static_cast<size_t>(t)]);
        }
        T z = T(0);
        T* pr = pp + q * L;
        for (int64_t t = 0; t < L; ++t) {
            pr[t] = std::exp(logits[static_cast<size_t>(t)] - mx);
            z += pr[t];
        }
        for (int64_t t = 0; t < L; ++t) pr[t] /= z;
    }
    const int y = g.push(std::move(P));
    g.record([a, b, y, H, W, c, L, gamma](Graph<T>& gr) {
        const Tensor<T>& A2 = gr.val(a);
        const Tensor<T>& B2 = gr.val(b);
        const Tensor<T>& P2 = gr.val(y);
        const Tensor<T>& gP = gr.grad(y);
        Tensor<T>& dA = gr.grad(a);
        Tensor<T>& dB = gr.grad(b);
        std::vector<T> dlog(static_cast<size_t>(L));
        for (int64_t q = 0; q < H * W; ++q) {
            const T* pr = P2.ptr() + q * L;
            const T* gpr = gP.ptr() + q * L;
            T dot = T(0);
            for (int64_t t = 0; t < L; ++t) dot += pr[t] * gpr[t];
            for (int64_t t = 0; t < L; ++t) dlog[static_cast<size_t>(t)] = pr[t] * (gpr[t] - dot);
            const T* av = A2.ptr() + q * c;
            T* dav = dA.ptr() + q * c;
            for (int64_t t = 0; t < L; ++t) {
                const T dl = dlog[static_cast<size_t>(t)] * gamma;
                if (dl == T(0)) continue;
                const T* bv = B2.ptr() + t * c;
                T* dbv = dB.ptr() + t * c;
                for (int64_t k = 0; k < c; ++k) {
                    dav[k] += dl * bv[k];
                    dbv[k] += dl * av[k];
                }
            }
        }
    });
    return y;
}

// Expected target position within a k x k window around the peak of the
// box-averaged probabilities. Ties pick the smallest row-major cell.
template <typename T>
int window_expect_2d(Graph<T>& g, int p, int64_t Ht, int64_t Wt, int k) {
    const Tensor<T>& P = g.val(p);
    const int64_t HW = P.dim(0) * P.dim(1);
    const int64_t L = P.dim(2);
    MA_CHECK(L == Ht * Wt, "window_expect_2d: size mismatch");
    const int hk = k / 2;
    Tensor<T> E({P.dim(0), P.dim(1), 2});
    const T* pp = P.ptr();
    std::vector<T> avg(static_cast<size_t>(L));
    for (int64_t q = 0; q < HW; ++q) {
        const T* pr = pp + q * L;
        for (int64_t ty = 0; ty < Ht; ++ty)
            for (int64_t tx = 0; tx < Wt; ++tx) {
                T acc = T(0);
                int cnt = 0;
                for (int64_t wy = std::max<int64_t>(0, ty - hk);
                     wy <= std::min(Ht - 1, ty + hk); ++wy)
                    for (int64_t wx = std::max<int64_t>(0, tx - hk);
                         wx <= std::min(Wt - 1, tx + hk); ++wx) {
                        acc += pr[wy * Wt + wx];
                        ++cnt;
                    }
                avg[static_cast<size_t>(ty * Wt + tx)] = acc / static_cast<T>(cnt);
            }
        int64_t best = 0;
        for (int64_t t = 1; t < L; ++t)
            if (avg[static_cast<size_t>(t)] > avg[static_cast<size_t>(best)]) best = t;
        const int64_t by = best / Wt, bx = best % Wt;
        T s = T(0), ex = T(0), ey = T(0);
        for (int64_t wy = std::max<int64_t>(0, by - hk); wy <= std::min(Ht - 1, by + hk); ++wy)
            for (int64_t wx = std::max<int64_t>(0, bx - hk); wx <= std::min(Wt - 1, bx + hk);
                 ++wx) {
                const T pv = pr[wy * Wt + wx];
                s += pv;
                ex += pv * static_cast<T>(wx);
                ey += pv * static_cast<T>(wy);
            }
        E[q * 2 + 0] = ex / s;
        E[q * 2 + 1] = ey / s;
    }
    const int y = g.push(std::move(E));
    g.record([p, y, Ht, Wt, hk, HW, L](Graph<T>& gr) {
        const Tensor<T>& P2 = gr.val(p);
        const Tensor<T>& E2 = gr.val(y);
        const Tensor<T>& gE = gr.grad(y);
        Tensor<T>& dP = gr.grad(p);
        std::vector<T> avg2(static_cast<size_t>(L));
        for (int64_t q = 0; q < HW; ++q) {
            const T* pr = P2.ptr() + q * L;
            for (int64_t ty = 0; ty < Ht; ++ty)
                for (int64_t tx = 0; tx < Wt; ++tx) {
                    T acc = T(0);
                    int cnt = 0;
                    for (int64_t wy = std::max<int64_t>(0, ty - hk);
                         wy <= std::min(Ht - 1, ty + hk); ++wy)
                        for (int64_t wx = std::max<int64_t>(0, tx - hk);
                             wx <= std::min(Wt - 1, tx + hk); ++wx) {
                            acc += pr[wy * Wt + wx];
                            ++cnt;
                        }
                    avg2[static_cast<size_t>(ty * Wt + tx)] = acc / static_cast<T>(cnt);
                }
            int64_t best = 0;
            for (int64_t t = 1; t < L; ++t)
                if (avg2[static_cast<size_t>(t)] > avg2[static_cast<size_t>(best)]) best = t;
            const int64_t by = best / Wt, bx = best % Wt;
            T s = T(0);
            for (int64_t wy = std::max<int64_t>(0, by - hk); wy <= std::min(Ht - 1, by + hk);
                 ++wy)
                for (int64_t wx = std::max<int64_t>(0, bx - hk);
                     wx <= std::min(Wt - 1, bx + hk); ++wx)
                    s += pr[wy * Wt + wx];
            const T ex = E2[q * 2 + 0], ey = E2[q * 2 + 1];
            const T gx = gE[q * 2 + 0], gy2 = gE[q * 2 + 1];
            T* dpr = dP.ptr() + q * L;
            for (int64_t wy = std::max<int64_t>(0, by - hk); wy <= std::min(Ht - 1, by + hk);
                 ++wy)
                for (int64_t wx = std::max<int64_t>(0, bx - hk);
                     wx <= std::min(Wt - 1, bx + hk); ++wx)
                    dpr[wy * Wt + wx] += (gx * (static_cast<T>(wx) - ex) +
                                          gy2 * (static_cast<T>(wy) - ey)) /
                                         s;
        }
    });
    return y;
}

// Per-row correlation restricted to the epipolar line. sign = +1 correlates
// query x against target x - d (reference view); -1 against x + d.
template <typename T>
int stereo_prob(Graph<T>& g, int a, int b, int sign) {
    const Tensor<T>& A = g.val(a);
    const Tensor<T>& B = g.val(b);
    const int64_t H = A.dim(0), W = A.dim(1), c = A.dim(2);
    const int64_t D = W;
    const T gamma = T(1) / std::sqrt(static_cast<T>(c));
    Tensor<T> P({H, W, D});
    std::vector<T> logits(static_cast<size_t>(D));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            const int64_t dv = sign > 0 ? x + 1 : W - x;
            const T* av = A.ptr() + (y * W + x) * c;
            T mx = std::numeric_limits<T>::lowest();
            for (int64_t d = 0; d < dv; ++d) {
                const int64_t tx = x - sign * d;
                const T* bv = B.ptr() + (y * W + tx) * c;
                T acc = T(0);
                for (int64_t k = 0; k < c; ++k) acc += av[k] * bv[k];
                logits[static_cast<size_t>(d)] = gamma * acc;
                mx = std::max(mx, logits[static_cast<size_t>(d)]);
            }
            T z = T(0);
            T* pr = P.ptr() + (y * W + x) * D;
            for (int64_t d = 0; d < dv; ++d) {
                pr[d] = std::exp(logits[static_cast<size_t>(d)] - mx);
                z += pr[d];
            }
            for (int64_t d = 0; d < dv; ++d) pr[d] /= z;
        }
    const int out = g.push(std::move(P));
    g.record([a, b, out, H, W, c, D, sign, gamma](Graph<T>& gr) {
        const Tensor<T>& A2 = gr.val(a);
        const Tensor<T>& B2 = gr.val(b);
        const Tensor<T>& P2 = gr.val(out);
        const Tensor<T>& gP = gr.grad(out);
        Tensor<T>& dA = gr.grad(a);
        Tensor<T>& dB = gr.grad(b);
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                const int64_t dv = sign > 0 ? x + 1 : W - x;
                const T* pr = P2.ptr() + (y * W + x) * D;
                const T* gpr = gP.ptr() + (y * W + x) * D;
                T dot = T(0);
                for (int64_t d = 0; d < dv; ++d) dot += pr[d] * gpr[d];
                const T* av = A2.ptr() + (y * W + x) * c;
                T* dav = dA.ptr() + (y * W + x) * c;
                for (int64_t d = 0; d < dv; ++d) {
                    const T dl = pr[d] * (gpr[d] - dot) * gamma;
                    if (dl == T(0)) continue;
                    const int64_t tx = x - sign * d;
                    const T* bv = B2.ptr() + (y * W + tx) * c;
                    T* dbv = dB.ptr() + (y * W + tx) * c;
                    for (int64_t k = 0; k < c; ++k) {
                        dav[k] += dl * bv[k];
                        dbv[k] += dl * av[k];
                    }
                }
            }
    });
    return out;
}

// Expected disparity within a k-wide window around the peak of box-averaged
// per-pixel disparity probabilities.
template <typename T>
int window_expect_1d(Graph<T>& g, int p, int k, int sign) {
    const Tensor<T>& P = g.val(p);
    const int64_t H = P.dim(0), W = P.dim(1), D = P.dim(2);
    const int hk = k / 2;
    Tensor<T> E({H, W, 1});
    std::vector<T> avg(static_cast<size_t>(D));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            const int64_t dv = sign > 0 ? x + 1 : W - x;
            const T* pr = P.ptr() + (y * W + x) * D;
            for (int64_t d = 0; d < dv; ++d) {
                T acc = T(0);
                int cnt = 0;
                for (int64_t wd = std::max<int64_t>(0, d - hk); wd <= std::min(dv - 1, d + hk);
                     ++wd) {
                    acc += pr[wd];
                    ++cnt;
                }
                avg[static_cast<size_t>(d)] = acc / static_cast<T>(cnt);
            }
            int64_t best = 0;
            for (int64_t d = 1; d < dv; ++d)
                if (avg[static_cast<size_t>(d)] > avg[static_cast<size_t>(best)]) best = d;
            T s = T(0), e = T(0);
            for (int64_t wd = std::max<int64_t>(0, best - hk);
                 wd <= std::min(dv - 1, best + hk); ++wd) {
                s += pr[wd];
                e += pr[wd] * static_cast<T>(wd);
            }
            E[(y * W + x)] = e / s;
        }
    const int out = g.push(std::move(E));
    g.record([p, out, H, W, D, hk, sign](Graph<T>& gr) {
        const Tensor<T>& P2 = gr.val(p);
        const Tensor<T>& E2 = gr.val(out);
        const Tensor<T>& gE = gr.grad(out);
        Tensor<T>& dP = gr.grad(p);
        std::vector<T> avg2(static_cast<size_t>(D));
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                const int64_t dv = sign > 0 ? x + 1 : W - x;
                const T* pr = P2.ptr() + (y * W + x) * D;
                for (int64_t d = 0; d < dv; ++d) {
                    T acc = T(0);
                    int cnt = 0;
                    for (int64_t wd = std::max<int64_t>(0, d - hk);
                         wd <= std::min(dv - 1, d + hk); ++wd) {
                        acc += pr[wd];
                        ++cnt;
                    }
                    avg2[static_cast<size_t>(d)] = acc / static_cast<T>(cnt);
                }
                int64_t best = 0;
                for (int64_t d = 1; d < dv; ++d)
                    if (avg2[static_cast<size_t>(d)] > avg2[static_cast<size_t>(best)]) best = d;
                T s = T(0);
                for (int64_t wd = std::max<int64_t>(0, best - hk);
                     wd <= std::min(dv - 1, best + hk); ++wd)
                    s += pr[wd];
                const T ev = E2[y * W + x];
                const T ge = gE[y * W + x];
                T* dpr = dP.ptr() + (y * W + x) * D;
                for (int64_t wd = std::max<int64_t>(0, best - hk);
                     wd <= std::min(dv - 1, best + hk); ++wd)
                    dpr[wd] += ge * (static_cast<T>(wd) - ev) / s;
            }
    });
    return out;
}

// Cross entropy between the disparity probability volume and a two-bin
// interpolation of the ground truth, averaged over valid pixels.
template <typename T>
int ce_init_loss(Graph<T>& g, int p, Tensor<T> target_d, Tensor<uint8_t> valid, int sign) {
    const Tensor<T>& P = g.val(p);
    const int64_t H = P.dim(0), W = P.dim(1), D = P.dim(2);
    int64_t count = 0;
    for (int64_t i = 0; i < valid.numel(); ++i) count += valid[i] ? 1 : 0;
    const T denom = static_cast<T>(count > 0 ? count : 1);
    double acc = 0;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            if (!valid[y * W + x]) continue;
            const int64_t dv = sign > 0 ? x + 1 : W - x;
            const T* pr = P.ptr() + (y * W + x) * D;
            double d = std::clamp(static_cast<double>(target_d[y * W + x]), 0.0,
                                  static_cast<double>(dv - 1));
            const int64_t d0 = static_cast<int64_t>(std::floor(d));
            const int64_t d1 = std::min(d0 + 1, dv - 1);
            const double frac = d1 > d0 ? d - static_cast<double>(d0) : 0.0;
            acc -= (1.0 - frac) * std::log(std::max(static_cast<double>(pr[d0]), 1e-30));
            if (frac > 0) acc -= frac * std::log(std::max(static_cast<double>(pr[d1]), 1e-30));
        }
    Tensor<T> loss({1});
    loss[0] = static_cast<T>(acc) / denom;
    const int out = g.push(std::move(loss));
    g.record([p, out, td = std::move(target_d), vm = std::move(valid), H, W, D, sign,
              denom](Graph<T>& gr) {
        const T gy = gr.grad(out)[0] / denom;
        const Tensor<T>& P2 = gr.val(p);
        Tensor<T>& dP = gr.grad(p);
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                if (!vm[y * W + x]) continue;
                const int64_t dv = sign > 0 ? x + 1 : W - x;
                const T* pr = P2.ptr() + (y * W + x) * D;
                T* dpr = dP.ptr() + (y * W + x) * D;
                double d = std::clamp(static_cast<double>(td[y * W + x]), 0.0,
                                      static_cast<double>(dv - 1));
                const int64_t d0 = static_cast<int64_t>(std::floor(d));
                const int64_t d1 = std::min(d0 + 1, dv - 1);
                const double frac = d1 > d0 ? d - static_cast<double>(d0) : 0.0;
                if (pr[d0] > T(1e-30))
                    dpr[d0] -= gy * static_cast<T>(1.0 - frac) / pr[d0];
                if (frac > 0 && pr[d1] > T(1e-30))
                    dpr[d1] -= gy * static_cast<T>(frac) / pr[d1];
            }
    });
    return out;
}

}  // namespace

template <typename T>
int initial_flow(Graph<T>& g, int fq, int fkv, int k) {
    const int64_t H = g.val(fq).dim(0), W = g.val(fq).dim(1);
    const int p = flow_prob(g, fq, fkv);
    const int e = window_expect_2d(g, p, H, W, k);
    return g.sub(e, g.push(make_grid<T>(H, W)));
}

template <typename T>
std::pair<int, int> initial_stereo(Graph<T>& g, int fq, int fkv, int k, int view) {
    MA_CHECK(view == 0 || view == 1, "initial_stereo: view must be 0 or 1");
    const int64_t H = g.val(fq).dim(0), W = g.val(fq).dim(1);
    const int sign = view == 0 ? +1 : -1;
    const int p = stereo_prob(g, fq, fkv, sign);
    const int e = window_expect_1d(g, p, k, sign);
    const int zeros = g.push(Tensor<T>({H, W, 1}));
    const int r = view == 0 ? g.concat_last({g.scale(e, T(-1)), zeros})
                            : g.concat_last({e, zeros});
    return {r, p};
}

// ---- construction ---------------------------------------------------------

template <typename T>
MatchDecoder<T>::MatchDecoder(const DecoderConfig& cfg, uint64_t seed) : cfg_(cfg) {
    for (int s = 0; s < 4; ++s)
        MA_CHECK(cfg.channels[static_cast<size_t>(s)] % cfg.heads == 0,
                 "channels must divide heads");
    Rng rng(seed);
    auto add_linear = [&](const std::string& name, int64_t ci, int64_t co, bool bias) {
        Tensor<T> w({ci, co});
        fill_uniform(w, rng, -1.0 / std::sqrt(static_cast<double>(ci)),
                     1.0 / std::sqrt(static_cast<double>(ci)));
        params_.add(name + ".w", std::move(w));
        if (bias) params_.add(name + ".b", Tensor<T>({co}));
    };
    auto add_conv = [&](const std::string& name, int64_t co, int64_t kh, int64_t kw,
                        int64_t cig, bool bias) {
        Tensor<T> w({co, kh, kw, cig});
        const double bound = 1.0 / std::sqrt(static_cast<double>(kh * kw * cig));
        fill_uniform(w, rng, -bound, bound);
        params_.add(name + ".w", std::move(w));
        if (bias) params_.add(name + ".b", Tensor<T>({co}));
    };
    auto add_ln = [&](const std::string& name, int64_t c) {
        params_.add(name + ".g", Tensor<T>({c}, T(1)));
        params_.add(name + ".b", Tensor<T>({c}));
    };

    // encoder
    for (int s = 0; s < 4; ++s) {
        const int64_t c = cfg.channels[static_cast<size_t>(s)];
        const int64_t cin = s == 0 ? cfg.in_ch : cfg.channels[static_cast<size_t>(s) - 1];
        const int64_t k = s == 0 ? 4 : 2;
        const std::string st = "enc.s" + std::to_string(s);
        add_conv(st + ".down", c, k, k, cin, true);
        for (int i = 0; i < cfg.enc_depths[static_cast<size_t>(s)]; ++i) {
            const std::string bl = st + ".blk" + std::to_string(i);
            add_ln(bl + ".ln1", c);
            add_conv(bl + ".dw", c, 3, 3, 1, true);
            add_linear(bl + ".pw", c, c, true);
            add_ln(bl + ".ln2", c);
            add_linear(bl + ".fc1", c, cfg.mlp_ratio * c, true);
            add_linear(bl + ".fc2", cfg.mlp_ratio * c, c, true);
        }
    }

    // initial correlation projections at the coarsest scale
    {
        const int64_t c = cfg.channels[3];
        add_ln("init.ln", c);
        add_linear("init.pa", c, c, true);
        add_linear("init.pb", c, c, true);
    }

    // decoder blocks
    const int h = cfg.heads;
    for (int s = 3; s >= 0; --s) {
        const int64_t c = cfg.channels[static_cast<size_t>(s)];
        const int64_t chead = c / h;
        const int w = cfg.windows[static_cast<size_t>(s)];
        const int64_t e2 = static_cast<int64_t>(w + 1) * (w + 1);
        for (int i = 0; i < cfg.dec_depths[static_cast<size_t>(s)]; ++i) {
            const std::string bl = "dec.s" + std::to_string(s) + ".b" + std::to_string(i);
            const int64_t cin_self = c + 2 + 2 * h + 1;
            add_ln(bl + ".self.ln", cin_self);
            params_.add(bl + ".self.beta", Tensor<T>({2}, static_cast<T>(cfg.beta_init)));
            add_linear(bl + ".self.wq", cin_self, h * chead, false);
            add_linear(bl + ".self.wk", cin_self, h * chead, false);
            add_linear(bl + ".self.wv", cin_self, h * chead, false);
            add_linear(bl + ".self.wp", h * chead, c + 2 * h, false);
            const int64_t cin_cross = c + 2;
            add_ln(bl + ".cross.ln", cin_cross);
            params_.add(bl + ".cross.beta", Tensor<T>({2}, static_cast<T>(cfg.beta_init)));
            add_linear(bl + ".cross.wq", cin_cross, h * chead, false);
            add_linear(bl + ".cross.wk", cin_cross, h * chead, false);
            add_linear(bl + ".cross.wv", cin_cross, h * chead, false);
            add_linear(bl + ".cross.wg", cin_cross, h * chead, false);
            add_linear(bl + ".cross.wp", h * chead + h * e2, c + 2, false);
            add_ln(bl + ".glu.ln", c);
            add_linear(bl + ".glu.wa", c, cfg.glu_ratio * c, false);
            add_linear(bl + ".glu.wb", c, cfg.glu_ratio * c, false);
            add_conv(bl + ".glu.dw", cfg.glu_ratio * c, 3, 3, 1, false);
            add_linear(bl + ".glu.wout", cfg.glu_ratio * c, c, false);
        }
        // upsampling head; s=0 upsamples to full resolution with factor 4
        const int f = s == 0 ? 4 : 2;
        const std::string uh = "uphead.s" + std::to_string(s);
        add_conv(uh + ".c1", 2 * c, 3, 3, c, true);
        add_linear(uh + ".c2", 2 * c, 9 * f * f, true);
        if (s > 0) {
            const int64_t cf = cfg.channels[static_cast<size_t>(s) - 1];
            const std::string up = "up.s" + std::to_string(s);
            Tensor<T> w({2, 2, c, cf});
            fill_uniform(w, rng, -1.0 / std::sqrt(static_cast<double>(c)),
                         1.0 / std::sqrt(static_cast<double>(c)));
            params_.add(up + ".ct.w", std::move(w));
            params_.add(up + ".ct.b", Tensor<T>({cf}));
            add_linear(up + ".mix", 2 * cf, cf, true);
        }
    }
}

// ---- forward ---------------------------------------------------------------

template <typename T>
ForwardResult MatchDecoder<T>::forward(Graph<T>& g, const Tensor<T>& img0,
                                       const Tensor<T>& img1, const GtPack<T>* gt,
                                       const LossOpts& opts) const {
    MA_CHECK(img0.rank() == 3 && img0.same_shape(img1), "forward: bad image shapes");
    const int64_t H = img0.dim(0), W = img0.dim(1);
    MA_CHECK(H % 32 == 0 && W % 32 == 0, "forward: extents must be divisible by 32");
    MA_CHECK(img0.dim(2) == cfg_.in_ch, "forward: bad channel count");

    ForwardResult out;
    // parameters become graph leaves; map name -> var id
    std::unordered_map<std::string, int> pv;
    out.param_vars.reserve(params_.entries.size());
    for (const auto& e : params_.entries) {
        const int id = g.push(e.value);
        pv[e.name] = id;
        out.param_vars.push_back(id);
    }
    auto P = [&](const std::string& n) {
        auto it = pv.find(n);
        MA_CHECK(it != pv.end(), "missing parameter " + n);
        return it->second;
    };

    // encoder, shared weights across views
    auto encode = [&](int x) {
        std::array<int, 4> feats{};
        for (int s = 0; s < 4; ++s) {
            const std::string st = "enc.s" + std::to_string(s);
            const int k = s == 0 ? 4 : 2;
            x = g.conv2d(x, P(st + ".down.w"), P(st + ".down.b"), k, 0, 1);
            const int64_t c = cfg_.channels[static_cast<size_t>(s)];
            for (int i = 0; i < cfg_.enc_depths[static_cast<size_t>(s)]; ++i) {
                const std::string bl = st + ".blk" + std::to_string(i);
                int y = g.layer_norm(x, P(bl + ".ln1.g"), P(bl + ".ln1.b"));
                y = g.conv2d(y, P(bl + ".dw.w"), P(bl + ".dw.b"), 1, 1, static_cast<int>(c));
                y = g.linear(y, P(bl + ".pw.w"), P(bl + ".pw.b"));
                x = g.add(x, y);
                int z = g.layer_norm(x, P(bl + ".ln2.g"), P(bl + ".ln2.b"));
                z = g.linear(z, P(bl + ".fc1.w"), P(bl + ".fc1.b"));
                z = g.gelu(z);
                z = g.linear(z, P(bl + ".fc2.w"), P(bl + ".fc2.b"));
                x = g.add(x, z);
            }
            feats[static_cast<size_t>(s)] = x;
        }
        return feats;
    };
    const int img0v = g.push(img0);
    const int img1v = g.push(img1);
    const auto feats0 = encode(img0v);
    const auto feats1 = encode(img1v);

    // ground truth pyramid (constants)
    struct GtLevel {
        int gt0 = -1, gt1 = -1;
        Tensor<uint8_t> valid0, valid1;
    };
    // Only the coarsest level feeds the initial loss; every other term
    // compares upsampled predictions against the full-resolution gt.
    std::array<GtLevel, 5> gtl;  // [3] = 1/32 scale, [4] = full resolution
    if (gt) {
        Tensor<T> g0, g1;
        Tensor<uint8_t> v0, v1;
        downsample_gt(gt->gt0, gt->valid0, 32, &g0, &v0);
        downsample_gt(gt->gt1, gt->valid1, 32, &g1, &v1);
        gtl[3] = {g.push(std::move(g0)), g.push(std::move(g1)), std::move(v0), std::move(v1)};
        gtl[4] = {g.push(gt->gt0), g.push(gt->gt1), gt->valid0, gt->valid1};
    }

    // initial correlation at 1/32
    const int64_t H3 = H / 32, W3 = W / 32;
    int r0 = -1, r1 = -1;
    std::vector<int> init_terms;
    {
        const int n0 = g.layer_norm(feats0[3], P("init.ln.g"), P("init.ln.b"));
        const int n1 = g.layer_norm(feats1[3], P("init.ln.g"), P("init.ln.b"));
        const int a0 = g.linear(n0, P("init.pa.w"), P("init.pa.b"));
        const int b0 = g.linear(n0, P("init.pb.w"), P("init.pb.b"));
        const int a1 = g.linear(n1, P("init.pa.w"), P("init.pa.b"));
        const int b1 = g.linear(n1, P("init.pb.w"), P("init.pb.b"));
        if (cfg_.task == Task::Stereo) {
            const auto [ir0, p0] = initial_stereo(g, a0, b1, cfg_.k_init, 0);
            const auto [ir1, p1] = initial_stereo(g, a1, b0, cfg_.k_init, 1);
            (void)p1;
            r0 = ir0;
            r1 = ir1;
            if (gt && opts.init) {
                // supervision uses the reference view only; target is disparity
                Tensor<T> d0({H3, W3});
                const Tensor<T>& gt0s = g.val(gtl[3].gt0);
                for (int64_t i = 0; i < H3 * W3; ++i) d0[i] = -gt0s[i * 2 + 0];
                init_terms.push_back(ce_init_loss(g, p0, std::move(d0), gtl[3].valid0, +1));
            }
        } else {
            r0 = initial_flow(g, a0, b1, cfg_.k_init);
            r1 = initial_flow(g, a1, b0, cfg_.k_init);
            if (gt && opts.init)
                init_terms.push_back(
                    g.masked_l1_mean(g.sub(r0, gtl[3].gt0), gtl[3].valid0));
        }
    }
    out.r_init0 = r0;
    out.r_init1 = r1;

    const int h = cfg_.heads;
    int f0 = feats0[3], f1 = feats1[3];
    int sr0 = g.push(Tensor<T>({H3, W3, 2 * h}));
    int sr1 = g.push(Tensor<T>({H3, W3, 2 * h}));
    Tensor<uint8_t> mask0({H3, W3}, 1), mask1({H3, W3}, 1);

    // Supervision comes from the reference view only; the target view learns
    // through weight sharing and the consistency residual.
    std::vector<int> self_terms;
    struct CrossTerm {
        int l1 = -1, cons = -1;
    };
    std::vector<CrossTerm> cross_terms;

    auto record_self_loss = [&](int rv0, int level) {
        if (!gt || !opts.self) return;
        const int factor = level == -1 ? 1 : 4 << level;
        const int rf = upsample_field(g, rv0, factor);
        const int term = g.masked_l1_mean(g.sub(rf, gtl[4].gt0), gtl[4].valid0);
        self_terms.push_back(term);
        out.records.back().loss_self = term;
    };

    for (int s = 3; s >= 0; --s) {
        const int64_t c = cfg_.channels[static_cast<size_t>(s)];
        const int64_t Hs = H / (4ll << s), Ws = W / (4ll << s);
        const int w = cfg_.windows[static_cast<size_t>(s)];
        const int64_t chead = c / h;
        for (int i = 0; i < cfg_.dec_depths[static_cast<size_t>(s)]; ++i) {
            const std::string bl = "dec.s" + std::to_string(s) + ".b" + std::to_string(i);
            // self attention: query and key/value share the view
            {
                AttnLayerCfg lc;
                lc.H = Hs;
                lc.W = Ws;
                lc.heads = h;
                lc.ck = static_cast<int>(chead);
                lc.cv = static_cast<int>(chead);
                lc.w = w;
                lc.sim = cfg_.sim;
                lc.gated = false;
                lc.inject = false;
                lc.rpos_per_head = true;
                lc.c_out = static_cast<int>(c);
                lc.delta_ch = 2 * h;
                AttnLayerVars lv;
                lv.wq = P(bl + ".self.wq.w");
                lv.wk = P(bl + ".self.wk.w");
                lv.wv = P(bl + ".self.wv.w");
                lv.wp = P(bl + ".self.wp.w");
                const int beta = P(bl + ".self.beta");
                const int m0c = g.push(mask_to_channel<T>(mask0));
                const int m1c = g.push(mask_to_channel<T>(mask1));
                const int x0 = g.concat_last({f0, g.channel_scale(r0, beta), sr0, m0c});
                const int x1 = g.concat_last({f1, g.channel_scale(r1, beta), sr1, m1c});
                const int x0n = g.layer_norm(x0, P(bl + ".self.ln.g"), P(bl + ".self.ln.b"));
                const int x1n = g.layer_norm(x1, P(bl + ".self.ln.g"), P(bl + ".self.ln.b"));
                const AttnLayerOut o0 = match_attention(g, x0n, x0n, sr0, lc, lv);
                const AttnLayerOut o1 = match_attention(g, x1n, x1n, sr1, lc, lv);
                f0 = g.add(f0, o0.df);
                f1 = g.add(f1, o1.df);
                sr0 = g.add(sr0, o0.dr);
                sr1 = g.add(sr1, o1.dr);
                StepRecord rec;
                rec.kind = StepRecord::Self;
                rec.scale = s;
                rec.r0 = r0;
                rec.r1 = r1;
                rec.attn0 = o0.attn;
                rec.attn1 = o1.attn;
                out.records.push_back(rec);
                record_self_loss(r0, s);
            }
            // cross attention between the views
            {
                AttnLayerCfg lc;
                lc.H = Hs;
                lc.W = Ws;
                lc.heads = h;
                lc.ck = static_cast<int>(chead);
                lc.cv = static_cast<int>(chead);
                lc.w = w;
                lc.sim = cfg_.sim;
                lc.gated = true;
                lc.inject = true;
                lc.rpos_per_head = false;
                lc.c_out = static_cast<int>(c);
                lc.delta_ch = 2;
                AttnLayerVars lv;
                lv.wq = P(bl + ".cross.wq.w");
                lv.wk = P(bl + ".cross.wk.w");
                lv.wv = P(bl + ".cross.wv.w");
                lv.wg = P(bl + ".cross.wg.w");
                lv.wp = P(bl + ".cross.wp.w");
                const int beta = P(bl + ".cross.beta");
                const int x0 = g.concat_last({f0, g.channel_scale(r0, beta)});
                const int x1 = g.concat_last({f1, g.channel_scale(r1, beta)});
                const int x0n = g.layer_norm(x0, P(bl + ".cross.ln.g"), P(bl + ".cross.ln.b"));
                const int x1n = g.layer_norm(x1, P(bl + ".cross.ln.g"), P(bl + ".cross.ln.b"));
                const AttnLayerOut o0 = match_attention(g, x0n, x1n, r0, lc, lv);
                const AttnLayerOut o1 = match_attention(g, x1n, x0n, r1, lc, lv);
                f0 = g.add(f0, o0.df);
                f1 = g.add(f1, o1.df);
                r0 = g.add(r0, o0.dr);
                r1 = g.add(r1, o1.dr);
                const int resid0 = consistency_residual(g, r0, r1);
                const int resid1 = consistency_residual(g, r1, r0);
                mask0 = consistency_mask(g.val(resid0), cfg_.threshold_a);
                mask1 = consistency_mask(g.val(resid1), cfg_.threshold_a);
                StepRecord rec;
                rec.kind = StepRecord::Cross;
                rec.scale = s;
                rec.r0 = r0;
                rec.r1 = r1;
                rec.attn0 = o0.attn;
                rec.attn1 = o1.attn;
                rec.resid0 = resid0;
                rec.resid1 = resid1;
                rec.mask0 = mask0;
                rec.mask1 = mask1;
                out.records.push_back(rec);
                if (gt && (opts.cross_l1 || opts.cross_consistency)) {
                    CrossTerm ct;
                    if (opts.cross_l1) {
                        // full-resolution L1, reading gt only where this
                        // layer's upsampled mask admits the pixel
                        const int factor = 4 << s;
                        const Tensor<uint8_t> sel =
                            and_mask(gtl[4].valid0, upsample_mask_nearest(mask0, factor));
                        const int rf = upsample_field(g, r0, factor);
                        ct.l1 = g.masked_l1_mean(g.sub(rf, gtl[4].gt0), sel);
                        out.records.back().sel0 = sel;
                    }
                    if (opts.cross_consistency)
                        ct.cons = g.masked_l1_mean(resid0, mask0);
                    cross_terms.push_back(ct);
                    out.records.back().loss_l1 = ct.l1;
                    out.records.back().loss_cons = ct.cons;
                }
            }
            // feed-forward
            {
                const std::string gl = bl + ".glu.";
                ConvGluVars gv;
                gv.wa = P(gl + "wa.w");
                gv.wb = P(gl + "wb.w");
                gv.wdw = P(gl + "dw.w");
                gv.wout = P(gl + "wout.w");
                const int n0 = g.layer_norm(f0, P(gl + "ln.g"), P(gl + "ln.b"));
                const int n1 = g.layer_norm(f1, P(gl + "ln.g"), P(gl + "ln.b"));
                f0 = g.add(f0, conv_glu(g, n0, gv));
                f1 = g.add(f1, conv_glu(g, n1, gv));
            }
        }
        // upsample to the next scale (or to full resolution from scale 0)
        {
            const int f = s == 0 ? 4 : 2;
            const std::string uh = "uphead.s" + std::to_string(s);
            auto head = [&](int feat) {
                int y = g.conv2d(feat, P(uh + ".c1.w"), P(uh + ".c1.b"), 1, 1, 1);
                y = g.gelu(y);
                return g.linear(y, P(uh + ".c2.w"), P(uh + ".c2.b"));
            };
            const int wl0 = head(f0);
            const int wl1 = head(f1);
            r0 = convex_upsample(g, r0, wl0, f);
            r1 = convex_upsample(g, r1, wl1, f);
            sr0 = convex_upsample(g, sr0, wl0, f);
            sr1 = convex_upsample(g, sr1, wl1, f);
            StepRecord rec;
            rec.kind = StepRecord::Upsample;
            rec.scale = s == 0 ? -1 : s - 1;
            rec.r0 = r0;
            rec.r1 = r1;
            out.records.push_back(rec);
            record_self_loss(r0, rec.scale);
            if (s > 0) {
                const std::string up = "up.s" + std::to_string(s);
                auto upconv = [&](int feat, int skip) {
                    int y = g.conv_transpose2x2(feat, P(up + ".ct.w"), P(up + ".ct.b"));
                    y = g.concat_last({y, skip});
                    return g.linear(y, P(up + ".mix.w"), P(up + ".mix.b"));
                };
                f0 = upconv(f0, feats0[static_cast<size_t>(s) - 1]);
                f1 = upconv(f1, feats1[static_cast<size_t>(s) - 1]);
                // refresh the running masks at the new scale
                mask0 = consistency_mask(consistency_residual_value(g.val(r0), g.val(r1)),
                                         cfg_.threshold_a);
                mask1 = consistency_mask(consistency_residual_value(g.val(r1), g.val(r0)),
                                         cfg_.threshold_a);
            }
        }
    }
    out.r_full0 = r0;
    out.r_full1 = r1;
    out.sr_full0 = sr0;
    out.sr_full1 = sr1;

    // losses: later layers are discounted less
    if (gt) {
        const T gamma = static_cast<T>(cfg_.gamma_loss);
        std::vector<int> parts;
        std::vector<T> coefs;
        if (!init_terms.empty()) {
            std::vector<T> ones(init_terms.size(), T(1));
            out.l_init = g.weighted_sum(init_terms, ones);
            parts.push_back(out.l_init);
            coefs.push_back(T(1));
        }
        if (!self_terms.empty()) {
            const int ns = static_cast<int>(self_terms.size());
            std::vector<T> cs;
            for (int l = 0; l < ns; ++l)
                cs.push_back(static_cast<T>(std::pow(static_cast<double>(gamma), ns - 1 - l)));
            out.l_self = g.weighted_sum(self_terms, cs);
            parts.push_back(out.l_self);
            coefs.push_back(T(1));
        }
        if (!cross_terms.empty()) {
            const int nc = static_cast<int>(cross_terms.size());
            std::vector<int> xs;
            std::vector<T> cs;
            const T eps = static_cast<T>(cfg_.eps_consistency);
            for (int l = 0; l < nc; ++l) {
                const T wgt = static_cast<T>(std::pow(static_cast<double>(gamma), nc - 1 - l));
                const auto& ct = cross_terms[static_cast<size_t>(l)];
                if (ct.l1 >= 0) {
                    xs.push_back(ct.l1);
                    cs.push_back(wgt);
                }
                if (ct.cons >= 0) {
                    xs.push_back(ct.cons);
                    cs.push_back(wgt * eps);
                }
            }
            if (!xs.empty()) {
                out.l_cross = g.weighted_sum(xs, cs);
                parts.push_back(out.l_cross);
                coefs.push_back(T(1));
            }
        }
        if (!parts.empty()) out.loss = g.weighted_sum(parts, coefs);
    }
    return out;
}

// ---- persistence -----------------------------------------------------------

namespace {

std::vector<float> pack_config(const DecoderConfig& c) {
    std::vector<float> v;
    v.push_back(c.task == Task::Stereo ? 0.f : 1.f);
    v.push_back(c.sim == Similarity::Dot ? 0.f : 1.f);
    v.push_back(static_cast<float>(c.in_ch));
    v.push_back(static_cast<float>(c.heads));
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<float>(c.channels[static_cast<size_t>(i)]));
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<float>(c.enc_depths[static_cast<size_t>(i)]));
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<float>(c.dec_depths[static_cast<size_t>(i)]));
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<float>(c.windows[static_cast<size_t>(i)]));
    v.push_back(static_cast<float>(c.mlp_ratio));
    v.push_back(static_cast<float>(c.glu_ratio));
    v.push_back(static_cast<float>(c.k_init));
    v.push_back(static_cast<float>(c.threshold_a));
    v.push_back(static_cast<float>(c.eps_consistency));
    v.push_back(static_cast<float>(c.gamma_loss));
    v.push_back(static_cast<float>(c.beta_init));
    return v;
}

DecoderConfig unpack_config(const Tensor<float>& t) {
    MA_CHECK(t.numel() == 27, "bad checkpoint config record");
    DecoderConfig c;
    size_t i = 0;
    c.task = t[i++] == 0.f ? Task::Stereo : Task::Flow;
    c.sim = t[i++] == 0.f ? Similarity::Dot : Similarity::NegL1;
    c.in_ch = static_cast<int>(t[i++]);
    c.heads = static_cast<int>(t[i++]);
    for (int j = 0; j < 4; ++j) c.channels[static_cast<size_t>(j)] = static_cast<int>(t[i++]);
    for (int j = 0; j < 4; ++j) c.enc_depths[static_cast<size_t>(j)] = static_cast<int>(t[i++]);
    for (int j = 0; j < 4; ++j) c.dec_depths[static_cast<size_t>(j)] = static_cast<int>(t[i++]);
    for (int j = 0; j < 4; ++j) c.windows[static_cast<size_t>(j)] = static_cast<int>(t[i++]);
    c.mlp_ratio = static_cast<int>(t[i++]);
    c.glu_ratio = static_cast<int>(t[i++]);
    c.k_init = static_cast<int>(t[i++]);
    c.threshold_a = t[i++];
    c.eps_consistency = t[i++];
    c.gamma_loss = t[i++];
    c.beta_init = t[i++];
    return c;
}

}  // namespace

template <typename T>
void MatchDecoder<T>::save(const std::string& path) const {
    NamedTensors bundle;
    std::vector<float> cf = pack_config(cfg_);
    Tensor<float> ct({static_cast<int64_t>(cf.size())});
    for (size_t i = 0; i < cf.size(); ++i) ct[static_cast<int64_t>(i)] = cf[i];
    bundle.items.emplace_back("__config__", std::move(ct));
    for (const auto& e : params_.entries)
        bundle.items.emplace_back(e.name, e.value.template cast<float>());
    write_mtn_bundle(path, bundle);
}

template <typename T>
MatchDecoder<T> MatchDecoder<T>::load(const std::string& path) {
    NamedTensors bundle = read_mtn_bundle(path);
    MA_CHECK(!bundle.items.empty() && bundle.items[0].first == "__config__",
             "checkpoint missing config record");
    MatchDecoder dec;
    dec.cfg_ = unpack_config(bundle.items[0].second);
    for (size_t i = 1; i < bundle.items.size(); ++i)
        dec.params_.add(bundle.items[i].first, bundle.items[i].second.template cast<T>());
    return dec;
}

#define MA_INSTANTIATE_DECODER(T)                                                           \
    template class MatchDecoder<T>;                                                        \
    template int consistency_residual<T>(Graph<T>&, int, int);                             \
    template Tensor<uint8_t> consistency_mask<T>(const Tensor<T>&, double);                \
    template Tensor<T> consistency_residual_value<T>(const Tensor<T>&, const Tensor<T>&);  \
    template int convex_upsample<T>(Graph<T>&, int, int, int);                             \
    template void downsample_gt<T>(const Tensor<T>&, const Tensor<uint8_t>&, int,          \
                                   Tensor<T>*, Tensor<uint8_t>*);                          \
    template int initial_flow<T>(Graph<T>&, int, int, int);                                \
    template std::pair<int, int> initial_stereo<T>(Graph<T>&, int, int, int, int);

MA_INSTANTIATE_DECODER(float)
MA_INSTANTIATE_DECODER(double)

}  // namespace matchattn
