#include "matchattn/bilinear_softmax.hpp"

#include <algorithm>
#include <cmath>

#include "matchattn/ops.hpp"

namespace matchattn {

namespace {

// Resolves which sub-windows participate and their redistributed weights.
// Returns false in eff[t] for dropped sub-windows. m[t] is the max entry.
template <typename T>
void resolve_subwindows(int w, const T* sim, T fx, T fy, const bool* alive,
                        bool eff[4], T m[4], T bw[4]) {
    const int e = w + 1;
    const std::array<T, 4> b = bilinear_corner_weights(fx, fy);
    int n_alive = 0;
    for (int t = 0; t < 4; ++t) {
        const int oy = t >> 1, ox = t & 1;
        T mt = kMaskedSim<T>;
        if (!alive || alive[t]) {
            for (int r = 0; r < w; ++r) {
                const T* row = sim + (oy + r) * e + ox;
                for (int c = 0; c < w; ++c) mt = std::max(mt, row[c]);
            }
        }
        m[t] = mt;
        eff[t] = (!alive || alive[t]) && mt > kMaskedSim<T>;
        if (eff[t]) ++n_alive;
    }
    MA_CHECK(n_alive > 0, "bilinear_softmax: all sub-windows masked");
    if (n_alive == 4) {
        for (int t = 0; t < 4; ++t) bw[t] = b[t];
        return;
    }
    T s = T(0);
    for (int t = 0; t < 4; ++t)
        if (eff[t]) s += b[t];
    for (int t = 0; t < 4; ++t) {
        if (!eff[t])
            bw[t] = T(0);
        else
            bw[t] = s > T(0) ? b[t] / s : T(1) / static_cast<T>(n_alive);
    }
}

}  // namespace

template <typename T>
void bilinear_softmax_fwd(int w, const T* sim, T fx, T fy, const bool* alive, T* out) {
    const int e = w + 1;
    bool eff[4];
    T m[4], bw[4];
    resolve_subwindows(w, sim, fx, fy, alive, eff, m, bw);
    std::fill(out, out + e * e, T(0));
    for (int t = 0; t < 4; ++t) {
        if (!eff[t] || bw[t] == T(0)) continue;
        const int oy = t >> 1, ox = t & 1;
        T z = T(0);
        for (int r = 0; r < w; ++r) {
            const T* row = sim + (oy + r) * e + ox;
            for (int c = 0; c < w; ++c) z += std::exp(row[c] - m[t]);
        }
        const T scale = bw[t] / z;
        for (int r = 0; r < w; ++r) {
            const T* row = sim + (oy + r) * e + ox;
            T* orow = out + (oy + r) * e + ox;
            for (int c = 0; c < w; ++c) orow[c] += scale * std::exp(row[c] - m[t]);
        }
    }
}

template <typename T>
void bilinear_softmax_bwd(int w, const T* sim, T fx, T fy, const bool* alive,
                          const T* dout, T* dsim, T* dfx, T* dfy) {
    const int e = w + 1;
    bool eff[4];
    T m[4], bw[4];
    resolve_subwindows(w, sim, fx, fy, alive, eff, m, bw);
    int n_alive = 0;
    for (int t = 0; t < 4; ++t) n_alive += eff[t] ? 1 : 0;

    // g[t] = sum_j dout_j * alpha_t(j) is both the softmax-jacobian pivot and
    // the gradient with respect to the (redistributed) corner weight.
    T g[4] = {T(0), T(0), T(0), T(0)};
    for (int t = 0; t < 4; ++t) {
        if (!eff[t]) continue;
        const int oy = t >> 1, ox = t & 1;
        T z = T(0);
        for (int r = 0; r < w; ++r) {
            const T* row = sim + (oy + r) * e + ox;
            for (int c = 0; c < w; ++c) z += std::exp(row[c] - m[t]);
        }
        T gt = T(0);
        for (int r = 0; r < w; ++r) {
            const T* row = sim + (oy + r) * e + ox;
            const T* orow = dout + (oy + r) * e + ox;
            for (int c = 0; c < w; ++c) gt += orow[c] * std::exp(row[c] - m[t]) / z;
        }
        g[t] = gt;
        if (bw[t] != T(0)) {
            for (int r = 0; r < w; ++r) {
                const T* row = sim + (oy + r) * e + ox;
                const T* orow = dout + (oy + r) * e + ox;
                T* drow = dsim + (oy + r) * e + ox;
                for (int c = 0; c < w; ++c) {
                    const T a = std::exp(row[c] - m[t]) / z;
                    drow[c] += bw[t] * a * (orow[c] - gt);
                }
            }
        }
    }

    // Chain through the corner weights to frac.
    const std::array<T, 4> b = bilinear_corner_weights(fx, fy);
    T db[4] = {T(0), T(0), T(0), T(0)};
    if (n_alive == 4) {
        for (int t = 0; t < 4; ++t) db[t] = g[t];
    } else {
        T s = T(0);
        for (int t = 0; t < 4; ++t)
            if (eff[t]) s += b[t];
        if (s > T(0)) {
            T dot = T(0);
            for (int t = 0; t < 4; ++t)
                if (eff[t]) dot += g[t] * b[t];
            for (int t = 0; t < 4; ++t)
                if (eff[t]) db[t] = g[t] / s - dot / (s * s);
        }
        // s == 0: weights are uniform constants; no frac gradient.
    }
    const std::array<T, 4> dbx = bilinear_corner_dfx(fx, fy);
    const std::array<T, 4> dby = bilinear_corner_dfy(fx, fy);
    T gx = T(0), gy = T(0);
    for (int t = 0; t < 4; ++t) {
        gx += db[t] * dbx[t];
        gy += db[t] * dby[t];
    }
    if (dfx) *dfx += gx;
    if (dfy) *dfy += gy;
}

template <typename T>
void bilinear_softmax_ref(int w, const T* sim, T fx, T fy, const bool* alive, T* out) {
    const int e = w + 1;
    bool eff[4];
    T m[4], bw[4];
    resolve_subwindows(w, sim, fx, fy, alive, eff, m, bw);
    std::fill(out, out + e * e, T(0));
    for (int t = 0; t < 4; ++t) {
        if (!eff[t] || bw[t] == T(0)) continue;
        const int oy = t >> 1, ox = t & 1;
        Tensor<T> sub({static_cast<int64_t>(w) * w});
        for (int r = 0; r < w; ++r)
            for (int c = 0; c < w; ++c) sub[r * w + c] = sim[(oy + r) * e + ox + c];
        Tensor<T> sm = softmax_lastdim_fwd(sub);
        for (int r = 0; r < w; ++r)
            for (int c = 0; c < w; ++c) out[(oy + r) * e + ox + c] += bw[t] * sm[r * w + c];
    }
}

#define MA_INSTANTIATE_BSM(T)                                                                \
    template void bilinear_softmax_fwd<T>(int, const T*, T, T, const bool*, T*);             \
    template void bilinear_softmax_bwd<T>(int, const T*, T, T, const bool*, const T*, T*,    \
                                          T*, T*);                                           \
    template void bilinear_softmax_ref<T>(int, const T*, T, T, const bool*, T*);

MA_INSTANTIATE_BSM(float)
MA_INSTANTIATE_BSM(double)

}  // namespace matchattn
