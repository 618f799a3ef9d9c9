#include "matchattn/attention.hpp"

#include <algorithm>
#include <cmath>

#include "matchattn/bilinear_softmax.hpp"

namespace matchattn {

template <typename T>
WindowGeom gather_window(const Tensor<T>& field, int w, double cx, double cy,
                         Tensor<T>* out, std::vector<uint8_t>* inbounds) {
    MA_CHECK(field.rank() == 3, "gather_window: field must be [H, W, c]");
    const int64_t H = field.dim(0), W = field.dim(1), c = field.dim(2);
    const int e = w + 1;
    WindowGeom g = window_geometry(w, cx, cy, H, W);
    const int hw = (w - 1) / 2;
    if (out) *out = Tensor<T>({static_cast<int64_t>(e) * e, c});
    if (inbounds) inbounds->assign(static_cast<size_t>(e) * e, 0);
    for (int r = 0; r < e; ++r)
        for (int col = 0; col < e; ++col) {
            const int64_t px = g.bx - hw + col;
            const int64_t py = g.by - hw + r;
            const bool in = px >= 0 && px < W && py >= 0 && py < H;
            const int64_t cx_i = clamp_idx(px, W), cy_i = clamp_idx(py, H);
            if (inbounds) (*inbounds)[static_cast<size_t>(r * e + col)] = in ? 1 : 0;
            if (out) {
                const T* src = field.ptr() + (cy_i * W + cx_i) * c;
                T* dst = out->ptr() + (static_cast<int64_t>(r) * e + col) * c;
                std::copy(src, src + c, dst);
            }
        }
    return g;
}

template <typename T>
void attention_core_fwd(const AttnCoreCfg& cfg, const T* Q, const T* K, const T* V,
                        const T* R, T* M, T* A) {
    const int64_t H = cfg.H, W = cfg.W;
    const int h = cfg.heads, ck = cfg.ck, cv = cfg.cv, w = cfg.w;
    const int e = w + 1, e2 = e * e, hw = (w - 1) / 2;
    const int rch = cfg.rpos_per_head ? 2 * h : 2;
    const T gamma = T(1) / std::sqrt(static_cast<T>(ck));
    const int64_t kc = static_cast<int64_t>(h) * ck, vc = static_cast<int64_t>(h) * cv;
    std::vector<T> sims(static_cast<size_t>(e2));
    std::vector<int64_t> idx(static_cast<size_t>(e2));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            const int64_t p = y * W + x;
            const T* rp = R + p * rch;
            for (int hd = 0; hd < h; ++hd) {
                const T rx = cfg.rpos_per_head ? rp[2 * hd + 0] : rp[0];
                const T ry = cfg.rpos_per_head ? rp[2 * hd + 1] : rp[1];
                const WindowGeom g = window_geometry(
                    w, static_cast<double>(x) + static_cast<double>(rx),
                    static_cast<double>(y) + static_cast<double>(ry), H, W);
                const T* q = Q + p * kc + static_cast<int64_t>(hd) * ck;
                for (int r = 0; r < e; ++r) {
                    const int64_t py = clamp_idx(g.by - hw + r, H);
                    for (int col = 0; col < e; ++col) {
                        const int64_t px = clamp_idx(g.bx - hw + col, W);
                        const int64_t pi = py * W + px;
                        idx[static_cast<size_t>(r * e + col)] = pi;
                        const T* kv = K + pi * kc + static_cast<int64_t>(hd) * ck;
                        sims[static_cast<size_t>(r * e + col)] =
                            cfg.sim == Similarity::Dot ? similarity_dot(q, kv, ck, gamma)
                                                       : similarity_negl1(q, kv, ck, gamma);
                    }
                }
                T* aw = A + (p * h + hd) * e2;
                bilinear_softmax_fwd(w, sims.data(), static_cast<T>(g.fx),
                                     static_cast<T>(g.fy), g.alive, aw);
                T* m = M + p * vc + static_cast<int64_t>(hd) * cv;
                std::fill(m, m + cv, T(0));
                for (int j = 0; j < e2; ++j) {
                    const T a = aw[j];
                    if (a == T(0)) continue;
                    const T* vv = V + idx[static_cast<size_t>(j)] * vc +
                                  static_cast<int64_t>(hd) * cv;
                    for (int cc = 0; cc < cv; ++cc) m[cc] += a * vv[cc];
                }
            }
        }
}

template <typename T>
void attention_core_bwd(const AttnCoreCfg& cfg, const T* Q, const T* K, const T* V,
                        const T* R, const T* A, const T* dM, const T* dA,
                        T* dQ, T* dK, T* dV, T* dR) {
    const int64_t H = cfg.H, W = cfg.W;
    const int h = cfg.heads, ck = cfg.ck, cv = cfg.cv, w = cfg.w;
    const int e = w + 1, e2 = e * e, hw = (w - 1) / 2;
    const int rch = cfg.rpos_per_head ? 2 * h : 2;
    const T gamma = T(1) / std::sqrt(static_cast<T>(ck));
    const int64_t kc = static_cast<int64_t>(h) * ck, vc = static_cast<int64_t>(h) * cv;
    std::vector<T> sims(static_cast<size_t>(e2));
    std::vector<T> da(static_cast<size_t>(e2));
    std::vector<T> dsim(static_cast<size_t>(e2));
    std::vector<int64_t> idx(static_cast<size_t>(e2));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            const int64_t p = y * W + x;
            const T* rp = R + p * rch;
            for (int hd = 0; hd < h; ++hd) {
                const T rx = cfg.rpos_per_head ? rp[2 * hd + 0] : rp[0];
                const T ry = cfg.rpos_per_head ? rp[2 * hd + 1] : rp[1];
                const WindowGeom g = window_geometry(
                    w, static_cast<double>(x) + static_cast<double>(rx),
                    static_cast<double>(y) + static_cast<double>(ry), H, W);
                const T* q = Q + p * kc + static_cast<int64_t>(hd) * ck;
                for (int r = 0; r < e; ++r) {
                    const int64_t py = clamp_idx(g.by - hw + r, H);
                    for (int col = 0; col < e; ++col) {
                        const int64_t px = clamp_idx(g.bx - hw + col, W);
                        const int64_t pi = py * W + px;
                        idx[static_cast<size_t>(r * e + col)] = pi;
                        const T* kv = K + pi * kc + static_cast<int64_t>(hd) * ck;
                        sims[static_cast<size_t>(r * e + col)] =
                            cfg.sim == Similarity::Dot ? similarity_dot(q, kv, ck, gamma)
                                                       : similarity_negl1(q, kv, ck, gamma);
                    }
                }
                const T* aw = A + (p * h + hd) * e2;
                const T* dm = dM + p * vc + static_cast<int64_t>(hd) * cv;
                // d(weights) = injected gradient + aggregation gradient; also
                // scatter the value gradient while the weights are at hand.
                for (int j = 0; j < e2; ++j) {
                    T acc = dA ? dA[(p * h + hd) * e2 + j] : T(0);
                    const int64_t pi = idx[static_cast<size_t>(j)];
                    const T* vv = V + pi * vc + static_cast<int64_t>(hd) * cv;
                    T* dvv = dV ? dV + pi * vc + static_cast<int64_t>(hd) * cv : nullptr;
                    const T a = aw[j];
                    for (int cc = 0; cc < cv; ++cc) {
                        acc += dm[cc] * vv[cc];
                        if (dvv) dvv[cc] += a * dm[cc];
                    }
                    da[static_cast<size_t>(j)] = acc;
                }
                std::fill(dsim.begin(), dsim.end(), T(0));
                T dfx = T(0), dfy = T(0);
                bilinear_softmax_bwd(w, sims.data(), static_cast<T>(g.fx),
                                     static_cast<T>(g.fy), g.alive, da.data(), dsim.data(),
                                     &dfx, &dfy);
                T* dq = dQ ? dQ + p * kc + static_cast<int64_t>(hd) * ck : nullptr;
                for (int j = 0; j < e2; ++j) {
                    const T ds = dsim[static_cast<size_t>(j)];
                    if (ds == T(0)) continue;
                    const int64_t pi = idx[static_cast<size_t>(j)];
                    const T* kv = K + pi * kc + static_cast<int64_t>(hd) * ck;
                    T* dk = dK ? dK + pi * kc + static_cast<int64_t>(hd) * ck : nullptr;
                    if (cfg.sim == Similarity::Dot) {
                        for (int cc = 0; cc < ck; ++cc) {
                            if (dq) dq[cc] += gamma * ds * kv[cc];
                            if (dk) dk[cc] += gamma * ds * q[cc];
                        }
                    } else {
                        for (int cc = 0; cc < ck; ++cc) {
                            const T s = q[cc] - kv[cc];
                            const T sg = s > T(0) ? T(1) : (s < T(0) ? T(-1) : T(0));
                            if (dq) dq[cc] -= gamma * ds * sg;
                            if (dk) dk[cc] += gamma * ds * sg;
                        }
                    }
                }
                if (dR) {
                    T* dr = dR + p * rch;
                    if (cfg.rpos_per_head) {
                        dr[2 * hd + 0] += dfx;
                        dr[2 * hd + 1] += dfy;
                    } else {
                        dr[0] += dfx;
                        dr[1] += dfy;
                    }
                }
            }
        }
}

template <typename T>
std::pair<int, int> attention_core(Graph<T>& g, int q, int k, int v, int r, AttnCoreCfg cfg) {
    const int e2 = (cfg.w + 1) * (cfg.w + 1);
    MA_CHECK(g.val(q).shape.back() == static_cast<int64_t>(cfg.heads) * cfg.ck,
             "attention_core: bad Q channels");
    MA_CHECK(g.val(r).shape.back() == (cfg.rpos_per_head ? 2 * cfg.heads : 2),
             "attention_core: bad R channels");
    Tensor<T> m({cfg.H, cfg.W, static_cast<int64_t>(cfg.heads) * cfg.cv});
    Tensor<T> a({cfg.H, cfg.W, static_cast<int64_t>(cfg.heads) * e2});
    attention_core_fwd(cfg, g.val(q).ptr(), g.val(k).ptr(), g.val(v).ptr(), g.val(r).ptr(),
                       m.ptr(), a.ptr());
    int mid = g.push(std::move(m));
    int aid = g.push(std::move(a));
    g.record([cfg, q, k, v, r, mid, aid](Graph<T>& gr) {
        attention_core_bwd(cfg, gr.val(q).ptr(), gr.val(k).ptr(), gr.val(v).ptr(),
                           gr.val(r).ptr(), gr.val(aid).ptr(), gr.grad(mid).ptr(),
                           gr.grad(aid).ptr(), gr.grad(q).ptr(), gr.grad(k).ptr(),
                           gr.grad(v).ptr(), gr.grad(r).ptr());
    });
    return {mid, aid};
}

template <typename T>
AttnLayerOut match_attention(Graph<T>& g, int x_q, int x_kv, int r_sample,
                             const AttnLayerCfg& cfg, const AttnLayerVars& vars) {
    AttnCoreCfg core;
    core.H = cfg.H;
    core.W = cfg.W;
    core.heads = cfg.heads;
    core.ck = cfg.ck;
    core.cv = cfg.cv;
    core.w = cfg.w;
    core.sim = cfg.sim;
    core.rpos_per_head = cfg.rpos_per_head;

    const int q = g.linear(x_q, vars.wq);
    const int k = g.linear(x_kv, vars.wk);
    const int v = g.linear(x_kv, vars.wv);
    auto [m, a] = attention_core(g, q, k, v, r_sample, core);
    int agg = m;
    if (cfg.gated) {
        MA_CHECK(vars.wg >= 0, "match_attention: gated layer needs wg");
        const int gate = g.silu(g.linear(x_q, vars.wg));
        agg = g.mul(gate, m);
    }
    const int pin = cfg.inject ? g.concat_last({agg, a}) : agg;
    const int proj = g.linear(pin, vars.wp);
    AttnLayerOut out;
    out.df = g.slice_last(proj, 0, cfg.c_out);
    out.dr = g.slice_last(proj, cfg.c_out, cfg.c_out + cfg.delta_ch);
    out.attn = a;
    return out;
}

template <typename T>
int conv_glu(Graph<T>& g, int x, const ConvGluVars& vars) {
    const int64_t hidden = g.val(vars.wa).dim(1);
    const int a = g.linear(x, vars.wa);
    const int b = g.linear(x, vars.wb);
    const int bconv = g.conv2d(b, vars.wdw, -1, 1, 1, static_cast<int>(hidden));
    const int gate = g.silu(bconv);
    const int prod = g.mul(a, gate);
    return g.linear(prod, vars.wout);
}

#define MA_INSTANTIATE_ATTN(T)                                                                \
    template WindowGeom gather_window<T>(const Tensor<T>&, int, double, double, Tensor<T>*,  \
                                         std::vector<uint8_t>*);                             \
    template void attention_core_fwd<T>(const AttnCoreCfg&, const T*, const T*, const T*,    \
                                        const T*, T*, T*);                                   \
    template void attention_core_bwd<T>(const AttnCoreCfg&, const T*, const T*, const T*,    \
                                        const T*, const T*, const T*, const T*, T*, T*, T*,  \
                                        T*);                                                 \
    template std::pair<int, int> attention_core<T>(Graph<T>&, int, int, int, int,            \
                                                   AttnCoreCfg);                             \
    template AttnLayerOut match_attention<T>(Graph<T>&, int, int, int, const AttnLayerCfg&,  \
                                             const AttnLayerVars&);                          \
    template int conv_glu<T>(Graph<T>&, int, const ConvGluVars&);

MA_INSTANTIATE_ATTN(float)
MA_INSTANTIATE_ATTN(double)

}  // namespace matchattn
