#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "matchattn/graph.hpp"
#include "matchattn/tensor.hpp"

namespace matchattn {

enum class Similarity { Dot, NegL1 };

// Geometry of the expanded (w+1)^2 window centered at a continuous position.
// Entry (r, c), row-major, reads pixel (bx - hw + c, by - hw + r) where
// hw = (w-1)/2 and (bx, by) is the floor of the center; indices are clamped to
// the image (replicate border). alive[t] tells whether the w^2 sub-window
// anchored at corner t overlaps the image at all; if none does, all four are
// revived so the (fully clamped) window still normalizes.
struct WindowGeom {
    int64_t bx = 0, by = 0;
    double fx = 0, fy = 0;
    bool alive[4] = {true, true, true, true};
};

inline WindowGeom window_geometry(int w, double cx, double cy, int64_t H, int64_t W) {
    WindowGeom g;
    const double bxf = std::floor(cx), byf = std::floor(cy);
    g.bx = static_cast<int64_t>(bxf);
    g.by = static_cast<int64_t>(byf);
    g.fx = cx - bxf;
    g.fy = cy - byf;
    const int hw = (w - 1) / 2;
    bool any = false;
    for (int t = 0; t < 4; ++t) {
        const int64_t x0 = g.bx - hw + (t & 1);
        const int64_t y0 = g.by - hw + (t >> 1);
        g.alive[t] = x0 <= W - 1 && x0 + w - 1 >= 0 && y0 <= H - 1 && y0 + w - 1 >= 0;
        any = any || g.alive[t];
    }
    if (!any)
        for (int t = 0; t < 4; ++t) g.alive[t] = true;
    return g;
}

inline int64_t clamp_idx(int64_t v, int64_t n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); }

// Copies the expanded window of a [H, W, c] field into out[(w+1)^2, c];
// inbounds[j] = 0 where the nominal pixel was clamped.
template <typename T>
WindowGeom gather_window(const Tensor<T>& field, int w, double cx, double cy,
                         Tensor<T>* out, std::vector<uint8_t>* inbounds);

template <typename T>
inline T similarity_dot(const T* q, const T* k, int c, T gamma) {
    T acc = T(0);
    for (int i = 0; i < c; ++i) acc += q[i] * k[i];
    return gamma * acc;
}

template <typename T>
inline T similarity_negl1(const T* q, const T* k, int c, T gamma) {
    T acc = T(0);
    for (int i = 0; i < c; ++i) acc += std::abs(q[i] - k[i]);
    return -gamma * acc;
}

struct AttnCoreCfg {
    int64_t H = 0, W = 0;
    int heads = 1;
    int ck = 0, cv = 0;
    int w = 3;
    Similarity sim = Similarity::NegL1;
    bool rpos_per_head = false;  // R carries 2*heads channels instead of a shared 2
};

// Fused similarity + continuous-window softmax + aggregation.
// Q: [H, W, heads*ck], K, V likewise, R: [H, W, 2] or [H, W, 2*heads].
// M: [H, W, heads*cv]; A: [H, W, heads*(w+1)^2], head-major attention weights.
// The sampling center for query (x, y) is (x + rx, y + ry). For each query the
// weights sum to 1.
template <typename T>
void attention_core_fwd(const AttnCoreCfg& cfg, const T* Q, const T* K, const T* V,
                        const T* R, T* M, T* A);

// Gradients accumulate. A is the forward attention output (reused so the
// backward pass does not re-normalize).
template <typename T>
void attention_core_bwd(const AttnCoreCfg& cfg, const T* Q, const T* K, const T* V,
                        const T* R, const T* A, const T* dM, const T* dA,
                        T* dQ, T* dK, T* dV, T* dR);

// Graph node wrapper; returns {M, A} ids.
template <typename T>
std::pair<int, int> attention_core(Graph<T>& g, int q, int k, int v, int r, AttnCoreCfg cfg);

struct AttnLayerCfg {
    int64_t H = 0, W = 0;
    int heads = 2;
    int ck = 8, cv = 8;
    int w = 3;
    Similarity sim = Similarity::NegL1;
    bool gated = false;
    bool inject = false;        // feed attention weights into the output projection
    bool rpos_per_head = false;
    int c_out = 0;              // feature delta channels
    int delta_ch = 2;           // relative-position delta channels (2, or 2*heads)
};

// Var ids of the layer weights, already pushed into the graph. Shapes:
//   wq, wk, wv: [c_in, heads*ck / heads*cv]
//   wp: [heads*cv (+ heads*(w+1)^2 when inject), c_out + delta_ch]
//   wg: [c_in, heads*cv] (gated only)
struct AttnLayerVars {
    int wq = -1, wk = -1, wv = -1, wp = -1, wg = -1;
};

struct AttnLayerOut {
    int df = -1;    // feature delta [H, W, c_out]
    int dr = -1;    // position delta [H, W, delta_ch]
    int attn = -1;  // attention weights [H, W, heads*(w+1)^2]
};

// One attention layer over pre-normalized inputs. x_q is the query-side view,
// x_kv the key/value side (same id for self attention). r_sample drives the
// window placement. The caller applies the residual updates.
template <typename T>
AttnLayerOut match_attention(Graph<T>& g, int x_q, int x_kv, int r_sample,
                             const AttnLayerCfg& cfg, const AttnLayerVars& vars);

// Gated convolutional block: y = W_out((W_a x) * SiLU(DWConv3x3(W_b x))).
// No biases; hidden width = expansion * c.
struct ConvGluVars {
    int wa = -1, wb = -1, wdw = -1, wout = -1;
};

template <typename T>
int conv_glu(Graph<T>& g, int x, const ConvGluVars& vars);

}  // namespace matchattn
