#include "matchattn/flops.hpp"

namespace matchattn {

FlopsBreakdown attention_flops(int64_t H, int64_t W, int64_t h, int64_t ck, int64_t cv,
                               int64_t w) {
    const int64_t e2 = (w + 1) * (w + 1);
    FlopsBreakdown f;
    f.qk = H * W * h * ck * e2 * 2;
    f.bsm = H * W * h * (20 + e2 * 2 + w * w * 4 * 3);
    f.agg = H * W * h * cv * e2 * 2;
    f.attn_mem = H * W * h * e2;
    return f;
}

FlopsBreakdown decoder_flops(const DecoderConfig& cfg, int64_t H, int64_t W) {
    FlopsBreakdown f;
    auto lin = [&](int64_t n, int64_t ci, int64_t co) { f.tensor += 2 * n * ci * co; };
    auto conv = [&](int64_t n_out, int64_t co, int64_t k, int64_t cig) {
        f.tensor += 2 * n_out * co * k * k * cig;
    };
    const int64_t views = 2;
    const int64_t h = cfg.heads;

    for (int64_t v = 0; v < views; ++v) {
        // encoder
        for (int s = 0; s < 4; ++s) {
            const int64_t c = cfg.channels[static_cast<size_t>(s)];
            const int64_t ci = s == 0 ? cfg.in_ch : cfg.channels[static_cast<size_t>(s) - 1];
            const int64_t n = (H / (4ll << s)) * (W / (4ll << s));
            conv(n, c, s == 0 ? 4 : 2, ci);
            for (int i = 0; i < cfg.enc_depths[static_cast<size_t>(s)]; ++i) {
                conv(n, c, 3, 1);  // depthwise
                lin(n, c, c);
                lin(n, c, cfg.mlp_ratio * c);
                lin(n, cfg.mlp_ratio * c, c);
            }
        }
        // initial correlation
        const int64_t H3 = H / 32, W3 = W / 32, c3 = cfg.channels[3];
        const int64_t n3 = H3 * W3;
        lin(n3, c3, c3);  // pa
        lin(n3, c3, c3);  // pb
        if (cfg.task == Task::Stereo)
            f.tensor += 2 * c3 * H3 * (W3 * (W3 + 1) / 2);  // valid disparities per row
        else
            f.tensor += 2 * c3 * n3 * n3;  // all pairs
        // decoder blocks and upsampling
        for (int s = 3; s >= 0; --s) {
            const int64_t c = cfg.channels[static_cast<size_t>(s)];
            const int64_t chead = c / h;
            const int64_t w = cfg.windows[static_cast<size_t>(s)];
            const int64_t e2 = (w + 1) * (w + 1);
            const int64_t n = (H / (4ll << s)) * (W / (4ll << s));
            const int64_t Hs = H / (4ll << s), Ws = W / (4ll << s);
            for (int i = 0; i < cfg.dec_depths[static_cast<size_t>(s)]; ++i) {
                const int64_t cin_self = c + 2 + 2 * h + 1;
                lin(n, cin_self, h * chead);  // wq
                lin(n, cin_self, h * chead);  // wk
                lin(n, cin_self, h * chead);  // wv
                lin(n, h * chead, c + 2 * h);  // wp
                const FlopsBreakdown a1 = attention_flops(Hs, Ws, h, chead, chead, w);
                f.qk += a1.qk;
                f.bsm += a1.bsm;
                f.agg += a1.agg;
                f.attn_mem += a1.attn_mem;
                const int64_t cin_cross = c + 2;
                lin(n, cin_cross, h * chead);  // wq
                lin(n, cin_cross, h * chead);  // wk
                lin(n, cin_cross, h * chead);  // wv
                lin(n, cin_cross, h * chead);  // gate
                lin(n, h * chead + h * e2, c + 2);  // wp with injected weights
                const FlopsBreakdown a2 = attention_flops(Hs, Ws, h, chead, chead, w);
                f.qk += a2.qk;
                f.bsm += a2.bsm;
                f.agg += a2.agg;
                f.attn_mem += a2.attn_mem;
                lin(n, c, cfg.glu_ratio * c);       // glu a
                lin(n, c, cfg.glu_ratio * c);       // glu b
                conv(n, cfg.glu_ratio * c, 3, 1);   // glu depthwise
                lin(n, cfg.glu_ratio * c, c);       // glu out
            }
            const int64_t fu = s == 0 ? 4 : 2;
            conv(n, 2 * c, 3, c);       // upsample head stage 1
            lin(n, 2 * c, 9 * fu * fu);  // upsample head stage 2
            if (s > 0) {
                const int64_t cf = cfg.channels[static_cast<size_t>(s) - 1];
                f.tensor += 2 * n * c * cf * 4;  // transposed 2x2 conv
                lin(4 * n, 2 * cf, cf);          // skip mix
            }
        }
    }
    return f;
}

}  // namespace matchattn
