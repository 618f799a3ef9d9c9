#include "matchattn/graph.hpp"

#include <cmath>

#include "matchattn/ops.hpp"

namespace matchattn {

template <typename T>
int Graph<T>::linear(int x, int w, int b) {
    Tensor<T> empty;
    int y = push(linear_fwd(val(x), val(w), b >= 0 ? val(b) : empty));
    record([x, w, b, y](Graph& g) {
        linear_bwd(g.val(x), g.val(w), g.grad(y), &g.grad(x), &g.grad(w),
                   b >= 0 ? &g.grad(b) : nullptr);
    });
    return y;
}

template <typename T>
int Graph<T>::layer_norm(int x, int gain, int bias) {
    int y = push(layer_norm_fwd(val(x), val(gain), val(bias)));
    record([x, gain, bias, y](Graph& g) {
        layer_norm_bwd(g.val(x), g.val(gain), g.grad(y), &g.grad(x), &g.grad(gain),
                       &g.grad(bias));
    });
    return y;
}

template <typename T>
int Graph<T>::softmax_lastdim(int x) {
    int y = push(softmax_lastdim_fwd(val(x)));
    record([x, y](Graph& g) { softmax_lastdim_bwd(g.val(y), g.grad(y), &g.grad(x)); });
    return y;
}

template <typename T>
int Graph<T>::conv2d(int x, int w, int b, int stride, int pad, int groups) {
    Tensor<T> empty;
    int y = push(conv2d_fwd(val(x), val(w), b >= 0 ? val(b) : empty, stride, pad, groups));
    record([x, w, b, y, stride, pad, groups](Graph& g) {
        conv2d_bwd(g.val(x), g.val(w), g.grad(y), stride, pad, groups, &g.grad(x),
                   &g.grad(w), b >= 0 ? &g.grad(b) : nullptr);
    });
    return y;
}

template <typename T>
int Graph<T>::conv_transpose2x2(int x, int w, int b) {
    Tensor<T> empty;
    int y = push(conv_transpose2x2_fwd(val(x), val(w), b >= 0 ? val(b) : empty));
    record([x, w, b, y](Graph& g) {
        conv_transpose2x2_bwd(g.val(x), g.val(w), g.grad(y), &g.grad(x), &g.grad(w),
                              b >= 0 ? &g.grad(b) : nullptr);
    });
    return y;
}

template <typename T>
int Graph<T>::bilinear_sample(int field, int coords) {
    int y = push(bilinear_sample_fwd(val(field), val(coords)));
    record([field, coords, y](Graph& g) {
        bilinear_sample_bwd(g.val(field), g.val(coords), g.grad(y), &g.grad(field),
                            &g.grad(coords));
    });
    return y;
}

template <typename T>
int Graph<T>::gelu(int x) {
    int y = push(gelu_fwd(val(x)));
    record([x, y](Graph& g) { gelu_bwd(g.val(x), g.grad(y), &g.grad(x)); });
    return y;
}

template <typename T>
int Graph<T>::silu(int x) {
    int y = push(silu_fwd(val(x)));
    record([x, y](Graph& g) { silu_bwd(g.val(x), g.grad(y), &g.grad(x)); });
    return y;
}

template <typename T>
int Graph<T>::add(int a, int b) {
    MA_CHECK(val(a).same_shape(val(b)), "add: shape mismatch");
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    int y = push(std::move(out));
    record([a, b, y](Graph& g) {
        const Tensor<T>& gy = g.grad(y);
        Tensor<T>& ga = g.grad(a);
        Tensor<T>& gb = g.grad(b);
        for (int64_t i = 0; i < gy.numel(); ++i) {
            ga[i] += gy[i];
            gb[i] += gy[i];
        }
    });
    return y;
}

template <typename T>
int Graph<T>::sub(int a, int b) {
    MA_CHECK(val(a).same_shape(val(b)), "sub: shape mismatch");
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
    int y = push(std::move(out));
    record([a, b, y](Graph& g) {
        const Tensor<T>& gy = g.grad(y);
        Tensor<T>& ga = g.grad(a);
        Tensor<T>& gb = g.grad(b);
        for (int64_t i = 0; i < gy.numel(); ++i) {
            ga[i] += gy[i];
            gb[i] -= gy[i];
        }
    });
    return y;
}

template <typename T>
int Graph<T>::mul(int a, int b) {
    MA_CHECK(val(a).same_shape(val(b)), "mul: shape mismatch");
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
    int y = push(std::move(out));
    record([a, b, y](Graph& g) {
        const Tensor<T>& gy = g.grad(y);
        const Tensor<T>& va = g.val(a);
        const Tensor<T>& vb2 = g.val(b);
        Tensor<T>& ga = g.grad(a);
        Tensor<T>& gb = g.grad(b);
        for (int64_t i = 0; i < gy.numel(); ++i) {
            ga[i] += gy[i] * vb2[i];
            gb[i] += gy[i] * va[i];
        }
    });
    return y;
}

template <typename T>
int Graph<T>::scale(int a, T s) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v *= s;
    int y = push(std::move(out));
    record([a, y, s](Graph& g) {
        const Tensor<T>& gy = g.grad(y);
        Tensor<T>& ga = g.grad(a);
        for (int64_t i = 0; i < gy.numel(); ++i) ga[i] += s * gy[i];
    });
    return y;
}

template <typename T>
int Graph<T>::concat_last(const std::vector<int>& xs) {
    MA_CHECK(!xs.empty(), "concat: no inputs");
    std::vector<int64_t> oshape = val(xs[0]).shape;
    int64_t ctot = 0;
    for (int id : xs) ctot += val(id).shape.back();
    oshape.back() = ctot;
    const int64_t rows = Tensor<T>::count(oshape) / ctot;
    Tensor<T> out(oshape);
    int64_t off = 0;
    for (int id : xs) {
        const Tensor<T>& v = val(id);
        const int64_t c = v.shape.back();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < c; ++j) out[r * ctot + off + j] = v[r * c + j];
        off += c;
    }
    int y = push(std::move(out));
    record([xs, y, rows, ctot](Graph& g) {
        const Tensor<T>& gy = g.grad(y);
        int64_t off2 = 0;
        for (int id : xs) {
            Tensor<T>& gx = g.grad(id);
            const int64_t c = g.val(id).shape.back();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < c; ++j) gx[r * c + j] += gy[r * ctot + off2 + j];
            off2 += c;
        }
    });
    return y;
}

template <typename T>
int Graph<T>::slice_last(int x, int64_t from, int64_t to) {
    const Tensor<T>& v = val(x);
    const int64_t c = v.shape.back();
    MA_CHECK(0 <= from && from < to && to <= c, "slice: bad range");
    std::vector<int64_t> oshape = v.shape;
    oshape.back() = to - from;
    const int64_t oc = to - from;
    const int64_t rows = v.numel() / c;
    Tensor<T> out(oshape);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < oc; ++j) out[r * oc + j] = v[r * c + from + j];
    int y = push(std::move(out));
    record([x, y, from, oc, c, rows](Graph& g) {
        const Tensor<T>& gy = g.grad(y);
        Tensor<T>& gx = g.grad(x);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < oc; ++j) gx[r * c + from + j] += gy[r * oc + j];
    });
    return y;
}

template <typename T>
int Graph<T>::channel_scale(int x, int s) {
    const Tensor<T>& v = val(x);
    const Tensor<T>& sv = val(s);
    const int64_t c = v.shape.back();
    const int64_t sc = sv.numel();
    MA_CHECK(c % sc == 0, "channel_scale: channels must be a multiple of scale length");
    Tensor<T> out = v;
    const int64_t rows = v.numel() / c;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < c; ++j) out[r * c + j] *= sv[j % sc];
    int y = push(std::move(out));
    record([x, s, y, rows, c, sc](Graph& g) {
        const Tensor<T>& gy = g.grad(y);
        const Tensor<T>& vx = g.val(x);
        const Tensor<T>& vs = g.val(s);
        Tensor<T>& gx = g.grad(x);
        Tensor<T>& gs = g.grad(s);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < c; ++j) {
                gx[r * c + j] += gy[r * c + j] * vs[j % sc];
                gs[j % sc] += gy[r * c + j] * vx[r * c + j];
            }
    });
    return y;
}

template <typename T>
int Graph<T>::weighted_sum(const std::vector<int>& xs, const std::vector<T>& coef) {
    MA_CHECK(xs.size() == coef.size(), "weighted_sum: size mismatch");
    Tensor<T> out({1});
    for (size_t i = 0; i < xs.size(); ++i) {
        MA_CHECK(val(xs[i]).numel() == 1, "weighted_sum: inputs must be scalar");
        out[0] += coef[i] * val(xs[i])[0];
    }
    int y = push(std::move(out));
    record([xs, coef, y](Graph& g) {
        const T gy = g.grad(y)[0];
        for (size_t i = 0; i < xs.size(); ++i) g.grad(xs[i])[0] += coef[i] * gy;
    });
    return y;
}

template <typename T>
int Graph<T>::masked_l1_mean(int x, Tensor<uint8_t> mask) {
    const Tensor<T>& v = val(x);
    const int64_t c = v.shape.back();
    const int64_t rows = v.numel() / c;
    MA_CHECK(mask.numel() == 0 || mask.numel() == rows, "masked_l1_mean: bad mask size");
    int64_t count = 0;
    if (mask.numel() == 0)
        count = rows;
    else
        for (int64_t r = 0; r < rows; ++r) count += mask[r] ? 1 : 0;
    const T denom = static_cast<T>(count > 0 ? count : 1);
    Tensor<T> out({1});
    T acc = T(0);
    for (int64_t r = 0; r < rows; ++r) {
        if (mask.numel() && !mask[r]) continue;
        for (int64_t j = 0; j < c; ++j) acc += std::abs(v[r * c + j]);
    }
    out[0] = acc / denom;
    int y = push(std::move(out));
    record([x, y, m = std::move(mask), rows, c, denom](Graph& g) {
        const T gy = g.grad(y)[0] / denom;
        const Tensor<T>& vx = g.val(x);
        Tensor<T>& gx = g.grad(x);
        for (int64_t r = 0; r < rows; ++r) {
            if (m.numel() && !m[r]) continue;
            for (int64_t j = 0; j < c; ++j) {
                const T v2 = vx[r * c + j];
                gx[r * c + j] += v2 > T(0) ? gy : (v2 < T(0) ? -gy : T(0));
            }
        }
    });
    return y;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace matchattn
