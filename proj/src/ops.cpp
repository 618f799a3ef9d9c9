#include "matchattn/ops.hpp"

#include <algorithm>
#include <cmath>

namespace matchattn {

namespace {

template <typename T>
int64_t rows_of(const Tensor<T>& x) {
    MA_CHECK(x.rank() >= 1, "rank-0 tensor");
    return x.numel() / x.shape.back();
}

}  // namespace

template <typename T>
Tensor<T> linear_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    MA_CHECK(w.rank() == 2, "linear: w must be [c_in, c_out]");
    const int64_t ci = w.dim(0), co = w.dim(1);
    MA_CHECK(x.shape.back() == ci, "linear: contraction mismatch");
    const int64_t n = rows_of(x);
    std::vector<int64_t> oshape = x.shape;
    oshape.back() = co;
    Tensor<T> y(oshape);
    const bool bias = b.numel() > 0;
    if (bias) MA_CHECK(b.numel() == co, "linear: bad bias size");
    const T* xp = x.ptr();
    const T* wp = w.ptr();
    T* yp = y.ptr();
    for (int64_t r = 0; r < n; ++r) {
        T* yr = yp + r * co;
        if (bias)
            for (int64_t j = 0; j < co; ++j) yr[j] = b[j];
        else
            for (int64_t j = 0; j < co; ++j) yr[j] = T(0);
        const T* xr = xp + r * ci;
        for (int64_t i = 0; i < ci; ++i) {
            const T xv = xr[i];
            const T* wr = wp + i * co;
            for (int64_t j = 0; j < co; ++j) yr[j] += xv * wr[j];
        }
    }
    return y;
}

template <typename T>
void linear_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
    const int64_t ci = w.dim(0), co = w.dim(1);
    const int64_t n = rows_of(x);
    const T* xp = x.ptr();
    const T* wp = w.ptr();
    const T* dyp = dy.ptr();
    for (int64_t r = 0; r < n; ++r) {
        const T* dyr = dyp + r * co;
        const T* xr = xp + r * ci;
        if (dx) {
            T* dxr = dx->ptr() + r * ci;
            for (int64_t i = 0; i < ci; ++i) {
                const T* wr = wp + i * co;
                T acc = T(0);
                for (int64_t j = 0; j < co; ++j) acc += dyr[j] * wr[j];
                dxr[i] += acc;
            }
        }
        if (dw) {
            T* dwp = dw->ptr();
            for (int64_t i = 0; i < ci; ++i) {
                const T xv = xr[i];
                T* dwr = dwp + i * co;
                for (int64_t j = 0; j < co; ++j) dwr[j] += xv * dyr[j];
            }
        }
        if (db) {
            T* dbp = db->ptr();
            for (int64_t j = 0; j < co; ++j) dbp[j] += dyr[j];
        }
    }
}

template <typename T>
Tensor<T> layer_norm_fwd(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
    const int64_t c = x.shape.back();
    MA_CHECK(gain.numel() == c && bias.numel() == c, "layer_norm: bad affine size");
    const int64_t n = rows_of(x);
    Tensor<T> y(x.shape);
    const T* xp = x.ptr();
    T* yp = y.ptr();
    for (int64_t r = 0; r < n; ++r) {
        const T* xr = xp + r * c;
        T* yr = yp + r * c;
        T mean = T(0);
        for (int64_t i = 0; i < c; ++i) mean += xr[i];
        mean /= static_cast<T>(c);
        T var = T(0);
        for (int64_t i = 0; i < c; ++i) {
            T d = xr[i] - mean;
            var += d * d;
        }
        var /= static_cast<T>(c);
        const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        for (int64_t i = 0; i < c; ++i) yr[i] = (xr[i] - mean) * rstd * gain[i] + bias[i];
    }
    return y;
}

template <typename T>
void layer_norm_bwd(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& dy,
                    Tensor<T>* dx, Tensor<T>* dgain, Tensor<T>* dbias) {
    const int64_t c = x.shape.back();
    const int64_t n = rows_of(x);
    const T* xp = x.ptr();
    const T* dyp = dy.ptr();
    std::vector<T> xhat(static_cast<size_t>(c));
    for (int64_t r = 0; r < n; ++r) {
        const T* xr = xp + r * c;
        const T* dyr = dyp + r * c;
        T mean = T(0);
        for (int64_t i = 0; i < c; ++i) mean += xr[i];
        mean /= static_cast<T>(c);
        T var = T(0);
        for (int64_t i = 0; i < c; ++i) {
            T d = xr[i] - mean;
            var += d * d;
        }
        var /= static_cast<T>(c);
        const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        for (int64_t i = 0; i < c; ++i) xhat[static_cast<size_t>(i)] = (xr[i] - mean) * rstd;
        if (dgain || dbias) {
            for (int64_t i = 0; i < c; ++i) {
                if (dgain) (*dgain)[i] += dyr[i] * xhat[static_cast<size_t>(i)];
                if (dbias) (*dbias)[i] += dyr[i];
            }
        }
        if (dx) {
            // dxhat = dy * gain; dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
            T s1 = T(0), s2 = T(0);
            for (int64_t i = 0; i < c; ++i) {
                T dxh = dyr[i] * gain[i];
                s1 += dxh;
                s2 += dxh * xhat[static_cast<size_t>(i)];
            }
            s1 /= static_cast<T>(c);
            s2 /= static_cast<T>(c);
            T* dxr = dx->ptr() + r * c;
            for (int64_t i = 0; i < c; ++i) {
                T dxh = dyr[i] * gain[i];
                dxr[i] += rstd * (dxh - s1 - xhat[static_cast<size_t>(i)] * s2);
            }
        }
    }
}

template <typename T>
Tensor<T> softmax_lastdim_fwd(const Tensor<T>& x) {
    const int64_t c = x.shape.back();
    MA_CHECK(c >= 1, "softmax: empty axis");
    const int64_t n = rows_of(x);
    Tensor<T> y(x.shape);
    const T* xp = x.ptr();
    T* yp = y.ptr();
    for (int64_t r = 0; r < n; ++r) {
        const T* xr = xp + r * c;
        T* yr = yp + r * c;
        T m = xr[0];
        for (int64_t i = 1; i < c; ++i) m = std::max(m, xr[i]);
        T z = T(0);
        for (int64_t i = 0; i < c; ++i) {
            yr[i] = std::exp(xr[i] - m);
            z += yr[i];
        }
        const T rz = T(1) / z;
        for (int64_t i = 0; i < c; ++i) yr[i] *= rz;
    }
    return y;
}

template <typename T>
void softmax_lastdim_bwd(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>* dx) {
    const int64_t c = y.shape.back();
    const int64_t n = rows_of(y);
    const T* yp = y.ptr();
    const T* dyp = dy.ptr();
    for (int64_t r = 0; r < n; ++r) {
        const T* yr = yp + r * c;
        const T* dyr = dyp + r * c;
        T dot = T(0);
        for (int64_t i = 0; i < c; ++i) dot += yr[i] * dyr[i];
        T* dxr = dx->ptr() + r * c;
        for (int64_t i = 0; i < c; ++i) dxr[i] += yr[i] * (dyr[i] - dot);
    }
}

template <typename T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                     int stride, int pad, int groups) {
    MA_CHECK(x.rank() == 3 && w.rank() == 4, "conv2d: bad ranks");
    const int64_t H = x.dim(0), W = x.dim(1), ci = x.dim(2);
    const int64_t co = w.dim(0), kh = w.dim(1), kw = w.dim(2), cig = w.dim(3);
    MA_CHECK(ci % groups == 0 && co % groups == 0, "conv2d: groups must divide channels");
    MA_CHECK(cig == ci / groups, "conv2d: kernel channel mismatch");
    const int64_t cog = co / groups;
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    MA_CHECK(Ho >= 1 && Wo >= 1, "conv2d: empty output");
    const bool bias = b.numel() > 0;
    if (bias) MA_CHECK(b.numel() == co, "conv2d: bad bias size");
    Tensor<T> y({Ho, Wo, co});
    const T* xp = x.ptr();
    const T* wp = w.ptr();
    T* yp = y.ptr();
    for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox)
            for (int64_t oc = 0; oc < co; ++oc) {
                const int64_t g = oc / cog;
                const T* wk = wp + oc * kh * kw * cig;
                T acc = bias ? b[oc] : T(0);
                for (int64_t ky = 0; ky < kh; ++ky) {
                    const int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        const int64_t ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= W) continue;
                        const T* xr = xp + (iy * W + ix) * ci + g * cig;
                        const T* wr = wk + (ky * kw + kx) * cig;
                        for (int64_t c = 0; c < cig; ++c) acc += xr[c] * wr[c];
                    }
                }
                yp[(oy * Wo + ox) * co + oc] = acc;
            }
    return y;
}

template <typename T>
void conv2d_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                int stride, int pad, int groups,
                Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
    const int64_t H = x.dim(0), W = x.dim(1), ci = x.dim(2);
    const int64_t co = w.dim(0), kh = w.dim(1), kw = w.dim(2), cig = w.dim(3);
    const int64_t cog = co / groups;
    const int64_t Ho = dy.dim(0), Wo = dy.dim(1);
    const T* xp = x.ptr();
    const T* wp = w.ptr();
    const T* dyp = dy.ptr();
    for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox)
            for (int64_t oc = 0; oc < co; ++oc) {
                const int64_t g = oc / cog;
                const T gy = dyp[(oy * Wo + ox) * co + oc];
                if (db) (*db)[oc] += gy;
                const T* wk = wp + oc * kh * kw * cig;
                T* dwk = dw ? dw->ptr() + oc * kh * kw * cig : nullptr;
                for (int64_t ky = 0; ky < kh; ++ky) {
                    const int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        const int64_t ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= W) continue;
                        const T* xr = xp + (iy * W + ix) * ci + g * cig;
                        const int64_t woff = (ky * kw + kx) * cig;
                        if (dw)
                            for (int64_t c = 0; c < cig; ++c) dwk[woff + c] += gy * xr[c];
                        if (dx) {
                            T* dxr = dx->ptr() + (iy * W + ix) * ci + g * cig;
                            const T* wr = wk + woff;
                            for (int64_t c = 0; c < cig; ++c) dxr[c] += gy * wr[c];
                        }
                    }
                }
            }
}

template <typename T>
Tensor<T> conv_transpose2x2_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    MA_CHECK(x.rank() == 3 && w.rank() == 4, "conv_transpose2x2: bad ranks");
    MA_CHECK(w.dim(0) == 2 && w.dim(1) == 2, "conv_transpose2x2: kernel must be 2x2");
    const int64_t H = x.dim(0), W = x.dim(1), ci = x.dim(2), co = w.dim(3);
    MA_CHECK(w.dim(2) == ci, "conv_transpose2x2: channel mismatch");
    const bool bias = b.numel() > 0;
    Tensor<T> y({H * 2, W * 2, co});
    const T* xp = x.ptr();
    const T* wp = w.ptr();
    T* yp = y.ptr();
    for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j) {
            const T* xr = xp + (i * W + j) * ci;
            for (int64_t dy = 0; dy < 2; ++dy)
                for (int64_t dx = 0; dx < 2; ++dx) {
                    T* yr = yp + ((2 * i + dy) * 2 * W + (2 * j + dx)) * co;
                    const T* wk = wp + (dy * 2 + dx) * ci * co;
                    for (int64_t oc = 0; oc < co; ++oc) yr[oc] = bias ? b[oc] : T(0);
                    for (int64_t c = 0; c < ci; ++c) {
                        const T xv = xr[c];
                        const T* wr = wk + c * co;
                        for (int64_t oc = 0; oc < co; ++oc) yr[oc] += xv * wr[oc];
                    }
                }
        }
    return y;
}

template <typename T>
void conv_transpose2x2_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                           Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
    const int64_t H = x.dim(0), W = x.dim(1), ci = x.dim(2), co = w.dim(3);
    const T* xp = x.ptr();
    const T* wp = w.ptr();
    const T* dyp = dy.ptr();
    for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j) {
            const T* xr = xp + (i * W + j) * ci;
            T* dxr = dx ? dx->ptr() + (i * W + j) * ci : nullptr;
            for (int64_t ddy = 0; ddy < 2; ++ddy)
                for (int64_t ddx = 0; ddx < 2; ++ddx) {
                    const T* dyr = dyp + ((2 * i + ddy) * 2 * W + (2 * j + ddx)) * co;
                    const T* wk = wp + (ddy * 2 + ddx) * ci * co;
                    T* dwk = dw ? dw->ptr() + (ddy * 2 + ddx) * ci * co : nullptr;
                    if (db) {
                        T* dbp = db->ptr();
                        for (int64_t oc = 0; oc < co; ++oc) dbp[oc] += dyr[oc];
                    }
                    for (int64_t c = 0; c < ci; ++c) {
                        const T* wr = wk + c * co;
                        T acc = T(0);
                        for (int64_t oc = 0; oc < co; ++oc) {
                            acc += dyr[oc] * wr[oc];
                            if (dw) dwk[c * co + oc] += xr[c] * dyr[oc];
                        }
                        if (dx) dxr[c] += acc;
                    }
                }
        }
}

template <typename T>
Tensor<T> bilinear_sample_fwd(const Tensor<T>& field, const Tensor<T>& coords) {
    MA_CHECK(field.rank() == 3, "bilinear_sample: field must be [H, W, c]");
    MA_CHECK(coords.shape.back() == 2, "bilinear_sample: coords last axis must be 2");
    const int64_t H = field.dim(0), W = field.dim(1), c = field.dim(2);
    const int64_t n = coords.numel() / 2;
    std::vector<int64_t> oshape(coords.shape.begin(), coords.shape.end() - 1);
    oshape.push_back(c);
    Tensor<T> y(oshape);
    const T* fp = field.ptr();
    const T* cp = coords.ptr();
    T* yp = y.ptr();
    for (int64_t i = 0; i < n; ++i) {
        T cx = std::clamp(cp[i * 2 + 0], T(0), static_cast<T>(W - 1));
        T cy = std::clamp(cp[i * 2 + 1], T(0), static_cast<T>(H - 1));
        const int64_t x0 = std::min(static_cast<int64_t>(std::floor(cx)), W - 1);
        const int64_t y0 = std::min(static_cast<int64_t>(std::floor(cy)), H - 1);
        const int64_t x1 = std::min(x0 + 1, W - 1);
        const int64_t y1 = std::min(y0 + 1, H - 1);
        const T fx = cx - static_cast<T>(x0);
        const T fy = cy - static_cast<T>(y0);
        const T w00 = (T(1) - fx) * (T(1) - fy), w10 = fx * (T(1) - fy);
        const T w01 = (T(1) - fx) * fy, w11 = fx * fy;
        const T* f00 = fp + (y0 * W + x0) * c;
        const T* f10 = fp + (y0 * W + x1) * c;
        const T* f01 = fp + (y1 * W + x0) * c;
        const T* f11 = fp + (y1 * W + x1) * c;
        T* yr = yp + i * c;
        for (int64_t k = 0; k < c; ++k)
            yr[k] = w00 * f00[k] + w10 * f10[k] + w01 * f01[k] + w11 * f11[k];
    }
    return y;
}

template <typename T>
void bilinear_sample_bwd(const Tensor<T>& field, const Tensor<T>& coords, const Tensor<T>& dy,
                         Tensor<T>* dfield, Tensor<T>* dcoords) {
    const int64_t H = field.dim(0), W = field.dim(1), c = field.dim(2);
    const int64_t n = coords.numel() / 2;
    const T* fp = field.ptr();
    const T* cp = coords.ptr();
    const T* dyp = dy.ptr();
    for (int64_t i = 0; i < n; ++i) {
        const T rx = cp[i * 2 + 0], ry = cp[i * 2 + 1];
        const bool inx = rx > T(0) && rx < static_cast<T>(W - 1);
        const bool iny = ry > T(0) && ry < static_cast<T>(H - 1);
        T cx = std::clamp(rx, T(0), static_cast<T>(W - 1));
        T cy = std::clamp(ry, T(0), static_cast<T>(H - 1));
        const int64_t x0 = std::min(static_cast<int64_t>(std::floor(cx)), W - 1);
        const int64_t y0 = std::min(static_cast<int64_t>(std::floor(cy)), H - 1);
        const int64_t x1 = std::min(x0 + 1, W - 1);
        const int64_t y1 = std::min(y0 + 1, H - 1);
        const T fx = cx - static_cast<T>(x0);
        const T fy = cy - static_cast<T>(y0);
        const T* dyr = dyp + i * c;
        const T* f00 = fp + (y0 * W + x0) * c;
        const T* f10 = fp + (y0 * W + x1) * c;
        const T* f01 = fp + (y1 * W + x0) * c;
        const T* f11 = fp + (y1 * W + x1) * c;
        if (dfield) {
            T* g00 = dfield->ptr() + (y0 * W + x0) * c;
            T* g10 = dfield->ptr() + (y0 * W + x1) * c;
            T* g01 = dfield->ptr() + (y1 * W + x0) * c;
            T* g11 = dfield->ptr() + (y1 * W + x1) * c;
            const T w00 = (T(1) - fx) * (T(1) - fy), w10 = fx * (T(1) - fy);
            const T w01 = (T(1) - fx) * fy, w11 = fx * fy;
            for (int64_t k = 0; k < c; ++k) {
                g00[k] += w00 * dyr[k];
                g10[k] += w10 * dyr[k];
                g01[k] += w01 * dyr[k];
                g11[k] += w11 * dyr[k];
            }
        }
        if (dcoords) {
            T gx = T(0), gy = T(0);
            for (int64_t k = 0; k < c; ++k) {
                gx += dyr[k] * ((T(1) - fy) * (f10[k] - f00[k]) + fy * (f11[k] - f01[k]));
                gy += dyr[k] * ((T(1) - fx) * (f01[k] - f00[k]) + fx * (f11[k] - f10[k]));
            }
            if (inx) (*dcoords)[i * 2 + 0] += gx;
            if (iny) (*dcoords)[i * 2 + 1] += gy;
        }
    }
}

template <typename T>
T gelu_scalar(T x) {
    const T k = static_cast<T>(0.7978845608028653558798921198687);  // sqrt(2/pi)
    const T inner = k * (x + static_cast<T>(0.044715) * x * x * x);
    return static_cast<T>(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
T silu_scalar(T x) {
    return x / (T(1) + std::exp(-x));
}

template <typename T>
Tensor<T> gelu_fwd(const Tensor<T>& x) {
    Tensor<T> y(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = gelu_scalar(x[i]);
    return y;
}

template <typename T>
void gelu_bwd(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx) {
    const T k = static_cast<T>(0.7978845608028653558798921198687);
    for (int64_t i = 0; i < x.numel(); ++i) {
        const T v = x[i];
        const T inner = k * (v + static_cast<T>(0.044715) * v * v * v);
        const T t = std::tanh(inner);
        const T dinner = k * (T(1) + static_cast<T>(3 * 0.044715) * v * v);
        const T d = static_cast<T>(0.5) * (T(1) + t) +
                    static_cast<T>(0.5) * v * (T(1) - t * t) * dinner;
        (*dx)[i] += dy[i] * d;
    }
}

template <typename T>
Tensor<T> silu_fwd(const Tensor<T>& x) {
    Tensor<T> y(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = silu_scalar(x[i]);
    return y;
}

template <typename T>
void silu_bwd(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx) {
    for (int64_t i = 0; i < x.numel(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-x[i]));
        (*dx)[i] += dy[i] * (s + x[i] * s * (T(1) - s));
    }
}

#define MA_INSTANTIATE_OPS(T)                                                                  \
    template Tensor<T> linear_fwd<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
    template void linear_bwd<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                Tensor<T>*, Tensor<T>*, Tensor<T>*);                          \
    template Tensor<T> layer_norm_fwd<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
    template void layer_norm_bwd<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                    Tensor<T>*, Tensor<T>*, Tensor<T>*);                      \
    template Tensor<T> softmax_lastdim_fwd<T>(const Tensor<T>&);                              \
    template void softmax_lastdim_bwd<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);     \
    template Tensor<T> conv2d_fwd<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                     int, int, int);                                          \
    template void conv2d_bwd<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,    \
                                int, int, Tensor<T>*, Tensor<T>*, Tensor<T>*);                \
    template Tensor<T> conv_transpose2x2_fwd<T>(const Tensor<T>&, const Tensor<T>&,           \
                                                const Tensor<T>&);                            \
    template void conv_transpose2x2_bwd<T>(const Tensor<T>&, const Tensor<T>&,                \
                                           const Tensor<T>&, Tensor<T>*, Tensor<T>*,          \
                                           Tensor<T>*);                                       \
    template Tensor<T> bilinear_sample_fwd<T>(const Tensor<T>&, const Tensor<T>&);            \
    template void bilinear_sample_bwd<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                         Tensor<T>*, Tensor<T>*);                             \
    template Tensor<T> gelu_fwd<T>(const Tensor<T>&);                                         \
    template void gelu_bwd<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                \
    template Tensor<T> silu_fwd<T>(const Tensor<T>&);                                         \
    template void silu_bwd<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                \
    template T gelu_scalar<T>(T);                                                             \
    template T silu_scalar<T>(T);

MA_INSTANTIATE_OPS(float)
MA_INSTANTIATE_OPS(double)

}  // namespace matchattn
