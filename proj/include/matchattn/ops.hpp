#pragma once

#include <functional>

#include "matchattn/tensor.hpp"

namespace matchattn {

// Forward kernels allocate their output; backward kernels ACCUMULATE (+=) into
// the gradient tensors they are given, which must be pre-sized and zeroed (or
// hold gradients already contributed by other consumers). All loops run in a
// fixed row-major order so results are bit-reproducible.

// y[n, co] = sum_ci x[n, ci] * w[ci, co] + b[co]. x may have any leading shape;
// the last axis is the contraction axis. b may be empty (no bias).
template <typename T>
Tensor<T> linear_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
template <typename T>
void linear_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db);

// Normalization over the last axis: (x - mean) / sqrt(var + 1e-6) * gain + bias.
// var is the biased estimate (divide by the axis length).
inline constexpr double kLayerNormEps = 1e-6;
template <typename T>
Tensor<T> layer_norm_fwd(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias);
template <typename T>
void layer_norm_bwd(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& dy,
                    Tensor<T>* dx, Tensor<T>* dgain, Tensor<T>* dbias);

// Max-subtracted softmax over the last axis.
template <typename T>
Tensor<T> softmax_lastdim_fwd(const Tensor<T>& x);
template <typename T>
void softmax_lastdim_bwd(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>* dx);

// Cross-correlation (no kernel flip) over [H, W, c_in] with zero padding.
// w: [c_out, kh, kw, c_in / groups]. Accumulation order per output element is
// (ky, kx, ci), documented so independent oracles can match bit-for-bit.
template <typename T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                     int stride, int pad, int groups);
template <typename T>
void conv2d_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                int stride, int pad, int groups,
                Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db);

// Transposed conv with kernel 2x2, stride 2 (exact 2x upsampling, no overlap).
// w: [2, 2, c_in, c_out];  y[2i+dy, 2j+dx, co] = sum_ci x[i, j, ci] w[dy, dx, ci, co] + b[co].
template <typename T>
Tensor<T> conv_transpose2x2_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
template <typename T>
void conv_transpose2x2_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                           Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db);

// Bilinear interpolation of field [H, W, c] at coords [..., 2] holding (x, y).
// Coordinates are clamped to the valid rectangle (replicate border), which also
// zeroes the coordinate gradient outside of it.
template <typename T>
Tensor<T> bilinear_sample_fwd(const Tensor<T>& field, const Tensor<T>& coords);
template <typename T>
void bilinear_sample_bwd(const Tensor<T>& field, const Tensor<T>& coords, const Tensor<T>& dy,
                         Tensor<T>* dfield, Tensor<T>* dcoords);

// tanh-approximated GELU and SiLU, elementwise.
template <typename T>
Tensor<T> gelu_fwd(const Tensor<T>& x);
template <typename T>
void gelu_bwd(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx);
template <typename T>
Tensor<T> silu_fwd(const Tensor<T>& x);
template <typename T>
void silu_bwd(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx);

template <typename T>
T gelu_scalar(T x);
template <typename T>
T silu_scalar(T x);

// Central finite differences: g[i] = (f(x + h e_i) - f(x - h e_i)) / 2h.
// f must not retain the pointer it is handed.
inline std::vector<double> finite_diff_grad(const std::function<double(const double*)>& f,
                                            std::vector<double> x, double h) {
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double x0 = x[i];
        x[i] = x0 + h;
        double fp = f(x.data());
        x[i] = x0 - h;
        double fm = f(x.data());
        x[i] = x0;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Relative error with an absolute floor, used by every gradient check.
inline double rel_err(double a, double b, double floor_v) {
    double d = std::abs(a - b);
    double m = std::max(std::max(std::abs(a), std::abs(b)), floor_v);
    return d / m;
}

}  // namespace matchattn
