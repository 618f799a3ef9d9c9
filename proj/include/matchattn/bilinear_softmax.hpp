#pragma once

#include <array>
#include <limits>

#include "matchattn/tensor.hpp"

namespace matchattn {

// Attention weights for a window that is centered at a continuous position.
// The expanded window has (w+1)^2 entries laid out row-major (rows = y). The
// four w^2 sub-windows anchor at the integer corners around the continuous
// center: nw spans rows/cols [0,w), ne shifts columns by +1, sw shifts rows by
// +1, se shifts both. Each live sub-window is softmax-normalized on its own,
// scaled by its bilinear corner weight, and scatter-added back into the
// expanded window, so the result always sums to 1.
//
// Entries may be masked with kMaskedSim (the most negative finite value); the
// max-subtracted exponentials zero them out. A sub-window whose entries are all
// masked, or whose alive flag is false, is dropped and its corner weight is
// redistributed across the surviving sub-windows proportionally to their
// weights (uniformly when the surviving weights sum to zero).

template <typename T>
inline constexpr T kMaskedSim = std::numeric_limits<T>::lowest();

// (nw, ne, sw, se); fx, fy in [0, 1). Row offset = t >> 1, col offset = t & 1.
template <typename T>
inline std::array<T, 4> bilinear_corner_weights(T fx, T fy) {
    return {(T(1) - fx) * (T(1) - fy), fx * (T(1) - fy), (T(1) - fx) * fy, fx * fy};
}

template <typename T>
inline std::array<T, 4> bilinear_corner_dfx(T fx, T fy) {
    (void)fx;
    return {-(T(1) - fy), T(1) - fy, -fy, fy};
}

template <typename T>
inline std::array<T, 4> bilinear_corner_dfy(T fx, T fy) {
    (void)fy;
    return {-(T(1) - fx), -fx, T(1) - fx, fx};
}

// sim and out hold (w+1)^2 entries. alive may be null (all four live).
template <typename T>
void bilinear_softmax_fwd(int w, const T* sim, T fx, T fy, const bool* alive, T* out);

// Accumulates into dsim ((w+1)^2), dfx and dfy. alive may be null.
template <typename T>
void bilinear_softmax_bwd(int w, const T* sim, T fx, T fy, const bool* alive,
                          const T* dout, T* dsim, T* dfx, T* dfy);

// Unfused oracle: materializes the four sub-windows, runs softmax_lastdim on
// each, scales and scatter-adds. Same redistribution rules.
template <typename T>
void bilinear_softmax_ref(int w, const T* sim, T fx, T fy, const bool* alive, T* out);

}  // namespace matchattn
