#pragma once

#include <string>

#include "matchattn/decoder.hpp"
#include "matchattn/tensor.hpp"

namespace matchattn {

// Synthetic matching pairs with analytic ground truth and occlusion masks.
//  - constant_shift: the whole view moves by an integer offset; occlusion only
//    at the image border. magnitude = shift in pixels.
//  - two_layer: a textured foreground rectangle over a background plane, each
//    with its own shift; the foreground hides a band of background pixels.
//    magnitude = foreground shift (background moves by 2).
//  - smooth_warp: a smooth, monotone, separable warp with zero displacement at
//    the borders; dense gt, no occlusion. magnitude = peak displacement.
enum class SceneKind { ConstantShift, TwoLayer, SmoothWarp };

SceneKind scene_kind_from_string(const std::string& s);
std::string scene_kind_name(SceneKind k);

template <typename T>
struct Scene {
    Tensor<T> img0, img1;        // [H, W, 3], values in [0, 1]
    GtPack<T> gt;                // relative positions per view, all-valid here
    Tensor<uint8_t> noc0, noc1;  // analytic non-occlusion masks
    Tensor<uint8_t> occ_band0;   // two_layer only: view-0 background pixels
                                 // hidden by the foreground (excludes border)
};

template <typename T>
Scene<T> gen_scene(Task task, SceneKind kind, int64_t H, int64_t W, uint64_t seed,
                   double magnitude);

}  // namespace matchattn
