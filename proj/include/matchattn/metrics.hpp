#pragma once

#include "matchattn/decoder.hpp"
#include "matchattn/tensor.hpp"

namespace matchattn {

// Error statistics of a predicted relative-position field against ground
// truth. Stereo errors are measured on the x component (disparity), flow
// errors on the L2 endpoint distance.
struct Metrics {
    double epe = 0;      // mean error (AvgErr)
    double d1 = 0;       // fraction with error > 3 px and > 5% of |gt|
    double bad05 = 0;    // fraction with error > 0.5 px
    double bad1 = 0;     // fraction with error > 1 px
    double bad2 = 0;     // fraction with error > 2 px
    double bad3 = 0;     // fraction with error > 3 px
    int64_t count = 0;   // pixels measured
};

template <typename T>
Metrics compute_metrics(const Tensor<T>& pred, const Tensor<T>& gt,
                        const Tensor<uint8_t>* sel, Task task);

double mask_iou(const Tensor<uint8_t>& a, const Tensor<uint8_t>& b);

}  // namespace matchattn
