#include "matchattn/metrics.hpp"

#include <cmath>

namespace matchattn {

template <typename T>
Metrics compute_metrics(const Tensor<T>& pred, const Tensor<T>& gt,
                        const Tensor<uint8_t>* sel, Task task) {
    MA_CHECK(pred.same_shape(gt) && pred.dim(2) == 2, "compute_metrics: shape mismatch");
    const int64_t n = pred.dim(0) * pred.dim(1);
    Metrics m;
    double acc = 0;
    for (int64_t p = 0; p < n; ++p) {
        if (sel && !(*sel)[p]) continue;
        double err, mag;
        if (task == Task::Stereo) {
            err = std::abs(static_cast<double>(pred[p * 2] - gt[p * 2]));
            mag = std::abs(static_cast<double>(gt[p * 2]));
        } else {
            const double dx = pred[p * 2] - gt[p * 2];
            const double dy = pred[p * 2 + 1] - gt[p * 2 + 1];
            err = std::sqrt(dx * dx + dy * dy);
            mag = std::sqrt(static_cast<double>(gt[p * 2]) * gt[p * 2] +
                            static_cast<double>(gt[p * 2 + 1]) * gt[p * 2 + 1]);
        }
        acc += err;
        if (err > 3.0 && err > 0.05 * mag) m.d1 += 1;
        if (err > 0.5) m.bad05 += 1;
        if (err > 1.0) m.bad1 += 1;
        if (err > 2.0) m.bad2 += 1;
        if (err > 3.0) m.bad3 += 1;
        ++m.count;
    }
    if (m.count > 0) {
        const double inv = 1.0 / static_cast<double>(m.count);
        acc *= inv;
        m.d1 *= inv;
        m.bad05 *= inv;
        m.bad1 *= inv;
        m.bad2 *= inv;
        m.bad3 *= inv;
    }
    m.epe = acc;
    return m;
}

double mask_iou(const Tensor<uint8_t>& a, const Tensor<uint8_t>& b) {
    MA_CHECK(a.numel() == b.numel(), "mask_iou: size mismatch");
    int64_t inter = 0, uni = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const bool x = a[i] != 0, y = b[i] != 0;
        inter += (x && y) ? 1 : 0;
        uni += (x || y) ? 1 : 0;
    }
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

template Metrics compute_metrics<float>(const Tensor<float>&, const Tensor<float>&,
                                        const Tensor<uint8_t>*, Task);
template Metrics compute_metrics<double>(const Tensor<double>&, const Tensor<double>&,
                                         const Tensor<uint8_t>*, Task);

}  // namespace matchattn
