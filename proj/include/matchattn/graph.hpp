#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "matchattn/tensor.hpp"

namespace matchattn {

// Reverse-mode tape. Forward values are computed eagerly; each op records a
// closure that pulls gradients of its outputs and accumulates into the
// gradients of its inputs. backward() replays the tape in reverse, so a value
// consumed by several ops receives the sum of their contributions (in reverse
// execution order, which keeps runs bit-reproducible).
template <typename T>
class Graph {
  public:
    int push(Tensor<T> v) {
        vals_.push_back(std::move(v));
        return static_cast<int>(vals_.size()) - 1;
    }

    const Tensor<T>& val(int id) const { return vals_[static_cast<size_t>(id)]; }

    Tensor<T>& grad(int id) {
        auto& g = grads_[static_cast<size_t>(id)];
        if (g.shape != vals_[static_cast<size_t>(id)].shape)
            g = Tensor<T>(vals_[static_cast<size_t>(id)].shape);
        return g;
    }

    void record(std::function<void(Graph&)> bw) { tape_.push_back(std::move(bw)); }

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape backwards. loss must be a
    // single-element tensor.
    void backward(int loss) {
        MA_CHECK(val(loss).numel() == 1, "backward: loss must be scalar");
        grads_.assign(vals_.size(), Tensor<T>());
        grad(loss)[0] = T(1);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)(*this);
    }

    size_t size() const { return vals_.size(); }

    // --- recorded ops (implemented in graph.cpp) ---
    int linear(int x, int w, int b = -1);
    int layer_norm(int x, int gain, int bias);
    int softmax_lastdim(int x);
    int conv2d(int x, int w, int b, int stride, int pad, int groups);
    int conv_transpose2x2(int x, int w, int b);
    int bilinear_sample(int field, int coords);
    int gelu(int x);
    int silu(int x);
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int a, T s);
    int concat_last(const std::vector<int>& xs);
    int slice_last(int x, int64_t from, int64_t to);
    // Per-channel scale of the last axis: y[..., c] = x[..., c] * s[c mod s.numel()].
    // Used to apply the learned position scaling before concatenation.
    int channel_scale(int x, int s);
    // Weighted sum of scalars: sum_i coef[i] * xs[i].
    int weighted_sum(const std::vector<int>& xs, const std::vector<T>& coef);
    // Mean over selected pixels of the per-pixel L1 norm. x is [..., c] with
    // one mask byte per row; empty mask selects everything.
    int masked_l1_mean(int x, Tensor<uint8_t> mask);

  private:
    std::vector<Tensor<T>> vals_;
    std::vector<Tensor<T>> grads_;
    std::vector<std::function<void(Graph&)>> tape_;
};

}  // namespace matchattn
