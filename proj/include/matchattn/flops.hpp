#pragma once

#include <cstdint>

#include "matchattn/decoder.hpp"

namespace matchattn {

// Arithmetic cost model. The three non-parameter attention stages use the
// closed forms below; everything expressible as matrix multiplication
// (linear/conv layers and the initial correlation) is counted as tensor
// arithmetic at 2 flops per multiply-accumulate.
struct FlopsBreakdown {
    int64_t qk = 0;        // query-key similarity
    int64_t bsm = 0;       // continuous-window softmax
    int64_t agg = 0;       // value aggregation
    int64_t tensor = 0;    // linear / conv / correlation matmuls
    int64_t attn_mem = 0;  // attention-weight elements held in memory

    int64_t direct() const { return qk + bsm + agg; }
    int64_t total() const { return direct() + tensor; }
};

// One attention core over H x W tokens (single view, single layer):
//   qk  = H*W*h*ck*(w+1)^2*2
//   bsm = H*W*h*(20 + (w+1)^2*2 + w^2*4*3)
//   agg = H*W*h*cv*(w+1)^2*2
//   mem = H*W*h*(w+1)^2
FlopsBreakdown attention_flops(int64_t H, int64_t W, int64_t h, int64_t ck, int64_t cv,
                               int64_t w);

// Full decoder forward (both views) at the given input resolution.
FlopsBreakdown decoder_flops(const DecoderConfig& cfg, int64_t H, int64_t W);

}  // namespace matchattn
