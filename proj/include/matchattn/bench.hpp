#pragma once

#include <string>
#include <vector>

#include "matchattn/tensor.hpp"

namespace matchattn {

struct BenchRow {
    std::string variant;
    int64_t tokens = 0;
    int channels = 0;
    int window = 0;
    int runs = 0;
    double median_ms = 0;
};

// Benchmarked attention variants over side x side token grids:
//   match        fused similarity + continuous-window softmax + aggregation
//   match_simagg similarity and aggregation stages only
//   direct       pixel-level 4-tap bilinear sampling of keys/values per
//                window entry, then softmax and aggregation
//   global       dense all-pairs attention (quadratic; side capped at 128)
struct BenchSpec {
    std::vector<int64_t> sides;
    int heads = 2;
    int ck = 8, cv = 8;
    int w = 3;
    int runs = 5;
    uint64_t seed = 1234;
};

constexpr int64_t kGlobalSideCap = 128;

BenchRow bench_variant(const std::string& variant, int64_t side, const BenchSpec& spec);
std::vector<BenchRow> run_bench(const BenchSpec& spec, const std::vector<std::string>& variants);

// Least-squares slope of ln(median_ms) against ln(tokens).
double loglog_slope(const std::vector<BenchRow>& rows);

// Header is fixed: "variant,tokens,channels,window,runs,median_ms". The thread
// count is recorded as a comment on the second line.
void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows, int threads);

}  // namespace matchattn
