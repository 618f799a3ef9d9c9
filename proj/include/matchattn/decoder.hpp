#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "matchattn/attention.hpp"
#include "matchattn/graph.hpp"
#include "matchattn/tensor.hpp"

namespace matchattn {

enum class Task { Stereo, Flow };

// Per-scale arrays are indexed fine-to-coarse: 0 = 1/4, 1 = 1/8, 2 = 1/16,
// 3 = 1/32. Window and depth tuples quoted coarse-to-fine elsewhere are stored
// flipped into this order.
struct DecoderConfig {
    Task task = Task::Stereo;
    Similarity sim = Similarity::NegL1;
    int in_ch = 3;
    int heads = 2;
    std::array<int, 4> channels = {16, 24, 32, 48};
    std::array<int, 4> enc_depths = {1, 1, 2, 1};
    std::array<int, 4> dec_depths = {1, 2, 2, 2};
    std::array<int, 4> windows = {3, 3, 5, 5};
    int mlp_ratio = 2;
    int glu_ratio = 2;
    int k_init = 5;           // local regression window of the initial correlation
    double threshold_a = 1.0; // consistency threshold, in pixels of the current scale
    double eps_consistency = 0.01;
    double gamma_loss = 0.9;
    double beta_init = 0.1;

    int n_cross() const { return dec_depths[0] + dec_depths[1] + dec_depths[2] + dec_depths[3]; }
    int n_selfloss() const { return n_cross() + 4; }  // self layers + 4 upsample steps
};

// "desk" is the small trainable preset; "T" mirrors the published tiny model
// and is used for flop accounting only.
DecoderConfig preset_config(const std::string& name, Task task);

template <typename T>
struct ParamStore {
    struct Entry {
        std::string name;
        Tensor<T> value;
        Tensor<T> m, v;  // optimizer state, allocated on first use
    };
    std::vector<Entry> entries;
    std::unordered_map<std::string, int> by_name;

    int add(const std::string& name, Tensor<T> t) {
        MA_CHECK(!by_name.count(name), "duplicate parameter " + name);
        by_name[name] = static_cast<int>(entries.size());
        entries.push_back({name, std::move(t), {}, {}});
        return static_cast<int>(entries.size()) - 1;
    }
    Tensor<T>& operator[](const std::string& name) {
        auto it = by_name.find(name);
        MA_CHECK(it != by_name.end(), "unknown parameter " + name);
        return entries[static_cast<size_t>(it->second)].value;
    }
    int64_t total() const {
        int64_t n = 0;
        for (const auto& e : entries) n += e.value.numel();
        return n;
    }
};

template <typename T>
struct GtPack {
    Tensor<T> gt0, gt1;              // [H, W, 2] full-resolution relative positions
    Tensor<uint8_t> valid0, valid1;  // pixels with known ground truth
};

struct LossOpts {
    bool init = true;
    bool self = true;
    bool cross_l1 = true;
    bool cross_consistency = true;
};

struct StepRecord {
    enum Kind { Self, Cross, Upsample } kind;
    int scale;                    // scale of the recorded fields; -1 = full resolution
    int r0 = -1, r1 = -1;         // relative-position vars after this step
    int attn0 = -1, attn1 = -1;   // attention weights (self / cross layers)
    int resid0 = -1, resid1 = -1; // consistency residual fields (cross layers)
    Tensor<uint8_t> mask0, mask1; // non-occlusion masks after this step
    // Scalar loss vars of this step (-1 without gt). Every L1 term compares a
    // bilinearly upsampled prediction against full-resolution ground truth.
    int loss_self = -1;           // Self / Upsample records
    int loss_l1 = -1;             // Cross records: masked L1 at full resolution
    int loss_cons = -1;           // Cross records: consistency residual term
    Tensor<uint8_t> sel0;         // full-resolution selection of loss_l1
};

struct ForwardResult {
    int r_full0 = -1, r_full1 = -1;    // [H, W, 2]
    int sr_full0 = -1, sr_full1 = -1;  // [H, W, 2*heads] self relative positions
    int r_init0 = -1, r_init1 = -1;    // coarsest-scale initialization
    int loss = -1, l_init = -1, l_self = -1, l_cross = -1;  // scalars; -1 without gt
    std::vector<StepRecord> records;
    std::vector<int> param_vars;       // graph ids parallel to ParamStore entries
};

template <typename T>
class MatchDecoder {
  public:
    MatchDecoder(const DecoderConfig& cfg, uint64_t seed);

    const DecoderConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    // Builds one forward pass on g. Images are [H, W, in_ch] with H, W
    // divisible by 32. When gt is given the loss vars are populated.
    ForwardResult forward(Graph<T>& g, const Tensor<T>& img0, const Tensor<T>& img1,
                          const GtPack<T>* gt = nullptr, const LossOpts& opts = {}) const;

    void save(const std::string& path) const;
    static MatchDecoder load(const std::string& path);

  private:
    DecoderConfig cfg_;
    ParamStore<T> params_;
    MatchDecoder() = default;
};

// Residual field of the forward consistency check: r_ab + sample(r_ba at
// identity + r_ab). Composed from recorded ops, so it is differentiable in
// both fields.
template <typename T>
int consistency_residual(Graph<T>& g, int r_ab, int r_ba);

// Binary mask: per-pixel L1 norm of the residual <= threshold (computed on
// values; never part of the tape).
template <typename T>
Tensor<uint8_t> consistency_mask(const Tensor<T>& resid, double threshold);

// Value-level convenience used outside the tape (mask refresh, harness):
template <typename T>
Tensor<T> consistency_residual_value(const Tensor<T>& r_ab, const Tensor<T>& r_ba);

// RAFT-style convex combination upsampling: logits [h, w, 9*f*f] weight the
// 3x3 (replicate-clamped) coarse neighborhood for each of the f*f fine
// positions in a block; sampled field values are multiplied by f.
template <typename T>
int convex_upsample(Graph<T>& g, int field, int logits, int factor);

// Average-pools ground truth to a coarser scale. Values are divided by the
// factor; a coarse pixel is valid when any contributing pixel is.
template <typename T>
void downsample_gt(const Tensor<T>& gt, const Tensor<uint8_t>& valid, int factor,
                   Tensor<T>* gt_s, Tensor<uint8_t>* valid_s);

// Coarse-scale correlation initialization, exposed for direct testing. Both
// take [H, W, c] feature vars (already projected) and regress a soft argmax
// inside a k x k window around the correlation maximum.
// initial_flow returns a flow field [H, W, 2].
template <typename T>
int initial_flow(Graph<T>& g, int fq, int fkv, int k);
// initial_stereo returns {r, prob}: view 0 regresses the reference view
// (r.x = -d <= 0, candidates at x - d), view 1 the target view (r.x = d >= 0).
// prob is the per-pixel disparity distribution [H, W, W] with impossible
// disparities exactly zero.
template <typename T>
std::pair<int, int> initial_stereo(Graph<T>& g, int fq, int fkv, int k, int view);

}  // namespace matchattn
